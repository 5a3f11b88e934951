"""Hybrid detector: a supervised random forest plus a benign-only isolation forest.

An input is benign iff ``P_RF(benign) + P_IF(benign) > tau``. ``tau`` is
calibrated on benign validation features so that a target fraction of them
passes. Ties at ``tau`` are adversarial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any, Sequence

import joblib
import numpy as np
from sklearn.ensemble import IsolationForest, RandomForestClassifier

from ..config import IF_ORIENTATIONS, DetectorConfig
from .predictors import PREDICTOR_NAMES, FeatureStandardizer, FeatureVector, feature_matrix


logger = logging.getLogger(__name__)

BENIGN = 0
ADVERSARIAL = 1
EULER_GAMMA = 0.5772156649015329


def as_feature_matrix(features: FeatureVector | Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(features, FeatureVector):
        return features.as_array()[np.newaxis, :]
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features.astype(np.float64))
    items = list(features)
    if items and isinstance(items[0], FeatureVector):
        return feature_matrix(items)
    return np.atleast_2d(np.asarray(items, dtype=np.float64))


def mask_indices(feature_mask: Sequence[str]) -> list[int]:
    if not feature_mask:
        raise ValueError("Feature mask must name at least one predictor")
    unknown = [name for name in feature_mask if name not in PREDICTOR_NAMES]
    if unknown:
        raise KeyError(f"Unknown predictor(s) in feature mask: {unknown}")
    return [PREDICTOR_NAMES.index(name) for name in PREDICTOR_NAMES if name in feature_mask]


def train_rf(benign: np.ndarray, adversarial: np.ndarray, *, n_trees: int = 100, seed: int = 7) -> RandomForestClassifier:
    benign = np.atleast_2d(np.asarray(benign, dtype=np.float64))
    adversarial = np.atleast_2d(np.asarray(adversarial, dtype=np.float64))
    if benign.size == 0 or adversarial.size == 0:
        raise ValueError(
            f"Random forest needs both classes, got {len(benign)} benign and {len(adversarial)} adversarial rows"
        )
    if n_trees < 1:
        raise ValueError(f"n_trees must be at least 1, got {n_trees}")
    X = np.vstack([benign, adversarial])
    y = np.concatenate([np.full(len(benign), BENIGN), np.full(len(adversarial), ADVERSARIAL)])
    forest = RandomForestClassifier(n_estimators=n_trees, random_state=seed)
    forest.fit(X, y)
    return forest


def train_if(benign: np.ndarray, *, n_trees: int = 100, subsample: int = 256, seed: int = 7) -> IsolationForest:
    benign = np.atleast_2d(np.asarray(benign, dtype=np.float64))
    if benign.size == 0:
        raise ValueError("Isolation forest needs a non-empty benign set")
    iforest = IsolationForest(
        n_estimators=n_trees,
        max_samples=min(subsample, len(benign)),
        random_state=seed,
    )
    iforest.fit(benign)
    return iforest


def p_rf(forest: Any, X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting benign, per row."""
    X = np.atleast_2d(X)
    votes = np.zeros(len(X))
    for tree in forest.estimators_:
        predicted = np.asarray(forest.classes_)[np.asarray(tree.predict(X)).astype(int)]
        votes += predicted == BENIGN
    return votes / len(forest.estimators_)


def harmonic_number(i: int | float, *, exact: bool = False) -> float:
    if exact:
        return float(np.sum(1.0 / np.arange(1, int(i) + 1))) if i >= 1 else 0.0
    return math.log(i) + EULER_GAMMA if i > 0 else 0.0


def average_path_length(n: int | float, *, exact: bool = False) -> float:
    """c(n) = 2 H(n - 1) - 2 (n - 1) / n, the mean unsuccessful-search depth of a BST."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic_number(n - 1, exact=exact) - 2.0 * (n - 1) / n


def isolation_anomaly_score(mean_path: np.ndarray | float, c: float) -> np.ndarray:
    """2^{-E/c}; 1 means isolated at the root, 0.5 means E equals c."""
    if c <= 0.0:
        raise ValueError(f"Normalizer c must be positive, got {c}")
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / c)


def mean_path_length(iforest: Any, X: np.ndarray, *, exact: bool = False) -> np.ndarray:
    """E(t(x)) over the isolation trees, with c(size) added at truncated leaves."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total = np.zeros(len(X))
    for tree, features in zip(iforest.estimators_, iforest.estimators_features_):
        subset = X[:, features]
        leaves = np.asarray(tree.apply(subset))
        depth = np.asarray(tree.decision_path(subset).sum(axis=1)).ravel() - 1.0
        leaf_sizes = np.asarray(tree.tree_.n_node_samples)[leaves]
        total += depth + np.array([average_path_length(size, exact=exact) for size in leaf_sizes])
    return total / len(iforest.estimators_)


def p_if(iforest: Any, X: np.ndarray, *, orientation: str = "complement", exact: bool = False) -> np.ndarray:
    if orientation not in IF_ORIENTATIONS:
        raise ValueError(f"orientation must be one of {IF_ORIENTATIONS}, got {orientation}")
    anomaly = isolation_anomaly_score(
        mean_path_length(iforest, X, exact=exact),
        average_path_length(iforest.max_samples_, exact=exact),
    )
    return 1.0 - anomaly if orientation == "complement" else anomaly


def decision_rule(p_rf_value: np.ndarray | float, p_if_value: np.ndarray | float, tau: float) -> np.ndarray:
    s = np.asarray(p_rf_value, dtype=np.float64) + np.asarray(p_if_value, dtype=np.float64)
    return np.where(s > tau, BENIGN, ADVERSARIAL)


def threshold_for_tnr(benign_scores: np.ndarray, tnr_target: float) -> float:
    """Largest cutoff with ceil(tnr_target * n) benign scores strictly above it (barring ties)."""
    scores = np.sort(np.asarray(benign_scores, dtype=np.float64).ravel())
    n = scores.size
    if n == 0:
        raise ValueError("Cannot place a threshold on an empty benign score set")
    if not 0.0 < tnr_target <= 1.0:
        raise ValueError(f"tnr_target must lie in (0, 1], got {tnr_target}")
    passing = min(n, math.ceil(tnr_target * n - 1e-9))
    if passing == n:
        return float(np.nextafter(scores[0], -np.inf))
    return float(scores[n - passing - 1])


@dataclass
class HybridDetector:
    forest: RandomForestClassifier
    iforest: IsolationForest
    standardizer: FeatureStandardizer
    feature_mask: tuple[str, ...] = PREDICTOR_NAMES
    if_orientation: str = "complement"
    exact_harmonic: bool = False
    tau: float | None = None
    manifest: dict[str, Any] = field(default_factory=dict)

    def prepare(self, features: FeatureVector | Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
        X = as_feature_matrix(features)
        if X.shape[1] != len(PREDICTOR_NAMES):
            raise ValueError(f"Expected {len(PREDICTOR_NAMES)} predictor columns, got {X.shape[1]}")
        return self.standardizer.transform(X)[:, mask_indices(self.feature_mask)]

    def components(self, features) -> tuple[np.ndarray, np.ndarray]:
        X = self.prepare(features)
        return (
            p_rf(self.forest, X),
            p_if(self.iforest, X, orientation=self.if_orientation, exact=self.exact_harmonic),
        )


def score(detector: HybridDetector, features) -> np.ndarray:
    """Combined benign-ness s = P_RF + P_IF."""
    rf_part, if_part = detector.components(features)
    return rf_part + if_part


def calibrate_tau(
    detector: HybridDetector,
    benign_val,
    tnr_target: float,
    *,
    min_points: int = 100,
) -> float:
    X = as_feature_matrix(benign_val)
    if len(X) < min_points:
        raise ValueError(f"Calibration needs at least {min_points} benign validation points, got {len(X)}")
    tau = threshold_for_tnr(score(detector, X), tnr_target)
    if not math.isfinite(tau):
        raise ValueError(f"Calibrated threshold is not finite: {tau}")
    detector.tau = tau
    detector.manifest["tnr_target"] = tnr_target
    detector.manifest["calibration_points"] = len(X)
    logger.info("calibrated tau=%.6f at TNR %.3f on %d benign points", tau, tnr_target, len(X))
    return tau


def decide(detector: HybridDetector, features) -> np.ndarray:
    """0 for benign, 1 for adversarial, per row."""
    if detector.tau is None:
        raise RuntimeError("Detector is not calibrated; run calibrate_tau first")
    rf_part, if_part = detector.components(features)
    return decision_rule(rf_part, if_part, detector.tau)


def train_detector(
    benign_train,
    adversarial_train,
    benign_val,
    config: DetectorConfig,
    *,
    feature_mask: Sequence[str] = PREDICTOR_NAMES,
    seed: int = 7,
    adversarial_sources: Sequence[str] = (),
    exact_harmonic: bool = False,
) -> HybridDetector:
    """Fit the standardizer on benign validation, train both forests, then calibrate tau."""
    benign_X = as_feature_matrix(benign_train)
    adversarial_X = as_feature_matrix(adversarial_train)
    val_X = as_feature_matrix(benign_val)
    columns = mask_indices(feature_mask)
    standardizer = FeatureStandardizer().fit(val_X)
    benign_Z = standardizer.transform(benign_X)[:, columns]
    adversarial_Z = standardizer.transform(adversarial_X)[:, columns]
    detector = HybridDetector(
        forest=train_rf(benign_Z, adversarial_Z, n_trees=config.n_trees, seed=seed),
        iforest=train_if(benign_Z, n_trees=config.if_trees, subsample=config.if_subsample, seed=seed),
        standardizer=standardizer,
        feature_mask=tuple(PREDICTOR_NAMES[index] for index in columns),
        if_orientation=config.if_orientation,
        exact_harmonic=exact_harmonic,
        manifest={
            "n_trees": config.n_trees,
            "if_trees": config.if_trees,
            "if_subsample": config.if_subsample,
            "if_orientation": config.if_orientation,
            "feature_mask": [PREDICTOR_NAMES[index] for index in columns],
            "adversarial_sources": list(adversarial_sources),
            "benign_train_rows": len(benign_X),
            "adversarial_train_rows": len(adversarial_X),
            "seed": seed,
        },
    )
    calibrate_tau(detector, val_X, config.tnr_target, min_points=config.min_calibration_points)
    return detector


def save_detector(detector: HybridDetector, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"kind": "detector", "detector": detector}, output)
    return output


def load_detector(path: str | Path) -> HybridDetector:
    payload = joblib.load(Path(path))
    if not isinstance(payload, dict) or payload.get("kind") != "detector":
        raise ValueError(f"{path} is not a detector bundle")
    return payload["detector"]
