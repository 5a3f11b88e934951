"""Detection metrics, feature-importance, ablations and the evaluation report.

Score orientation: ``adr_at_tnr`` and ``bdr_at_threshold`` take benign-ness
scores (larger = more benign, e.g. s = P_RF + P_IF); ``auroc`` and
``roc_curve`` take anomaly scores (larger = more adversarial), so the report
passes ``-s`` to them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import logging
from typing import Any, Sequence

import numpy as np
from sklearn import metrics

from .config import DetectorConfig, EvaluationConfig
from .core.attacks import AdversarialRecord
from .core.classifier import predict_arrays
from .core.detector import HybridDetector, decide, score, threshold_for_tnr, train_detector
from .core.feature_store import BENIGN_TAG, FeatureRecord, attack_tags_in, select_features
from .core.predictors import PREDICTOR_NAMES, feature_matrix


logger = logging.getLogger(__name__)

SINGLE_METRIC_BASELINES = {
    "likelihood-only": ("d3",),
    "representation-density-only": ("d4",),
}


def _scores(values: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64).ravel()
    if array.size == 0:
        raise ValueError(f"{name} scores are empty")
    return array


def tnr_threshold(benign_scores: Sequence[float], tnr: float) -> float:
    return threshold_for_tnr(_scores(benign_scores, "benign"), tnr)


def adr_at_tnr(benign_scores: Sequence[float], adversarial_scores: Sequence[float], tnr: float) -> float:
    """Fraction of adversarial scores at or below the benign (1 - tnr) cutoff."""
    threshold = tnr_threshold(benign_scores, tnr)
    adversarial = _scores(adversarial_scores, "adversarial")
    return float(np.mean(adversarial <= threshold))


def bdr_at_threshold(benign_scores: Sequence[float], threshold: float) -> float:
    return float(np.mean(_scores(benign_scores, "benign") > threshold))


def _labelled(benign_scores, adversarial_scores) -> tuple[np.ndarray, np.ndarray]:
    benign = _scores(benign_scores, "benign")
    adversarial = _scores(adversarial_scores, "adversarial")
    y_true = np.concatenate([np.zeros(benign.size, dtype=int), np.ones(adversarial.size, dtype=int)])
    return y_true, np.concatenate([benign, adversarial])


def auroc(benign_scores: Sequence[float], adversarial_scores: Sequence[float]) -> float:
    """P(adversarial score > benign score) with ties counted one half."""
    y_true, y_score = _labelled(benign_scores, adversarial_scores)
    return float(metrics.roc_auc_score(y_true, y_score))


def roc_curve(benign_scores: Sequence[float], adversarial_scores: Sequence[float]) -> list[tuple[float, float]]:
    y_true, y_score = _labelled(benign_scores, adversarial_scores)
    fpr, tpr, _thresholds = metrics.roc_curve(y_true, y_score, drop_intermediate=False)
    return [(float(x), float(y)) for x, y in zip(fpr, tpr)]


def area_under_points(points: Sequence[tuple[float, float]]) -> float:
    fpr, tpr = zip(*points)
    return float(metrics.auc(np.asarray(fpr), np.asarray(tpr)))


def bootstrap_auroc_ci(
    benign_scores: Sequence[float],
    adversarial_scores: Sequence[float],
    *,
    samples: int = 1000,
    level: float = 0.95,
    seed: int = 7,
) -> tuple[float, float]:
    """Percentile interval from resampling each class with replacement."""
    benign = _scores(benign_scores, "benign")
    adversarial = _scores(adversarial_scores, "adversarial")
    rng = np.random.default_rng(seed)
    values = np.empty(samples)
    for index in range(samples):
        values[index] = auroc(
            benign[rng.integers(0, benign.size, benign.size)],
            adversarial[rng.integers(0, adversarial.size, adversarial.size)],
        )
    tail = (1.0 - level) / 2.0 * 100.0
    return float(np.percentile(values, tail)), float(np.percentile(values, 100.0 - tail))


def system_accuracy(
    true_labels: Sequence[int],
    predicted_labels: Sequence[int],
    decisions: Sequence[int],
) -> tuple[float, float]:
    """(DNN alone, DNN + detector) accuracy over attacked inputs; a flagged input counts as handled."""
    truth = np.asarray(true_labels)
    predicted = np.asarray(predicted_labels)
    flagged = np.asarray(decisions) == 1
    if truth.size == 0:
        raise ValueError("No attacked inputs to score")
    if not truth.size == predicted.size == flagged.size:
        raise ValueError("true labels, predictions and decisions differ in length")
    correct = predicted == truth
    return float(np.mean(correct)), float(np.mean(flagged | correct))


def overall_system_accuracy(
    classifier: Any,
    decisions: Sequence[int],
    records: Sequence[AdversarialRecord],
) -> tuple[float, float]:
    """Accuracy over records whose original image was classified correctly."""
    if len(decisions) != len(records):
        raise ValueError(f"Got {len(decisions)} decisions for {len(records)} records")
    perturbed_labels = [record.perturbed_label for record in records]
    original_labels = [record.original_label for record in records]
    if classifier is not None and records:
        _p, _h, original_labels = predict_arrays(classifier, [record.original for record in records])
        _p, _h, perturbed_labels = predict_arrays(classifier, [record.perturbed for record in records])
    keep = [index for index, record in enumerate(records) if original_labels[index] == record.true_label]
    return system_accuracy(
        [records[index].true_label for index in keep],
        [perturbed_labels[index] for index in keep],
        [decisions[index] for index in keep],
    )


def equal_frequency_codes(values: Sequence[float], bins: int) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64).ravel()
    edges = np.unique(np.quantile(array, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
    return np.searchsorted(edges, array, side="right")


def mutual_information(values: Sequence[float], labels: Sequence[int], *, bins: int = 20) -> float:
    """Plug-in MI (nats) between an equal-frequency-binned predictor and a binary label."""
    labels = np.asarray(labels).ravel()
    if labels.size != np.asarray(values).size:
        raise ValueError("values and labels differ in length")
    for label in (0, 1):
        if np.sum(labels == label) < 2:
            raise ValueError(f"Mutual information needs at least two samples with label {label}")
    return float(max(metrics.mutual_info_score(labels, equal_frequency_codes(values, bins)), 0.0))


def successful(records: Sequence[FeatureRecord]) -> list[FeatureRecord]:
    """Adversarial rows whose attack flipped the label; failed attacks never count toward detection."""
    return [record for record in records if record.misclassified]


def mask_key(mask: Sequence[str]) -> str:
    return "+".join(name for name in PREDICTOR_NAMES if name in mask)


def train_detector_from_features(
    records: Sequence[FeatureRecord],
    config: DetectorConfig,
    *,
    feature_mask: Sequence[str] = PREDICTOR_NAMES,
    seed: int = 7,
) -> HybridDetector:
    """Benign train vs successful train-split attacks from ``config.train_attacks``; tau on benign val."""
    benign = select_features(records, split="train", attack_tag=BENIGN_TAG)
    adversarial = successful(select_features(records, split="train", attack_tags=config.train_attacks))
    benign_val = select_features(records, split="val", attack_tag=BENIGN_TAG)
    if not adversarial:
        raise ValueError(f"No successful train-split adversarial rows for attacks {config.train_attacks}")
    return train_detector(
        feature_matrix([record.features for record in benign]),
        feature_matrix([record.features for record in adversarial]),
        feature_matrix([record.features for record in benign_val]),
        config,
        feature_mask=feature_mask,
        seed=seed,
        adversarial_sources=config.train_attacks,
    )


def _test_sets(records: Sequence[FeatureRecord], tag: str) -> tuple[np.ndarray, np.ndarray]:
    benign = select_features(records, split="test", attack_tag=BENIGN_TAG)
    adversarial = successful(select_features(records, split="test", attack_tag=tag))
    return (
        feature_matrix([record.features for record in benign]),
        feature_matrix([record.features for record in adversarial]),
    )


def detector_auroc(detector: HybridDetector, records: Sequence[FeatureRecord], tag: str) -> float:
    benign, adversarial = _test_sets(records, tag)
    if len(benign) == 0 or len(adversarial) == 0:
        return float("nan")
    return auroc(-score(detector, benign), -score(detector, adversarial))


def ablation_run(
    records: Sequence[FeatureRecord],
    masks: Sequence[Sequence[str]],
    attacks: Sequence[str],
    config: DetectorConfig,
    *,
    seed: int = 7,
) -> dict[str, dict[str, float]]:
    """Retrain the hybrid detector on each predictor subset and report per-attack AUC."""
    table: dict[str, dict[str, float]] = {}
    for mask in masks:
        if not mask:
            raise ValueError("Ablation masks must name at least one predictor")
        detector = train_detector_from_features(records, config, feature_mask=mask, seed=seed)
        table[mask_key(mask)] = {tag: detector_auroc(detector, records, tag) for tag in attacks}
        logger.info("ablation %s: %s", mask_key(mask), table[mask_key(mask)])
    return table


@dataclass
class MisclassifiedEval:
    auc: float
    ci: tuple[float, float]
    misclassified_count: int
    correct_count: int


def misclassified_benign_eval(
    detector: HybridDetector,
    records: Sequence[FeatureRecord],
    *,
    bootstrap_samples: int = 1000,
    seed: int = 7,
) -> MisclassifiedEval | None:
    """AUC of misclassified vs correctly classified benign test inputs; None when nothing is misclassified."""
    benign = select_features(records, split="test", attack_tag=BENIGN_TAG)
    wrong = [record for record in benign if record.misclassified]
    right = [record for record in benign if not record.misclassified]
    if not wrong or not right:
        return None
    right_scores = -score(detector, feature_matrix([record.features for record in right]))
    wrong_scores = -score(detector, feature_matrix([record.features for record in wrong]))
    return MisclassifiedEval(
        auc=auroc(right_scores, wrong_scores),
        ci=bootstrap_auroc_ci(right_scores, wrong_scores, samples=bootstrap_samples, seed=seed),
        misclassified_count=len(wrong),
        correct_count=len(right),
    )


@dataclass
class AttackRow:
    attack_tag: str
    success_rate: float
    adr: float
    bdr: float
    auroc: float
    auroc_ci: tuple[float, float]
    severe_failure: bool
    benign_count: int
    adversarial_count: int
    attacked_count: int


@dataclass
class EvalReport:
    rows: list[AttackRow]
    roc: dict[str, list[tuple[float, float]]]
    overall_accuracy: dict[str, tuple[float, float]]
    mutual_information: dict[str, dict[str, float]]
    ablation: dict[str, dict[str, float]] = field(default_factory=dict)
    misclassified: MisclassifiedEval | None = None
    manifest: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def build_report(
    records: Sequence[FeatureRecord],
    detector: HybridDetector,
    config: EvaluationConfig,
    *,
    tnr: float = 0.95,
    seed: int = 7,
    attacks: Sequence[str] | None = None,
    ablation: dict[str, dict[str, float]] | None = None,
) -> EvalReport:
    if detector.tau is None:
        raise RuntimeError("Detector is not calibrated; run calibrate_tau first")
    test_records = select_features(records, split="test")
    tags = list(attacks) if attacks is not None else attack_tags_in(test_records)
    benign = select_features(test_records, attack_tag=BENIGN_TAG)
    if not benign:
        raise ValueError("Feature store has no benign test rows")
    benign_X = feature_matrix([record.features for record in benign])
    benign_s = score(detector, benign_X)
    benign_labels = np.zeros(len(benign), dtype=int)

    rows: list[AttackRow] = []
    roc: dict[str, list[tuple[float, float]]] = {}
    overall: dict[str, tuple[float, float]] = {}
    mi: dict[str, dict[str, float]] = {}
    for tag in tags:
        attacked = select_features(test_records, attack_tag=tag)
        if not attacked:
            logger.warning("no test rows for attack %s; skipping", tag)
            continue
        hits = successful(attacked)
        decisions = decide(detector, feature_matrix([record.features for record in attacked]))
        overall[tag] = system_accuracy(
            [record.true_label for record in attacked],
            [record.features.label_used for record in attacked],
            decisions,
        )
        if not hits:
            logger.warning("attack %s produced no successful rows; detection metrics skipped", tag)
            continue
        adv_X = feature_matrix([record.features for record in hits])
        adv_s = score(detector, adv_X)
        adr = adr_at_tnr(benign_s, adv_s, tnr)
        rows.append(
            AttackRow(
                attack_tag=tag,
                success_rate=len(hits) / len(attacked),
                adr=adr,
                bdr=bdr_at_threshold(benign_s, detector.tau),
                auroc=auroc(-benign_s, -adv_s),
                auroc_ci=bootstrap_auroc_ci(-benign_s, -adv_s, samples=config.bootstrap_samples, seed=seed),
                severe_failure=adr < config.severe_failure_adr,
                benign_count=len(benign),
                adversarial_count=len(hits),
                attacked_count=len(attacked),
            )
        )
        roc[tag] = roc_curve(-benign_s, -adv_s)
        labels = np.concatenate([benign_labels, np.ones(len(hits), dtype=int)])
        values = np.vstack([benign_X, adv_X])
        if len(hits) >= 2 and len(benign) >= 2:
            mi[tag] = {
                name: mutual_information(values[:, column], labels, bins=config.mi_bins)
                for column, name in enumerate(PREDICTOR_NAMES)
            }

    return EvalReport(
        rows=rows,
        roc=roc,
        overall_accuracy=overall,
        mutual_information=mi,
        ablation=dict(ablation or {}),
        misclassified=misclassified_benign_eval(
            detector, records, bootstrap_samples=config.bootstrap_samples, seed=seed
        ),
        manifest={
            "tau": detector.tau,
            "tnr": tnr,
            "seed": seed,
            "detector": dict(detector.manifest),
            "feature_mask": list(detector.feature_mask),
        },
    )


def validate_report(report: EvalReport) -> None:
    """Raise ValueError when a rate or curve leaves its valid range."""
    for row in report.rows:
        for name in ("success_rate", "adr", "bdr", "auroc"):
            value = getattr(row, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} for attack {row.attack_tag} is outside [0, 1]")
    for tag, points in report.roc.items():
        fpr = np.array([point[0] for point in points])
        if np.any(np.diff(fpr) < 0.0) or points[0] != (0.0, 0.0) or points[-1] != (1.0, 1.0):
            raise ValueError(f"ROC curve for {tag} is not a monotone sweep from (0, 0) to (1, 1)")


def report_from_dict(payload: dict[str, Any]) -> EvalReport:
    misclassified = payload.get("misclassified")
    return EvalReport(
        rows=[AttackRow(**{**row, "auroc_ci": tuple(row["auroc_ci"])}) for row in payload.get("rows", [])],
        roc={tag: [tuple(point) for point in points] for tag, points in payload.get("roc", {}).items()},
        overall_accuracy={tag: tuple(pair) for tag, pair in payload.get("overall_accuracy", {}).items()},
        mutual_information=dict(payload.get("mutual_information", {})),
        ablation=dict(payload.get("ablation", {})),
        misclassified=(
            MisclassifiedEval(**{**misclassified, "ci": tuple(misclassified["ci"])}) if misclassified else None
        ),
        manifest=dict(payload.get("manifest", {})),
    )
