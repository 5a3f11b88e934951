"""Image/view inconsistency predictors.

Four scores per image:

* ``d1``: L2 distance between the classifier representations of z and G*.
* ``d2``: sum of KL(f(z) || f(view)) over G1, G2, G3 and G*.
* ``d3``: log-likelihood of z under the pixel model, conditioned on F(z)
  (or marginalized over labels when ``d3_mode == "marginal"``).
* ``d4``: log-density of h(z) under the class-conditional mixture of F(z).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import logging
import math
from pathlib import Path
from typing import Mapping, Sequence

import joblib
import numpy as np
from sklearn.mixture import GaussianMixture
from sklearn.preprocessing import StandardScaler
import torch

from .classifier import ClassifierModel, forward, predict_arrays
from .data import FlatImage
from .generator import GenerativeModel, conditional_log_likelihood, log_likelihood_all_labels
from .views import ViewSet, generate_views


logger = logging.getLogger(__name__)

PREDICTOR_NAMES = ("d1", "d2", "d3", "d4")
KL_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FeatureVector:
    d1: float
    d2: float
    d3: float
    d4: float
    image_id: str = ""
    label_used: int = -1
    view_seeds: tuple[int, ...] = field(default_factory=tuple)

    def as_array(self) -> np.ndarray:
        return np.array([self.d1, self.d2, self.d3, self.d4], dtype=np.float64)

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


def feature_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    if not features:
        return np.zeros((0, len(PREDICTOR_NAMES)))
    return np.stack([feature.as_array() for feature in features])


def kl(p: np.ndarray, q: np.ndarray, *, floor: float = KL_FLOOR) -> float:
    """KL(p || q) in nats; zero-mass terms of ``p`` contribute nothing and ``q`` is floored."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"KL arguments differ in shape: {p.shape} vs {q.shape}")
    support = p > 0.0
    p_s = p[support]
    q_s = np.maximum(q[support], floor)
    return float(np.sum(p_s * (np.log(p_s) - np.log(q_s))))


def representation_distance(h_a: np.ndarray, h_b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(h_a, dtype=np.float64) - np.asarray(h_b, dtype=np.float64)))


def d1(classifier: ClassifierModel, image: FlatImage, gstar: FlatImage) -> float:
    _probs, hidden, _labels = predict_arrays(classifier, [image, gstar])
    return representation_distance(hidden[0], hidden[1])


def summed_view_kl(probs: np.ndarray, view_probs: Sequence[np.ndarray], *, floor: float = KL_FLOOR) -> float:
    return float(sum(kl(probs, other, floor=floor) for other in view_probs))


def d2(classifier: ClassifierModel, image: FlatImage, views: ViewSet, *, floor: float = KL_FLOOR) -> float:
    probs, _hidden, _labels = predict_arrays(classifier, [image, *views.views])
    return summed_view_kl(probs[0], probs[1:], floor=floor)


def marginal_log_likelihood(label_log_likelihoods: np.ndarray, log_prior: np.ndarray | None = None) -> np.ndarray:
    """log p(z) = logsumexp_y [log p(z|y) + log pi_y]; uniform prior by default."""
    values = np.atleast_2d(np.asarray(label_log_likelihoods, dtype=np.float64))
    class_count = values.shape[1]
    prior = np.full(class_count, -math.log(class_count)) if log_prior is None else np.asarray(log_prior, dtype=np.float64)
    if prior.shape != (class_count,):
        raise ValueError(f"log_prior must have {class_count} entries, got shape {prior.shape}")
    return np.logaddexp.reduce(values + prior[np.newaxis, :], axis=1)


def d3(
    generator: GenerativeModel,
    image: FlatImage,
    label: int,
    *,
    mode: str = "conditional",
    log_prior: np.ndarray | None = None,
) -> float:
    if mode == "conditional":
        return conditional_log_likelihood(generator, image, label)
    if mode == "marginal":
        return float(marginal_log_likelihood(log_likelihood_all_labels(generator, [image]), log_prior)[0])
    raise ValueError(f"Unknown d3 mode: {mode}")


@dataclass
class GmmModel:
    mixtures: dict[int, GaussianMixture]
    class_count: int
    components: int

    def mixture(self, label: int) -> GaussianMixture:
        if label not in self.mixtures:
            raise KeyError(f"No mixture fitted for class {label}")
        return self.mixtures[label]

    @property
    def dimension(self) -> int:
        return int(next(iter(self.mixtures.values())).means_.shape[1])


def group_by_class(representations: np.ndarray, labels: np.ndarray, class_count: int) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {label: np.asarray(representations)[labels == label] for label in range(class_count)}


def fit_gmm(
    grouped: Mapping[int, np.ndarray],
    *,
    components: int = 8,
    tol: float = 1e-4,
    max_iter: int = 200,
    seed: int = 7,
) -> GmmModel:
    """Per-class diagonal-covariance mixtures, k-means initialized, fit by EM."""
    if not grouped:
        raise ValueError("fit_gmm needs at least one class")
    mixtures: dict[int, GaussianMixture] = {}
    for label in sorted(grouped):
        samples = np.asarray(grouped[label], dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, np.newaxis]
        if samples.shape[0] < components:
            raise ValueError(
                f"Class {label} has {samples.shape[0]} representations; at least {components} are needed"
            )
        mixture = GaussianMixture(
            n_components=components,
            covariance_type="diag",
            tol=tol,
            max_iter=max_iter,
            init_params="kmeans",
            random_state=seed,
        )
        mixture.fit(samples)
        if not mixture.converged_:
            logger.warning("GMM for class %d stopped at max_iter=%d before converging", label, max_iter)
        mixtures[int(label)] = mixture
    logger.info("fitted %d-component mixtures for %d classes", components, len(mixtures))
    return GmmModel(mixtures=mixtures, class_count=max(mixtures) + 1, components=components)


def gmm_from_parameters(weights: np.ndarray, means: np.ndarray, variances: np.ndarray) -> GaussianMixture:
    """A fitted-looking diagonal mixture built from explicit parameters."""
    weights = np.asarray(weights, dtype=np.float64)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if np.any(variances <= 0.0):
        raise ValueError("Mixture variances must be positive")
    if not math.isclose(float(weights.sum()), 1.0, abs_tol=1e-9):
        raise ValueError(f"Mixture weights must sum to 1, got {weights.sum()}")
    mixture = GaussianMixture(n_components=weights.size, covariance_type="diag")
    mixture.weights_ = weights
    mixture.means_ = means
    mixture.covariances_ = variances
    mixture.precisions_cholesky_ = 1.0 / np.sqrt(variances)
    mixture.converged_ = True
    return mixture


def gmm_log_density(gmm: GmmModel, label: int, representation: np.ndarray) -> float:
    values = np.asarray(representation, dtype=np.float64).reshape(1, -1)
    return float(gmm.mixture(int(label)).score_samples(values)[0])


def gmm_class_log_densities(gmm: GmmModel, representations: np.ndarray) -> np.ndarray:
    """log P(h | y) for every class, shape (N, class_count)."""
    values = np.atleast_2d(np.asarray(representations, dtype=np.float64))
    return np.stack([gmm.mixture(label).score_samples(values) for label in range(gmm.class_count)], axis=1)


def gmm_class_log_densities_torch(gmm: GmmModel, representations: torch.Tensor) -> torch.Tensor:
    """Differentiable counterpart of ``gmm_class_log_densities``."""
    columns = []
    for label in range(gmm.class_count):
        mixture = gmm.mixture(label)
        weights = torch.as_tensor(mixture.weights_, dtype=representations.dtype, device=representations.device)
        means = torch.as_tensor(mixture.means_, dtype=representations.dtype, device=representations.device)
        variances = torch.as_tensor(mixture.covariances_, dtype=representations.dtype, device=representations.device)
        diff = representations[:, None, :] - means[None, :, :]
        component = -0.5 * (
            means.shape[1] * LOG_2PI + torch.log(variances).sum(dim=1)[None, :] + (diff**2 / variances[None]).sum(dim=2)
        )
        columns.append(torch.logsumexp(component + torch.log(weights)[None, :], dim=1))
    return torch.stack(columns, dim=1)


def d4(gmm: GmmModel, classifier: ClassifierModel, image: FlatImage) -> float:
    output = forward(classifier, image)
    return gmm_log_density(gmm, output.label, output.representation)


def save_gmm(gmm: GmmModel, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"kind": "gmm", "gmm": gmm}, output)
    return output


def load_gmm(path: str | Path) -> GmmModel:
    payload = joblib.load(Path(path))
    if not isinstance(payload, dict) or payload.get("kind") != "gmm":
        raise ValueError(f"{path} is not a GMM bundle")
    return payload["gmm"]


def extract_features(
    classifier: ClassifierModel,
    generator: GenerativeModel,
    gmm: GmmModel,
    image: FlatImage,
    rng: np.random.Generator,
    *,
    image_id: str = "",
    view_seeds: Sequence[int] | None = None,
    kl_floor: float = KL_FLOOR,
    d3_mode: str = "conditional",
    log_prior: np.ndarray | None = None,
    parallel: bool = True,
) -> FeatureVector:
    label_used = forward(classifier, image).label
    views = generate_views(generator, image, label_used, rng, view_seeds=view_seeds, parallel=parallel)
    return features_from_views(
        classifier,
        generator,
        gmm,
        views,
        image_id=image_id,
        kl_floor=kl_floor,
        d3_mode=d3_mode,
        log_prior=log_prior,
    )


def features_from_views(
    classifier: ClassifierModel,
    generator: GenerativeModel,
    gmm: GmmModel,
    views: ViewSet,
    *,
    image_id: str = "",
    kl_floor: float = KL_FLOOR,
    d3_mode: str = "conditional",
    log_prior: np.ndarray | None = None,
) -> FeatureVector:
    probs, hidden, _labels = predict_arrays(classifier, [views.source, *views.views])
    label = views.label_used
    return FeatureVector(
        d1=representation_distance(hidden[0], hidden[4]),
        d2=summed_view_kl(probs[0], probs[1:], floor=kl_floor),
        d3=d3(generator, views.source, label, mode=d3_mode, log_prior=log_prior),
        d4=gmm_log_density(gmm, label, hidden[0]),
        image_id=image_id,
        label_used=label,
        view_seeds=tuple(views.rng_seeds),
    )


class FeatureStandardizer:
    """z-scores predictor columns with benign-validation statistics."""

    def __init__(self) -> None:
        self.scaler = StandardScaler()
        self.fitted = False

    def fit(self, benign: np.ndarray) -> "FeatureStandardizer":
        benign = np.asarray(benign, dtype=np.float64)
        if benign.ndim != 2 or benign.shape[0] < 2:
            raise ValueError(f"Standardizer needs at least two benign rows, got shape {benign.shape}")
        self.scaler.fit(benign)
        self.fitted = True
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("FeatureStandardizer.transform called before fit")
        return self.scaler.transform(np.atleast_2d(np.asarray(values, dtype=np.float64)))
