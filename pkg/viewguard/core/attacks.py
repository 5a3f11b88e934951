"""Evasion attacks against the victim classifier.

Attacks run on unit-interval batches of shape (N, C, H, W). Budgets in
``AttackSpec`` are in 0..255 pixel units. Emitted images are rounded to
integers and, for L-inf families, clipped back into the integer epsilon ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
from pathlib import Path
from typing import Callable, Sequence

import joblib
import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from tqdm import tqdm

from ..config import AttackConfig
from .classifier import ClassifierModel, predict_arrays
from .data import FlatImage, LabeledSample, stack_grids
from .generator import GenerativeModel, log_likelihoods, log_likelihood_surrogate
from .predictors import GmmModel, gmm_class_log_densities, gmm_class_log_densities_torch
from .tensors import PIXEL_SCALE, quantize_unit_tensor, to_unit_tensor


logger = logging.getLogger(__name__)

ATTACK_FAMILIES = ("fgsm", "pgd", "mim", "deepfool", "cw", "whitebox")
LINF_FAMILIES = ("fgsm", "pgd", "mim", "whitebox")
ITERATIVE_FAMILIES = ("pgd", "mim", "whitebox")

Objective = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class AttackSpec:
    family: str
    epsilon: float = 0.0
    iterations: int = 40
    confidence: float = 0.5
    alpha_wb: float = 1.0
    beta_wb: float = 1.0
    mim_decay: float | None = None
    overshoot: float = 0.02
    max_iter: int = 50
    binary_search_steps: int = 5
    cw_max_iterations: int = 200
    cw_learning_rate: float = 1e-2
    cw_initial_const: float = 1e-2
    seed: int = 7

    def __post_init__(self) -> None:
        if self.family not in ATTACK_FAMILIES:
            raise ValueError(f"Unknown attack family: {self.family}")
        if not 0.0 <= self.epsilon <= 255.0:
            raise ValueError(f"epsilon must lie in [0, 255] pixel units, got {self.epsilon}")
        if self.family in ITERATIVE_FAMILIES and self.iterations < 1:
            raise ValueError(f"{self.family} needs at least one iteration, got {self.iterations}")

    @property
    def norm(self) -> str:
        return "linf" if self.family in LINF_FAMILIES else "l2"

    @property
    def step(self) -> float:
        """Per-iteration step in pixel units, epsilon / T."""
        return self.epsilon / self.iterations if self.family in ITERATIVE_FAMILIES else self.epsilon

    @property
    def tag(self) -> str:
        if self.family in ("deepfool", "cw", "whitebox"):
            return self.family
        return f"{self.family}-{self.epsilon:g}"


def parse_attack_tag(tag: str, config: AttackConfig | None = None, *, seed: int = 7) -> AttackSpec:
    """``pgd-8`` -> PGD with epsilon 8; ``deepfool``/``cw``/``whitebox`` carry config budgets."""
    config = config or AttackConfig()
    family, _, budget = tag.strip().lower().partition("-")
    common = {
        "iterations": config.iterations,
        "confidence": config.cw_confidence,
        "alpha_wb": config.whitebox_alpha,
        "beta_wb": config.whitebox_beta,
        "mim_decay": config.mim_decay,
        "overshoot": config.deepfool_overshoot,
        "max_iter": config.deepfool_max_iter,
        "binary_search_steps": config.cw_binary_search_steps,
        "cw_max_iterations": config.cw_max_iterations,
        "cw_learning_rate": config.cw_learning_rate,
        "cw_initial_const": config.cw_initial_const,
        "seed": seed,
    }
    if family == "whitebox":
        epsilon = float(budget) if budget else config.whitebox_epsilon
        return AttackSpec(family, epsilon=epsilon, **common)
    if family in ("deepfool", "cw"):
        if budget:
            raise ValueError(f"Attack '{family}' takes no epsilon, got tag '{tag}'")
        return AttackSpec(family, **common)
    if family not in ATTACK_FAMILIES or not budget:
        raise ValueError(f"Attack tag must look like 'pgd-8', 'deepfool', 'cw' or 'whitebox', got '{tag}'")
    try:
        epsilon = float(budget)
    except ValueError as exc:
        raise ValueError(f"Invalid epsilon in attack tag '{tag}'") from exc
    if family == "fgsm":
        common["iterations"] = 1
    return AttackSpec(family, epsilon=epsilon, **common)


@dataclass(frozen=True, eq=False)
class AdversarialRecord:
    original: FlatImage
    perturbed: FlatImage
    true_label: int
    original_label: int
    perturbed_label: int
    success: bool
    linf: float
    l2: float
    attack_tag: str = ""
    sample_id: str = ""


def _input_gradient(objective: Objective, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(objective(x), x)
    return grad.detach()


def cross_entropy_objective(network: nn.Module, labels: torch.Tensor) -> Objective:
    return lambda x: F.cross_entropy(network(x), labels, reduction="sum")


def project_linf(x_adv: torch.Tensor, x0: torch.Tensor, epsilon: float) -> torch.Tensor:
    return torch.clamp(torch.min(torch.max(x_adv, x0 - epsilon), x0 + epsilon), 0.0, 1.0)


def fgsm_perturb(network: nn.Module, x: torch.Tensor, labels: torch.Tensor, epsilon: float) -> torch.Tensor:
    grad = _input_gradient(cross_entropy_objective(network, labels), x)
    return torch.clamp(x + epsilon * grad.sign(), 0.0, 1.0)


def sign_ascent(
    objective: Objective,
    x0: torch.Tensor,
    epsilon: float,
    iterations: int,
    step: float,
    on_iterate: Callable[[int, torch.Tensor], None] | None = None,
) -> torch.Tensor:
    x_adv = x0.clone()
    for t in range(iterations):
        grad = _input_gradient(objective, x_adv)
        x_adv = project_linf(x_adv + step * grad.sign(), x0, epsilon)
        if on_iterate is not None:
            on_iterate(t, x_adv)
    return x_adv


def pgd_perturb(
    network: nn.Module,
    x: torch.Tensor,
    labels: torch.Tensor,
    epsilon: float,
    iterations: int,
    *,
    on_iterate: Callable[[int, torch.Tensor], None] | None = None,
) -> torch.Tensor:
    """Iterative sign ascent from the clean image with step epsilon / T."""
    return sign_ascent(
        cross_entropy_objective(network, labels), x, epsilon, iterations, epsilon / iterations, on_iterate
    )


def momentum_update(g: torch.Tensor, grad: torch.Tensor, decay: float | None = None) -> torch.Tensor:
    """g <- mu * g + grad / ||grad||_1 per sample; ``decay=None`` accumulates without decay."""
    norm = grad.abs().flatten(1).sum(dim=1).clamp_min(1e-12)
    normalized = grad / norm.view(-1, *([1] * (grad.dim() - 1)))
    return g + normalized if decay is None else decay * g + normalized


def mim_perturb(
    network: nn.Module,
    x: torch.Tensor,
    labels: torch.Tensor,
    epsilon: float,
    iterations: int,
    *,
    decay: float | None = None,
    on_iterate: Callable[[int, torch.Tensor], None] | None = None,
) -> torch.Tensor:
    objective = cross_entropy_objective(network, labels)
    step = epsilon / iterations
    g = torch.zeros_like(x)
    x_adv = x.clone()
    for t in range(iterations):
        g = momentum_update(g, _input_gradient(objective, x_adv), decay)
        x_adv = project_linf(x_adv + step * g.sign(), x, epsilon)
        if on_iterate is not None:
            on_iterate(t, x_adv)
    return x_adv


def deepfool_step(network: nn.Module, x: torch.Tensor, label: int) -> torch.Tensor:
    """Minimal linearized perturbation onto the closest class boundary, for one image."""
    x = x.detach().clone().requires_grad_(True)
    logits = network(x)[0]
    grads = [
        torch.autograd.grad(logits[k], x, retain_graph=k < logits.numel() - 1)[0]
        for k in range(logits.numel())
    ]
    best: tuple[float, torch.Tensor, float] | None = None
    for k in range(logits.numel()):
        if k == label:
            continue
        w = grads[k] - grads[label]
        w_norm = float(w.norm())
        if w_norm == 0.0:
            continue
        f = float(logits[k] - logits[label])
        distance = abs(f) / w_norm
        if best is None or distance < best[0]:
            best = (distance, w, f)
    if best is None:
        return torch.zeros_like(x).detach()
    _distance, w, f = best
    return (abs(f) / float(w.norm()) ** 2 * w).detach()


@torch.no_grad()
def _predict(network: nn.Module, x: torch.Tensor) -> torch.Tensor:
    return network(x).argmax(dim=1)


def deepfool_perturb(
    network: nn.Module,
    x: torch.Tensor,
    *,
    overshoot: float = 0.02,
    max_iter: int = 50,
) -> torch.Tensor:
    outputs = []
    for index in range(x.shape[0]):
        x0 = x[index : index + 1]
        label = int(_predict(network, x0)[0])
        total = torch.zeros_like(x0)
        x_adv = x0.clone()
        for _ in range(max_iter):
            if int(_predict(network, x_adv)[0]) != label:
                break
            total = total + deepfool_step(network, x_adv, label)
            x_adv = torch.clamp(x0 + (1.0 + overshoot) * total, 0.0, 1.0)
        outputs.append(x_adv)
    return torch.cat(outputs, dim=0)


def cw_objective(logits: torch.Tensor, target: torch.Tensor, confidence: float) -> torch.Tensor:
    """max(max_{i != t} Z_i - Z_t, -k) per row."""
    target_logit = logits.gather(1, target.view(-1, 1)).squeeze(1)
    is_target = F.one_hot(target, logits.shape[1]).bool()
    other = logits.masked_fill(is_target, float("-inf")).max(dim=1).values
    return torch.clamp(other - target_logit, min=-confidence)


def most_probable_other(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return logits.masked_fill(F.one_hot(labels, logits.shape[1]).bool(), float("-inf")).argmax(dim=1)


def cw_perturb(
    network: nn.Module,
    x: torch.Tensor,
    labels: torch.Tensor,
    *,
    confidence: float = 0.5,
    binary_search_steps: int = 5,
    max_iterations: int = 200,
    learning_rate: float = 1e-2,
    initial_const: float = 1e-2,
) -> torch.Tensor:
    """L2 attack toward the most probable wrong class; failed rows come back unchanged."""
    with torch.no_grad():
        target = most_probable_other(network(x), labels)
    batch = x.shape[0]
    w0 = torch.atanh((2.0 * x - 1.0) * (1.0 - 1e-6))
    lower = torch.zeros(batch, device=x.device, dtype=x.dtype)
    upper = torch.full_like(lower, 1e10)
    const = torch.full_like(lower, initial_const)
    best_l2 = torch.full_like(lower, float("inf"))
    best = x.clone()

    for _ in range(binary_search_steps):
        w = w0.clone().requires_grad_(True)
        optimizer = torch.optim.Adam([w], lr=learning_rate)
        succeeded = torch.zeros(batch, dtype=torch.bool, device=x.device)
        for _ in range(max_iterations):
            adv = (torch.tanh(w) + 1.0) / 2.0
            logits = network(adv)
            l2 = ((adv - x) ** 2).flatten(1).sum(dim=1)
            margin = cw_objective(logits, target, confidence)
            loss = (l2 + const * margin).sum()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            with torch.no_grad():
                hit = (logits.argmax(dim=1) == target) & (margin <= -confidence)
                improved = hit & (l2 < best_l2)
                best_l2 = torch.where(improved, l2.detach(), best_l2)
                best[improved] = adv.detach()[improved]
                succeeded |= hit
        upper = torch.where(succeeded, torch.minimum(upper, const), upper)
        lower = torch.where(succeeded, lower, torch.maximum(lower, const))
        const = torch.where(upper < 1e9, (lower + upper) / 2.0, const * 10.0)
    return best


@dataclass
class WhiteboxReference:
    """Per-class 'reject' cutoffs: low percentiles of benign log-likelihoods and log-densities."""

    loglik_thresholds: np.ndarray
    density_thresholds: np.ndarray
    percentile: float = 5.0
    metadata: dict[str, object] = field(default_factory=dict)


def fit_whitebox_reference(
    classifier: ClassifierModel,
    generator: GenerativeModel,
    gmm: GmmModel,
    samples: Sequence[LabeledSample],
    *,
    percentile: float = 5.0,
) -> WhiteboxReference:
    if not samples:
        raise ValueError("White-box reference needs benign samples")
    images = [sample.image for sample in samples]
    labels = np.array([sample.label for sample in samples])
    loglik = log_likelihoods(generator, images, labels.tolist())
    _probs, hidden, _pred = predict_arrays(classifier, images)
    densities = gmm_class_log_densities(gmm, hidden)[np.arange(len(labels)), labels]
    class_count = classifier.class_count
    loglik_thresholds = np.full(class_count, -np.inf)
    density_thresholds = np.full(class_count, -np.inf)
    for label in range(class_count):
        members = labels == label
        if not members.any():
            logger.warning("no benign samples for class %d; its reject indicator never fires", label)
            continue
        loglik_thresholds[label] = np.percentile(loglik[members], percentile)
        density_thresholds[label] = np.percentile(densities[members], percentile)
    return WhiteboxReference(loglik_thresholds, density_thresholds, percentile, {"samples": len(samples)})


def save_whitebox_reference(reference: WhiteboxReference, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"kind": "whitebox-reference", "reference": reference}, output)
    return output


def load_whitebox_reference(path: str | Path) -> WhiteboxReference:
    payload = joblib.load(Path(path))
    if not isinstance(payload, dict) or payload.get("kind") != "whitebox-reference":
        raise ValueError(f"{path} is not a white-box reference bundle")
    return payload["reference"]


def _all_others_rejected(scores: torch.Tensor, thresholds: torch.Tensor, is_true: torch.Tensor) -> torch.Tensor:
    return ((scores.detach() < thresholds[None, :]) | is_true).all(dim=1)


def whitebox_objective(
    ce: torch.Tensor,
    labels: torch.Tensor,
    reference: WhiteboxReference,
    *,
    log_likelihoods_by_class: torch.Tensor | None = None,
    log_densities_by_class: torch.Tensor | None = None,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> torch.Tensor:
    """J + alpha * prod Reject1 * max_{k != y} log P(x|k) + beta * prod Reject2 * max_{k != y} log P(h|k)."""
    total = ce
    for weight, scores, cutoffs in (
        (alpha, log_likelihoods_by_class, reference.loglik_thresholds),
        (beta, log_densities_by_class, reference.density_thresholds),
    ):
        if weight == 0.0 or scores is None:
            continue
        is_true = F.one_hot(labels, scores.shape[1]).bool()
        thresholds = torch.as_tensor(cutoffs, dtype=scores.dtype, device=scores.device)
        rejected = _all_others_rejected(scores, thresholds, is_true).to(scores.dtype)
        best_other = scores.masked_fill(is_true, float("-inf")).max(dim=1).values
        total = total + weight * rejected * best_other
    return total


def whitebox_perturb(
    classifier: ClassifierModel,
    generator: GenerativeModel | None,
    gmm: GmmModel | None,
    reference: WhiteboxReference | None,
    x: torch.Tensor,
    labels: torch.Tensor,
    epsilon: float,
    iterations: int,
    *,
    alpha: float = 1.0,
    beta: float = 1.0,
    on_iterate: Callable[[int, torch.Tensor], None] | None = None,
) -> torch.Tensor:
    network = classifier.network
    if alpha == 0.0 and beta == 0.0:
        objective = cross_entropy_objective(network, labels)
    else:
        if reference is None or (alpha and generator is None) or (beta and gmm is None):
            raise ValueError("White-box attack with likelihood terms needs the generator, GMM and reject reference")

        def objective(x_adv: torch.Tensor) -> torch.Tensor:
            logits, hidden = classifier.logits_and_representation(x_adv)
            ce = F.cross_entropy(logits, labels, reduction="none")
            loglik = None
            if alpha:
                loglik = torch.stack(
                    [
                        log_likelihood_surrogate(generator, x_adv, torch.full_like(labels, k))
                        for k in range(generator.class_count)
                    ],
                    dim=1,
                ).to(ce.dtype)
            densities = gmm_class_log_densities_torch(gmm, hidden.double()).to(ce.dtype) if beta else None
            return whitebox_objective(
                ce,
                labels,
                reference,
                log_likelihoods_by_class=loglik,
                log_densities_by_class=densities,
                alpha=alpha,
                beta=beta,
            ).sum()

    return sign_ascent(objective, x, epsilon, iterations, epsilon / iterations, on_iterate)


def quantize_adversarial(original: np.ndarray, x_adv: torch.Tensor, epsilon: float | None) -> np.ndarray:
    """Round to integers; with ``epsilon`` (pixel units) clip back into the integer L-inf ball."""
    values = quantize_unit_tensor(x_adv).astype(np.int64)
    if epsilon is not None:
        reference = np.asarray(original, dtype=np.int64)
        bound = int(math.floor(epsilon + 1e-9))
        values = np.clip(values, reference - bound, reference + bound)
    return np.clip(values, 0, 255).astype(np.uint8)


def is_successful(classifier: ClassifierModel | None, record: AdversarialRecord) -> bool:
    """Original correctly classified and perturbed label differs from the truth."""
    original_label, perturbed_label = record.original_label, record.perturbed_label
    if classifier is not None:
        _probs, _hidden, predicted = predict_arrays(classifier, [record.original, record.perturbed])
        original_label, perturbed_label = int(predicted[0]), int(predicted[1])
    return original_label == record.true_label and perturbed_label != record.true_label


def success_rate(records: Sequence[AdversarialRecord]) -> float:
    attempted = [record for record in records if record.original_label == record.true_label]
    if not attempted:
        return float("nan")
    return sum(record.success for record in attempted) / len(attempted)


def _perturb(
    spec: AttackSpec,
    classifier: ClassifierModel,
    x: torch.Tensor,
    y: torch.Tensor,
    *,
    generator: GenerativeModel | None,
    gmm: GmmModel | None,
    reference: WhiteboxReference | None,
) -> torch.Tensor:
    network = classifier.network
    epsilon = spec.epsilon / PIXEL_SCALE
    if spec.family == "fgsm":
        return fgsm_perturb(network, x, y, epsilon)
    if spec.family == "pgd":
        return pgd_perturb(network, x, y, epsilon, spec.iterations)
    if spec.family == "mim":
        return mim_perturb(network, x, y, epsilon, spec.iterations, decay=spec.mim_decay)
    if spec.family == "deepfool":
        return deepfool_perturb(network, x, overshoot=spec.overshoot, max_iter=spec.max_iter)
    if spec.family == "cw":
        return cw_perturb(
            network,
            x,
            y,
            confidence=spec.confidence,
            binary_search_steps=spec.binary_search_steps,
            max_iterations=spec.cw_max_iterations,
            learning_rate=spec.cw_learning_rate,
            initial_const=spec.cw_initial_const,
        )
    return whitebox_perturb(
        classifier,
        generator,
        gmm,
        reference,
        x,
        y,
        epsilon,
        spec.iterations,
        alpha=spec.alpha_wb,
        beta=spec.beta_wb,
    )


def attack_batch(
    spec: AttackSpec,
    classifier: ClassifierModel,
    images: Sequence[FlatImage],
    labels: Sequence[int],
    *,
    generator: GenerativeModel | None = None,
    gmm: GmmModel | None = None,
    reference: WhiteboxReference | None = None,
    sample_ids: Sequence[str] | None = None,
) -> list[AdversarialRecord]:
    if len(images) != len(labels):
        raise ValueError(f"Got {len(images)} images but {len(labels)} labels")
    if not images:
        return []
    for image in images:
        classifier.check_image(image)
    classifier.network.eval()
    x = to_unit_tensor(images, device=classifier.device, dtype=classifier.dtype)
    y = torch.tensor([int(label) for label in labels], dtype=torch.int64, device=classifier.device)
    x_adv = _perturb(spec, classifier, x, y, generator=generator, gmm=gmm, reference=reference)

    original_grids = stack_grids(images)
    perturbed_grids = quantize_adversarial(original_grids, x_adv, spec.epsilon if spec.norm == "linf" else None)
    perturbed = [image.with_pixels(grid.reshape(-1)) for image, grid in zip(images, perturbed_grids)]
    _p, _h, original_pred = predict_arrays(classifier, images)
    _p, _h, perturbed_pred = predict_arrays(classifier, perturbed)
    diff = perturbed_grids.astype(np.float64) - original_grids.astype(np.float64)
    ids = list(sample_ids) if sample_ids is not None else [""] * len(images)

    records = []
    for index, (image, label) in enumerate(zip(images, labels)):
        record = AdversarialRecord(
            original=image,
            perturbed=perturbed[index],
            true_label=int(label),
            original_label=int(original_pred[index]),
            perturbed_label=int(perturbed_pred[index]),
            success=False,
            linf=float(np.abs(diff[index]).max()),
            l2=float(np.sqrt(np.sum(diff[index] ** 2))),
            attack_tag=spec.tag,
            sample_id=ids[index],
        )
        records.append(replace(record, success=is_successful(None, record)))
    return records


def fgsm(classifier: ClassifierModel, x: FlatImage, y: int, epsilon: float) -> AdversarialRecord:
    return attack_batch(AttackSpec("fgsm", epsilon=epsilon, iterations=1), classifier, [x], [y])[0]


def pgd(classifier: ClassifierModel, x: FlatImage, y: int, epsilon: float, iterations: int = 40) -> AdversarialRecord:
    return attack_batch(AttackSpec("pgd", epsilon=epsilon, iterations=iterations), classifier, [x], [y])[0]


def mim(
    classifier: ClassifierModel,
    x: FlatImage,
    y: int,
    epsilon: float,
    iterations: int = 40,
    *,
    decay: float | None = None,
) -> AdversarialRecord:
    spec = AttackSpec("mim", epsilon=epsilon, iterations=iterations, mim_decay=decay)
    return attack_batch(spec, classifier, [x], [y])[0]


def deepfool(classifier: ClassifierModel, x: FlatImage, y: int, *, overshoot: float = 0.02, max_iter: int = 50) -> AdversarialRecord:
    return attack_batch(AttackSpec("deepfool", overshoot=overshoot, max_iter=max_iter), classifier, [x], [y])[0]


def cw(classifier: ClassifierModel, x: FlatImage, y: int, confidence: float = 0.5, **options) -> AdversarialRecord:
    return attack_batch(AttackSpec("cw", confidence=confidence, **options), classifier, [x], [y])[0]


def whitebox(
    classifier: ClassifierModel,
    generator: GenerativeModel | None,
    gmm: GmmModel | None,
    x: FlatImage,
    y: int,
    *,
    epsilon: float = 8.0,
    iterations: int = 40,
    alpha_wb: float = 1.0,
    beta_wb: float = 1.0,
    reference: WhiteboxReference | None = None,
) -> AdversarialRecord:
    spec = AttackSpec("whitebox", epsilon=epsilon, iterations=iterations, alpha_wb=alpha_wb, beta_wb=beta_wb)
    return attack_batch(spec, classifier, [x], [y], generator=generator, gmm=gmm, reference=reference)[0]


def run_attack(
    spec: AttackSpec,
    classifier: ClassifierModel,
    samples: Sequence[LabeledSample],
    *,
    generator: GenerativeModel | None = None,
    gmm: GmmModel | None = None,
    reference: WhiteboxReference | None = None,
    batch_size: int = 64,
    progress: bool = True,
) -> list[AdversarialRecord]:
    torch.manual_seed(spec.seed)
    records: list[AdversarialRecord] = []
    starts = range(0, len(samples), batch_size)
    for start in tqdm(starts, desc=f"attack {spec.tag}", disable=not progress, leave=False):
        chunk = samples[start : start + batch_size]
        records.extend(
            attack_batch(
                spec,
                classifier,
                [sample.image for sample in chunk],
                [sample.label for sample in chunk],
                generator=generator,
                gmm=gmm,
                reference=reference,
                sample_ids=[sample.sample_id for sample in chunk],
            )
        )
    logger.info("attack %s: %d records, success rate %.3f", spec.tag, len(records), success_rate(records))
    return records
