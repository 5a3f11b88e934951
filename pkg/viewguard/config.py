from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import json
import os
from pathlib import Path
from typing import Any

from .paths import DEFAULT_CONFIG


D3_MODES = ("conditional", "marginal")
IF_ORIENTATIONS = ("complement", "raw")
DEFAULT_EVAL_ATTACKS = (
    "fgsm-4",
    "fgsm-8",
    "fgsm-16",
    "pgd-4",
    "pgd-8",
    "pgd-16",
    "mim-4",
    "mim-8",
    "mim-16",
    "deepfool",
    "cw",
    "whitebox",
)


@dataclass
class DataConfig:
    root: str = "data/cifar10"
    format: str = "folder"
    name: str = "cifar10-desk"
    class_names: list[str] | None = None
    class_count: int | None = None
    per_class: int | None = None
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_manifest: str | None = None
    seed: int = 7

    def __post_init__(self) -> None:
        if self.format not in ("folder", "npz"):
            raise ValueError(f"Unsupported dataset format: {self.format}")
        self.split = tuple(float(value) for value in self.split)
        if len(self.split) != 3 or any(value < 0.0 for value in self.split):
            raise ValueError(f"split must be three non-negative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-6:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")


@dataclass
class ClassifierConfig:
    blocks_per_stage: int = 2
    base_width: int = 16
    widen_factor: int = 2
    activation: str = "relu"
    optimizer: str = "sgd"
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 128

    def __post_init__(self) -> None:
        if self.activation not in ("relu", "elu"):
            raise ValueError(f"Unsupported classifier activation: {self.activation}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"Unsupported classifier optimizer: {self.optimizer}")


@dataclass
class GeneratorConfig:
    hidden_channels: int = 96
    n_residual: int = 6
    kernel_size: int = 7
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 64
    grad_clip: float = 1.0
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass
class ViewConfig:
    parallel: bool = True


@dataclass
class PredictorConfig:
    gmm_components: int = 8
    gmm_tol: float = 1e-4
    gmm_max_iter: int = 200
    kl_floor: float = 1e-12
    d3_mode: str = "conditional"

    def __post_init__(self) -> None:
        if self.d3_mode not in D3_MODES:
            raise ValueError(f"d3_mode must be one of {D3_MODES}, got {self.d3_mode}")


@dataclass
class DetectorConfig:
    n_trees: int = 100
    if_trees: int = 100
    if_subsample: int = 256
    tnr_target: float = 0.95
    if_orientation: str = "complement"
    train_attacks: list[str] = field(default_factory=lambda: ["deepfool", "pgd-4"])
    min_calibration_points: int = 100

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be at least 1, got {self.n_trees}")
        if self.if_orientation not in IF_ORIENTATIONS:
            raise ValueError(f"if_orientation must be one of {IF_ORIENTATIONS}, got {self.if_orientation}")
        if not 0.0 < self.tnr_target <= 1.0:
            raise ValueError(f"tnr_target must lie in (0, 1], got {self.tnr_target}")


@dataclass
class AttackConfig:
    iterations: int = 40
    batch_size: int = 64
    mim_decay: float | None = None
    deepfool_overshoot: float = 0.02
    deepfool_max_iter: int = 50
    cw_confidence: float = 0.5
    cw_binary_search_steps: int = 5
    cw_max_iterations: int = 200
    cw_learning_rate: float = 1e-2
    cw_initial_const: float = 1e-2
    whitebox_epsilon: float = 8.0
    whitebox_alpha: float = 1.0
    whitebox_beta: float = 1.0
    whitebox_reject_percentile: float = 5.0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")


@dataclass
class EvaluationConfig:
    attacks: list[str] = field(default_factory=lambda: list(DEFAULT_EVAL_ATTACKS))
    mi_bins: int = 20
    bootstrap_samples: int = 1000
    severe_failure_adr: float = 0.5
    max_images: int | None = None


@dataclass
class ExperimentConfig:
    seed: int = 7
    device: str = "auto"
    data: DataConfig = field(default_factory=DataConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    views: ViewConfig = field(default_factory=ViewConfig)
    predictors: PredictorConfig = field(default_factory=PredictorConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    attacks: AttackConfig = field(default_factory=AttackConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


SECTION_TYPES = {
    "data": DataConfig,
    "classifier": ClassifierConfig,
    "generator": GeneratorConfig,
    "views": ViewConfig,
    "predictors": PredictorConfig,
    "detector": DetectorConfig,
    "attacks": AttackConfig,
    "evaluation": EvaluationConfig,
}


def _build_section(name: str, raw: dict[str, Any]):
    section_type = SECTION_TYPES[name]
    known = {item.name for item in fields(section_type)}
    for key in raw:
        if key not in known:
            raise KeyError(f"Unknown key '{key}' in config section '{name}'")
    return section_type(**raw)


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    top_level = {"seed", "device", *SECTION_TYPES}
    for key in raw:
        if key not in top_level:
            raise KeyError(f"Unknown top-level config key '{key}'")
    sections = {name: _build_section(name, dict(raw.get(name, {}))) for name in SECTION_TYPES}
    return ExperimentConfig(
        seed=int(raw.get("seed", 7)),
        device=str(raw.get("device", "auto")),
        **sections,
    )


def resolve_config_path(raw_path: str | Path | None = None) -> Path:
    if raw_path:
        return Path(raw_path).expanduser()
    explicit = os.environ.get("VIEWGUARD_CONFIG")
    if explicit:
        return Path(explicit).expanduser()
    return DEFAULT_CONFIG


def load_config(path: str | Path | None = None, *, seed: int | None = None) -> ExperimentConfig:
    config_path = resolve_config_path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file does not exist: {config_path}")
    config = config_from_dict(json.loads(config_path.read_text(encoding="utf-8")))
    seed_override = seed
    if seed_override is None and os.environ.get("VIEWGUARD_SEED"):
        seed_override = int(os.environ["VIEWGUARD_SEED"])
    if seed_override is not None:
        config.seed = int(seed_override)
    device_override = os.environ.get("VIEWGUARD_DEVICE")
    if device_override:
        config.device = device_override
    return config
