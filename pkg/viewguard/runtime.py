import logging
import os
import random
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, load_config
from .core.classifier import ClassifierModel, load_classifier
from .core.data import DatasetSplit, load_dataset
from .core.generator import GenerativeModel, load_generator
from .paths import REPO_ROOT


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _is_truthy(value: str | None) -> bool:
    if value is None:
        return False
    return value.strip().lower() in {"1", "true", "yes", "y", "on"}


def default_log_level() -> str:
    return os.environ.get("VIEWGUARD_LOG_LEVEL", "INFO").upper()


def progress_enabled(no_progress: bool = False) -> bool:
    return not (no_progress or _is_truthy(os.environ.get("VIEWGUARD_NO_PROGRESS")))


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(level=(level or default_log_level()).upper(), format=LOG_FORMAT, force=True)


def seed_everything(seed: int) -> np.random.Generator:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def load_experiment(config_path: str | None = None, seed: int | None = None) -> ExperimentConfig:
    return load_config(config_path, seed=seed)


def load_data(config: ExperimentConfig) -> DatasetSplit:
    return load_dataset(config.data, base_dir=REPO_ROOT)


def load_models(
    config: ExperimentConfig,
    classifier_path: str | Path | None = None,
    generator_path: str | Path | None = None,
) -> tuple[ClassifierModel | None, GenerativeModel | None]:
    classifier = load_classifier(classifier_path, device=config.device) if classifier_path else None
    generator = (
        load_generator(generator_path, device=config.device, temperature=config.generator.temperature)
        if generator_path
        else None
    )
    return classifier, generator


__all__ = [
    "LOG_FORMAT",
    "configure_logging",
    "default_log_level",
    "load_data",
    "load_experiment",
    "load_models",
    "progress_enabled",
    "seed_everything",
]
