"""Multi-view adversarial image detection: views, predictors and the hybrid detector."""

__version__ = "0.3.0"

from .core import *  # noqa: F401,F403
from .evaluation import EvalReport, build_report
from .runtime import load_experiment

__all__ = [
    "__version__",
    "EvalReport",
    "build_report",
    "load_experiment",
]
