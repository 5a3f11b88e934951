import os
from pathlib import Path


PACKAGE_ROOT = Path(__file__).resolve().parent
REPO_ROOT = PACKAGE_ROOT.parent
RESULTS_ROOT = Path(os.environ.get("VIEWGUARD_RESULTS_ROOT", REPO_ROOT / "results"))
CONFIGS_ROOT = REPO_ROOT / "configs"
DEFAULT_CONFIG = CONFIGS_ROOT / "cifar10_desk.json"
