from .attacks import AttackSpec, AdversarialRecord, parse_attack_tag, run_attack
from .classifier import ClassifierModel, forward, load_classifier
from .data import FlatImage, LabeledSample, flatten_raster, unflatten
from .detector import HybridDetector, decide, load_detector, score, train_detector
from .feature_store import FeatureRecord, read_feature_store, write_feature_store
from .generator import GenerativeModel, generate_rows, load_generator
from .predictors import FeatureVector, GmmModel, extract_features
from .views import ViewSet, generate_views

__all__ = [
    "AdversarialRecord",
    "AttackSpec",
    "ClassifierModel",
    "FeatureRecord",
    "FeatureVector",
    "FlatImage",
    "GenerativeModel",
    "GmmModel",
    "HybridDetector",
    "LabeledSample",
    "ViewSet",
    "decide",
    "extract_features",
    "flatten_raster",
    "forward",
    "generate_rows",
    "generate_views",
    "load_classifier",
    "load_detector",
    "load_generator",
    "parse_attack_tag",
    "read_feature_store",
    "run_attack",
    "score",
    "train_detector",
    "unflatten",
    "write_feature_store",
]
