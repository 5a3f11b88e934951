"""Small deterministic models and images shared by the unit tests."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from viewguard.core.classifier import ClassifierModel
from viewguard.core.data import FlatImage, LabeledSample
from viewguard.core.feature_store import BENIGN_TAG, FeatureRecord
from viewguard.core.generator import PIXEL_LEVELS, GenerativeModel
from viewguard.core.predictors import FeatureVector


class LinearNet(nn.Module):
    """logits = W x + b on the flattened (C, H, W) input; h(z) is the flattened input."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray) -> None:
        super().__init__()
        self.linear = nn.Linear(weight.shape[1], weight.shape[0]).double()
        with torch.no_grad():
            self.linear.weight.copy_(torch.as_tensor(weight, dtype=torch.float64))
            self.linear.bias.copy_(torch.as_tensor(bias, dtype=torch.float64))
        self.representation_width = int(weight.shape[1])

    def forward_with_representation(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = x.reshape(x.shape[0], -1)
        return self.linear(hidden), hidden

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_with_representation(x)[0]


def linear_classifier(weight: np.ndarray, bias: np.ndarray, input_shape: tuple[int, int, int]) -> ClassifierModel:
    weight = np.asarray(weight, dtype=np.float64)
    return ClassifierModel(LinearNet(weight, np.asarray(bias, dtype=np.float64)), weight.shape[0], input_shape)


class FixedPixelNet(nn.Module):
    """Every sub-pixel gets the same 256-way distribution whatever the context and label."""

    def __init__(self, probs: np.ndarray, data_channels: int) -> None:
        super().__init__()
        log_probs = np.log(np.clip(np.asarray(probs, dtype=np.float64), 1e-300, None))
        log_probs[np.asarray(probs) == 0] = -1e4
        self.register_buffer("log_probs", torch.as_tensor(log_probs, dtype=torch.float32))
        self.scale = nn.Parameter(torch.ones(()))
        self.data_channels = data_channels

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        batch, _channels, rows, cols = x.shape
        logits = self.log_probs.view(1, 1, PIXEL_LEVELS, 1, 1) * self.scale
        return logits.expand(batch, self.data_channels, PIXEL_LEVELS, rows, cols) + 0.0 * x.sum()


def fixed_generator(probs: np.ndarray, input_shape: tuple[int, int, int], class_count: int = 2) -> GenerativeModel:
    return GenerativeModel(FixedPixelNet(probs, input_shape[2]), class_count, input_shape)


def uniform_generator(input_shape: tuple[int, int, int], class_count: int = 2) -> GenerativeModel:
    return fixed_generator(np.full(PIXEL_LEVELS, 1.0 / PIXEL_LEVELS), input_shape, class_count)


def gradient_image(rows: int = 4, cols: int = 3, channels: int = 1, offset: int = 0) -> FlatImage:
    values = (np.arange(rows * cols * channels) * 7 + offset) % 256
    return FlatImage(values.astype(np.uint8), rows, cols, channels)


def random_image(rng: np.random.Generator, rows: int = 4, cols: int = 4, channels: int = 1) -> FlatImage:
    return FlatImage(rng.integers(0, 256, size=rows * cols * channels).astype(np.uint8), rows, cols, channels)


def labeled_samples(images: list[FlatImage], labels: list[int], prefix: str = "s") -> list[LabeledSample]:
    return [LabeledSample(image, label, f"{prefix}{index:03d}") for index, (image, label) in enumerate(zip(images, labels))]


def feature_vector(values, *, image_id: str = "", label_used: int = 0) -> FeatureVector:
    d1, d2, d3, d4 = (float(value) for value in values)
    return FeatureVector(d1=d1, d2=d2, d3=d3, d4=d4, image_id=image_id, label_used=label_used, view_seeds=(1, 2, 3))


def synthetic_feature_records(rng: np.random.Generator) -> list[FeatureRecord]:
    """Benign rows near 0 and attacked rows near 3 in every predictor.

    Test benign rows include 12 misclassified inputs; pgd-8 test rows flip 80 of 100 labels.
    """
    records: list[FeatureRecord] = []

    def add(split: str, tag: str, count: int, mean: float, flipped: int) -> None:
        for index in range(count):
            true_label = index % 3
            label_used = (true_label + 1) % 3 if index < flipped else true_label
            features = feature_vector(rng.normal(mean, 1.0, size=4), image_id=f"{split}-{tag}-{index}", label_used=label_used)
            records.append(FeatureRecord(features, split, tag, true_label))

    add("train", BENIGN_TAG, 300, 0.0, 0)
    add("val", BENIGN_TAG, 200, 0.0, 0)
    add("test", BENIGN_TAG, 120, 0.0, 12)
    add("train", "pgd-4", 200, 3.0, 200)
    add("test", "pgd-8", 100, 3.0, 80)
    return records
