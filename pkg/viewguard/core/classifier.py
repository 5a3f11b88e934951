"""Victim classifier: a reduced wide residual network.

Inputs are normalized to [0, 1]. ``h(z)`` is the post-activation, post-pooling
penultimate vector; its width is ``4 * base_width * widen_factor``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from ..config import ClassifierConfig
from .data import DatasetSplit, FlatImage, LabeledSample
from .tensors import resolve_device, to_unit_tensor


logger = logging.getLogger(__name__)

RESIDUAL_NONDETERMINISM = (
    "Training is seeded; GPU convolution kernels may still introduce run-to-run differences "
    "in the last bits of the weights."
)


def _activation(name: str) -> nn.Module:
    return nn.ELU() if name == "elu" else nn.ReLU()


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, activation: str) -> None:
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_channels)
        self.act1 = _activation(activation)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.act2 = _activation(activation)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False)
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.act1(self.bn1(x))
        shortcut = self.shortcut(out) if not isinstance(self.shortcut, nn.Identity) else x
        out = self.conv1(out)
        out = self.conv2(self.act2(self.bn2(out)))
        return out + shortcut


class ResidualClassifier(nn.Module):
    def __init__(
        self,
        in_channels: int,
        class_count: int,
        *,
        blocks_per_stage: int = 2,
        base_width: int = 16,
        widen_factor: int = 2,
        activation: str = "relu",
    ) -> None:
        super().__init__()
        widths = [base_width * widen_factor * scale for scale in (1, 2, 4)]
        self.stem = nn.Conv2d(in_channels, base_width, 3, padding=1, bias=False)
        layers: list[nn.Module] = []
        current = base_width
        for stage, width in enumerate(widths):
            for block in range(blocks_per_stage):
                stride = 2 if stage > 0 and block == 0 else 1
                layers.append(ResidualBlock(current, width, stride, activation))
                current = width
        self.stages = nn.Sequential(*layers)
        self.head_norm = nn.BatchNorm2d(current)
        self.head_act = _activation(activation)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(current, class_count)
        self.representation_width = current

    def representation(self, x: torch.Tensor) -> torch.Tensor:
        out = self.stages(self.stem(x))
        out = self.head_act(self.head_norm(out))
        return torch.flatten(self.pool(out), 1)

    def forward_with_representation(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = self.representation(x)
        return self.fc(hidden), hidden

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.representation(x))


@dataclass
class ClassifierModel:
    network: nn.Module
    class_count: int
    input_shape: tuple[int, int, int]
    architecture: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def device(self) -> torch.device:
        return next(self.network.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.network.parameters()).dtype

    @property
    def representation_width(self) -> int:
        return int(self.network.representation_width)

    def check_image(self, image: FlatImage) -> None:
        if image.shape != tuple(self.input_shape):
            raise ValueError(f"Image shape {image.shape} does not match classifier input {tuple(self.input_shape)}")

    def logits_and_representation(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.network.forward_with_representation(x)


@dataclass(frozen=True, eq=False)
class ClassifierOutput:
    probs: np.ndarray
    representation: np.ndarray
    label: int


def build_classifier(input_shape: tuple[int, int, int], class_count: int, config: ClassifierConfig) -> ClassifierModel:
    architecture = {
        "family": "wide-residual",
        "in_channels": input_shape[2],
        "class_count": class_count,
        "blocks_per_stage": config.blocks_per_stage,
        "base_width": config.base_width,
        "widen_factor": config.widen_factor,
        "activation": config.activation,
    }
    network = ResidualClassifier(
        input_shape[2],
        class_count,
        blocks_per_stage=config.blocks_per_stage,
        base_width=config.base_width,
        widen_factor=config.widen_factor,
        activation=config.activation,
    )
    architecture["representation_width"] = network.representation_width
    return ClassifierModel(network, class_count, tuple(input_shape), architecture)


def softmax_probabilities(logits: torch.Tensor) -> np.ndarray:
    return torch.softmax(logits.detach().double(), dim=-1).cpu().numpy()


@torch.no_grad()
def predict_arrays(
    model: ClassifierModel,
    images: Sequence[FlatImage],
    *,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probabilities (N, C), representations (N, d_h) and argmax labels (N,)."""
    model.network.eval()
    probs_parts: list[np.ndarray] = []
    rep_parts: list[np.ndarray] = []
    for start in range(0, len(images), batch_size):
        chunk = list(images[start : start + batch_size])
        for image in chunk:
            model.check_image(image)
        x = to_unit_tensor(chunk, device=model.device, dtype=model.dtype)
        logits, hidden = model.logits_and_representation(x)
        probs_parts.append(softmax_probabilities(logits))
        rep_parts.append(hidden.detach().double().cpu().numpy())
    probs = np.concatenate(probs_parts)
    return probs, np.concatenate(rep_parts), np.argmax(probs, axis=1)


def forward(model: ClassifierModel, image: FlatImage) -> ClassifierOutput:
    probs, hidden, labels = predict_arrays(model, [image])
    return ClassifierOutput(probs=probs[0], representation=hidden[0], label=int(labels[0]))


def loss_gradient(model: ClassifierModel, image: np.ndarray, label: int) -> np.ndarray:
    """Input gradient of the cross-entropy loss for a normalized raster vector."""
    if not 0 <= label < model.class_count:
        raise ValueError(f"Label {label} is outside [0, {model.class_count})")
    rows, cols, channels = model.input_shape
    values = np.asarray(image, dtype=np.float64).reshape(-1)
    if values.size != rows * cols * channels:
        raise ValueError(f"Expected {rows * cols * channels} values, got {values.size}")
    grid = values.reshape(rows, cols, channels).transpose(2, 0, 1)[np.newaxis]
    x = torch.tensor(grid, dtype=model.dtype, device=model.device, requires_grad=True)
    model.network.eval()
    loss = F.cross_entropy(model.network(x), torch.tensor([label], device=model.device), reduction="sum")
    (grad,) = torch.autograd.grad(loss, x)
    return grad[0].detach().double().cpu().numpy().transpose(1, 2, 0).reshape(-1)


@torch.no_grad()
def evaluate_accuracy(model: ClassifierModel, samples: Sequence[LabeledSample], *, batch_size: int = 256) -> float:
    if not samples:
        return float("nan")
    _probs, _hidden, labels = predict_arrays(model, [sample.image for sample in samples], batch_size=batch_size)
    truth = np.array([sample.label for sample in samples])
    return float(np.mean(labels == truth))


def _loader(samples: Sequence[LabeledSample], batch_size: int, seed: int) -> DataLoader:
    x = to_unit_tensor([sample.image for sample in samples])
    y = torch.tensor([sample.label for sample in samples], dtype=torch.int64)
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(TensorDataset(x, y), batch_size=batch_size, shuffle=True, generator=generator)


def train_classifier(
    data: DatasetSplit,
    config: ClassifierConfig,
    *,
    seed: int = 7,
    device: str = "auto",
    progress: bool = True,
) -> ClassifierModel:
    if not data.train:
        raise ValueError("Classifier training requires a non-empty train split")
    torch.manual_seed(seed)
    target = resolve_device(device)
    model = build_classifier(data.image_shape, data.class_count, config)
    model.network.to(target)

    params = model.network.parameters()
    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    else:
        optimizer = torch.optim.SGD(
            params,
            lr=config.learning_rate,
            momentum=config.momentum,
            weight_decay=config.weight_decay,
            nesterov=config.momentum > 0.0,
        )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(config.epochs, 1))
    loader = _loader(data.train, config.batch_size, seed)

    epoch_loss = float("nan")
    for epoch in range(config.epochs):
        model.network.train()
        total, count = 0.0, 0
        for step, (x, y) in enumerate(tqdm(loader, desc=f"classifier epoch {epoch + 1}", disable=not progress, leave=False)):
            x, y = x.to(target), y.to(target)
            loss = F.cross_entropy(model.network(x), y)
            if not math.isfinite(loss.item()):
                raise RuntimeError(
                    f"Classifier loss diverged at epoch {epoch + 1}, step {step}: loss={loss.item()}, "
                    f"lr={scheduler.get_last_lr()[0]:.3g}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * y.shape[0]
            count += y.shape[0]
        scheduler.step()
        epoch_loss = total / max(count, 1)
        logger.info("classifier epoch %d/%d loss=%.4f", epoch + 1, config.epochs, epoch_loss)

    model.network.eval()
    model.metadata = {
        "epochs": config.epochs,
        "seed": seed,
        "final_train_loss": epoch_loss,
        "train_accuracy": evaluate_accuracy(model, data.train),
        "val_accuracy": evaluate_accuracy(model, data.val),
        "test_accuracy": evaluate_accuracy(model, data.test),
        "dataset": data.name,
        "nondeterminism": RESIDUAL_NONDETERMINISM,
    }
    logger.info(
        "classifier trained: val_accuracy=%.3f test_accuracy=%.3f",
        model.metadata["val_accuracy"],
        model.metadata["test_accuracy"],
    )
    return model


def save_classifier(model: ClassifierModel, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": "classifier",
            "architecture": model.architecture,
            "input_shape": list(model.input_shape),
            "class_count": model.class_count,
            "state_dict": {key: value.cpu() for key, value in model.network.state_dict().items()},
            "metadata": model.metadata,
        },
        output,
    )
    return output


def load_classifier(path: str | Path, *, device: str = "auto") -> ClassifierModel:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("kind") != "classifier":
        raise ValueError(f"{path} is not a classifier checkpoint")
    architecture = payload["architecture"]
    config = ClassifierConfig(
        blocks_per_stage=architecture["blocks_per_stage"],
        base_width=architecture["base_width"],
        widen_factor=architecture["widen_factor"],
        activation=architecture["activation"],
    )
    model = build_classifier(tuple(payload["input_shape"]), int(payload["class_count"]), config)
    model.network.load_state_dict(payload["state_dict"])
    model.network.to(resolve_device(device)).eval()
    model.metadata = dict(payload.get("metadata", {}))
    return model
