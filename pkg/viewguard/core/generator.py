"""Class-conditional autoregressive pixel model.

The network factorizes p(z | y) over sub-pixels in raster order (row, column,
channel-minor). Masks are channel-grouped: at the centre tap an output unit of
colour group g sees input groups < g (mask "A", first layer) or <= g (mask "B").
Each sub-pixel has an explicit 256-way categorical output. The label enters as a
learned per-class bias added after every masked convolution.
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

from ..config import GeneratorConfig
from .data import DatasetSplit, FlatImage, LabeledSample, unflatten
from .tensors import PIXEL_SCALE, resolve_device, to_pixel_tensor, to_unit_tensor


logger = logging.getLogger(__name__)

PIXEL_LEVELS = 256
DISCRETIZATION = "categorical-256"


def channel_groups(n_channels: int, data_channels: int) -> np.ndarray:
    return (np.arange(n_channels) * data_channels) // n_channels


def build_causal_mask(
    out_channels: int,
    in_channels: int,
    kernel_size: int,
    mask_type: str,
    data_channels: int,
) -> torch.Tensor:
    if mask_type not in ("A", "B"):
        raise ValueError(f"mask_type must be 'A' or 'B', got {mask_type}")
    centre = kernel_size // 2
    mask = np.zeros((out_channels, in_channels, kernel_size, kernel_size), dtype=np.float32)
    mask[:, :, :centre, :] = 1.0
    mask[:, :, centre, :centre] = 1.0
    out_groups = channel_groups(out_channels, data_channels)[:, np.newaxis]
    in_groups = channel_groups(in_channels, data_channels)[np.newaxis, :]
    visible = out_groups > in_groups if mask_type == "A" else out_groups >= in_groups
    mask[:, :, centre, centre] = visible.astype(np.float32)
    return torch.from_numpy(mask)


class MaskedConv2d(nn.Conv2d):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        mask_type: str,
        data_channels: int,
    ) -> None:
        super().__init__(in_channels, out_channels, kernel_size, padding=kernel_size // 2)
        self.register_buffer("mask", build_causal_mask(out_channels, in_channels, kernel_size, mask_type, data_channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.weight * self.mask, self.bias, self.stride, self.padding)


class MaskedResidualBlock(nn.Module):
    def __init__(self, hidden: int, data_channels: int, class_count: int) -> None:
        super().__init__()
        self.conv = MaskedConv2d(hidden, hidden, 3, "B", data_channels)
        self.label_bias = nn.Embedding(class_count, hidden)
        self.project = MaskedConv2d(hidden, hidden, 1, "B", data_channels)

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        out = self.conv(F.relu(x)) + self.label_bias(labels)[:, :, None, None]
        return x + self.project(F.relu(out))


class ConditionalPixelCNN(nn.Module):
    def __init__(
        self,
        data_channels: int,
        class_count: int,
        *,
        hidden_channels: int = 96,
        n_residual: int = 6,
        kernel_size: int = 7,
    ) -> None:
        super().__init__()
        if hidden_channels % data_channels != 0:
            raise ValueError(
                f"hidden_channels={hidden_channels} must be a multiple of the {data_channels} image channels"
            )
        self.data_channels = data_channels
        self.input_conv = MaskedConv2d(data_channels, hidden_channels, kernel_size, "A", data_channels)
        self.input_label = nn.Embedding(class_count, hidden_channels)
        self.blocks = nn.ModuleList(
            MaskedResidualBlock(hidden_channels, data_channels, class_count) for _ in range(n_residual)
        )
        self.head = MaskedConv2d(hidden_channels, hidden_channels, 1, "B", data_channels)
        self.head_label = nn.Embedding(class_count, hidden_channels)
        self.output = MaskedConv2d(hidden_channels, data_channels * PIXEL_LEVELS, 1, "B", data_channels)

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Logits of shape (N, channels, 256, rows, cols) for unit-interval input."""
        out = self.input_conv(2.0 * x - 1.0) + self.input_label(labels)[:, :, None, None]
        for block in self.blocks:
            out = block(out, labels)
        out = self.head(F.relu(out)) + self.head_label(labels)[:, :, None, None]
        logits = self.output(F.relu(out))
        batch, _, rows, cols = logits.shape
        return logits.view(batch, self.data_channels, PIXEL_LEVELS, rows, cols)


@dataclass
class GenerativeModel:
    network: nn.Module
    class_count: int
    input_shape: tuple[int, int, int]
    architecture: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)
    temperature: float = 1.0
    discretization: str = DISCRETIZATION

    @property
    def device(self) -> torch.device:
        for parameter in self.network.parameters():
            return parameter.device
        return torch.device("cpu")

    @property
    def dtype(self) -> torch.dtype:
        for parameter in self.network.parameters():
            return parameter.dtype
        return torch.float32

    @property
    def dimensions(self) -> int:
        rows, cols, channels = self.input_shape
        return rows * cols * channels

    def check(self, image: FlatImage, label: int) -> None:
        if image.shape != tuple(self.input_shape):
            raise ValueError(f"Image shape {image.shape} does not match generator input {tuple(self.input_shape)}")
        if not 0 <= label < self.class_count:
            raise ValueError(f"Label {label} is outside [0, {self.class_count})")

    def logits(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return self.network(x.to(self.dtype), labels)


def build_generator(input_shape: tuple[int, int, int], class_count: int, config: GeneratorConfig) -> GenerativeModel:
    architecture = {
        "family": "masked-conv-conditional",
        "data_channels": input_shape[2],
        "class_count": class_count,
        "hidden_channels": config.hidden_channels,
        "n_residual": config.n_residual,
        "kernel_size": config.kernel_size,
        "discretization": DISCRETIZATION,
    }
    network = ConditionalPixelCNN(
        input_shape[2],
        class_count,
        hidden_channels=config.hidden_channels,
        n_residual=config.n_residual,
        kernel_size=config.kernel_size,
    )
    return GenerativeModel(network, class_count, tuple(input_shape), architecture, temperature=config.temperature)


def _label_tensor(labels: Sequence[int] | int, device: torch.device) -> torch.Tensor:
    values = [labels] if isinstance(labels, (int, np.integer)) else list(labels)
    return torch.tensor([int(value) for value in values], dtype=torch.int64, device=device)


def subpixel_log_probs(model: GenerativeModel, pixels: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """log p(z_i | z_<i, y) per sub-pixel, shape (N, channels, rows, cols), float64."""
    logits = model.logits(pixels.to(model.dtype) / PIXEL_SCALE, labels)
    log_probs = F.log_softmax(logits.double(), dim=2)
    return log_probs.gather(2, pixels.unsqueeze(2)).squeeze(2)


@torch.no_grad()
def log_likelihoods(
    model: GenerativeModel,
    images: Sequence[FlatImage],
    labels: Sequence[int],
    *,
    batch_size: int = 128,
) -> np.ndarray:
    if len(images) != len(labels):
        raise ValueError(f"Got {len(images)} images but {len(labels)} labels")
    model.network.eval()
    parts: list[np.ndarray] = []
    for start in range(0, len(images), batch_size):
        chunk = list(images[start : start + batch_size])
        chunk_labels = list(labels[start : start + batch_size])
        for image, label in zip(chunk, chunk_labels):
            model.check(image, int(label))
        pixels = to_pixel_tensor(chunk, device=model.device)
        values = subpixel_log_probs(model, pixels, _label_tensor(chunk_labels, model.device))
        parts.append(values.sum(dim=(1, 2, 3)).cpu().numpy())
    return np.concatenate(parts) if parts else np.zeros(0)


def conditional_log_likelihood(model: GenerativeModel, image: FlatImage, label: int) -> float:
    return float(log_likelihoods(model, [image], [label])[0])


@torch.no_grad()
def log_likelihood_all_labels(model: GenerativeModel, images: Sequence[FlatImage], *, batch_size: int = 128) -> np.ndarray:
    """log p(z | y) for every class y, shape (N, class_count)."""
    columns = [
        log_likelihoods(model, images, [label] * len(images), batch_size=batch_size)
        for label in range(model.class_count)
    ]
    return np.stack(columns, axis=1)


def bits_per_dim(model: GenerativeModel, samples: Sequence[LabeledSample], *, batch_size: int = 128) -> float:
    if not samples:
        raise ValueError("bits_per_dim needs at least one sample")
    values = log_likelihoods(
        model,
        [sample.image for sample in samples],
        [sample.label for sample in samples],
        batch_size=batch_size,
    )
    return float(-values.sum() / (len(samples) * model.dimensions * math.log(2.0)))


def _position(model: GenerativeModel, index: int) -> tuple[int, int, int]:
    rows, cols, channels = model.input_shape
    if not 0 <= index < rows * cols * channels:
        raise ValueError(f"Sub-pixel index {index} is outside [0, {rows * cols * channels})")
    pixel, channel = divmod(index, channels)
    row, col = divmod(pixel, cols)
    return row, col, channel


@torch.no_grad()
def _conditional_logits(model: GenerativeModel, grid: np.ndarray, label: int, index: int) -> torch.Tensor:
    row, col, channel = _position(model, index)
    x = torch.as_tensor(grid.transpose(2, 0, 1)[np.newaxis].copy(), device=model.device).to(model.dtype) / PIXEL_SCALE
    model.network.eval()
    logits = model.logits(x, _label_tensor(label, model.device))
    return logits[0, channel, :, row, col].double()


def conditional_distribution(model: GenerativeModel, image: FlatImage, label: int, index: int) -> np.ndarray:
    """The 256-way conditional at raster sub-pixel ``index`` (0-based)."""
    model.check(image, label)
    logits = _conditional_logits(model, unflatten(image), label, index)
    return torch.softmax(logits, dim=0).cpu().numpy()


def _draw(logits: torch.Tensor, temperature: float, rng: np.random.Generator) -> int:
    probs = torch.softmax(logits / temperature, dim=0).cpu().numpy()
    probs = probs / probs.sum()
    return int(rng.choice(PIXEL_LEVELS, p=probs))


def sample_pixel(model: GenerativeModel, prefix: Sequence[int], label: int, rng: np.random.Generator) -> int:
    values = np.asarray(prefix, dtype=np.int64)
    if values.size >= model.dimensions:
        raise ValueError(f"Prefix of length {values.size} leaves no position to sample in {model.dimensions}")
    if not 0 <= label < model.class_count:
        raise ValueError(f"Label {label} is outside [0, {model.class_count})")
    flat = np.zeros(model.dimensions, dtype=np.uint8)
    flat[: values.size] = values
    grid = flat.reshape(model.input_shape)
    return _draw(_conditional_logits(model, grid, label, values.size), model.temperature, rng)


@torch.no_grad()
def generate_rows(
    model: GenerativeModel,
    image: FlatImage,
    label: int,
    r_start: int,
    r_end: int,
    rng: np.random.Generator,
    *,
    progress: bool = False,
) -> FlatImage:
    """Resample rows ``r_start..r_end`` (1-indexed) conditioned on the rows above and ``label``.

    ``r_start == r_end + 1`` is the empty band and returns the input unchanged.
    Rows below the band are copied from the input and never enter the context.
    """
    model.check(image, label)
    if r_start == r_end + 1 and 1 <= r_start <= image.rows + 1:
        return image.with_pixels(image.pixels.copy())
    if not 1 <= r_start <= r_end <= image.rows:
        raise ValueError(f"Row band [{r_start}, {r_end}] is invalid for an image with {image.rows} rows")

    output = unflatten(image)
    context = output.copy()
    context[r_start - 1 :] = 0
    x = torch.as_tensor(context.transpose(2, 0, 1)[np.newaxis].copy(), device=model.device).to(model.dtype) / PIXEL_SCALE
    labels = _label_tensor(label, model.device)
    model.network.eval()
    for row in tqdm(range(r_start - 1, r_end), desc="generate rows", disable=not progress, leave=False):
        for col in range(image.cols):
            for channel in range(image.channels):
                logits = model.logits(x, labels)[0, channel, :, row, col].double()
                value = _draw(logits, model.temperature, rng)
                output[row, col, channel] = value
                x[0, channel, row, col] = value / PIXEL_SCALE
    return image.with_pixels(output.reshape(-1))


def log_likelihood_surrogate(model: GenerativeModel, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Differentiable log p(x | y) for unit-interval batches, shape (N,).

    Log-probabilities are gathered at the quantized pixel values; gradients
    reach ``x`` through the autoregressive context.
    """
    targets = torch.round(x.detach().clamp(0.0, 1.0) * PIXEL_SCALE).long()
    logits = model.logits(x, labels)
    log_probs = F.log_softmax(logits, dim=2).gather(2, targets.unsqueeze(2)).squeeze(2)
    return log_probs.sum(dim=(1, 2, 3))


def train_generator(
    data: DatasetSplit,
    config: GeneratorConfig,
    *,
    seed: int = 7,
    device: str = "auto",
    progress: bool = True,
) -> GenerativeModel:
    if not data.train:
        raise ValueError("Generator training requires a non-empty train split")
    torch.manual_seed(seed)
    target = resolve_device(device)
    model = build_generator(data.image_shape, data.class_count, config)
    model.network.to(target)
    optimizer = torch.optim.Adam(model.network.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=0.98)

    pixels = to_pixel_tensor([sample.image for sample in data.train])
    labels = torch.tensor([sample.label for sample in data.train], dtype=torch.int64)
    loader = DataLoader(
        TensorDataset(pixels, labels),
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(seed),
    )

    epoch_bits = float("nan")
    for epoch in range(config.epochs):
        model.network.train()
        total, count = 0.0, 0
        for step, (batch_pixels, batch_labels) in enumerate(
            tqdm(loader, desc=f"generator epoch {epoch + 1}", disable=not progress, leave=False)
        ):
            batch_pixels, batch_labels = batch_pixels.to(target), batch_labels.to(target)
            logits = model.logits(batch_pixels.float() / PIXEL_SCALE, batch_labels)
            loss = F.cross_entropy(logits.transpose(1, 2), batch_pixels)
            if not math.isfinite(loss.item()):
                raise RuntimeError(
                    f"Generator loss diverged at epoch {epoch + 1}, step {step}: loss={loss.item()}, "
                    f"lr={scheduler.get_last_lr()[0]:.3g}"
                )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.network.parameters(), config.grad_clip)
            optimizer.step()
            total += loss.item() * batch_pixels.shape[0]
            count += batch_pixels.shape[0]
        scheduler.step()
        epoch_bits = total / max(count, 1) / math.log(2.0)
        logger.info("generator epoch %d/%d train bits/dim=%.3f", epoch + 1, config.epochs, epoch_bits)

    model.network.eval()
    model.metadata = {
        "epochs": config.epochs,
        "seed": seed,
        "train_bits_per_dim": epoch_bits,
        "test_bits_per_dim": bits_per_dim(model, data.test) if data.test else None,
        "dataset": data.name,
    }
    logger.info("generator trained: test bits/dim=%s", model.metadata["test_bits_per_dim"])
    return model


def save_generator(model: GenerativeModel, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": "generator",
            "architecture": model.architecture,
            "input_shape": list(model.input_shape),
            "class_count": model.class_count,
            "temperature": model.temperature,
            "state_dict": {key: value.cpu() for key, value in model.network.state_dict().items()},
            "metadata": model.metadata,
        },
        output,
    )
    return output


def load_generator(path: str | Path, *, device: str = "auto", temperature: float | None = None) -> GenerativeModel:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("kind") != "generator":
        raise ValueError(f"{path} is not a generator checkpoint")
    architecture = payload["architecture"]
    config = GeneratorConfig(
        hidden_channels=architecture["hidden_channels"],
        n_residual=architecture["n_residual"],
        kernel_size=architecture["kernel_size"],
        temperature=temperature if temperature is not None else float(payload.get("temperature", 1.0)),
    )
    model = build_generator(tuple(payload["input_shape"]), int(payload["class_count"]), config)
    model.network.load_state_dict(payload["state_dict"])
    model.network.to(resolve_device(device)).eval()
    model.metadata = dict(payload.get("metadata", {}))
    return model
