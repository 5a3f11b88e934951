from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .data import FlatImage, images_from_grids, stack_grids


PIXEL_SCALE = 255.0


def resolve_device(name: str = "auto") -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def to_unit_tensor(
    images: Sequence[FlatImage] | FlatImage,
    *,
    device: torch.device | str = "cpu",
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """(N, channels, rows, cols) tensor scaled to [0, 1]."""
    batch = [images] if isinstance(images, FlatImage) else list(images)
    grids = stack_grids(batch).astype(np.float64) / PIXEL_SCALE
    return torch.as_tensor(grids.transpose(0, 3, 1, 2).copy(), dtype=dtype, device=device)


def to_pixel_tensor(images: Sequence[FlatImage] | FlatImage, *, device: torch.device | str = "cpu") -> torch.Tensor:
    """(N, channels, rows, cols) int64 tensor of raw pixel values."""
    batch = [images] if isinstance(images, FlatImage) else list(images)
    return torch.as_tensor(stack_grids(batch).transpose(0, 3, 1, 2).copy(), dtype=torch.int64, device=device)


def quantize_unit_tensor(x: torch.Tensor) -> np.ndarray:
    """Round a [0, 1] batch to uint8 pixel grids of shape (N, rows, cols, channels)."""
    values = torch.round(x.detach().double().clamp(0.0, 1.0) * PIXEL_SCALE)
    return values.cpu().numpy().transpose(0, 2, 3, 1).astype(np.uint8)


def images_from_unit_tensor(x: torch.Tensor) -> list[FlatImage]:
    return images_from_grids(quantize_unit_tensor(x))
