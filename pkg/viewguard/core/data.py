"""Dataset ingestion, raster-order flattening and row-band addressing.

Pixels are kept as integers in [0, 255] at rest. Raster order is row by row,
left to right, channel-minor: grid entry (r, c, ch) lives at flat index
``(r * cols + c) * channels + ch``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from ..config import DataConfig


logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".ppm", ".pgm", ".tif", ".tiff")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class FlatImage:
    pixels: np.ndarray
    rows: int
    cols: int
    channels: int

    def __post_init__(self) -> None:
        if self.rows <= 0 or self.cols <= 0 or self.channels <= 0:
            raise ValueError(f"Image dimensions must be positive, got {self.rows}x{self.cols}x{self.channels}")
        raw = np.asarray(self.pixels)
        if raw.ndim != 1:
            raise ValueError(f"FlatImage pixels must be one-dimensional, got shape {raw.shape}")
        expected = self.rows * self.cols * self.channels
        if raw.size != expected:
            raise ValueError(
                f"Pixel count {raw.size} does not match {self.rows}x{self.cols}x{self.channels}={expected}"
            )
        _check_pixel_range(raw)
        pixels = raw.astype(np.uint8, copy=True)
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.rows, self.cols, self.channels)

    @property
    def size(self) -> int:
        return int(self.pixels.size)

    @property
    def row_stride(self) -> int:
        return self.cols * self.channels

    def with_pixels(self, pixels: np.ndarray) -> "FlatImage":
        return FlatImage(np.asarray(pixels).reshape(-1), self.rows, self.cols, self.channels)

    def equals(self, other: "FlatImage") -> bool:
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True, eq=False)
class LabeledSample:
    image: FlatImage
    label: int
    sample_id: str = ""


@dataclass
class DatasetSplit:
    train: list[LabeledSample]
    val: list[LabeledSample]
    test: list[LabeledSample]
    class_count: int
    name: str
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        shapes = {sample.image.shape for sample in self.all_samples()}
        if len(shapes) > 1:
            raise ValueError(f"Dataset '{self.name}' mixes image shapes: {sorted(shapes)}")
        for sample in self.all_samples():
            if not 0 <= sample.label < self.class_count:
                raise ValueError(
                    f"Label {sample.label} of sample '{sample.sample_id}' is outside [0, {self.class_count})"
                )
        seen: dict[str, str] = {}
        for split_name in SPLIT_NAMES:
            for sample in self.split(split_name):
                if sample.sample_id and sample.sample_id in seen:
                    raise ValueError(
                        f"Sample '{sample.sample_id}' appears in both {seen[sample.sample_id]} and {split_name}"
                    )
                seen[sample.sample_id] = split_name

    def split(self, name: str) -> list[LabeledSample]:
        if name not in SPLIT_NAMES:
            raise KeyError(f"Unknown split '{name}', expected one of {SPLIT_NAMES}")
        return getattr(self, name)

    def all_samples(self) -> Iterable[LabeledSample]:
        yield from self.train
        yield from self.val
        yield from self.test

    @property
    def image_shape(self) -> tuple[int, int, int]:
        for sample in self.all_samples():
            return sample.image.shape
        raise ValueError(f"Dataset '{self.name}' is empty")

    def counts(self) -> dict[str, int]:
        return {name: len(self.split(name)) for name in SPLIT_NAMES}


def _check_pixel_range(values: np.ndarray) -> None:
    if values.size == 0:
        return
    if not np.issubdtype(values.dtype, np.number):
        raise ValueError(f"Pixel values must be numeric, got dtype {values.dtype}")
    invalid = np.flatnonzero((values < 0) | (values > 255) | (values != np.round(values)))
    if invalid.size:
        index = int(invalid[0])
        raise ValueError(f"Pixel value {values[index]!r} at raster index {index} is outside the integer range [0, 255]")


def flatten_raster(grid: np.ndarray) -> FlatImage:
    array = np.asarray(grid)
    if array.ndim == 2:
        array = array[:, :, np.newaxis]
    if array.ndim != 3:
        raise ValueError(f"Expected a rows x cols x channels grid, got shape {array.shape}")
    flat = array.reshape(-1)
    _check_pixel_range(flat)
    rows, cols, channels = array.shape
    return FlatImage(flat, rows, cols, channels)


def unflatten(image: FlatImage) -> np.ndarray:
    return image.pixels.reshape(image.rows, image.cols, image.channels).copy()


def _check_band(image: FlatImage, r_start: int, r_end: int) -> None:
    if not 1 <= r_start <= r_end <= image.rows:
        raise ValueError(f"Row band [{r_start}, {r_end}] is invalid for an image with {image.rows} rows")


def band_slice(image: FlatImage, r_start: int, r_end: int) -> slice:
    """Raster slice of rows ``r_start..r_end`` (1-indexed, inclusive)."""
    _check_band(image, r_start, r_end)
    return slice((r_start - 1) * image.row_stride, r_end * image.row_stride)


def row_band(image: FlatImage, r_start: int, r_end: int) -> np.ndarray:
    return image.pixels[band_slice(image, r_start, r_end)].copy()


def stack_grids(images: Sequence[FlatImage]) -> np.ndarray:
    """Stack images into an (N, rows, cols, channels) uint8 array."""
    if not images:
        raise ValueError("Cannot stack an empty image collection")
    shape = images[0].shape
    for image in images:
        if image.shape != shape:
            raise ValueError(f"Cannot stack images of shape {image.shape} with {shape}")
    return np.stack([unflatten(image) for image in images]).astype(np.uint8)


def images_from_grids(grids: np.ndarray) -> list[FlatImage]:
    return [flatten_raster(grid) for grid in np.asarray(grids)]


def _read_image_file(path: Path) -> np.ndarray:
    with Image.open(path) as handle:
        if handle.mode not in ("L", "RGB"):
            handle = handle.convert("RGB")
        grid = np.asarray(handle, dtype=np.uint8)
    if grid.ndim == 2:
        grid = grid[:, :, np.newaxis]
    return grid


def read_image(path: str | Path) -> FlatImage:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Image file does not exist: {source}")
    return flatten_raster(_read_image_file(source))


def _resolve_class_names(root: Path, config: DataConfig) -> list[str]:
    if config.class_names:
        names = list(config.class_names)
        for name in names:
            if not (root / name).is_dir():
                raise FileNotFoundError(f"Class directory for '{name}' is missing under {root}")
    else:
        names = sorted(path.name for path in root.iterdir() if path.is_dir())
    if config.class_count is not None and len(names) != config.class_count:
        raise FileNotFoundError(
            f"Dataset {root} declares {config.class_count} classes but {len(names)} class directories were found"
        )
    if not names:
        raise FileNotFoundError(f"No class directories found under {root}")
    return names


def _load_folder(root: Path, config: DataConfig) -> tuple[list[LabeledSample], list[str]]:
    class_names = _resolve_class_names(root, config)
    samples: list[LabeledSample] = []
    shape: tuple[int, ...] | None = None
    for label, class_name in enumerate(class_names):
        files = sorted(path for path in (root / class_name).iterdir() if path.suffix.lower() in IMAGE_SUFFIXES)
        if config.per_class is not None:
            files = files[: config.per_class]
        if not files:
            raise FileNotFoundError(f"Class directory '{class_name}' under {root} contains no images")
        for path in files:
            grid = _read_image_file(path)
            if shape is None:
                shape = grid.shape
            elif grid.shape != shape:
                raise ValueError(f"Image {path} has shape {grid.shape}, expected {shape}")
            samples.append(LabeledSample(flatten_raster(grid), label, f"{class_name}/{path.name}"))
    return samples, class_names


def _load_npz(root: Path, config: DataConfig) -> tuple[list[LabeledSample], list[str]]:
    if not root.is_file():
        raise FileNotFoundError(f"Dataset archive does not exist: {root}")
    with np.load(root, allow_pickle=False) as archive:
        images = np.asarray(archive["images"])
        labels = np.asarray(archive["labels"]).astype(np.int64)
        stored_names = [str(name) for name in archive["class_names"]] if "class_names" in archive else None
    if images.ndim == 3:
        images = images[..., np.newaxis]
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise ValueError(f"Archive {root} holds images {images.shape} and labels {labels.shape}")
    class_names = list(config.class_names or stored_names or [])
    class_count = config.class_count or (len(class_names) if class_names else int(labels.max()) + 1)
    if not class_names:
        class_names = [str(index) for index in range(class_count)]
    present = set(int(value) for value in np.unique(labels))
    for label in range(class_count):
        if label not in present:
            raise FileNotFoundError(f"Archive {root} has no samples for class '{class_names[label]}'")
    samples: list[LabeledSample] = []
    for label in range(class_count):
        indices = np.flatnonzero(labels == label)
        if config.per_class is not None:
            indices = indices[: config.per_class]
        for index in indices:
            samples.append(LabeledSample(flatten_raster(images[index]), label, f"{int(index):06d}"))
    return samples, class_names


def _split_counts(total: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * total))
    n_val = int(round(fractions[1] * total))
    n_val = min(n_val, total - n_train)
    return n_train, n_val, total - n_train - n_val


def _stratified_split(
    samples: list[LabeledSample],
    class_count: int,
    fractions: tuple[float, float, float],
    seed: int,
) -> dict[str, list[LabeledSample]]:
    rng = np.random.default_rng(seed)
    buckets: dict[str, list[LabeledSample]] = {name: [] for name in SPLIT_NAMES}
    for label in range(class_count):
        members = [sample for sample in samples if sample.label == label]
        order = rng.permutation(len(members))
        n_train, n_val, _n_test = _split_counts(len(members), fractions)
        buckets["train"].extend(members[index] for index in order[:n_train])
        buckets["val"].extend(members[index] for index in order[n_train : n_train + n_val])
        buckets["test"].extend(members[index] for index in order[n_train + n_val :])
    return buckets


def read_split_manifest(path: str | Path) -> dict[str, str]:
    assignments: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            split_name = row["split"].strip()
            if split_name not in SPLIT_NAMES:
                raise ValueError(f"Unknown split '{split_name}' for sample '{row['sample_id']}' in {path}")
            assignments[row["sample_id"].strip()] = split_name
    return assignments


def write_split_manifest(split: DatasetSplit, path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    with output.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["sample_id", "split", "label"])
        writer.writeheader()
        for split_name in SPLIT_NAMES:
            for sample in split.split(split_name):
                writer.writerow({"sample_id": sample.sample_id, "split": split_name, "label": sample.label})
    return output


def _manifest_split(samples: list[LabeledSample], manifest_path: Path) -> dict[str, list[LabeledSample]]:
    assignments = read_split_manifest(manifest_path)
    buckets: dict[str, list[LabeledSample]] = {name: [] for name in SPLIT_NAMES}
    for sample in samples:
        split_name = assignments.get(sample.sample_id)
        if split_name is None:
            raise KeyError(f"Sample '{sample.sample_id}' is not listed in split manifest {manifest_path}")
        buckets[split_name].append(sample)
    return buckets


def load_dataset(config: DataConfig, *, base_dir: str | Path | None = None) -> DatasetSplit:
    root = Path(config.root).expanduser()
    if not root.is_absolute() and base_dir is not None:
        root = Path(base_dir) / root
    if not root.exists():
        raise FileNotFoundError(f"Dataset path does not exist: {root}")
    if config.format == "npz":
        samples, class_names = _load_npz(root, config)
    else:
        samples, class_names = _load_folder(root, config)

    rows = samples[0].image.rows
    if rows % 4 != 0:
        raise ValueError(f"Dataset '{config.name}' has {rows} image rows; the band plan needs a multiple of 4")

    if config.split_manifest:
        buckets = _manifest_split(samples, Path(config.split_manifest).expanduser())
    else:
        buckets = _stratified_split(samples, len(class_names), config.split, config.seed)
    split = DatasetSplit(
        train=buckets["train"],
        val=buckets["val"],
        test=buckets["test"],
        class_count=len(class_names),
        name=config.name,
        class_names=class_names,
    )
    if not split.train:
        raise ValueError(f"Dataset '{config.name}' has an empty train split")
    logger.info("Loaded dataset %s: %s", config.name, split.counts())
    return split
