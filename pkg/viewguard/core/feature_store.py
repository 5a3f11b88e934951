"""Delimited-text tables for predictor features and adversarial archives."""

from __future__ import annotations

import csv
from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attacks import AdversarialRecord
from .data import FlatImage, stack_grids
from .predictors import FeatureVector


logger = logging.getLogger(__name__)

BENIGN_TAG = "benign"
FEATURE_FIELDNAMES = [
    "image_id",
    "split",
    "attack_tag",
    "d1",
    "d2",
    "d3",
    "d4",
    "label_used",
    "true_label",
    "seeds",
]
ARCHIVE_FIELDNAMES = [
    "index",
    "sample_id",
    "attack_tag",
    "true_label",
    "original_label",
    "perturbed_label",
    "success",
    "linf",
    "l2",
]
ARCHIVE_IMAGES = "images.npz"
ARCHIVE_MANIFEST = "manifest.csv"


@dataclass(frozen=True)
class FeatureRecord:
    features: FeatureVector
    split: str
    attack_tag: str
    true_label: int

    @property
    def is_adversarial(self) -> bool:
        return self.attack_tag != BENIGN_TAG

    @property
    def misclassified(self) -> bool:
        return self.features.label_used != self.true_label


def write_feature_store(records: Iterable[FeatureRecord], path: str | Path) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with output.open("w", newline="", encoding="utf-8") as file_obj:
        writer = csv.DictWriter(file_obj, fieldnames=FEATURE_FIELDNAMES)
        writer.writeheader()
        for record in records:
            features = record.features
            writer.writerow(
                {
                    "image_id": features.image_id,
                    "split": record.split,
                    "attack_tag": record.attack_tag,
                    "d1": repr(features.d1),
                    "d2": repr(features.d2),
                    "d3": repr(features.d3),
                    "d4": repr(features.d4),
                    "label_used": features.label_used,
                    "true_label": record.true_label,
                    "seeds": ";".join(str(seed) for seed in features.view_seeds),
                }
            )
            count += 1
    logger.info("wrote %d feature rows to %s", count, output)
    return output


def read_feature_store(path: str | Path) -> list[FeatureRecord]:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Feature store does not exist: {source}")
    records = []
    with source.open(newline="", encoding="utf-8") as file_obj:
        reader = csv.DictReader(file_obj)
        missing = set(FEATURE_FIELDNAMES) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{source} is missing feature columns: {sorted(missing)}")
        for row in reader:
            seeds = tuple(int(value) for value in row["seeds"].split(";") if value)
            features = FeatureVector(
                d1=float(row["d1"]),
                d2=float(row["d2"]),
                d3=float(row["d3"]),
                d4=float(row["d4"]),
                image_id=row["image_id"],
                label_used=int(row["label_used"]),
                view_seeds=seeds,
            )
            records.append(FeatureRecord(features, row["split"], row["attack_tag"], int(row["true_label"])))
    return records


def read_feature_stores(paths: Sequence[str | Path]) -> list[FeatureRecord]:
    records: list[FeatureRecord] = []
    for path in paths:
        records.extend(read_feature_store(path))
    return records


def select_features(
    records: Sequence[FeatureRecord],
    *,
    split: str | None = None,
    attack_tag: str | None = None,
    attack_tags: Sequence[str] | None = None,
) -> list[FeatureRecord]:
    selected = []
    for record in records:
        if split is not None and record.split != split:
            continue
        if attack_tag is not None and record.attack_tag != attack_tag:
            continue
        if attack_tags is not None and record.attack_tag not in attack_tags:
            continue
        selected.append(record)
    return selected


def attack_tags_in(records: Sequence[FeatureRecord]) -> list[str]:
    return sorted({record.attack_tag for record in records if record.is_adversarial})


def write_adversarial_archive(records: Sequence[AdversarialRecord], directory: str | Path) -> Path:
    """``images.npz`` with original/perturbed grids plus a ``manifest.csv`` of norms and flags."""
    if not records:
        raise ValueError("Cannot archive an empty list of adversarial records")
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        target / ARCHIVE_IMAGES,
        original=stack_grids([record.original for record in records]),
        perturbed=stack_grids([record.perturbed for record in records]),
    )
    with (target / ARCHIVE_MANIFEST).open("w", newline="", encoding="utf-8") as file_obj:
        writer = csv.DictWriter(file_obj, fieldnames=ARCHIVE_FIELDNAMES)
        writer.writeheader()
        for index, record in enumerate(records):
            writer.writerow(
                {
                    "index": index,
                    "sample_id": record.sample_id,
                    "attack_tag": record.attack_tag,
                    "true_label": record.true_label,
                    "original_label": record.original_label,
                    "perturbed_label": record.perturbed_label,
                    "success": int(record.success),
                    "linf": repr(record.linf),
                    "l2": repr(record.l2),
                }
            )
    logger.info("archived %d adversarial records in %s", len(records), target)
    return target


def read_adversarial_archive(directory: str | Path) -> list[AdversarialRecord]:
    source = Path(directory)
    images_path, manifest_path = source / ARCHIVE_IMAGES, source / ARCHIVE_MANIFEST
    for path in (images_path, manifest_path):
        if not path.exists():
            raise FileNotFoundError(f"Adversarial archive is missing {path}")
    with np.load(images_path) as payload:
        original, perturbed = payload["original"], payload["perturbed"]
    records = []
    with manifest_path.open(newline="", encoding="utf-8") as file_obj:
        for row in csv.DictReader(file_obj):
            index = int(row["index"])
            rows, cols, channels = original[index].shape
            records.append(
                AdversarialRecord(
                    original=FlatImage(original[index].reshape(-1), rows, cols, channels),
                    perturbed=FlatImage(perturbed[index].reshape(-1), rows, cols, channels),
                    true_label=int(row["true_label"]),
                    original_label=int(row["original_label"]),
                    perturbed_label=int(row["perturbed_label"]),
                    success=row["success"] == "1",
                    linf=float(row["linf"]),
                    l2=float(row["l2"]),
                    attack_tag=row["attack_tag"],
                    sample_id=row["sample_id"],
                )
            )
    return records
