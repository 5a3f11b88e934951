from pathlib import Path
from tempfile import TemporaryDirectory
import unittest

import numpy as np

from viewguard.core.attacks import AdversarialRecord
from viewguard.core.feature_store import (
    ARCHIVE_IMAGES,
    ARCHIVE_MANIFEST,
    BENIGN_TAG,
    FeatureRecord,
    attack_tags_in,
    read_adversarial_archive,
    read_feature_store,
    read_feature_stores,
    select_features,
    write_adversarial_archive,
    write_feature_store,
)
from viewguard.core.predictors import FeatureVector

from viewguard_fixtures import gradient_image


def _record(split: str, tag: str, index: int, *, label_used: int = 0, true_label: int = 0) -> FeatureRecord:
    features = FeatureVector(
        d1=0.1 * index,
        d2=1.0 / 3.0,
        d3=-12.5 + index,
        d4=-2.0e-7,
        image_id=f"{split}-{index}",
        label_used=label_used,
        view_seeds=(11, 12, 13),
    )
    return FeatureRecord(features, split, tag, true_label)


class FeatureStoreTests(unittest.TestCase):
    def test_feature_rows_keep_every_column(self) -> None:
        records = [
            _record("train", BENIGN_TAG, 0),
            _record("test", "pgd-8", 1, label_used=2, true_label=1),
        ]
        with TemporaryDirectory() as tmp_dir:
            path = write_feature_store(records, Path(tmp_dir) / "nested" / "features.csv")
            restored = read_feature_store(path)

        self.assertEqual(restored, records)
        self.assertTrue(restored[1].is_adversarial)
        self.assertTrue(restored[1].misclassified)
        self.assertFalse(restored[0].misclassified)

    def test_several_stores_concatenate(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            first = write_feature_store([_record("train", BENIGN_TAG, 0)], Path(tmp_dir) / "a.csv")
            second = write_feature_store([_record("test", "fgsm-4", 1)], Path(tmp_dir) / "b.csv")
            restored = read_feature_stores([first, second])
        self.assertEqual([record.attack_tag for record in restored], [BENIGN_TAG, "fgsm-4"])

    def test_missing_columns_and_files_are_reported(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "features.csv"
            path.write_text("image_id,split,d1\nx,train,0.5\n", encoding="utf-8")
            with self.assertRaises(ValueError):
                read_feature_store(path)
            with self.assertRaises(FileNotFoundError):
                read_feature_store(Path(tmp_dir) / "absent.csv")

    def test_selection_by_split_and_attack(self) -> None:
        records = [
            _record("train", BENIGN_TAG, 0),
            _record("train", "pgd-4", 1),
            _record("train", "deepfool", 2),
            _record("test", "pgd-4", 3),
        ]
        self.assertEqual(len(select_features(records, split="train")), 3)
        self.assertEqual(len(select_features(records, attack_tag="pgd-4")), 2)
        self.assertEqual(len(select_features(records, split="train", attack_tags=["pgd-4", "deepfool"])), 2)
        self.assertEqual(attack_tags_in(records), ["deepfool", "pgd-4"])


class AdversarialArchiveTests(unittest.TestCase):
    def test_archive_keeps_images_and_flags(self) -> None:
        original = gradient_image(channels=3)
        perturbed = gradient_image(channels=3, offset=2)
        records = [
            AdversarialRecord(original, perturbed, 1, 1, 0, True, 2.0, 4.5, attack_tag="pgd-2", sample_id="a"),
            AdversarialRecord(perturbed, perturbed, 0, 0, 0, False, 0.0, 0.0, attack_tag="pgd-2", sample_id="b"),
        ]
        with TemporaryDirectory() as tmp_dir:
            directory = write_adversarial_archive(records, Path(tmp_dir) / "archive")
            self.assertTrue((directory / ARCHIVE_IMAGES).exists())
            self.assertTrue((directory / ARCHIVE_MANIFEST).exists())
            restored = read_adversarial_archive(directory)

        self.assertEqual(len(restored), 2)
        first = restored[0]
        np.testing.assert_array_equal(first.perturbed.pixels, perturbed.pixels)
        self.assertEqual((first.perturbed.rows, first.perturbed.cols, first.perturbed.channels), (4, 3, 3))
        self.assertEqual((first.true_label, first.perturbed_label, first.success), (1, 0, True))
        self.assertEqual((first.attack_tag, first.sample_id), ("pgd-2", "a"))
        self.assertFalse(restored[1].success)

    def test_empty_and_missing_archives_are_rejected(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            with self.assertRaises(ValueError):
                write_adversarial_archive([], Path(tmp_dir) / "archive")
            with self.assertRaises(FileNotFoundError):
                read_adversarial_archive(Path(tmp_dir) / "absent")


if __name__ == "__main__":
    unittest.main()
