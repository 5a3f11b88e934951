from pathlib import Path
from tempfile import TemporaryDirectory
import unittest

import numpy as np
from PIL import Image

from viewguard.config import DataConfig
from viewguard.core.data import (
    DatasetSplit,
    FlatImage,
    LabeledSample,
    band_slice,
    flatten_raster,
    load_dataset,
    read_image,
    read_split_manifest,
    row_band,
    stack_grids,
    unflatten,
    write_split_manifest,
)
from viewguard.core.tensors import images_from_unit_tensor, to_unit_tensor


class FlatImageTests(unittest.TestCase):
    def test_raster_order_is_row_major_channel_minor(self) -> None:
        grid = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        image = flatten_raster(grid)
        self.assertEqual(image.shape, (2, 3, 3))
        # entry (r=1, c=2, ch=1) -> (1 * 3 + 2) * 3 + 1
        self.assertEqual(int(image.pixels[16]), int(grid[1, 2, 1]))
        np.testing.assert_array_equal(unflatten(image), grid)

    def test_grayscale_grid_gains_a_channel_axis(self) -> None:
        image = flatten_raster(np.zeros((4, 5), dtype=np.uint8))
        self.assertEqual(image.shape, (4, 5, 1))

    def test_rejects_out_of_range_and_wrong_length(self) -> None:
        with self.assertRaises(ValueError):
            FlatImage(np.array([0, 256, 3, 4]), 2, 2, 1)
        with self.assertRaises(ValueError):
            FlatImage(np.array([0, 1, 2]), 2, 2, 1)
        with self.assertRaises(ValueError):
            flatten_raster(np.full((2, 2), -1))

    def test_pixels_are_read_only_copies(self) -> None:
        source = np.array([1, 2, 3, 4], dtype=np.uint8)
        image = FlatImage(source, 2, 2, 1)
        source[0] = 99
        self.assertEqual(int(image.pixels[0]), 1)
        with self.assertRaises(ValueError):
            image.pixels[0] = 5

    def test_band_slice_addresses_whole_rows(self) -> None:
        image = flatten_raster(np.arange(4 * 2 * 3, dtype=np.uint8).reshape(4, 2, 3))
        self.assertEqual(band_slice(image, 2, 3), slice(6, 18))
        np.testing.assert_array_equal(row_band(image, 4, 4), unflatten(image)[3].reshape(-1))
        with self.assertRaises(ValueError):
            band_slice(image, 3, 2)
        with self.assertRaises(ValueError):
            band_slice(image, 1, 5)

    def test_stack_grids_rejects_mixed_shapes(self) -> None:
        first = FlatImage(np.zeros(4, dtype=np.uint8), 2, 2, 1)
        second = FlatImage(np.zeros(8, dtype=np.uint8), 4, 2, 1)
        self.assertEqual(stack_grids([first, first]).shape, (2, 2, 2, 1))
        with self.assertRaises(ValueError):
            stack_grids([first, second])

    def test_unit_tensor_layout_and_rounding(self) -> None:
        image = FlatImage(np.array([0, 51, 102, 153, 204, 255], dtype=np.uint8), 1, 2, 3)
        x = to_unit_tensor(image)
        self.assertEqual(tuple(x.shape), (1, 3, 1, 2))
        self.assertAlmostEqual(float(x[0, 1, 0, 0]), 0.2, places=6)
        nudged = images_from_unit_tensor(x + 0.4 / 255.0)
        np.testing.assert_array_equal(nudged[0].pixels, image.pixels)


class DatasetTests(unittest.TestCase):
    def _write_folder(self, root: Path, per_class: int = 10, rows: int = 4) -> None:
        rng = np.random.default_rng(3)
        for name in ("cat", "dog"):
            (root / name).mkdir(parents=True)
            for index in range(per_class):
                grid = rng.integers(0, 256, size=(rows, 4, 3), dtype=np.uint8)
                Image.fromarray(grid).save(root / name / f"{index:02d}.png")

    def test_folder_dataset_is_stratified_and_reproducible(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            root = Path(tmp_dir) / "images"
            self._write_folder(root)
            config = DataConfig(root=str(root), split=(0.6, 0.2, 0.2), seed=11)
            first = load_dataset(config)
            second = load_dataset(config)

            self.assertEqual(first.class_names, ["cat", "dog"])
            self.assertEqual(first.counts(), {"train": 12, "val": 4, "test": 4})
            self.assertEqual(
                [sample.sample_id for sample in first.test],
                [sample.sample_id for sample in second.test],
            )
            self.assertEqual(sorted(sample.label for sample in first.val), [0, 0, 1, 1])
            self.assertEqual(first.image_shape, (4, 4, 3))

    def test_split_manifest_roundtrip_fixes_assignment(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            root = Path(tmp_dir) / "images"
            self._write_folder(root)
            split = load_dataset(DataConfig(root=str(root), seed=5))
            manifest = write_split_manifest(split, Path(tmp_dir) / "split.csv")
            assignments = read_split_manifest(manifest)
            self.assertEqual(len(assignments), 20)

            replayed = load_dataset(DataConfig(root=str(root), seed=99, split_manifest=str(manifest)))
            self.assertEqual(
                sorted(sample.sample_id for sample in replayed.test),
                sorted(sample.sample_id for sample in split.test),
            )

    def test_rows_must_be_a_multiple_of_four(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            root = Path(tmp_dir) / "images"
            self._write_folder(root, rows=6)
            with self.assertRaises(ValueError):
                load_dataset(DataConfig(root=str(root)))

    def test_npz_dataset_requires_every_class(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            archive = Path(tmp_dir) / "digits.npz"
            images = np.zeros((6, 4, 4), dtype=np.uint8)
            np.savez(archive, images=images, labels=np.array([0, 0, 0, 2, 2, 2]))
            with self.assertRaises(FileNotFoundError):
                load_dataset(DataConfig(root=str(archive), format="npz", class_count=3))

    def test_missing_root_and_image_file(self) -> None:
        with self.assertRaises(FileNotFoundError):
            load_dataset(DataConfig(root="/nonexistent/viewguard-data"))
        with self.assertRaises(FileNotFoundError):
            read_image("/nonexistent/viewguard.png")

    def test_dataset_rejects_out_of_range_labels_and_shared_ids(self) -> None:
        image = FlatImage(np.zeros(16, dtype=np.uint8), 4, 4, 1)
        with self.assertRaises(ValueError):
            DatasetSplit([LabeledSample(image, 3, "a")], [], [], class_count=2, name="bad")
        with self.assertRaises(ValueError):
            DatasetSplit([LabeledSample(image, 0, "a")], [LabeledSample(image, 1, "a")], [], class_count=2, name="dup")


if __name__ == "__main__":
    unittest.main()
