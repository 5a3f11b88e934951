import json
import os
from pathlib import Path
from tempfile import TemporaryDirectory
import unittest
from unittest import mock

from viewguard.config import config_from_dict, load_config
from viewguard.paths import DEFAULT_CONFIG
from viewguard.runtime import progress_enabled, seed_everything


class ConfigTests(unittest.TestCase):
    def test_shipped_config_loads(self) -> None:
        config = load_config(DEFAULT_CONFIG)
        self.assertEqual(len(config.data.class_names), 10)
        self.assertEqual(config.detector.train_attacks, ["deepfool", "pgd-4"])
        self.assertEqual(config.evaluation.mi_bins, 20)
        self.assertEqual(config.to_dict()["predictors"]["d3_mode"], "conditional")

    def test_missing_sections_fall_back_to_defaults(self) -> None:
        config = config_from_dict({"seed": 11})
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.detector.tnr_target, 0.95)
        self.assertEqual(config.detector.if_orientation, "complement")

    def test_unknown_keys_and_bad_values_are_rejected(self) -> None:
        with self.assertRaises(KeyError):
            config_from_dict({"detektor": {}})
        with self.assertRaises(KeyError):
            config_from_dict({"views": {"workers": 3}})
        with self.assertRaises(ValueError):
            config_from_dict({"data": {"split": [0.5, 0.5, 0.5]}})
        with self.assertRaises(ValueError):
            config_from_dict({"predictors": {"d3_mode": "joint"}})
        with self.assertRaises(ValueError):
            config_from_dict({"detector": {"tnr_target": 0.0}})
        with self.assertRaises(ValueError):
            config_from_dict({"generator": {"kernel_size": 4}})

    def test_environment_overrides(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "config.json"
            path.write_text(json.dumps({"seed": 1}), encoding="utf-8")
            with mock.patch.dict(os.environ, {"VIEWGUARD_CONFIG": str(path), "VIEWGUARD_SEED": "9", "VIEWGUARD_DEVICE": "cpu"}):
                config = load_config()
                explicit = load_config(seed=3)
            with self.assertRaises(FileNotFoundError):
                load_config(Path(tmp_dir) / "absent.json")
        self.assertEqual((config.seed, config.device), (9, "cpu"))
        self.assertEqual(explicit.seed, 3)


class RuntimeTests(unittest.TestCase):
    def test_progress_switches(self) -> None:
        with mock.patch.dict(os.environ, {"VIEWGUARD_NO_PROGRESS": "yes"}):
            self.assertFalse(progress_enabled())
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertTrue(progress_enabled())
            self.assertFalse(progress_enabled(True))

    def test_seed_everything_replays(self) -> None:
        first = seed_everything(21).integers(0, 1000, size=5)
        second = seed_everything(21).integers(0, 1000, size=5)
        self.assertEqual(first.tolist(), second.tolist())


if __name__ == "__main__":
    unittest.main()
