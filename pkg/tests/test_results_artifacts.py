import hashlib
import json
from pathlib import Path
from tempfile import TemporaryDirectory
import unittest

import viewguard.results as results_module
from viewguard.results import (
    MANIFEST_FILENAME,
    build_run_artifacts,
    build_run_manifest,
    compute_sha256,
    input_entry,
    read_run_manifest,
    resolve_run_output_path,
    write_json_artifact,
    write_run_manifest,
)


class ResultsArtifactsTests(unittest.TestCase):
    def test_build_run_artifacts_uses_results_root(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            original_root = results_module.RESULTS_ROOT
            results_module.RESULTS_ROOT = Path(tmp_dir)
            try:
                artifacts = build_run_artifacts("evaluate")
            finally:
                results_module.RESULTS_ROOT = original_root

            self.assertTrue(artifacts.run_dir.is_dir())
            self.assertEqual(artifacts.run_dir.parent, Path(tmp_dir))
            self.assertTrue(artifacts.run_id.startswith("evaluate-"))

    def test_explicit_out_dir_wins(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            artifacts = build_run_artifacts("attack", Path(tmp_dir) / "pgd")
            self.assertEqual(artifacts.run_dir, Path(tmp_dir) / "pgd")
            self.assertTrue(artifacts.run_dir.is_dir())

    def test_resolve_run_output_path_places_simple_filenames_inside_run_dir(self) -> None:
        run_dir = Path("/tmp/run-123")
        self.assertEqual(
            resolve_run_output_path(run_dir, "detector.joblib", "detector.joblib"),
            run_dir / "detector.joblib",
        )
        self.assertEqual(
            resolve_run_output_path(run_dir, None, "features.csv"),
            run_dir / "features.csv",
        )
        self.assertEqual(
            resolve_run_output_path(run_dir, "  ", "features.csv"),
            run_dir / "features.csv",
        )
        self.assertEqual(
            resolve_run_output_path(run_dir, "models/classifier.pt", "classifier.pt"),
            Path("models/classifier.pt"),
        )

    def test_write_json_artifact_and_manifest_roundtrip(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            run_dir = Path(tmp_dir) / "evaluate-20260315-210000"
            run_dir.mkdir(parents=True)
            json_path = write_json_artifact({"status": "ok", "path": Path("x")}, run_dir / "report.json")
            write_run_manifest({"outputs": {"report_json": str(json_path)}}, run_dir)

            self.assertEqual(json.loads(json_path.read_text(encoding="utf-8")), {"status": "ok", "path": "x"})
            manifest = read_run_manifest(run_dir)
            self.assertEqual(manifest["outputs"]["report_json"], str(json_path))

    def test_run_manifest_records_hashed_inputs_and_output_paths(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            run = build_run_artifacts("train-detector", Path(tmp_dir) / "run")
            features = Path(tmp_dir) / "features.csv"
            features.write_text("image_id\n", encoding="utf-8")
            detector_path = run.output_path("detector.joblib", "detector.joblib")
            payload = build_run_manifest(
                run,
                seed=7,
                config={"detector": {"n_trees": 5}},
                inputs={"features": [input_entry(features)], "archive": input_entry(tmp_dir)},
                outputs={"detector": detector_path},
                summary={"tau": 1.2},
            )
            write_run_manifest(payload, run.run_dir)

            self.assertEqual(run.manifest_path, run.run_dir / MANIFEST_FILENAME)
            manifest = read_run_manifest(run.run_dir)
            self.assertEqual(manifest["command"], "train-detector")
            self.assertEqual(manifest["seed"], 7)
            self.assertEqual(manifest["inputs"]["features"][0]["sha256"], compute_sha256(features))
            self.assertNotIn("sha256", manifest["inputs"]["archive"])
            self.assertEqual(manifest["outputs"]["detector"], str(run.run_dir / "detector.joblib"))
            with self.assertRaises(FileNotFoundError):
                read_run_manifest(tmp_dir)

    def test_compute_sha256_matches_hashlib(self) -> None:
        with TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "weights.bin"
            path.write_bytes(b"viewguard" * 1000)
            self.assertEqual(compute_sha256(path), hashlib.sha256(b"viewguard" * 1000).hexdigest())


if __name__ == "__main__":
    unittest.main()
