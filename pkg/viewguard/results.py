"""Run directories and their manifests.

Every CLI verb writes into one run directory, ``results/<command>-<stamp>/`` unless
``--out-dir`` names another, and leaves a ``run_manifest.json`` there that records
the config, the seed, each input file with its sha256 and each output path.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

from .paths import RESULTS_ROOT


MANIFEST_FILENAME = "run_manifest.json"
HASH_CHUNK_BYTES = 1024 * 1024


@dataclass(frozen=True)
class RunArtifacts:
    command: str
    run_timestamp: str
    run_id: str
    run_dir: Path

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / MANIFEST_FILENAME

    def output_path(self, raw_path: str | Path | None, default_filename: str) -> Path:
        return resolve_run_output_path(self.run_dir, raw_path, default_filename)


def build_run_artifacts(command: str, out_dir: str | Path | None = None) -> RunArtifacts:
    stamp = datetime.now()
    run_id = f"{command}-{stamp.strftime('%Y%m%d-%H%M%S')}"
    run_dir = Path(out_dir).expanduser() if out_dir else RESULTS_ROOT / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    return RunArtifacts(command, stamp.strftime("%Y-%m-%d %H:%M"), run_id, run_dir)


def resolve_run_output_path(run_dir: Path, raw_path: str | Path | None, default_filename: str) -> Path:
    """Bare filenames land in the run directory; paths with a directory part are kept as given."""
    raw_text = "" if raw_path is None else str(raw_path).strip()
    if not raw_text:
        return run_dir / default_filename
    candidate = Path(raw_text).expanduser()
    if candidate.is_absolute() or candidate.parent != Path("."):
        return candidate
    return run_dir / candidate.name


def compute_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(HASH_CHUNK_BYTES), b""):
            digest.update(chunk)
    return digest.hexdigest()


def input_entry(path: str | Path) -> dict[str, str]:
    """Path of a run input, plus its sha256 when it is a file (archives are directories)."""
    source = Path(path)
    entry = {"path": str(source)}
    if source.is_file():
        entry["sha256"] = compute_sha256(source)
    return entry


def write_json_artifact(payload: Any, output_path: str | Path) -> Path:
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False, default=str) + "\n", encoding="utf-8")
    return path


def build_run_manifest(
    run: RunArtifacts,
    *,
    seed: int,
    config: Mapping[str, Any],
    inputs: Mapping[str, Any],
    outputs: Mapping[str, str | Path],
    summary: Any,
) -> dict[str, Any]:
    return {
        "command": run.command,
        "run_id": run.run_id,
        "run_timestamp": run.run_timestamp,
        "artifacts_dir": str(run.run_dir),
        "seed": seed,
        "config": dict(config),
        "inputs": dict(inputs),
        "outputs": {name: str(path) for name, path in outputs.items()},
        "summary": summary,
    }


def write_run_manifest(payload: dict[str, Any], run_dir: Path, filename: str = MANIFEST_FILENAME) -> Path:
    return write_json_artifact(payload, run_dir / filename)


def read_run_manifest(run_dir: str | Path, filename: str = MANIFEST_FILENAME) -> dict[str, Any]:
    path = Path(run_dir) / filename
    if not path.exists():
        raise FileNotFoundError(f"No {filename} in {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))
