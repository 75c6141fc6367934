"""Stage runner for the full pipeline with a hash-based manifest.

Each stage records a digest of everything it read (input files, upstream
outputs, its own settings) and the digest of every file it wrote. A stage
whose record still matches is skipped. Once a stage runs, every later stage
runs too.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from jsvuln import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
STAGES = ("ingest", "resolve", "build-dataset", "sweep", "report")


class StageError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def hash_path(path: str | Path) -> str:
    """sha256 over a file, or over the sorted (relative name, content) pairs of a directory."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
            h.update(hashlib.sha256(p.read_bytes()).digest())
    elif path.is_file():
        h.update(path.read_bytes())
    else:
        raise FileNotFoundError(path)
    return h.hexdigest()


def hash_inputs(paths: list[str | Path], settings) -> str:
    h = hashlib.sha256(json.dumps(settings, sort_keys=True, default=str).encode())
    for p in paths:
        h.update(str(p).encode() + b"\0" + hash_path(p).encode())
    return h.hexdigest()


@dataclass
class PipelineManifest:
    path: Path
    stages: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> PipelineManifest:
        path = Path(path)
        if not path.exists():
            return cls(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            logger.warning("manifest %s is unreadable; starting fresh", path)
            return cls(path)
        return cls(path, dict(data.get("stages", {})))

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"stages": self.stages}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.path)

    def is_fresh(self, stage: str, inputs_hash: str) -> bool:
        entry = self.stages.get(stage)
        if not entry or entry.get("inputs_hash") != inputs_hash:
            return False
        for out in entry.get("outputs", []):
            p = Path(out["path"])
            if not p.exists() or hash_path(p) != out["hash"]:
                return False
        return True

    def record(self, stage: str, inputs_hash: str, outputs: list[Path]) -> None:
        self.stages[stage] = {
            "inputs_hash": inputs_hash,
            "outputs": [{"path": str(p), "hash": hash_path(p)} for p in outputs],
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "tool_version": __version__,
        }

    def validate(self) -> list[str]:
        """Problems with the recorded outputs (missing files, changed content)."""
        problems = []
        for stage, entry in sorted(self.stages.items()):
            for out in entry.get("outputs", []):
                p = Path(out["path"])
                if not p.exists():
                    problems.append(f"{stage}: {p} is missing")
                elif hash_path(p) != out["hash"]:
                    problems.append(f"{stage}: {p} changed since it was written")
        return problems


@dataclass
class Stage:
    name: str
    inputs: Callable[[], list[Path]]
    settings: dict
    outputs: list[Path]
    action: Callable[[], None]


def run_stages(stages: list[Stage], manifest: PipelineManifest) -> dict[str, str]:
    """Run or skip each stage in order. Returns stage name -> 'ran' | 'skipped'."""
    status = {}
    force = False
    for stage in stages:
        inputs = stage.inputs()
        missing = [p for p in inputs if not Path(p).exists()]
        if missing:
            raise StageError(stage.name, f"missing input {missing[0]}")
        digest = hash_inputs(inputs, stage.settings)
        if not force and manifest.is_fresh(stage.name, digest):
            logger.info("%s is up to date; skipped", stage.name, extra={"stage": stage.name})
            status[stage.name] = "skipped"
            continue
        logger.info("running %s", stage.name, extra={"stage": stage.name})
        try:
            stage.action()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage.name, f"{type(exc).__name__}: {exc}") from exc
        for out in stage.outputs:
            if not Path(out).exists():
                raise StageError(stage.name, f"expected output {out} was not written")
        manifest.record(stage.name, digest, stage.outputs)
        manifest.save()
        status[stage.name] = "ran"
        force = True
    return status
