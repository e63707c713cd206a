"""Component checkpoints (manifest + tensor blobs) and the run manifest enforcing phase order."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .numkit import blob

PHASES = ["tokenizer", "pretrain", "rm", "alloc", "pay"]
PHASE_COMMANDS = {"tokenizer": "train-tokenizer", "pretrain": "pretrain", "rm": "train-rm",
                  "alloc": "train-alloc", "pay": "train-pay"}


class IncompatibleCheckpointError(ValueError):
    pass


class ManifestError(RuntimeError):
    pass


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _fname(i: int, key: str) -> str:
    return f"{i:03d}_{re.sub(r'[^A-Za-z0-9_.-]', '_', key)}.gadt"


def save_component(root, name: str, config_hash: str, arrays: dict, meta: dict | None = None) -> Path:
    """Write ``root/name/manifest.json`` plus one blob per array (keys kept in order)."""
    d = Path(root) / name
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("*.gadt"):
        old.unlink()
    files = {}
    for i, (key, arr) in enumerate(arrays.items()):
        fn = _fname(i, key)
        blob.save(d / fn, np.asarray(arr, dtype=np.float64))
        files[key] = fn
    _dump_json(d / "manifest.json", {"component": name, "config_hash": config_hash,
                                     "meta": meta or {}, "order": list(arrays), "tensors": files})
    return d


def load_component(root, name: str, config_hash: str | None = None,
                   meta: dict | None = None) -> tuple[dict, dict]:
    """Arrays and meta of a component; hash or meta disagreement is an incompatibility."""
    d = Path(root) / name
    path = d / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint for {name!r} under {root}")
    man = json.loads(path.read_text(encoding="utf-8"))
    if config_hash is not None and man["config_hash"] != config_hash:
        raise IncompatibleCheckpointError(
            f"{name}: checkpoint built for config {man['config_hash']}, current is {config_hash}")
    for k, v in (meta or {}).items():
        if man["meta"].get(k) != v:
            raise IncompatibleCheckpointError(
                f"{name}: checkpoint has {k}={man['meta'].get(k)!r}, expected {v!r}")
    arrays = {k: blob.load(d / man["tensors"][k]) for k in man["order"]}
    return arrays, man["meta"]


class RunManifest:
    """Phase completion record of one run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"phases": {}}

    def done(self, phase: str, stage_hash: str | None = None) -> bool:
        h = self.data["phases"].get(phase)
        return h is not None and (stage_hash is None or h == stage_hash)

    def require(self, phase: str, hashes: dict) -> None:
        """Every phase before ``phase`` must be complete under the current config."""
        for prev in PHASES[:PHASES.index(phase)]:
            if not self.done(prev):
                raise ManifestError(f"phase {phase!r} needs {prev!r} first; "
                                    f"run `genad {PHASE_COMMANDS[prev]}` on this run directory")
            if not self.done(prev, hashes[prev]):
                raise ManifestError(f"phase {prev!r} was run with a different configuration; "
                                    f"rerun `genad {PHASE_COMMANDS[prev]}`")

    def mark(self, phase: str, stage_hash: str) -> None:
        self.data["phases"][phase] = stage_hash
        # later phases are stale once an earlier one is redone
        for later in PHASES[PHASES.index(phase) + 1:]:
            self.data["phases"].pop(later, None)
        self.root.mkdir(parents=True, exist_ok=True)
        _dump_json(self.path, self.data)

    def append_metrics(self, phase: str, records: list[dict]) -> None:
        """Replace ``phase``'s records in ``metrics.jsonl`` (reruns stay idempotent)."""
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / "metrics.jsonl"
        kept = []
        if path.exists():
            kept = [ln for ln in path.read_text(encoding="utf-8").splitlines()
                    if ln and json.loads(ln).get("phase") != phase]
        kept += [json.dumps({"phase": phase, **r}, sort_keys=True) for r in records]
        path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")
