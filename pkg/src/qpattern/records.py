"""Structured output records: CSV tables and JSON estimator records.

Schema rule: every emitted number is either accompanied by a stderr
column/field or tagged exact.  Floats are serialized with ``repr`` (and
JSON with 17 significant digits), which round-trips and is byte-stable
across runs, so identical experiments produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field as _dc_field
from typing import Any, Iterable, Sequence

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


@dataclass
class EstimatorRecord:
    """One estimated (or exact) scalar with its provenance.

    ``stderr`` is None iff ``exact`` is true; ``window`` is the time
    window the estimate used (when meaningful) and ``diagnostics`` holds
    free-form numeric context (R^2, ESS, z-scores, ...).
    """

    name: str
    estimate: float
    stderr: float | None = None
    exact: bool = False
    window: tuple[float, float] | None = None
    diagnostics: dict[str, Any] = _dc_field(default_factory=dict)

    def to_json_dict(self) -> dict:
        if self.exact != (self.stderr is None):
            raise ValueError(
                f"record {self.name}: exactly one of stderr/exact required"
            )
        out: dict[str, Any] = {
            "name": self.name,
            "estimate": float(self.estimate),
            "exact": bool(self.exact),
        }
        if self.stderr is not None:
            out["stderr"] = float(self.stderr)
        if self.window is not None:
            out["window"] = [float(self.window[0]), float(self.window[1])]
        if self.diagnostics:
            out["diagnostics"] = _plain(self.diagnostics)
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_records(path: str, records: Sequence[EstimatorRecord],
                  meta: dict | None = None) -> None:
    payload = {
        "schema": "qpattern-estimates-v1",
        "meta": _plain(meta or {}),
        "records": [r.to_json_dict() for r in records],
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: str, entries: dict[str, str], meta: dict) -> str:
    """Write the run manifest last; every produced file must be listed."""
    manifest = {
        "schema": "qpattern-manifest-v1",
        "meta": _plain(meta),
        "files": {name: digest for name, digest in sorted(entries.items())},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path
