"""Run reports (JSON) and plain CSV outputs."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__


def versions() -> dict:
    return {"stablerobin": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def jsonable(obj):
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    checks: list = field(default_factory=list)
    stability: Optional[dict] = None
    classification: Optional[dict] = None
    solve: Optional[dict] = None
    errors: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    versions: dict = field(default_factory=versions)
    timings: Optional[dict] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors and all(c.get("passed", True) for c in self.checks)

    def to_dict(self, normalize: bool = False) -> dict:
        d = jsonable(asdict(self))
        if normalize:
            d.pop("timings", None)
        return d

    def to_json(self, normalize: bool = False) -> str:
        return json.dumps(self.to_dict(normalize), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d.setdefault("timings", None)
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def write(self, path, normalize: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(normalize))
        return path


def write_field_csv(path, field_) -> Path:
    """One row per grid node: ``x1,...,xm,value``."""
    chart = field_.chart
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [c.ravel() for c in chart.grid.mesh] + [np.asarray(field_.values).ravel()]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(chart.dim)] + ["value"])
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    return path


def write_convergence_csv(path, levels) -> Path:
    """``h,residual`` rows, one per refinement level."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "residual"])
        for lv in levels:
            w.writerow([repr(float(lv["h"])), repr(float(lv["value"]))])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)
