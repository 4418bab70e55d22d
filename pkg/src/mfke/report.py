"""Run artifacts on disk and snapshot-by-snapshot comparison reports."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError
from .measures import DensitySnapshot, ParticleEnsemble, wasserstein1, wasserstein1_densities

SNAPSHOTS_FILE = "snapshots.csv"
SAMPLES_FILE = "samples_final.csv"
TIME_TOL = 1e-9


# ------------------------------------------------------------------ writing

def dumps_json(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_snapshots(path, snaps) -> None:
    """Long-format ``t,x,u,mass`` CSV holding every snapshot."""
    lines = ["t,x,u,mass"]
    for s in snaps:
        t, m = repr(s.time), repr(s.mass)
        lines.extend(f"{t},{x!r},{u!r},{m}" for x, u in zip(s.grid.tolist(), s.values.tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_samples(path, ens: ParticleEnsemble) -> None:
    lines = ["x,weight"]
    lines.extend(f"{x!r},{w!r}" for x, w in zip(ens.positions.ravel().tolist(), ens.weights.tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_table(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(repr(float(v)) if not isinstance(v, str) else v for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ reading

def read_snapshots(path) -> list[DensitySnapshot]:
    """Snapshots from a run directory or a long-format CSV."""
    path = Path(path)
    if path.is_dir():
        path = path / SNAPSHOTS_FILE
    if not path.exists():
        raise DomainError(f"no snapshot file at {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0 or data.shape[1] != 4:
        raise DomainError(f"{path}: expected columns t,x,u,mass")
    groups: dict[float, list[int]] = defaultdict(list)
    for i, t in enumerate(data[:, 0]):
        groups[float(t)].append(i)
    out = []
    for t in sorted(groups):
        rows = data[groups[t]]
        out.append(DensitySnapshot(rows[:, 1], rows[:, 2], float(rows[0, 3]), t))
    return out


def read_samples(run_dir) -> tuple[np.ndarray, np.ndarray] | None:
    path = Path(run_dir) / SAMPLES_FILE
    if not path.exists():
        return None
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


# --------------------------------------------------------------- comparison

@dataclass
class ComparisonReport:
    """Per-snapshot metrics plus the metadata needed to rerun the inputs."""

    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows:
            for key in ("l1", "linf", "w1", "mass_error"):
                if not row[key] >= 0:
                    raise DomainError(f"metric {key} must be nonnegative, got {row[key]}")

    def metric(self, name: str, t: float | None = None) -> float:
        rows = self.rows if t is None else [r for r in self.rows if abs(r["t"] - t) <= TIME_TOL]
        if not rows:
            raise KeyError(t)
        return max(r[name] for r in rows)

    def to_dict(self, timing: bool = False) -> dict:
        meta = dict(self.metadata)
        if not timing:
            meta.pop("wall_time", None)
        return {"metadata": meta, "snapshots": self.rows}

    def to_json(self, timing: bool = False) -> str:
        return dumps_json(self.to_dict(timing))

    def to_text(self) -> str:
        head = f"{'t':>10} {'L1':>12} {'Linf':>12} {'W1':>12} {'mass err':>12}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r['t']:>10.6g} {r['l1']:>12.6g} {r['linf']:>12.6g} "
                         f"{r['w1']:>12.6g} {r['mass_error']:>12.6g}")
        return "\n".join(lines) + "\n"


def _match(t: float, ref: list[DensitySnapshot]) -> DensitySnapshot | None:
    for s in ref:
        if abs(s.time - t) <= TIME_TOL * max(1.0, abs(t)):
            return s
    return None


def _interp_time(t: float, ref: list[DensitySnapshot], grid: np.ndarray) -> tuple[np.ndarray, float]:
    times = np.array([s.time for s in ref])
    if t < times[0] - TIME_TOL or t > times[-1] + TIME_TOL:
        raise DomainError(f"time {t} lies outside the reference range [{times[0]}, {times[-1]}]")
    j = int(np.clip(np.searchsorted(times, t), 1, len(ref) - 1)) if len(ref) > 1 else 0
    if len(ref) == 1:
        s = ref[0]
        return np.interp(grid, s.grid, s.values, left=0.0, right=0.0), s.mass
    a, b = ref[j - 1], ref[j]
    lam = (t - a.time) / (b.time - a.time)
    va = np.interp(grid, a.grid, a.values, left=0.0, right=0.0)
    vb = np.interp(grid, b.grid, b.values, left=0.0, right=0.0)
    return (1 - lam) * va + lam * vb, (1 - lam) * a.mass + lam * b.mass


def compare_snapshots(run: list[DensitySnapshot], ref: list[DensitySnapshot],
                      interpolate: bool = False, run_samples=None, ref_samples=None,
                      metadata: dict | None = None) -> ComparisonReport:
    """L1, L-infinity, W1 and mass error at every run snapshot time.

    Without ``interpolate`` both sides must share snapshot times and grids.
    ``*_samples`` are ``(positions, weights)`` at the final time; W1 uses
    them when both are present and the grid CDFs otherwise.
    """
    if not run or not ref:
        raise DomainError("nothing to compare: empty snapshot list")
    rows = []
    t_last = max(s.time for s in run)
    for s in run:
        match = _match(s.time, ref)
        if match is None and not interpolate:
            raise DomainError(f"reference has no snapshot at t={s.time!r}; "
                              "pass --interpolate to interpolate in time")
        if match is not None and match.grid.shape == s.grid.shape and np.array_equal(match.grid, s.grid):
            vals, mass = match.values, match.mass
        elif not interpolate:
            raise DomainError(f"grids differ at t={s.time!r}; pass --interpolate to resample")
        elif match is not None:
            vals, mass = np.interp(s.grid, match.grid, match.values, left=0.0, right=0.0), match.mass
        else:
            vals, mass = _interp_time(s.time, ref, s.grid)
        diff = np.abs(s.values - vals)
        use_samples = (run_samples is not None and ref_samples is not None
                       and abs(s.time - t_last) <= TIME_TOL)
        if use_samples:
            w1 = wasserstein1(run_samples[0], ref_samples[0], run_samples[1], ref_samples[1])
        elif trapezoid(s.values, s.grid) > 0 and trapezoid(vals, s.grid) > 0:
            w1 = wasserstein1_densities(s.grid, np.maximum(s.values, 0), np.maximum(vals, 0))
        else:
            # undefined unless both sides are extinct
            w1 = 0.0 if not (np.any(s.values > 0) or np.any(vals > 0)) else math.inf
        rows.append({
            "t": s.time,
            "l1": float(trapezoid(diff, s.grid)),
            "linf": float(diff.max()),
            "w1": float(w1),
            "w1_source": "samples" if use_samples else "grid",
            "mass_error": abs(s.mass - mass),
        })
    return ComparisonReport(rows, dict(metadata or {}))


__all__ = [
    "ComparisonReport",
    "compare_snapshots",
    "dumps_json",
    "read_samples",
    "read_snapshots",
    "write_json",
    "write_samples",
    "write_snapshots",
    "write_table",
]
