"""Forward Euler-Maruyama integrator for McKean / McKean Feynman-Kac systems.

One step, all coefficients frozen at the start-of-step ensemble:

    u_i  = (1/N) sum_j w_j K_eps(xi_i - xi_j)        (or K * u, or nothing)
    w_i <- w_i * exp(Lambda(t, xi_i, u_i, grad u_i) * dt)
    xi_i <- xi_i + b(t, xi_i, u_i) dt + sigma(t, xi_i, u_i) sqrt(dt) Z_i

with ``Z_i`` drawn from the counter-based stream ``(seed, i, step)``.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from ._backend import BACKEND
from .errors import DomainError, NumericalAbort
from .measures import (
    DensitySnapshot,
    Mollifier,
    ParticleEnsemble,
    empirical_test_functional,
    kde_density,
    kde_gradient,
    silverman_bandwidth,
)
from .problems import ProblemSpec

# largest admissible log-weight before exp() overflows
_LOG_WEIGHT_LIMIT = 700.0


@dataclass(frozen=True)
class GridSpec:
    min: float
    max: float
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise DomainError("grid needs M >= 2")
        if not self.max > self.min:
            raise DomainError("grid needs max > min")

    def points(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.M)


@dataclass(frozen=True)
class SimConfig:
    N: int
    dt: float
    T: float
    seed: int = 0
    bandwidth: float | str = "silverman"
    snapshot_times: tuple = ()
    grid: GridSpec = field(default_factory=lambda: GridSpec(-8.0, 8.0, 2000))
    kernel_family: str = "gaussian"
    kde_method: str = "auto"

    def __post_init__(self):
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise DomainError("N must be a positive integer")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError("dt must be positive")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError("T must be positive")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise DomainError(f"T/dt = {ratio} is not an integer number of steps")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "silverman":
                raise DomainError("bandwidth must be 'silverman' or a positive number")
        elif not self.bandwidth > 0:
            raise DomainError("bandwidth must be positive")
        times = tuple(float(t) for t in self.snapshot_times)
        for t in times:
            k = t / self.dt
            if t < 0 or t > self.T * (1 + 1e-12) or abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise DomainError(f"snapshot time {t} is not on the step grid")
        if list(times) != sorted(set(times)):
            raise DomainError("snapshot_times must be strictly increasing")
        object.__setattr__(self, "snapshot_times", times)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def snapshot_steps(self) -> dict[int, float]:
        return {int(round(t / self.dt)): t for t in self.snapshot_times}


@dataclass
class Trajectory:
    snapshots: list[DensitySnapshot]
    final: ParticleEnsemble
    diagnostics: dict

    def snapshot_at(self, t: float) -> DensitySnapshot:
        for s in self.snapshots:
            if abs(s.time - t) < 1e-12 * max(1.0, abs(t)):
                return s
        raise KeyError(t)


@dataclass
class Fields:
    """Interaction inputs evaluated at the start-of-step positions."""

    u: np.ndarray | None = None
    grad: np.ndarray | None = None
    bandwidth: float | None = None


def bandwidth_for(ensemble: ParticleEnsemble, cfg: SimConfig) -> float:
    if isinstance(cfg.bandwidth, str):
        return silverman_bandwidth(ensemble)
    return float(cfg.bandwidth)


def evaluate_fields(ensemble: ParticleEnsemble, spec: ProblemSpec, cfg: SimConfig) -> Fields:
    if spec.interaction == "none":
        return Fields()
    if spec.interaction == "convolution":
        kernel = spec.kernel
    else:
        kernel = Mollifier(cfg.kernel_family, bandwidth_for(ensemble, cfg), ensemble.dim)
    x = ensemble.positions
    u = kde_density(ensemble, kernel, x, method=cfg.kde_method)
    grad = kde_gradient(ensemble, kernel, x, method=cfg.kde_method) if spec.uses_gradient else None
    return Fields(u, grad, kernel.bandwidth)


def _per_particle(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (n,))


def step(ensemble: ParticleEnsemble, spec: ProblemSpec, cfg: SimConfig, step_index: int,
         fields: Fields | None = None) -> ParticleEnsemble:
    """Advance positions by one Euler-Maruyama step; weights are untouched."""
    if ensemble.time + cfg.dt > cfg.T + 0.5 * cfg.dt:
        raise DomainError("step would pass the horizon T")
    if fields is None:
        fields = evaluate_fields(ensemble, spec, cfg)
    n, d = ensemble.n, ensemble.dim
    t = step_index * cfg.dt
    x = ensemble.positions
    sig = _per_particle(spec.sigma(t, x, fields.u), n)
    b = np.asarray(spec.drift(t, x, fields.u), dtype=np.float64)
    z = rng.normals(cfg.seed, rng.DIFFUSION, step_index, n * d)
    if d == 1:
        new = x + b * cfg.dt + sig * math.sqrt(cfg.dt) * z
    else:
        new = x + b * cfg.dt + sig[:, None] * math.sqrt(cfg.dt) * z.reshape(n, d)
    bad = ~np.isfinite(new) if d == 1 else ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalAbort(f"non-finite position for particle {i} at step {step_index}")
    return ensemble.with_positions(new, time=(step_index + 1) * cfg.dt)


def potential(ensemble: ParticleEnsemble, spec: ProblemSpec, t: float, fields: Fields,
              cap: float) -> tuple[np.ndarray, int]:
    """Clipped Lambda at the ensemble positions and the number of clip events."""
    lam = _per_particle(spec.lam(t, ensemble.positions, fields.u, fields.grad), ensemble.n)
    if np.any(np.isnan(lam)):
        raise NumericalAbort(f"NaN potential at t={t}")
    clipped = int(np.count_nonzero(np.abs(lam) > cap))
    if clipped:
        lam = np.clip(lam, -cap, cap)
    return lam, clipped


def update_weights(ensemble: ParticleEnsemble, spec: ProblemSpec, dt: float,
                   fields: Fields | None = None, t: float | None = None,
                   cap: float | None = None) -> ParticleEnsemble:
    """``w_j <- w_j * exp(Lambda(t, xi_j, u_j, grad_j) * dt)`` (left endpoint)."""
    t = ensemble.time if t is None else t
    if fields is None:
        fields = Fields()
    cap = spec.clip_level(1.0) if cap is None else cap
    lam, _ = potential(ensemble, spec, t, fields, cap)
    return _apply_log_increment(ensemble, lam * dt, t)


def _apply_log_increment(ensemble: ParticleEnsemble, inc: np.ndarray, t: float) -> ParticleEnsemble:
    lw = ensemble.log_weights + inc
    if not np.all(np.isfinite(lw)) or lw.max() > _LOG_WEIGHT_LIMIT:
        raise NumericalAbort(f"weight overflow at t={t}: check Λ_max / mode magnitudes")
    return ParticleEnsemble(ensemble.positions, lw, ensemble.time)


def initial_ensemble(spec: ProblemSpec, cfg: SimConfig, law=None) -> ParticleEnsemble:
    law = spec.initial_law if law is None else law
    if law is None:
        raise DomainError("problem has no initial law (forward mode)")
    x = law.sample(cfg.N, cfg.seed, spec.dimension)
    lw = np.full(cfg.N, math.log(law.scale))
    return ParticleEnsemble(x, lw, 0.0)


def snapshot_kernel(ensemble: ParticleEnsemble, cfg: SimConfig) -> Mollifier:
    return Mollifier(cfg.kernel_family, bandwidth_for(ensemble, cfg), ensemble.dim)


def take_snapshot(ensemble: ParticleEnsemble, cfg: SimConfig) -> DensitySnapshot:
    kernel = snapshot_kernel(ensemble, cfg)
    grid = cfg.grid.points()
    values = kde_density(ensemble, kernel, grid, method="direct")
    return DensitySnapshot(grid, values, ensemble.mass(), ensemble.time,
                           meta={"bandwidth": kernel.bandwidth})


LogIncrement = Callable[[ParticleEnsemble, int, float, Fields], np.ndarray]


def run(spec: ProblemSpec, cfg: SimConfig, ensemble: ParticleEnsemble | None = None,
        log_increment: LogIncrement | None = None, callback=None) -> Trajectory:
    """Shared driver: alternate weight update and position step from 0 to T.

    ``log_increment(ensemble, k, t, fields)`` replaces ``Lambda * dt`` when
    given (random-environment weights). ``callback(k, ensemble, fields)`` is
    called before every step and once at the end with ``fields=None``.
    """
    started = _time.perf_counter()
    ens = initial_ensemble(spec, cfg) if ensemble is None else ensemble
    cap = spec.clip_level(cfg.T)
    wanted = cfg.snapshot_steps()
    snaps: list[DensitySnapshot] = []
    mass_curve = [(0.0, ens.mass())]
    clips = 0
    needs_lambda = log_increment is None

    if 0 in wanted:
        snaps.append(take_snapshot(ens, cfg))
    for k in range(cfg.n_steps):
        t = k * cfg.dt
        fields = evaluate_fields(ens, spec, cfg)
        if callback is not None:
            callback(k, ens, fields)
        if needs_lambda:
            lam, c = potential(ens, spec, t, fields, cap)
            clips += c
            inc = lam * cfg.dt
        else:
            inc = log_increment(ens, k, t, fields)
        weighted = _apply_log_increment(ens, inc, t)
        ens = step(weighted, spec, cfg, k, fields)
        mass_curve.append(((k + 1) * cfg.dt, ens.mass()))
        if k + 1 in wanted:
            snaps.append(take_snapshot(ens, cfg))
    if callback is not None:
        callback(cfg.n_steps, ens, None)

    w = ens.weights
    diagnostics = {
        "backend": BACKEND,
        "clip_count": clips,
        "lambda_max": cap,
        "mass_curve": mass_curve,
        "max_weight": float(w.max()),
        "min_weight": float(w.min()),
        "seed": cfg.seed,
        "steps": cfg.n_steps,
        "wall_time": _time.perf_counter() - started,
    }
    return Trajectory(snaps, ens, diagnostics)


def simulate(spec: ProblemSpec, cfg: SimConfig, callback=None) -> Trajectory:
    """Forward run of the particle system; deterministic given the config."""
    if spec.initial_law is None:
        raise DomainError("simulate needs a forward problem (initial law)")
    return run(spec, cfg, callback=callback)


__all__ = [
    "Fields",
    "GridSpec",
    "SimConfig",
    "Trajectory",
    "empirical_test_functional",
    "evaluate_fields",
    "initial_ensemble",
    "run",
    "simulate",
    "step",
    "take_snapshot",
    "update_weights",
]
