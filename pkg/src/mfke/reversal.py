"""Terminal-value Fokker-Planck problems through the time-reversed McKean SDE.

Given ``u(T) = u_T`` for ``u_t = (1/2)(sigma^2 u)'' - (b u)'``, the particles
start from ``u_T`` and run in reversed time ``s = T - t`` with

    dY_s = b~(s, Y_s; v_s) ds + sigma(T - s, Y_s) dbeta_s,
    b~(s, y; v) = (sigma^2(T - s, .) v)'(y) / v(y) - b(T - s, y),

where ``v_s`` is the law of ``Y_s`` (estimated by KDE each step). Then
``u(t) = v_{T - t}``.
"""
from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from ._backend import BACKEND
from .engine import SimConfig, Trajectory, bandwidth_for, simulate, take_snapshot
from .errors import DomainError, NumericalAbort
from .measures import (
    DensitySnapshot,
    Mollifier,
    ParticleEnsemble,
    kde_density,
    kde_gradient,
    kde_self_term,
)

# v_min = FLOOR_FACTOR * peak of the current KDE
FLOOR_FACTOR = 1e-6
# warn when more drift evaluations than this fraction hit the floor
FLOOR_WARN_FRACTION = 0.10
VACUUM_WARNING = "reversed drift unreliable in vacuum"

_FD_STEP = 1e-5


def _sigma_sq(spec, t: float, y: np.ndarray) -> np.ndarray:
    s = np.broadcast_to(np.asarray(spec.sigma(t, y, None), dtype=np.float64), y.shape)
    return s * s


def sigma_sq_gradient(spec, t: float, y: np.ndarray) -> np.ndarray:
    """``d/dy sigma^2(t, y)``: analytic when the problem provides it."""
    if spec.sigma_sq_dx is not None:
        return np.broadcast_to(np.asarray(spec.sigma_sq_dx(t, y), dtype=np.float64), y.shape)
    return (_sigma_sq(spec, t, y + _FD_STEP) - _sigma_sq(spec, t, y - _FD_STEP)) / (2 * _FD_STEP)


def reversed_drift(y, s: float, density, spec, T: float, grad=None, v_min: float = 0.0) -> np.ndarray:
    """``[sigma^2 v' + (d sigma^2) v] / max(v, v_min) - b(T - s, y)``.

    ``density`` is either the values ``v_s(y)`` (then ``grad`` holds
    ``v_s'(y)``) or a :class:`DensitySnapshot`, interpolated on its grid.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if isinstance(density, DensitySnapshot):
        g = np.gradient(density.values, density.grid)
        v = np.interp(y, density.grid, density.values)
        dv = np.interp(y, density.grid, g)
    else:
        if grad is None:
            raise DomainError("pass the density gradient with pointwise density values")
        v = np.broadcast_to(np.asarray(density, dtype=np.float64), y.shape)
        dv = np.broadcast_to(np.asarray(grad, dtype=np.float64), y.shape)
    t = T - s
    a = _sigma_sq(spec, t, y)
    da = sigma_sq_gradient(spec, t, y)
    b = np.broadcast_to(np.asarray(spec.drift(t, y, None), dtype=np.float64), y.shape)
    return (a * dv + da * v) / np.maximum(v, v_min) - b


# ------------------------------------------------------------- test bumps

@dataclass(frozen=True)
class Bump:
    """Smooth compactly supported ``phi(x) = exp(1 - 1/(1 - z^2))``, ``z = (x-c)/r``."""

    centre: float
    radius: float

    def _parts(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.centre) / self.radius
        inside = np.abs(z) < 1.0
        zi = np.where(inside, z, 0.0)
        q = 1.0 - zi * zi
        g = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        return zi, q, g, inside

    def __call__(self, x) -> np.ndarray:
        return self._parts(x)[2]

    def d1(self, x) -> np.ndarray:
        z, q, g, inside = self._parts(x)
        return np.where(inside, g * (-2.0 * z / q**2), 0.0) / self.radius

    def d2(self, x) -> np.ndarray:
        z, q, g, inside = self._parts(x)
        h1 = -2.0 * z / q**2
        h2 = -2.0 / q**2 - 8.0 * z * z / q**3
        return np.where(inside, g * (h1 * h1 + h2), 0.0) / self.radius**2


def default_bumps(centre: float = 0.0, scale: float = 1.0) -> list[Bump]:
    offsets = (-1.0, -0.5, 0.0, 0.5, 1.0)
    return [Bump(centre + scale * o, scale) for o in offsets]


def generator(phi: Bump, spec, t: float, x: np.ndarray) -> np.ndarray:
    """``(1/2) sigma^2 phi'' + b phi'`` at forward time ``t``."""
    a = _sigma_sq(spec, t, x)
    b = np.broadcast_to(np.asarray(spec.drift(t, x, None), dtype=np.float64), x.shape)
    return 0.5 * a * phi.d2(x) + b * phi.d1(x)


# ------------------------------------------------------------------ solver

@dataclass
class BackwardSolution:
    """``v`` in reversed time and ``u(t) = v(T - t)`` in forward time."""

    v: Trajectory
    u: list[DensitySnapshot]
    diagnostics: dict
    functionals: dict = field(default_factory=dict)

    def u_at(self, t: float) -> DensitySnapshot:
        for s in self.u:
            if abs(s.time - t) <= 1e-12 * max(1.0, abs(t)):
                return s
        raise KeyError(t)


def _is_conservative(spec) -> bool:
    y = np.linspace(-5.0, 5.0, 41)
    for t in (0.0, 0.5):
        lam = np.asarray(spec.lam(t, y, None, None), dtype=np.float64)
        if np.any(lam != 0.0):
            return False
    return True


def solve_backward(spec, cfg: SimConfig, initial: ParticleEnsemble | None = None,
                   test_functions: list[Bump] | None = None, callback=None,
                   leave_one_out: bool = True) -> BackwardSolution:
    """Recover ``u`` on ``[0, T]`` from its terminal law.

    ``cfg.snapshot_times`` are reversed times ``s``. ``initial`` replaces a
    fresh sample of the terminal law (e.g. forward particles at ``T``).
    With ``test_functions`` the per-step functionals needed by
    :func:`weak_form_residuals` are recorded. The density under each
    particle excludes the particle itself (``leave_one_out``), so a sparse
    tail particle is pulled towards its neighbours instead of feeling a
    vanishing score.
    """
    if spec.interaction != "none":
        raise DomainError("the backward solver handles linear problems only")
    if not _is_conservative(spec):
        raise DomainError("the backward solver needs Λ ≡ 0")
    started = _time.perf_counter()
    T, dt = cfg.T, cfg.dt
    if initial is None:
        if spec.terminal_law is None:
            raise DomainError("solve_backward needs a terminal law")
        x0 = spec.terminal_law.sample(cfg.N, cfg.seed, spec.dimension)
        ens = ParticleEnsemble(x0, np.zeros(cfg.N), 0.0)
    else:
        ens = ParticleEnsemble(initial.positions, np.zeros(initial.n), 0.0)
    if ens.dim != 1:
        raise DomainError("the backward solver is one-dimensional")
    n = ens.n
    wanted = cfg.snapshot_steps()
    snaps: list[DensitySnapshot] = []
    floor_hits = 0
    evaluations = 0
    tests = list(test_functions or [])
    record_t, record_phi, record_gen = [], [], []

    def record(s: float, y: np.ndarray):
        if not tests:
            return
        t = T - s
        record_t.append(t)
        record_phi.append([float(np.mean(phi(y))) for phi in tests])
        record_gen.append([float(np.mean(generator(phi, spec, t, y))) for phi in tests])

    if 0 in wanted:
        snaps.append(take_snapshot(ens, cfg))
    for k in range(cfg.n_steps):
        s = k * dt
        y = ens.positions
        record(s, y)
        kernel = Mollifier(cfg.kernel_family, bandwidth_for(ens, cfg), 1)
        v = kde_density(ens, kernel, y, method=cfg.kde_method)
        # floor from the full estimate: its peak stays positive even when
        # every particle is isolated
        v_min = FLOOR_FACTOR * float(v.max())
        if leave_one_out:
            v = v - kde_self_term(ens, kernel, cfg.kde_method)
        dv = kde_gradient(ens, kernel, y, method=cfg.kde_method)
        floored = v < v_min
        floor_hits += int(floored.sum())
        evaluations += n
        drift = reversed_drift(y, s, v, spec, T, grad=dv, v_min=v_min)
        if callback is not None:
            callback(k, ens, drift)
        sig = np.sqrt(_sigma_sq(spec, T - s, y))
        z = rng.normals(cfg.seed, rng.DIFFUSION, k, n)
        new = y + drift * dt + sig * math.sqrt(dt) * z
        if not np.all(np.isfinite(new)):
            i = int(np.flatnonzero(~np.isfinite(new))[0])
            raise NumericalAbort(f"non-finite position for particle {i} at step {k}")
        ens = ens.with_positions(new, time=(k + 1) * dt)
        if k + 1 in wanted:
            snaps.append(take_snapshot(ens, cfg))
    record(T, ens.positions)

    fraction = floor_hits / max(evaluations, 1)
    if fraction > FLOOR_WARN_FRACTION:
        warnings.warn(VACUUM_WARNING, RuntimeWarning, stacklevel=2)
    diagnostics = {
        "backend": BACKEND,
        "floor_activations": floor_hits,
        "floor_fraction": fraction,
        "drift_evaluations": evaluations,
        "seed": cfg.seed,
        "steps": cfg.n_steps,
        "warning": VACUUM_WARNING if fraction > FLOOR_WARN_FRACTION else None,
        "wall_time": _time.perf_counter() - started,
    }
    v_traj = Trajectory(snaps, ens, diagnostics)
    u = [DensitySnapshot(sn.grid, sn.values, sn.mass, T - sn.time, meta=dict(sn.meta))
         for sn in reversed(snaps)]
    functionals = {}
    if tests:
        order = np.argsort(record_t)
        functionals = {
            "t": np.asarray(record_t)[order],
            "phi": np.asarray(record_phi)[order],
            "generator": np.asarray(record_gen)[order],
        }
    return BackwardSolution(v_traj, u, diagnostics, functionals)


def weak_form_residuals(solution: BackwardSolution) -> np.ndarray:
    """``max_t |<phi,u(t)> - <phi,u_T> + int_t^T <L phi, u(s)> ds|`` per test function."""
    f = solution.functionals
    if not f:
        raise DomainError("solve_backward was run without test functions")
    t, phi, gen = f["t"], f["phi"], f["generator"]
    # tail integrals int_t^T by the trapezoid rule
    pieces = 0.5 * (gen[1:] + gen[:-1]) * np.diff(t)[:, None]
    tail = np.concatenate([np.cumsum(pieces[::-1], axis=0)[::-1], np.zeros((1, phi.shape[1]))])
    res = phi - phi[-1] + tail
    return np.max(np.abs(res), axis=0)


def weak_form_tolerance(N: int, dt: float, bandwidth: float) -> float:
    """Monte Carlo, Euler and kernel-smoothing error budget of the residual."""
    return 5.0 / math.sqrt(N) + dt + bandwidth**2


def forward_reference(spec, cfg: SimConfig, callback=None) -> Trajectory:
    """Plain forward run from the initial law (validation target)."""
    if spec.initial_law is None:
        raise DomainError("forward_reference needs an initial law")
    return simulate(spec, cfg, callback=callback)


__all__ = [
    "BackwardSolution",
    "Bump",
    "VACUUM_WARNING",
    "default_bumps",
    "forward_reference",
    "generator",
    "reversed_drift",
    "sigma_sq_gradient",
    "solve_backward",
    "weak_form_residuals",
    "weak_form_tolerance",
]
