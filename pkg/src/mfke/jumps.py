"""Unweighted jump representation of linear equations with a nonpositive potential.

Instead of carrying weights ``exp(int Lambda)``, each particle is killed at
rate ``-Lambda`` and immediately reborn at the position of a uniformly chosen
particle of the current (pre-step) population. The normalized law ``eta``
is then a probability measure and the Feynman-Kac measure is recovered as
``gamma(t) = exp(int_0^t <eta_s, Lambda_s> ds) * eta(t)``.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._backend import BACKEND
from .engine import SimConfig, Trajectory, evaluate_fields, initial_ensemble, step, take_snapshot
from .errors import DomainError
from .measures import DensitySnapshot, ParticleEnsemble, trapezoid
from .problems import ProblemSpec


@dataclass
class JumpDiagnostics:
    total_jumps: int
    jumps_per_unit_time: float
    mass_curve: list[tuple[float, float]]
    mean_lambda: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total_jumps": self.total_jumps,
            "jumps_per_unit_time": self.jumps_per_unit_time,
            "mass_curve": self.mass_curve,
            "mean_lambda": self.mean_lambda,
        }


def _potential(ensemble: ParticleEnsemble, spec: ProblemSpec, t: float, fields) -> np.ndarray:
    lam = np.broadcast_to(
        np.asarray(spec.lam(t, ensemble.positions, fields.u, fields.grad), dtype=np.float64),
        (ensemble.n,))
    if np.any(np.isnan(lam)):
        raise DomainError(f"NaN potential at t={t}")
    if np.any(lam > 0):
        raise DomainError(f"positive Λ at t={t}: the jump representation needs Λ ≤ 0")
    return lam


def _jump(ensemble: ParticleEnsemble, diffused: ParticleEnsemble, lam: np.ndarray, dt: float,
          seed: int, step_index: int) -> tuple[ParticleEnsemble, int]:
    n = ensemble.n
    prob = -np.expm1(lam * dt)
    u = rng.uniforms(seed, rng.JUMP_DECISION, step_index, n)
    jumping = np.flatnonzero(u < prob)
    if jumping.size == 0:
        return diffused, 0
    # one target per particle so the draw does not depend on who else jumps
    idx = np.minimum((rng.uniforms(seed, rng.JUMP_TARGET, step_index, n) * n).astype(np.int64), n - 1)
    new = np.array(diffused.positions, copy=True)
    new[jumping] = ensemble.positions[idx[jumping]]
    return diffused.with_positions(new), int(jumping.size)


def jump_step(ensemble: ParticleEnsemble, spec: ProblemSpec, cfg: SimConfig,
              step_index: int) -> tuple[ParticleEnsemble, int, float]:
    """Diffuse, then kill-and-relocate; returns (ensemble, jumps, mean Lambda).

    The potential is read at the pre-step positions; a jumping particle lands
    on a uniformly drawn pre-step position.
    """
    if np.any(ensemble.log_weights != 0.0):
        raise DomainError("the jump representation carries no weights (all must be 1)")
    t = step_index * cfg.dt
    fields = evaluate_fields(ensemble, spec, cfg)
    lam = _potential(ensemble, spec, t, fields)
    diffused = step(ensemble, spec, cfg, step_index, fields)
    out, jumps = _jump(ensemble, diffused, lam, cfg.dt, cfg.seed, step_index)
    return out, jumps, float(lam.mean())


def simulate_jumps(spec: ProblemSpec, cfg: SimConfig, callback=None) -> tuple[Trajectory, JumpDiagnostics]:
    """Run the jump system; snapshots are the probability densities ``eta``."""
    if spec.initial_law is None:
        raise DomainError("the jump engine needs an initial law")
    started = _time.perf_counter()
    ens = initial_ensemble(spec, cfg)
    ens = ParticleEnsemble(ens.positions, np.zeros(ens.n), 0.0)
    mass0 = spec.initial_mass
    wanted = cfg.snapshot_steps()
    snaps: list[DensitySnapshot] = []
    total = 0
    log_mass = 0.0
    mean_lam = []
    mass_curve = [(0.0, mass0)]

    if 0 in wanted:
        snaps.append(take_snapshot(ens, cfg))
    for k in range(cfg.n_steps):
        if callback is not None:
            callback(k, ens)
        ens, jumps, lam_bar = jump_step(ens, spec, cfg, k)
        total += jumps
        mean_lam.append((k * cfg.dt, lam_bar))
        log_mass += lam_bar * cfg.dt
        mass_curve.append(((k + 1) * cfg.dt, mass0 * math.exp(log_mass)))
        if k + 1 in wanted:
            snaps.append(take_snapshot(ens, cfg))
    if callback is not None:
        callback(cfg.n_steps, ens)

    diag = JumpDiagnostics(total, total / (cfg.N * cfg.T), mass_curve, mean_lam)
    traj = Trajectory(snaps, ens, {
        "backend": BACKEND,
        "seed": cfg.seed,
        "steps": cfg.n_steps,
        "total_jumps": total,
        "wall_time": _time.perf_counter() - started,
    })
    return traj, diag


def _curve_mass(t: float, mean_lambda: list[tuple[float, float]], mass0: float) -> float:
    acc = 0.0
    for i, (s, lam) in enumerate(mean_lambda):
        if s >= t - 1e-12 * max(1.0, t):
            break
        nxt = mean_lambda[i + 1][0] if i + 1 < len(mean_lambda) else t
        acc += lam * (min(nxt, t) - s)
    return mass0 * math.exp(acc)


def reconstruct_gamma(eta_trajectory, spec: ProblemSpec,
                      diagnostics: JumpDiagnostics | None = None) -> list[DensitySnapshot]:
    """Rescale each ``eta`` snapshot by ``exp`` of the left-Riemann integral of ``<eta, Lambda>``.

    With ``diagnostics`` the per-step particle means recorded during the run
    are used; otherwise ``<eta, Lambda>`` is integrated on the snapshot grid
    between consecutive snapshots (left endpoint).
    """
    snaps = list(eta_trajectory.snapshots if isinstance(eta_trajectory, Trajectory) else eta_trajectory)
    mass0 = spec.initial_mass
    out = []
    if diagnostics is not None and diagnostics.mean_lambda:
        for s in snaps:
            m = _curve_mass(s.time, diagnostics.mean_lambda, mass0)
            out.append(DensitySnapshot(s.grid, s.values * m, m, s.time, meta=dict(s.meta)))
        return out
    if spec.interaction != "none":
        raise DomainError("snapshot quadrature supports non-interacting potentials only")
    acc = 0.0
    prev_t, prev_mean = 0.0, _initial_mean_lambda(spec, snaps)
    for s in snaps:
        acc += prev_mean * (s.time - prev_t)
        m = mass0 * math.exp(acc)
        out.append(DensitySnapshot(s.grid, s.values * m, m, s.time, meta=dict(s.meta)))
        prev_t, prev_mean = s.time, _grid_mean_lambda(spec, s)
    return out


def _grid_mean_lambda(spec: ProblemSpec, snap: DensitySnapshot) -> float:
    lam = np.broadcast_to(np.asarray(spec.lam(snap.time, snap.grid, None, None), dtype=np.float64),
                          snap.grid.shape)
    mass = snap.quadrature_mass()
    if not mass > 0:
        raise DomainError(f"snapshot at t={snap.time} has no mass")
    return float(trapezoid(lam * snap.values, snap.grid)) / mass


def _initial_mean_lambda(spec: ProblemSpec, snaps: list[DensitySnapshot]) -> float:
    if snaps and snaps[0].time == 0.0:
        return _grid_mean_lambda(spec, snaps[0])
    law = spec.initial_law
    if law is None:
        raise DomainError("need a t=0 snapshot or an initial law")
    if law.kind == "dirac":
        return float(np.asarray(spec.lam(0.0, np.array([law.params["x0"]]), None, None)).ravel()[0])
    grid = snaps[0].grid if snaps else np.linspace(-8.0, 8.0, 2001)
    dens = law.pdf(grid)
    return _grid_mean_lambda(spec, DensitySnapshot(grid, dens, 1.0, 0.0))


__all__ = ["JumpDiagnostics", "jump_step", "reconstruct_gamma", "simulate_jumps"]
