"""Quenched simulation in a finite-mode random environment.

The noise field is ``xi(t, x) = e0(x) t + sum_i e_i(x) B^i_t`` with independent
Brownian motions ``B^i``. For one frozen realization the particle weights
are Doleans exponentials of ``int xi(ds, Y_s)``::

    log w += e0(Y) dt + sum_i e_i(Y) dB^i - (1/2) sum_i e_i(Y)^2 dt

with every mode read at the start-of-step position (Ito).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .engine import Fields, SimConfig, Trajectory, run
from .errors import DomainError, NumericalAbort
from .measures import ParticleEnsemble
from .problems import ProblemSpec

MODE_KINDS = ("constant", "cos", "bump")


@dataclass(frozen=True)
class Mode:
    """Bounded smooth spatial mode: ``constant``, ``cos`` or Gaussian ``bump``."""

    kind: str
    amplitude: float = 1.0
    wavenumber: float = 1.0
    phase: float = 0.0
    centre: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise DomainError(f"unknown mode kind {self.kind!r}; choose from {MODE_KINDS}")
        if not math.isfinite(self.amplitude):
            raise DomainError("mode amplitude must be finite")
        if self.kind == "bump" and not self.width > 0:
            raise DomainError("bump width must be positive")

    @classmethod
    def constant(cls, value: float) -> Mode:
        return cls("constant", amplitude=value)

    @classmethod
    def cos(cls, k: float = 1.0, amplitude: float = 1.0, phase: float = 0.0) -> Mode:
        return cls("cos", amplitude=amplitude, wavenumber=k, phase=phase)

    @classmethod
    def bump(cls, centre: float = 0.0, width: float = 1.0, amplitude: float = 1.0) -> Mode:
        return cls("bump", amplitude=amplitude, centre=centre, width=width)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "constant":
            return np.full(x.shape, self.amplitude)
        if self.kind == "cos":
            return self.amplitude * np.cos(self.wavenumber * x + self.phase)
        z = (x - self.centre) / self.width
        return self.amplitude * np.exp(-0.5 * z * z)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "amplitude": self.amplitude}
        if self.kind == "cos":
            return {"kind": "cos", "amplitude": self.amplitude, "wavenumber": self.wavenumber,
                    "phase": self.phase}
        return {"kind": "bump", "amplitude": self.amplitude, "centre": self.centre, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> Mode:
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {"constant": {"amplitude"}, "cos": {"amplitude", "wavenumber", "phase"},
                   "bump": {"amplitude", "centre", "width"}}.get(kind)
        if allowed is None:
            raise DomainError(f"unknown mode kind {kind!r}")
        extra = set(d) - allowed
        if extra:
            raise DomainError(f"unknown key(s) for {kind} mode: {sorted(extra)}")
        return cls(kind, **{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class NoiseEnvironment:
    """One realization: drift mode ``e0`` plus stochastic modes with their increments.

    ``increments[i, k]`` is ``B^{i+1}`` over step ``k``.
    """

    drift_mode: Mode | None
    modes: tuple[Mode, ...]
    increments: np.ndarray
    seed_env: int
    dt: float

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[1])


def sample_environment(modes, cfg: SimConfig, seed_env: int) -> NoiseEnvironment:
    """Draw the Brownian increments of every stochastic mode on the step grid.

    ``modes[0]`` is the drift mode ``e0`` (``None`` for none); the rest are
    paired with independent Brownian motions. The environment stream is
    disjoint from the particle streams.
    """
    modes = list(modes)
    drift = modes[0] if modes else None
    stochastic = tuple(modes[1:])
    n = cfg.n_steps
    inc = np.empty((len(stochastic), n))
    scale = math.sqrt(cfg.dt)
    for i in range(len(stochastic)):
        # one counter block per mode: step = mode index, n draws along time
        inc[i] = scale * rng.normals(seed_env, rng.ENVIRONMENT, i, n)
    return NoiseEnvironment(drift, stochastic, inc, int(seed_env), cfg.dt)


def doleans_log_increment(x, env: NoiseEnvironment, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape)
    if env.drift_mode is not None:
        out += env.drift_mode(x) * env.dt
    for i, mode in enumerate(env.modes):
        e = mode(x)
        out += e * env.increments[i, k] - 0.5 * e * e * env.dt
    return out


def doleans_increment(x, env: NoiseEnvironment, k: int) -> np.ndarray:
    """Strictly positive per-step weight factor at positions ``x``."""
    log_inc = doleans_log_increment(x, env, k)
    if np.any(log_inc > 700.0) or not np.all(np.isfinite(log_inc)):
        raise NumericalAbort("Doléans factor overflow: mode magnitudes misconfigured")
    return np.exp(log_inc)


def _check_quenched(spec: ProblemSpec) -> None:
    x = np.linspace(-5.0, 5.0, 41)
    u = np.full(x.shape, 0.3) if spec.interaction != "none" else None
    for t in (0.0, 0.5):
        b = np.asarray(spec.drift(t, x, u), dtype=np.float64)
        if np.any(b != 0.0):
            raise DomainError("the random-environment representation needs b ≡ 0")
        grad = np.zeros(x.shape) if spec.uses_gradient else None
        lam = np.asarray(spec.lam(t, x, u, grad), dtype=np.float64)
        if np.any(lam != 0.0):
            raise DomainError("the random-environment representation needs Λ ≡ 0 (use the drift mode)")


def quenched_simulate(spec: ProblemSpec, env: NoiseEnvironment, cfg: SimConfig,
                      ensemble: ParticleEnsemble | None = None, callback=None) -> Trajectory:
    """Engine run with Doleans weights of the frozen environment."""
    _check_quenched(spec)
    if env.n_steps != cfg.n_steps or abs(env.dt - cfg.dt) > 1e-15 * cfg.dt:
        raise DomainError("environment step grid does not match the simulation")

    def log_increment(ens: ParticleEnsemble, k: int, t: float, fields: Fields) -> np.ndarray:
        inc = doleans_log_increment(ens.positions, env, k)
        if np.any(inc > 700.0):
            raise NumericalAbort("Doléans factor overflow: mode magnitudes misconfigured")
        return inc

    traj = run(spec, cfg, ensemble=ensemble, log_increment=log_increment, callback=callback)
    traj.diagnostics["seed_env"] = env.seed_env
    return traj


@dataclass
class EnvironmentSummary:
    times: np.ndarray
    masses: np.ndarray          # (n_env, n_times)
    seeds: list[int]

    @property
    def mean(self) -> np.ndarray:
        return self.masses.mean(axis=0)

    @property
    def variance(self) -> np.ndarray:
        return self.masses.var(axis=0, ddof=1) if self.masses.shape[0] > 1 else np.zeros(self.times.shape)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self.masses.shape[0])

    def table(self) -> list[dict]:
        return [{"t": float(t), "mean": float(m), "variance": float(v), "se": float(s)}
                for t, m, v, s in zip(self.times, self.mean, self.variance, self.standard_error)]


def run_environments(spec: ProblemSpec, modes, cfg: SimConfig, n_env: int,
                     seed_env: int = 0, on_env=None) -> EnvironmentSummary:
    """Monte Carlo over environments ``seed_env, seed_env + 1, ...``.

    The particle seed stays ``cfg.seed`` so environments differ only through
    the noise field.
    """
    if n_env < 1:
        raise DomainError("need at least one environment")
    curves = []
    seeds = []
    times = None
    for j in range(n_env):
        env = sample_environment(modes, cfg, seed_env + j)
        traj = quenched_simulate(spec, env, cfg)
        t, m = zip(*traj.diagnostics["mass_curve"])
        times = np.asarray(t)
        curves.append(m)
        seeds.append(env.seed_env)
        if on_env is not None:
            on_env(j, env, traj)
    return EnvironmentSummary(times, np.asarray(curves), seeds)


__all__ = [
    "EnvironmentSummary",
    "Mode",
    "NoiseEnvironment",
    "doleans_increment",
    "doleans_log_increment",
    "quenched_simulate",
    "run_environments",
    "sample_environment",
]
