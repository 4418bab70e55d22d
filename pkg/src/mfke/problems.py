"""Coefficient library: (sigma, b, Lambda), initial/terminal laws, interaction.

Coefficient callables are vectorized over particles:

    sigma(t, x, u) -> diffusion (scalar or per particle)
    drift(t, x, u) -> drift
    lam(t, x, u, grad) -> Feynman-Kac potential

``u`` is the pointwise density or ``K * u`` depending on the interaction
mode, and ``None`` when the problem does not interact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr

from . import rng
from .errors import DomainError
from .measures import Mollifier

trapezoid = getattr(np, "trapezoid", None) or np.trapz

INTERACTIONS = ("none", "pointwise", "convolution")


class Sampler:
    """Initial or terminal law: dirac, gaussian, uniform or grid_density.

    ``scale`` multiplies the (probability) density, e.g. a terminal gain
    ``g`` that is not normalized; sampling always uses ``g / int g``.
    """

    KINDS = ("dirac", "gaussian", "uniform", "grid_density")

    def __init__(self, kind: str, scale: float = 1.0, **params):
        if kind not in self.KINDS:
            raise DomainError(f"unknown sampler kind {kind!r}")
        if not scale > 0:
            raise DomainError("sampler scale must be positive")
        self.kind = kind
        self.scale = float(scale)
        self.params = params
        if kind == "gaussian" and not params.get("sd", 0) > 0:
            raise DomainError("gaussian sampler needs sd > 0")
        if kind == "uniform" and not params["b"] > params["a"]:
            raise DomainError("uniform sampler needs a < b")
        if kind == "grid_density":
            grid = np.asarray(params["grid"], dtype=np.float64)
            values = np.asarray(params["values"], dtype=np.float64)
            if grid.ndim != 1 or grid.shape != values.shape or np.any(np.diff(grid) <= 0):
                raise DomainError("grid_density needs a strictly increasing grid and matching values")
            if np.any(values < 0):
                raise DomainError("grid_density values must be nonnegative")
            total = trapezoid(values, grid)
            if not total > 0:
                raise DomainError("grid_density integrates to zero")
            self.params = {"grid": grid, "values": values / total}
            cells = 0.5 * (values[1:] + values[:-1]) * np.diff(grid) / total
            cdf = np.concatenate([[0.0], np.cumsum(cells)])
            self._cdf_nodes = cdf / cdf[-1]

    @classmethod
    def dirac(cls, x0: float = 0.0) -> Sampler:
        return cls("dirac", x0=float(x0))

    @classmethod
    def gaussian(cls, mean: float = 0.0, sd: float = 1.0, scale: float = 1.0) -> Sampler:
        return cls("gaussian", scale=scale, mean=float(mean), sd=float(sd))

    @classmethod
    def uniform(cls, a: float, b: float) -> Sampler:
        return cls("uniform", a=float(a), b=float(b))

    @classmethod
    def grid_density(cls, grid, values, scale: float = 1.0) -> Sampler:
        return cls("grid_density", scale=scale, grid=grid, values=values)

    @classmethod
    def from_csv(cls, path, scale: float = 1.0) -> Sampler:
        """Two-column ``x,u0`` file (header line required)."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise DomainError(f"{path}: expected two columns x,u0")
        return cls.grid_density(data[:, 0], data[:, 1], scale=scale)

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Path | None = None) -> Sampler:
        cfg = dict(cfg)
        kind = cfg.pop("kind")
        scale = cfg.pop("scale", 1.0)
        if kind == "grid_density" and "path" in cfg:
            path = Path(cfg.pop("path"))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if cfg:
                raise DomainError(f"unexpected sampler keys {sorted(cfg)}")
            return cls.from_csv(path, scale=scale)
        return cls(kind, scale=scale, **cfg)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        if self.scale != 1.0:
            out["scale"] = self.scale
        return out

    def __eq__(self, other):
        return isinstance(other, Sampler) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"Sampler({self.kind!r}, scale={self.scale}, ...)"

    def sample(self, n: int, seed: int, dim: int = 1) -> np.ndarray:
        p = self.params
        if self.kind == "dirac":
            x = np.full(n * dim, p["x0"])
        elif self.kind == "gaussian":
            x = p["mean"] + p["sd"] * rng.normals(seed, rng.INIT, 0, n * dim)
        elif self.kind == "uniform":
            x = p["a"] + (p["b"] - p["a"]) * rng.uniforms(seed, rng.INIT, 0, n * dim)
        else:
            u = rng.uniforms(seed, rng.INIT, 0, n * dim)
            x = np.interp(u, self._cdf_nodes, p["grid"])
        return x if dim == 1 else x.reshape(n, dim)

    def pdf(self, x) -> np.ndarray:
        """Density (times ``scale``) in one dimension."""
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.kind == "dirac":
            raise DomainError("a Dirac law has no density")
        if self.kind == "gaussian":
            z = (x - p["mean"]) / p["sd"]
            out = np.exp(-0.5 * z * z) / (p["sd"] * math.sqrt(2 * math.pi))
        elif self.kind == "uniform":
            out = np.where((x >= p["a"]) & (x <= p["b"]), 1.0 / (p["b"] - p["a"]), 0.0)
        else:
            out = np.interp(x, p["grid"], p["values"], left=0.0, right=0.0)
        return self.scale * out

    def cdf(self, x) -> np.ndarray:
        """Cumulative distribution (times ``scale``)."""
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.kind == "dirac":
            out = (x >= p["x0"]).astype(np.float64)
        elif self.kind == "gaussian":
            out = ndtr((x - p["mean"]) / p["sd"])
        elif self.kind == "uniform":
            out = np.clip((x - p["a"]) / (p["b"] - p["a"]), 0.0, 1.0)
        else:
            out = np.interp(x, p["grid"], self._cdf_nodes, left=0.0, right=1.0)
        return self.scale * out

    def spread(self) -> tuple[float, float]:
        """(centre, standard deviation) used to size output grids."""
        p = self.params
        if self.kind == "dirac":
            return p["x0"], 0.0
        if self.kind == "gaussian":
            return p["mean"], p["sd"]
        if self.kind == "uniform":
            return 0.5 * (p["a"] + p["b"]), (p["b"] - p["a"]) / math.sqrt(12)
        g, v = p["grid"], p["values"]
        m = trapezoid(g * v, g)
        return float(m), float(math.sqrt(max(trapezoid((g - m) ** 2 * v, g), 0.0)))


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable description of one PDE and its probabilistic representation."""

    name: str
    sigma: Callable
    drift: Callable
    lam: Callable
    initial_law: Sampler | None = None
    terminal_law: Sampler | None = None
    interaction: str = "none"
    kernel: Mollifier | None = None
    uses_gradient: bool = False
    dimension: int = 1
    lambda_max: float | None = None
    horizon: float | None = None
    sigma_sq_dx: Callable | None = None
    params: dict = field(default_factory=dict, compare=False)
    notes: tuple = ()

    def __post_init__(self):
        if self.interaction not in INTERACTIONS:
            raise DomainError(f"unknown interaction mode {self.interaction!r}")
        if self.interaction == "convolution" and self.kernel is None:
            raise DomainError("convolution interaction requires a kernel K")
        if self.initial_law is None and self.terminal_law is None:
            raise DomainError("a problem needs an initial or a terminal law")
        if self.uses_gradient and self.interaction == "none":
            raise DomainError("a gradient-dependent potential needs an interaction mode")

    @property
    def initial_mass(self) -> float:
        return self.initial_law.scale if self.initial_law is not None else 1.0

    def clip_level(self, horizon: float) -> float:
        """|Lambda| cap: explicit ``lambda_max`` or 50 / T."""
        if self.lambda_max is not None:
            return float(self.lambda_max)
        return 50.0 / (self.horizon or horizon)


def _const(value: float):
    def f(t, x, *args):
        return value

    return f


def _zero_potential(t, x, u=None, grad=None):
    return 0.0


def _number(params: dict, key: str, default=None, *, positive=False, nonneg=False) -> float:
    if key not in params:
        if default is None:
            raise DomainError(f"missing parameter {key!r}")
        return float(default)
    try:
        val = float(params[key])
    except (TypeError, ValueError):
        raise DomainError(f"parameter {key!r} must be a number") from None
    if not math.isfinite(val):
        raise DomainError(f"parameter {key!r} must be finite")
    if positive and not val > 0:
        raise DomainError(f"parameter {key!r} must be > 0, got {val}")
    if nonneg and val < 0:
        raise DomainError(f"parameter {key!r} must be >= 0, got {val}")
    return val


def smoothed_heaviside(r, delta: float):
    return 0.5 * (1.0 + np.tanh(np.asarray(r, dtype=np.float64) / delta))


# parameter names accepted by each builtin, with defaults (None = required)
BUILTIN_PARAMS = {
    "linear_fp": {"sigma": 1.0, "b": 0.0, "ou": 0.0, "lam": 0.0, "lam_t": 0.0, "quad": 0.0, "lam_floor": None},
    "terminal_fp": {"sigma": 1.0, "b": 0.0, "ou": 0.0},
    "burgers_flux": {"nu": None},
    "burgers_fk": {"nu": None},
    "burgers_huxley": {"nu": None, "alpha": None, "beta": None, "gamma": None, "n": None},
    "porous_media": {"q": None},
    "soc_heaviside": {"gamma": None, "e_c": None, "delta": 1e-2},
    "inventory_kpz": {"sigma": None, "D": None, "h": None, "u_min": 1e-6},
}

_DEFAULT_INITIAL = {
    "linear_fp": Sampler.dirac(0.0),
    "burgers_flux": Sampler.gaussian(0.0, 0.5),
    "burgers_fk": Sampler.gaussian(0.0, 0.5),
    "burgers_huxley": Sampler.gaussian(0.0, 0.5),
    "porous_media": Sampler.gaussian(0.0, 1.0),
    "soc_heaviside": Sampler.gaussian(0.0, 1.0),
    "inventory_kpz": Sampler.gaussian(0.0, 1.0),
}


def builtin_problem(name: str, params: dict | None = None, initial: Sampler | None = None,
                    terminal: Sampler | None = None, **extra) -> ProblemSpec:
    """Instantiate one of the named problems.

    ``extra`` is forwarded to :class:`ProblemSpec` (e.g. ``lambda_max``,
    ``horizon``, ``kernel``).
    """
    if name not in BUILTIN_PARAMS:
        raise DomainError(f"unknown problem {name!r}; choose from {sorted(BUILTIN_PARAMS)}")
    params = dict(params or {})
    unknown = set(params) - set(BUILTIN_PARAMS[name])
    if unknown:
        raise DomainError(f"unknown parameter(s) for {name}: {sorted(unknown)}")
    if name == "terminal_fp":
        terminal = terminal or Sampler.gaussian(0.0, 1.0)
    else:
        initial = initial or _DEFAULT_INITIAL[name]
    build = _BUILDERS[name]
    fields = build(params)
    resolved = {k: params.get(k, v) for k, v in BUILTIN_PARAMS[name].items()}
    kw = dict(fields)
    notes = kw.pop("notes", ())
    kw.update(extra)
    return ProblemSpec(name=name, initial_law=initial, terminal_law=terminal,
                       params=resolved, notes=tuple(notes), **kw)


def _linear(params, with_potential=True):
    sigma = _number(params, "sigma", 1.0, nonneg=True)
    b0 = _number(params, "b", 0.0)
    ou = _number(params, "ou", 0.0)

    def drift(t, x, u=None):
        return b0 - ou * x

    out = {"sigma": _const(sigma), "drift": drift}
    if not with_potential:
        out["lam"] = _zero_potential
        return out
    lam0 = _number(params, "lam", 0.0)
    lam_t = _number(params, "lam_t", 0.0)
    quad = _number(params, "quad", 0.0, nonneg=True)
    floor = params.get("lam_floor")
    floor = None if floor is None else _number(params, "lam_floor", positive=True)

    def lam(t, x, u=None, grad=None):
        val = lam0 + lam_t * t - quad * np.square(x)
        return val if floor is None else np.maximum(val, -floor)

    out["lam"] = lam
    return out


def _burgers_flux(params):
    nu = _number(params, "nu", positive=True)

    def drift(t, x, u):
        return 0.5 * u

    return {"sigma": _const(nu), "drift": drift, "lam": _zero_potential, "interaction": "pointwise"}


def _burgers_fk(params):
    nu = _number(params, "nu", positive=True)

    # Lambda = -du/dx so that Lambda*u = -u u_x (see decisions ledger for sign)
    def lam(t, x, u, grad):
        return -grad

    return {"sigma": _const(nu), "drift": _const(0.0), "lam": lam,
            "interaction": "pointwise", "uses_gradient": True}


def _burgers_huxley(params):
    nu = _number(params, "nu", positive=True)
    alpha = _number(params, "alpha")
    beta = _number(params, "beta")
    gamma = _number(params, "gamma")
    n = _number(params, "n", nonneg=True)
    if n != int(n):
        raise DomainError("Burgers-Huxley exponent n must be a nonnegative integer")
    n = int(n)

    def drift(t, x, u):
        return alpha * np.power(u, n) / (n + 1)

    def lam(t, x, u, grad=None):
        un = np.power(u, n)
        return beta * (1.0 - un) * (un - gamma)

    return {"sigma": _const(nu), "drift": drift, "lam": lam, "interaction": "pointwise"}


def _porous_media(params):
    q = _number(params, "q", positive=True)

    def sigma(t, x, u):
        return np.power(np.maximum(u, 0.0), q)

    return {"sigma": sigma, "drift": _const(0.0), "lam": _zero_potential, "interaction": "pointwise"}


def _soc(params):
    gamma = _number(params, "gamma", positive=True)
    e_c = _number(params, "e_c")
    delta = _number(params, "delta", 1e-2, positive=True)

    # sigma^2 = gamma * H_delta(u - e_c) reproduces (gamma/2) Laplacian(H u)
    def sigma(t, x, u):
        return np.sqrt(gamma * smoothed_heaviside(u - e_c, delta))

    return {"sigma": sigma, "drift": _const(0.0), "lam": _zero_potential,
            "interaction": "pointwise", "notes": ("discontinuous σ: smoothing applied",)}


def _inventory(params):
    sigma = _number(params, "sigma", positive=True)
    d_val = params.get("D")
    if callable(d_val):
        target = d_val
    else:
        d_const = _number(params, "D")

        def target(t):
            return d_const

    h_val = params.get("h")
    if callable(h_val):
        penalty = h_val
    else:
        h_coef = _number(params, "h", nonneg=True)

        def penalty(x):
            return h_coef * np.square(x)

    u_min = _number(params, "u_min", 1e-6, positive=True)

    def drift(t, x, u=None):
        return -target(t)

    def lam(t, x, y, z):
        y = np.maximum(y, u_min)
        return 0.25 * np.square(z) / y - penalty(x) / y

    return {"sigma": _const(sigma), "drift": drift, "lam": lam,
            "interaction": "pointwise", "uses_gradient": True}


_BUILDERS = {
    "linear_fp": _linear,
    "terminal_fp": lambda p: _linear(p, with_potential=False),
    "burgers_flux": _burgers_flux,
    "burgers_fk": _burgers_fk,
    "burgers_huxley": _burgers_huxley,
    "porous_media": _porous_media,
    "soc_heaviside": _soc,
    "inventory_kpz": _inventory,
}


def _eval(f, *args, n):
    return np.broadcast_to(np.asarray(f(*args), dtype=np.float64), (n,))


def validate(spec: ProblemSpec, horizon: float | None = None, box: float = 5.0) -> list[str]:
    """Probe boundedness/Lipschitz hypotheses on a sample box; never raises."""
    diags = list(spec.notes)
    T = spec.horizon or horizon or 1.0
    cap = spec.clip_level(T)
    n = 201
    x = np.linspace(-box, box, n)
    ts = (0.0, 0.5 * T, T)
    u_probe = np.linspace(0.0, 2.0, n) if spec.interaction != "none" else None
    try:
        for t in ts:
            sig = _eval(spec.sigma, t, x, u_probe, n=n)
            b = _eval(spec.drift, t, x, u_probe, n=n)
            if not (np.all(np.isfinite(sig)) and np.all(np.isfinite(b))):
                diags.append("non-finite σ or b on the probe box")
                break
        # degeneracy in u (uniqueness needs sigma >= c > 0)
        if spec.interaction != "none":
            sig0 = _eval(spec.sigma, 0.0, x, np.zeros(n), n=n)
            if np.min(np.abs(sig0)) < 1e-8:
                diags.append("σ degenerates at u=0: nondegeneracy hypothesis σ ≥ c > 0 violated")
            lip_u = np.max(np.abs(np.diff(_eval(spec.sigma, 0.0, np.zeros(n), u_probe, n=n)))) / (u_probe[1] - u_probe[0])
            if lip_u > 1e3:
                diags.append(f"σ has a large Lipschitz constant in u (~{lip_u:.3g})")
        lip_x = np.max(np.abs(np.diff(_eval(spec.drift, 0.0, x, u_probe, n=n)))) / (x[1] - x[0])
        if lip_x > 1e3:
            diags.append(f"b has a large Lipschitz constant in x (~{lip_x:.3g})")
        # potential: growth in x and in the gradient
        grad_probe = np.linspace(-1e3, 1e3, n) if spec.uses_gradient else None
        u_mid = np.full(n, 0.5) if spec.interaction != "none" else None
        lam_x = _eval(spec.lam, 0.0, x, u_mid, np.zeros(n) if spec.uses_gradient else None, n=n)
        far = _eval(spec.lam, 0.0, 1e3 * np.sign(x), u_mid, np.zeros(n) if spec.uses_gradient else None, n=n)
        if np.max(np.abs(far)) > max(cap, 10 * np.max(np.abs(lam_x)) + 1e-12):
            diags.append("Λ unbounded in x: clipping at Λ_max active")
        if spec.uses_gradient:
            lam_g = _eval(spec.lam, 0.0, np.zeros(n), u_mid, grad_probe, n=n)
            if np.max(np.abs(lam_g)) > cap:
                diags.append("Λ unbounded in ∇u: clipping at Λ_max active")
    except Exception as exc:  # diagnostics only
        diags.append(f"coefficient probe failed: {exc}")
    return diags


__all__ = [
    "BUILTIN_PARAMS",
    "ProblemSpec",
    "Sampler",
    "builtin_problem",
    "smoothed_heaviside",
    "validate",
]
