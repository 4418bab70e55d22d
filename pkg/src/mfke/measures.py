"""Particle ensembles, weighted kernel density estimates and distances.

The density estimator throughout is

    u(x) = (1/N) * sum_j w_j * K_eps(x - xi_j),    K_eps(x) = eps^-d * phi(x / eps),

so that unit weights reduce it to the ordinary normalized KDE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._backend import kernels, thread_count
from .errors import DomainError

trapezoid = getattr(np, "trapezoid", None) or np.trapz

FAMILIES = ("gaussian", "epanechnikov")
_FAMILY_CODE = {"gaussian": 0, "epanechnikov": 1}

# direct O(N*M) evaluation is used below this many particles when method="auto"
AUTO_DIRECT_MAX_N = 2000


@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions, Feynman-Kac log-weights and clock of ``N`` particles.

    Weights are stored as logarithms so long runs with negative potentials do
    not underflow; ``weights`` exposes them as positive reals.
    """

    positions: np.ndarray
    log_weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim not in (1, 2):
            raise DomainError("positions must have shape (N,) or (N, d)")
        lw = np.asarray(self.log_weights, dtype=np.float64)
        if lw.shape != (pos.shape[0],):
            raise DomainError("one log-weight per particle is required")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_positions(cls, positions, time: float = 0.0, weights=None) -> ParticleEnsemble:
        pos = np.asarray(positions, dtype=np.float64)
        if weights is None:
            lw = np.zeros(pos.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64)
            if np.any(~np.isfinite(w)) or np.any(w <= 0):
                raise DomainError("weights must be finite and strictly positive")
            lw = np.log(w)
        return cls(pos, lw, float(time))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.positions.ndim == 1 else self.positions.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def mass(self) -> float:
        """Total Feynman-Kac mass ``(1/N) sum_j w_j``.

        The largest log-weight is factored out, which makes the result exact
        (``exp(L)``) whenever all log-weights coincide.
        """
        return empirical_test_functional(self, None)

    def with_positions(self, positions, time: float | None = None) -> ParticleEnsemble:
        return replace(self, positions=positions, time=self.time if time is None else time)


def empirical_test_functional(ensemble: ParticleEnsemble, phi) -> float:
    """Monte Carlo Feynman-Kac functional ``(1/N) sum_j w_j phi(xi_j)``.

    ``phi=None`` stands for the constant function 1.
    """
    if ensemble.n == 0:
        raise DomainError("empty ensemble")
    lw = ensemble.log_weights
    top = lw.max()
    rel = np.exp(lw - top)
    if phi is not None:
        rel = rel * np.asarray(phi(ensemble.positions), dtype=np.float64)
    return float(math.exp(top) * rel.mean())


@dataclass(frozen=True)
class Mollifier:
    family: str = "gaussian"
    bandwidth: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise DomainError(f"bandwidth must be positive, got {self.bandwidth!r}")
        if self.dimension < 1:
            raise DomainError("dimension must be a positive integer")

    @property
    def support_radius(self) -> float:
        """Radius beyond which the kernel is (numerically) zero."""
        return (8.0 if self.family == "gaussian" else 1.0) * self.bandwidth

    def _norm(self) -> float:
        d = self.dimension
        if self.family == "gaussian":
            return (2.0 * math.pi) ** (-d / 2)
        ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        return (d + 2) / (2.0 * ball)

    def __call__(self, x) -> np.ndarray:
        """``K_eps(x)``; ``x`` has shape (...,) for d=1 or (..., d)."""
        r2 = self._sq_radius(x)
        eps, d = self.bandwidth, self.dimension
        if self.family == "gaussian":
            prof = np.exp(-0.5 * r2)
        else:
            prof = np.where(r2 < 1.0, 1.0 - r2, 0.0)
        return self._norm() * prof / eps**d

    def gradient(self, x) -> np.ndarray:
        """Spatial derivative of ``K_eps``; zero on and beyond the Epanechnikov edge."""
        x = np.asarray(x, dtype=np.float64)
        r2 = self._sq_radius(x)
        eps, d = self.bandwidth, self.dimension
        if self.family == "gaussian":
            coef = -np.exp(-0.5 * r2)
        else:
            coef = np.where(r2 < 1.0, -2.0, 0.0)
        coef = self._norm() * coef / eps ** (d + 2)
        return coef * x if self.dimension == 1 else coef[..., None] * x

    def _sq_radius(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64) / self.bandwidth
        return x * x if self.dimension == 1 else np.sum(x * x, axis=-1)


def weighted_std(ensemble: ParticleEnsemble) -> float:
    w = ensemble.weights
    x = ensemble.positions
    w = w / w.sum()
    if x.ndim == 1:
        m = np.dot(w, x)
        return float(math.sqrt(max(np.dot(w, (x - m) ** 2), 0.0)))
    m = w @ x
    return float(np.mean(np.sqrt(np.maximum(w @ (x - m) ** 2, 0.0))))


def silverman_bandwidth(ensemble: ParticleEnsemble, factor: float = 1.06) -> float:
    """``factor * sd * N^(-1/(d+4))`` from the weighted sample spread."""
    sd = weighted_std(ensemble)
    if not sd > 0:
        raise DomainError(
            "degenerate ensemble (zero spread): Silverman bandwidth is zero; use a fixed bandwidth"
        )
    return factor * sd * ensemble.n ** (-1.0 / (ensemble.dim + 4))


def _check_inputs(ensemble: ParticleEnsemble, kernel: Mollifier, query) -> np.ndarray:
    if ensemble.n == 0:
        raise DomainError("empty ensemble")
    if kernel.dimension != ensemble.dim:
        raise DomainError("kernel dimension does not match the ensemble")
    q = np.asarray(query, dtype=np.float64)
    if ensemble.dim == 1:
        return np.ascontiguousarray(q.reshape(-1))
    return np.ascontiguousarray(q.reshape(-1, ensemble.dim))


def _direct(ensemble, kernel, query, deriv):
    q = _check_inputs(ensemble, kernel, query)
    w = ensemble.weights
    if ensemble.dim == 1:
        return kernels.kde_1d(
            np.ascontiguousarray(ensemble.positions),
            np.ascontiguousarray(w),
            q,
            float(kernel.bandwidth),
            _FAMILY_CODE[kernel.family],
            int(deriv),
            thread_count(),
        )
    # d > 1: plain numpy, blocked over query points
    n = ensemble.n
    rows = max(1, (1 << 20) // n)
    shape = (q.shape[0], ensemble.dim) if deriv else (q.shape[0],)
    out = np.empty(shape)
    for start in range(0, q.shape[0], rows):
        diff = q[start : start + rows, None, :] - ensemble.positions[None, :, :]
        if deriv:
            out[start : start + rows] = np.einsum("qnd,n->qd", kernel.gradient(diff), w) / n
        else:
            out[start : start + rows] = (kernel(diff) * w).sum(axis=1) / n
    return out


_MAX_BINS = 1 << 22


def _binning_layout(x: np.ndarray, q: np.ndarray, kernel: Mollifier, oversample: int):
    h = kernel.bandwidth / oversample
    reach = kernel.support_radius + 2 * h
    lo = min(x.min(), q.min()) - reach
    hi = max(x.max(), q.max()) + reach
    nbins = int(math.ceil((hi - lo) / h)) + 2
    return None if nbins > _MAX_BINS else (lo, h, nbins)


def kde_binned(ensemble: ParticleEnsemble, kernel: Mollifier, query, deriv: int = 0,
               oversample: int = 20) -> np.ndarray:
    """Linear-binning approximation of :func:`kde_density` / :func:`kde_gradient`.

    Weights are spread onto a grid of spacing ``eps / oversample``, convolved
    with sampled kernel values and linearly interpolated back; the error is
    O((eps/oversample)^2) relative. One dimension only.
    """
    q = _check_inputs(ensemble, kernel, query)
    if ensemble.dim != 1:
        raise DomainError("binned evaluation is one-dimensional")
    x = ensemble.positions
    w = ensemble.weights
    layout = _binning_layout(x, q, kernel, oversample)
    if layout is None:
        return _direct(ensemble, kernel, q, deriv)
    lo, h, nbins = layout

    s = (x - lo) / h
    idx = np.floor(s).astype(np.int64)
    frac = s - idx
    counts = np.bincount(idx, w * (1.0 - frac), minlength=nbins + 1)
    counts += np.bincount(idx + 1, w * frac, minlength=nbins + 1)

    half = int(math.ceil(kernel.support_radius / h))
    offsets = np.arange(-half, half + 1) * h
    taps = kernel.gradient(offsets) if deriv else kernel(offsets)
    smooth = np.convolve(counts, taps)[half : half + counts.shape[0]]
    grid = lo + h * np.arange(counts.shape[0])
    return np.interp(q, grid, smooth) / ensemble.n


def _dispatch(ensemble, kernel, query, deriv, method):
    if method == "direct":
        return _direct(ensemble, kernel, query, deriv)
    if method == "binned":
        return kde_binned(ensemble, kernel, query, deriv)
    if method == "auto":
        if ensemble.dim == 1 and ensemble.n > AUTO_DIRECT_MAX_N:
            return kde_binned(ensemble, kernel, query, deriv)
        return _direct(ensemble, kernel, query, deriv)
    raise DomainError(f"unknown KDE method {method!r}")


def kde_density(ensemble: ParticleEnsemble, kernel: Mollifier, query,
                method: str = "direct") -> np.ndarray:
    """Weighted KDE ``(1/N) sum_j w_j K_eps(x_q - xi_j)`` at each query point.

    ``method="direct"`` is the exact sum; ``"binned"`` and ``"auto"`` allow the
    linear-binning approximation for large ensembles.
    """
    return _dispatch(ensemble, kernel, query, 0, method)


def kde_gradient(ensemble: ParticleEnsemble, kernel: Mollifier, query,
                 method: str = "direct") -> np.ndarray:
    """Exact spatial derivative of :func:`kde_density` in the query point.

    For the Epanechnikov family the derivative at ``|x - xi| = eps`` is taken
    one-sidedly from outside, i.e. 0.
    """
    return _dispatch(ensemble, kernel, query, 1, method)


def kde_self_term(ensemble: ParticleEnsemble, kernel: Mollifier, method: str = "direct",
                  oversample: int = 20) -> np.ndarray:
    """Each particle's own contribution to ``kde_density`` at its position.

    Subtracting it gives the leave-one-out estimate. For the binned method
    the exact contribution through binning and interpolation is returned;
    the matching gradient contribution vanishes by symmetry in both cases.
    """
    if ensemble.dim != 1:
        raise DomainError("self term is implemented in one dimension")
    x = ensemble.positions
    w = ensemble.weights
    k0 = float(kernel(np.zeros(1))[0])
    binned = method == "binned" or (method == "auto" and ensemble.n > AUTO_DIRECT_MAX_N)
    layout = _binning_layout(x, x, kernel, oversample) if binned else None
    if layout is None:
        return w * k0 / ensemble.n
    lo, h, _ = layout
    s = (x - lo) / h
    f = s - np.floor(s)
    kh = float(kernel(np.array([h]))[0])
    return w * (((1.0 - f) ** 2 + f * f) * k0 + 2.0 * f * (1.0 - f) * kh) / ensemble.n


@dataclass(frozen=True)
class DensitySnapshot:
    """Grid-sampled density ``u(t, .)`` and its total Feynman-Kac mass."""

    grid: np.ndarray
    values: np.ndarray
    mass: float
    time: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if g.ndim != 1 or g.shape != v.shape:
            raise DomainError("grid and values must be 1-D arrays of equal length")
        if g.size < 2 or np.any(np.diff(g) <= 0):
            raise DomainError("grid must be strictly increasing with at least two points")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "time", float(self.time))

    def quadrature_mass(self) -> float:
        return float(trapezoid(self.values, self.grid))

    def scaled(self, factor: float) -> DensitySnapshot:
        return replace(self, values=self.values * factor, mass=self.mass * factor)

    def to_csv(self, path) -> None:
        lines = ["t,x,u,mass"]
        t, m = repr(self.time), repr(self.mass)
        lines.extend(f"{t},{x!r},{u!r},{m}" for x, u in zip(self.grid.tolist(), self.values.tolist()))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> DensitySnapshot:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 4:
            raise DomainError(f"{path}: expected columns t,x,u,mass")
        return cls(data[:, 1], data[:, 2], float(data[0, 3]), float(data[0, 0]))


def snapshot(ensemble: ParticleEnsemble, kernel: Mollifier, grid, method: str = "direct") -> DensitySnapshot:
    """KDE of ``ensemble`` on ``grid`` together with its mass ``(1/N) sum w``."""
    grid = np.asarray(grid, dtype=np.float64)
    values = kde_density(ensemble, kernel, grid, method=method)
    return DensitySnapshot(grid, values, ensemble.mass(), ensemble.time)


def normalize(snap: DensitySnapshot) -> tuple[DensitySnapshot, float]:
    """Rescale to unit mass; returns the snapshot and the extracted mass."""
    if not snap.mass > 0:
        raise DomainError("nonpositive mass: the Feynman-Kac measure is extinct")
    return replace(snap, values=snap.values / snap.mass, mass=1.0), snap.mass


def wasserstein1(a, b, weights_a=None, weights_b=None) -> float:
    """Exact 1-D Wasserstein-1 distance between two weighted samples.

    Computed as the integral of the absolute difference of the two
    cumulative distribution functions, which equals the cost of the sorted
    quantile coupling. Weights are normalized internally.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise DomainError("wasserstein1 supports one-dimensional samples only")
    if a.size == 0 or b.size == 0:
        raise DomainError("samples must be nonempty")
    wa = np.ones(a.size) if weights_a is None else np.asarray(weights_a, dtype=np.float64)
    wb = np.ones(b.size) if weights_b is None else np.asarray(weights_b, dtype=np.float64)

    pts = np.concatenate([a, b])
    signed = np.concatenate([wa / wa.sum(), -wb / wb.sum()])
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    cdf_gap = np.cumsum(signed[order])[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(pts)))


def wasserstein1_densities(grid, u, v) -> float:
    """W1 between two grid densities (each normalized by trapezoid mass)."""
    grid = np.asarray(grid, dtype=np.float64)
    dx = np.diff(grid)

    def cdf(vals):
        vals = np.asarray(vals, dtype=np.float64)
        c = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dx)])
        return c / c[-1]

    gap = np.abs(cdf(u) - cdf(v))
    return float(np.sum(0.5 * (gap[1:] + gap[:-1]) * dx))


__all__ = [
    "DensitySnapshot",
    "Mollifier",
    "ParticleEnsemble",
    "empirical_test_functional",
    "kde_binned",
    "kde_density",
    "kde_gradient",
    "kde_self_term",
    "normalize",
    "silverman_bandwidth",
    "snapshot",
    "wasserstein1",
    "wasserstein1_densities",
]
