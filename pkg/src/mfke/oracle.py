"""Grid and quadrature reference solvers, numerically independent of the particles.

* :func:`fd_solve`: finite-volume Crank-Nicolson / Adams-Bashforth solver for
  ``u_t = (1/2)(sigma^2 u)_xx - (b u)_x + Lambda u`` with zero-flux walls.
* :func:`cole_hopf_burgers`: exact viscous Burgers solution by quadrature.
* :func:`hjb_fd_solve`: the reversed-time HJB equation of the inventory
  problem, returning the value function and the optimal feedback.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.linalg import solve_banded

from .engine import GridSpec
from .errors import DomainError, OracleInstability, QuadratureError
from .measures import DensitySnapshot, trapezoid
from .problems import ProblemSpec, Sampler

# explicit-part stability limits (advective Courant number, |Lambda| dt)
_CFL_MAX = 0.5
_REACTION_MAX = 0.5


def _grid_points(grid) -> np.ndarray:
    x = grid.points() if isinstance(grid, GridSpec) else np.asarray(grid, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise DomainError("oracle grids need at least three points")
    h = np.diff(x)
    if np.any(h <= 0) or np.ptp(h) > 1e-9 * h.mean():
        raise DomainError("oracle grids must be uniform and increasing")
    return x


def _steps(T: float, dt: float) -> int:
    if not (dt > 0 and T > 0):
        raise DomainError("dt and T must be positive")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T:
        raise DomainError(f"T/dt = {T / dt} is not an integer number of steps")
    return n


def _snapshot_steps(times, T: float, dt: float) -> dict[int, float]:
    times = (T,) if times is None or len(times) == 0 else tuple(float(t) for t in times)
    out = {}
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, t) or t < 0 or t > T * (1 + 1e-12):
            raise DomainError(f"snapshot time {t} is not on the step grid")
        out[k] = t
    return out


def _initial_values(spec: ProblemSpec, x: np.ndarray, initial) -> np.ndarray:
    if initial is None:
        if spec.initial_law is None:
            raise DomainError("fd_solve needs an initial law or explicit initial values")
        return spec.initial_law.pdf(x)
    if isinstance(initial, Sampler):
        return initial.pdf(x)
    if callable(initial):
        return np.asarray(initial(x), dtype=np.float64)
    values = np.asarray(initial, dtype=np.float64)
    if values.shape != x.shape:
        raise DomainError("initial values must match the grid")
    return values.copy()


def _diffusion_bands(a: np.ndarray, h: float) -> np.ndarray:
    """Tridiagonal finite-volume operator u -> (1/2)(a u)_xx, zero flux at walls.

    End nodes own half cells so the trapezoid mass telescopes exactly.
    """
    m = a.size
    c = 0.5 / (h * h)
    vol = np.ones(m)
    vol[0] = vol[-1] = 0.5
    ab = np.zeros((3, m))
    # row i: (a_{i+1}u_{i+1} - a_i u_i) - (a_i u_i - a_{i-1}u_{i-1})
    ab[0, 1:] = c * a[1:] / vol[:-1]          # super-diagonal
    ab[2, :-1] = c * a[:-1] / vol[1:]         # sub-diagonal
    diag = np.full(m, -2.0 * c) * a
    diag[0] = -c * a[0] / vol[0]
    diag[-1] = -c * a[-1] / vol[-1]
    ab[1] = diag
    return ab


def _band_apply(ab: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = ab[1] * u
    out[:-1] += ab[0, 1:] * u[1:]
    out[1:] += ab[2, :-1] * u[:-1]
    return out


def _flux_divergence(flux_nodes: np.ndarray, h: float) -> np.ndarray:
    """-(F_{i+1/2} - F_{i-1/2}) / vol_i with central face values, walls closed."""
    face = 0.5 * (flux_nodes[1:] + flux_nodes[:-1])
    out = np.empty_like(flux_nodes)
    out[1:-1] = -(face[1:] - face[:-1]) / h
    out[0] = -face[0] / (0.5 * h)
    out[-1] = face[-1] / (0.5 * h)
    return out


def _convolve_grid(kernel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    h = x[1] - x[0]
    r = min(int(math.ceil(kernel.support_radius / h)), x.size - 1)
    stencil = kernel(np.arange(-r, r + 1) * h) * h
    return np.convolve(u, stencil, mode="same") if u.size >= stencil.size else \
        np.convolve(u, stencil, mode="full")[r:r + u.size]


def fd_solve(spec: ProblemSpec, grid, dt: float, T: float, snapshot_times=None,
             initial=None) -> list[DensitySnapshot]:
    """Grid solution of the Fokker-Planck equation behind ``spec``.

    Diffusion is Crank-Nicolson with the coefficient ``sigma^2`` frozen at
    an extrapolated state; transport and reaction are second-order
    Adams-Bashforth (forward Euler on the first step). Raises
    :class:`OracleInstability` with a suggested step when the explicit part
    would be unstable.
    """
    if spec.dimension != 1:
        raise DomainError("fd_solve is one-dimensional")
    x = _grid_points(grid)
    h = float(x[1] - x[0])
    n_steps = _steps(T, dt)
    wanted = _snapshot_steps(snapshot_times, T, dt)
    cap = spec.clip_level(T)
    u = _initial_values(spec, x, initial)
    if not np.all(np.isfinite(u)):
        raise DomainError("initial values must be finite")

    def field(v):
        if spec.interaction == "none":
            return None, None
        w = _convolve_grid(spec.kernel, x, v) if spec.interaction == "convolution" else v
        return w, (np.gradient(w, h) if spec.uses_gradient else None)

    def explicit(t, v):
        y, z = field(v)
        b = np.broadcast_to(np.asarray(spec.drift(t, x, y), dtype=np.float64), x.shape)
        lam = np.broadcast_to(np.asarray(spec.lam(t, x, y, z), dtype=np.float64), x.shape)
        lam = np.clip(lam, -cap, cap)
        speed = float(np.max(np.abs(b))) if b.size else 0.0
        rate = float(np.max(np.abs(lam)))
        limit = min(_CFL_MAX * h / speed if speed > 0 else math.inf,
                    _REACTION_MAX / rate if rate > 0 else math.inf)
        if dt > limit:
            raise OracleInstability(
                f"unstable step dt={dt:g} at t={t:g} (advective speed {speed:.3g}, |Λ| {rate:.3g})",
                suggested_dt=0.9 * limit)
        return _flux_divergence(b * v, h) + lam * v

    def diff_coeff(t, v):
        y, _ = field(v)
        s = np.broadcast_to(np.asarray(spec.sigma(t, x, y), dtype=np.float64), x.shape)
        return s * s

    snaps = []
    if 0 in wanted:
        snaps.append(_fd_snapshot(x, u, 0.0))
    prev_u = None
    prev_e = None
    for k in range(n_steps):
        t = k * dt
        e = explicit(t, u)
        guess = u if prev_u is None else 1.5 * u - 0.5 * prev_u
        a = diff_coeff(t + 0.5 * dt, guess)
        ab = _diffusion_bands(a, h)
        rhs = u + 0.5 * dt * _band_apply(ab, u)
        rhs += dt * (e if prev_e is None else 1.5 * e - 0.5 * prev_e)
        lhs = -0.5 * dt * ab
        lhs[1] += 1.0
        new = solve_banded((1, 1), lhs, rhs)
        if not np.all(np.isfinite(new)):
            raise OracleInstability(f"non-finite grid solution at t={t + dt:g}", suggested_dt=0.5 * dt)
        prev_u, prev_e, u = u, e, new
        if k + 1 in wanted:
            snaps.append(_fd_snapshot(x, u, (k + 1) * dt))
    return snaps


def _fd_snapshot(x, u, t) -> DensitySnapshot:
    return DensitySnapshot(x, u.copy(), float(trapezoid(u, x)), t, meta={"source": "fd"})


# ---------------------------------------------------------------- Cole-Hopf

def _primitive(u0, x: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Antiderivative of the initial profile; linear beyond a sampled window."""
    if isinstance(u0, Sampler):
        return lambda y: u0.cdf(y)
    if isinstance(u0, DensitySnapshot):
        g, v = u0.grid, u0.values
    else:
        g, v = x, np.asarray(u0, dtype=np.float64)
        if v.shape != g.shape:
            raise DomainError("initial profile must be a Sampler, a DensitySnapshot or grid values")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(g))])
    lo, hi = g[0], g[-1]

    def prim(y):
        y = np.asarray(y, dtype=np.float64)
        inside = np.interp(y, g, cum)
        return np.where(y < lo, v[0] * (y - lo), np.where(y > hi, cum[-1] + v[-1] * (y - hi), inside))

    return prim


def cole_hopf_burgers(u0, nu: float, grid, t: float, primitive=None,
                      epsabs: float = 1e-12, epsrel: float = 1e-10) -> DensitySnapshot:
    """Exact solution of ``u_t = (nu^2/2) u_xx - u u_x`` at time ``t``.

    With ``D = nu^2/2`` and ``U0`` an antiderivative of ``u0``::

        u(t, x) = sqrt(4Dt)/t * int z e^{-z^2} f dz / int e^{-z^2} f dz,
        f(z) = exp(-(U0(x - sqrt(4Dt) z) - U0(x)) / (2D)).
    """
    if not t > 0:
        raise DomainError("Cole-Hopf evaluation needs t > 0")
    if not nu > 0:
        raise DomainError("viscosity must be positive")
    x = _grid_points(grid)
    D = 0.5 * nu * nu
    s = math.sqrt(4.0 * D * t)
    prim = _primitive(u0, x) if primitive is None else primitive
    centre, spread = _profile_spread(u0, x)
    # |U0(x - s z) - U0(x)| / 2D is bounded by the total mass over 2D
    total = float(abs(prim(x[-1] + 10 * s) - prim(x[0] - 10 * s)))
    L = 9.0 + math.sqrt(total / D)
    out = np.empty_like(x)
    worst = 0.0
    for i, xi in enumerate(x):
        base = float(prim(xi))

        def f(z, xi=xi, base=base):
            return math.exp(-z * z - (float(prim(xi - s * z)) - base) / (2.0 * D))

        # breakpoints where the profile varies, mapped to z
        zc = (xi - centre) / s
        pts = [zc + k * spread / s for k in range(-6, 7)] if spread > 0 else [zc]
        pts = sorted(p for p in pts if -L < p < L)
        num, e1, info1 = integrate.quad(lambda z: z * f(z), -L, L, points=pts or None,
                                        epsabs=epsabs, epsrel=epsrel, limit=400, full_output=1)[:3]
        den, e2, info2 = integrate.quad(f, -L, L, points=pts or None,
                                        epsabs=epsabs, epsrel=epsrel, limit=400, full_output=1)[:3]
        worst = max(worst, e1, e2)
        if not (den > 0 and math.isfinite(num)) or e1 > 1e-6 or e2 > 1e-6 * den:
            raise QuadratureError(f"Cole-Hopf quadrature did not converge at x={xi:g}",
                                  {"x": xi, "numerator": num, "denominator": den,
                                   "abs_error": (e1, e2), "evaluations": (info1["neval"], info2["neval"])})
        out[i] = s / t * num / den
    return DensitySnapshot(x, out, float(trapezoid(out, x)), t,
                           meta={"source": "cole_hopf", "quad_error": worst})


def _profile_spread(u0, x: np.ndarray) -> tuple[float, float]:
    if isinstance(u0, Sampler):
        return u0.spread()
    g, v = (u0.grid, u0.values) if isinstance(u0, DensitySnapshot) else (x, np.asarray(u0, dtype=np.float64))
    mass = trapezoid(v, g)
    if not mass > 0:
        return 0.5 * (g[0] + g[-1]), 0.0
    m = trapezoid(g * v, g) / mass
    return float(m), float(math.sqrt(max(trapezoid((g - m) ** 2 * v, g) / mass, 0.0)))


def heat_evolution(u0: Sampler, diffusivity: float, grid, t: float) -> DensitySnapshot:
    """``exp(t D d^2/dx^2) u0``; closed form for Gaussian laws, quadrature otherwise."""
    x = _grid_points(grid)
    var = 2.0 * diffusivity * t
    if u0.kind == "gaussian":
        p = u0.params
        evolved = Sampler.gaussian(p["mean"], math.sqrt(p["sd"] ** 2 + var), u0.scale)
        vals = evolved.pdf(x)
    else:
        sd = math.sqrt(var)
        centre, spread = u0.spread()
        pts = [centre + k * spread for k in range(-6, 7)] if spread > 0 else None

        def at(xi):
            return integrate.quad(lambda y: u0.pdf(y) * math.exp(-0.5 * ((xi - y) / sd) ** 2),
                                  xi - 12 * sd - 10 * spread, xi + 12 * sd + 10 * spread,
                                  points=pts, limit=400)[0] / (sd * math.sqrt(2 * math.pi))

        vals = np.array([at(xi) for xi in x])
    return DensitySnapshot(x, vals, float(trapezoid(vals, x)), t, meta={"source": "heat"})


# ---------------------------------------------------------------------- HJB

@dataclass(frozen=True)
class HJBSolution:
    """Value function ``v(t, x)`` and feedback ``alpha*(t, x)`` on a grid.

    Rows of ``values`` and ``alpha`` follow ``times`` (controller time t).
    """

    grid: np.ndarray
    times: np.ndarray
    values: np.ndarray
    alpha: np.ndarray

    def _row(self, t: float) -> int:
        hits = np.flatnonzero(np.abs(self.times - t) <= 1e-9 * max(1.0, abs(t)))
        if hits.size == 0:
            raise KeyError(t)
        return int(hits[0])

    def value(self, t: float) -> np.ndarray:
        return self.values[self._row(t)]

    def control(self, t: float) -> np.ndarray:
        return self.alpha[self._row(t)]

    def snapshot(self, t: float) -> DensitySnapshot:
        v = self.value(t)
        return DensitySnapshot(self.grid, v, float(trapezoid(v, self.grid)), t, meta={"source": "hjb"})


def _as_target(D) -> Callable[[float], float]:
    return D if callable(D) else (lambda t, c=float(D): c)


def _as_penalty(h) -> Callable[[np.ndarray], np.ndarray]:
    return h if callable(h) else (lambda x, c=float(h): c * np.square(x))


def optimal_control(grad_v: np.ndarray, D_t: float) -> np.ndarray:
    """``alpha* = D_t + (1/2) dv/dx``."""
    return D_t + 0.5 * np.asarray(grad_v, dtype=np.float64)


def hjb_fd_solve(sigma: float, D, h, g, grid, dt: float, T: float,
                 snapshot_times=None) -> HJBSolution:
    """Solve ``u_t = u_x^2/4 + (sigma^2/2) u_xx + D u_x - h``, ``u(0) = g``.

    ``u`` runs in reversed time so ``v(t) = u(T - t)``; the target profile
    enters as ``D(T - tau)`` at reversed time ``tau``. Diffusion is
    Crank-Nicolson, the rest Adams-Bashforth 2; boundary ghosts extrapolate
    quadratically because ``v`` grows like ``-h`` far out.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    x = _grid_points(grid)
    dx = float(x[1] - x[0])
    n_steps = _steps(T, dt)
    target, penalty = _as_target(D), _as_penalty(h)
    if isinstance(g, Sampler):
        u = g.pdf(x)
    elif callable(g):
        u = np.asarray(g(x), dtype=np.float64)
    else:
        u = np.asarray(g, dtype=np.float64).copy()
    if u.shape != x.shape or np.any(u < 0) or not trapezoid(u, x) > 0:
        raise DomainError("terminal gain g must be nonnegative and integrable with positive mass")
    hx = np.asarray(penalty(x), dtype=np.float64)
    wanted = _snapshot_steps(snapshot_times, T, dt)
    # controller times t = T - tau
    wanted_tau = {n_steps - k: t for k, t in wanted.items()}

    m = x.size
    c = 0.5 * sigma * sigma / (dx * dx)
    # second difference with quadratic ghost u_{-1} = 3u_0 - 3u_1 + u_2
    ab = np.zeros((3, m))
    ab[0, 1:] = c
    ab[1, :] = -2.0 * c
    ab[2, :-1] = c
    ab[0, 1] = 0.0
    ab[1, 0] = 0.0
    ab[2, -2] = 0.0
    ab[1, -1] = 0.0

    def lap(v):
        out = np.empty_like(v)
        out[1:-1] = c * (v[2:] - 2 * v[1:-1] + v[:-2])
        out[0] = out[1]
        out[-1] = out[-2]
        return out

    def explicit(tau, v):
        vx = np.gradient(v, dx, edge_order=2)
        d = float(target(T - tau))
        speed = float(np.max(np.abs(0.5 * vx + d)))
        if speed * dt > _CFL_MAX * dx:
            raise OracleInstability(f"unstable HJB step dt={dt:g} (transport speed {speed:.3g})",
                                    suggested_dt=0.9 * _CFL_MAX * dx / speed)
        return 0.25 * vx * vx + d * vx - hx

    rows_t, rows_v, rows_a = [], [], []

    def record(tau, v):
        t = wanted_tau[tau]
        rows_t.append(t)
        rows_v.append(v.copy())
        rows_a.append(optimal_control(np.gradient(v, dx, edge_order=2), float(target(t))))

    if 0 in wanted_tau:
        record(0, u)
    prev_e = None
    # end rows of the implicit operator extrapolate the interior Laplacian,
    # applied explicitly; interior rows are Crank-Nicolson
    for k in range(n_steps):
        tau = k * dt
        e = explicit(tau, u)
        rhs = u + dt * (e if prev_e is None else 1.5 * e - 0.5 * prev_e)
        rhs[1:-1] += 0.5 * dt * c * (u[2:] - 2 * u[1:-1] + u[:-2])
        lhs = -0.5 * dt * ab
        lhs[1] += 1.0
        lhs[1, 0] = lhs[1, -1] = 1.0
        lhs[0, 1] = lhs[2, -2] = 0.0
        rhs[0] = u[0] + dt * ((e if prev_e is None else 1.5 * e - 0.5 * prev_e)[0] + lap(u)[0])
        rhs[-1] = u[-1] + dt * ((e if prev_e is None else 1.5 * e - 0.5 * prev_e)[-1] + lap(u)[-1])
        new = solve_banded((1, 1), lhs, rhs)
        if not np.all(np.isfinite(new)):
            raise OracleInstability(f"non-finite HJB solution at tau={tau + dt:g}", suggested_dt=0.5 * dt)
        prev_e, u = e, new
        if k + 1 in wanted_tau:
            record(k + 1, u)

    order = np.argsort(rows_t)
    return HJBSolution(x, np.asarray(rows_t)[order], np.asarray(rows_v)[order], np.asarray(rows_a)[order])


def hjb_linearized(sigma: float, D, h, g, grid, dt: float, T: float) -> np.ndarray:
    """``v(0, .)`` via ``w = exp(u / (2 sigma^2))``, which solves the linear
    equation ``w_t = (sigma^2/2) w_xx + D w_x - h w / (2 sigma^2)``.
    """
    if callable(D):
        raise DomainError("the linearized check takes a constant D")
    x = _grid_points(grid)
    penalty = _as_penalty(h)
    g_vals = g.pdf(x) if isinstance(g, Sampler) else np.asarray(g(x) if callable(g) else g, dtype=np.float64)
    s2 = sigma * sigma

    def lam(t, xx, u=None, grad=None):
        return -np.asarray(penalty(xx), dtype=np.float64) / (2.0 * s2)

    spec = ProblemSpec(name="hjb_linear", sigma=lambda t, xx, u=None: sigma,
                       drift=lambda t, xx, u=None: -float(D), lam=lam,
                       initial_law=Sampler.dirac(0.0), lambda_max=math.inf)
    # without a penalty, constants solve the linear equation: evolve w - 1,
    # which decays at the walls like g does
    shift = 1.0 if not callable(h) and float(h) == 0.0 else 0.0
    w0 = np.exp(g_vals / (2.0 * s2)) - shift
    w = fd_solve(spec, x, dt, T, initial=w0)[-1].values + shift
    return 2.0 * s2 * np.log(w)


__all__ = [
    "HJBSolution",
    "cole_hopf_burgers",
    "fd_solve",
    "heat_evolution",
    "hjb_fd_solve",
    "hjb_linearized",
    "optimal_control",
]
