from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from mfke.engine import GridSpec, SimConfig
from mfke.errors import DomainError
from mfke.measures import DensitySnapshot, Mollifier, ParticleEnsemble, kde_density, kde_gradient, wasserstein1
from mfke.oracle import heat_evolution
from mfke.problems import Sampler, builtin_problem
from mfke.reversal import (
    VACUUM_WARNING,
    Bump,
    default_bumps,
    forward_reference,
    reversed_drift,
    solve_backward,
    weak_form_residuals,
)


def terminal(**params):
    sd = params.pop("sd", 1.0)
    return builtin_problem("terminal_fp", params, terminal=Sampler.gaussian(0.0, sd))


def test_drift_vanishes_at_symmetry_centre():
    grid = np.linspace(-5, 5, 1001)
    snap = DensitySnapshot(grid, norm.pdf(grid), 1.0)
    assert reversed_drift(0.0, 0.1, snap, terminal(), 1.0)[0] == pytest.approx(0.0, abs=1e-12)


def test_ou_gaussian_closed_form():
    spec = terminal(ou=1.0)
    v = norm.pdf(1.0, scale=math.sqrt(0.5))
    out = reversed_drift(1.0, 0.0, v, spec, 1.0, grad=-v / 0.5)
    assert out[0] == pytest.approx(-1.0, rel=1e-14)


def test_flat_density_gives_zero_drift():
    out = reversed_drift(np.array([0.0, 0.5]), 0.0, np.full(2, 0.2), terminal(), 1.0, grad=np.zeros(2))
    assert np.all(out == 0.0)


def test_kde_drift_matches_gaussian_score():
    V, eps = 0.8, 0.1
    rng = np.random.default_rng(0)
    e = ParticleEnsemble.from_positions(rng.normal(0, math.sqrt(V), 200000))
    k = Mollifier("gaussian", eps)
    y = np.linspace(-1.2, 1.2, 13)
    drift = reversed_drift(y, 0.0, kde_density(e, k, y), terminal(ou=1.0), 1.0, grad=kde_gradient(e, k, y))
    exact = -y / V + y
    # smoothing moves the score to -y/(V + eps^2); allow that plus Monte Carlo noise
    assert np.max(np.abs(drift - exact)) < 1.2 * eps**2 / V**2 + 0.05


def test_frozen_without_dynamics():
    spec = terminal(sigma=0.0)
    cfg = SimConfig(N=500, dt=0.05, T=0.5, seed=0)
    sol = solve_backward(spec, cfg)
    start = spec.terminal_law.sample(500, 0)
    assert np.array_equal(sol.v.final.positions, start)


def test_stationary_ou_is_recovered():
    spec = builtin_problem("terminal_fp", {"sigma": math.sqrt(2.0), "ou": 1.0}, terminal=Sampler.gaussian(0, 1))
    cfg = SimConfig(N=100000, dt=2.5e-3, T=0.2, seed=1, bandwidth=0.2)
    sol = solve_backward(spec, cfg)
    q = norm.ppf((np.arange(100000) + 0.5) / 100000)
    assert wasserstein1(sol.v.final.positions, q) <= 0.02


def test_heat_reversal_through_forward_semigroup():
    var0, T = 1.0, 0.25
    g = GridSpec(-10, 10, 2001)
    spec = builtin_problem("terminal_fp", {"sigma": 1.0}, terminal=Sampler.gaussian(0, math.sqrt(var0 + T)))
    cfg = SimConfig(N=100000, dt=2.5e-3, T=T, seed=1, snapshot_times=(T,), grid=g)
    u0 = solve_backward(spec, cfg).u_at(0.0)
    x = g.points()
    law = Sampler.grid_density(x, np.maximum(u0.values, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        evolved = heat_evolution(law, 0.5, g, T)
    assert trapezoid(np.abs(evolved.values - norm.pdf(x, scale=math.sqrt(var0 + T))), x) <= 0.05


def test_vacuum_warning_on_isolated_particles():
    spec = builtin_problem("terminal_fp", {"sigma": 1.0}, terminal=Sampler.uniform(-1000, 1000))
    cfg = SimConfig(N=50, dt=0.01, T=0.05, seed=0, bandwidth=0.1)
    with pytest.warns(RuntimeWarning, match=VACUUM_WARNING):
        sol = solve_backward(spec, cfg)
    assert sol.diagnostics["floor_fraction"] > 0.1


def test_weak_form_residual_small_for_heat():
    spec = terminal(sd=1.2)
    cfg = SimConfig(N=20000, dt=5e-3, T=0.2, seed=3)
    sol = solve_backward(spec, cfg, test_functions=default_bumps())
    assert np.max(weak_form_residuals(sol)) < 0.05
    with pytest.raises(DomainError):
        weak_form_residuals(solve_backward(spec, SimConfig(N=100, dt=0.1, T=0.2)))


def test_u_relabels_reversed_time():
    cfg = SimConfig(N=200, dt=0.1, T=0.5, seed=0, snapshot_times=(0.0, 0.2, 0.5), grid=GridSpec(-5, 5, 51))
    sol = solve_backward(terminal(), cfg)
    assert [s.time for s in sol.u] == pytest.approx([0.0, 0.3, 0.5])


def test_bump_derivatives():
    b = Bump(0.3, 0.7)
    x = np.linspace(-0.3, 0.9, 25)
    h = 1e-5
    assert np.allclose(b.d1(x), (b(x + h) - b(x - h)) / (2 * h), atol=1e-7)
    assert np.allclose(b.d2(x), (b.d1(x + h) - b.d1(x - h)) / (2 * h), atol=1e-6)
    assert b(np.array([1.0]))[0] == 0.0


def test_forward_reference_stationary_ou():
    spec = builtin_problem("linear_fp", {"sigma": math.sqrt(2.0), "ou": 1.0}, initial=Sampler.gaussian(0, 1))
    traj = forward_reference(spec, SimConfig(N=100000, dt=1e-2, T=0.5, seed=2))
    q = norm.ppf((np.arange(100000) + 0.5) / 100000)
    assert wasserstein1(traj.final.positions, q) <= 0.02


def test_rejects_non_conservative_problem():
    spec = builtin_problem("linear_fp", {"lam": -1.0}, initial=Sampler.gaussian(), terminal=Sampler.gaussian())
    with pytest.raises(DomainError):
        solve_backward(spec, SimConfig(N=10, dt=0.1, T=0.2))
