from __future__ import annotations

import math

import numpy as np
import pytest

from mfke.engine import GridSpec, SimConfig
from mfke.errors import DomainError
from mfke.jumps import jump_step, reconstruct_gamma, simulate_jumps
from mfke.measures import ParticleEnsemble, wasserstein1
from mfke.problems import Sampler, builtin_problem


def lin(**params):
    return builtin_problem("linear_fp", params, initial=Sampler.gaussian(0.0, 1.0))


def test_no_potential_no_jumps():
    traj, d = simulate_jumps(lin(), SimConfig(N=2000, dt=0.01, T=1.0, seed=1))
    assert d.total_jumps == 0
    assert all(m == 1.0 for _, m in d.mass_curve)


def test_poisson_thinning_rate():
    _, d = simulate_jumps(lin(lam=-2.0), SimConfig(N=100000, dt=1e-2, T=1.0, seed=3))
    assert d.total_jumps / 100000 == pytest.approx(2.0, abs=0.05)


def test_single_particle_relocates_to_itself():
    spec = builtin_problem("linear_fp", {"sigma": 0.0, "lam": -50.0}, initial=Sampler.dirac(0.7))
    cfg = SimConfig(N=1, dt=0.1, T=1.0, seed=0)
    ens = ParticleEnsemble(np.array([0.7]), np.zeros(1))
    total = 0
    for k in range(10):
        ens, j, _ = jump_step(ens, spec, cfg, k)
        total += j
    assert total > 0 and ens.positions[0] == 0.7


def test_constant_potential_gamma_mass_exact():
    spec = lin(lam=-0.8)
    cfg = SimConfig(N=1000, dt=0.01, T=1.0, seed=2, snapshot_times=(0.5, 1.0), grid=GridSpec(-8, 8, 401))
    traj, d = simulate_jumps(spec, cfg)
    for with_diag in (d, None):
        g = reconstruct_gamma(traj, spec, with_diag)
        assert g[0].mass == pytest.approx(math.exp(-0.4), rel=1e-12)
        assert g[1].mass == pytest.approx(math.exp(-0.8), rel=1e-12)


def test_gamma_equals_eta_without_potential():
    spec = lin()
    cfg = SimConfig(N=500, dt=0.01, T=0.5, seed=2, snapshot_times=(0.5,), grid=GridSpec(-8, 8, 201))
    traj, d = simulate_jumps(spec, cfg)
    g = reconstruct_gamma(traj, spec, d)
    assert np.array_equal(g[0].values, traj.snapshots[0].values)


def test_time_only_potential_preserves_law():
    spec = lin(lam_t=-3.0)
    cfg = SimConfig(N=20000, dt=0.01, T=1.0, seed=5)
    jumped, d = simulate_jumps(spec, cfg)
    plain, _ = simulate_jumps(lin(), cfg)
    assert d.total_jumps > 0
    assert wasserstein1(jumped.final.positions, plain.final.positions) < 0.03


def test_positive_potential_rejected():
    with pytest.raises(DomainError):
        simulate_jumps(lin(lam=0.5), SimConfig(N=10, dt=0.1, T=0.2))


def test_weighted_ensemble_rejected():
    ens = ParticleEnsemble(np.zeros(3), np.full(3, -0.1))
    with pytest.raises(DomainError):
        jump_step(ens, lin(lam=-1.0), SimConfig(N=3, dt=0.1, T=0.2), 0)


def test_jump_run_deterministic():
    spec = lin(quad=1.0, lam_floor=4.0)
    cfg = SimConfig(N=3000, dt=0.01, T=0.3, seed=9)
    a, _ = simulate_jumps(spec, cfg)
    b, _ = simulate_jumps(spec, cfg)
    assert np.array_equal(a.final.positions, b.final.positions)
