from __future__ import annotations

import math

import numpy as np
import pytest

from mfke.engine import SimConfig, simulate
from mfke.errors import DomainError, NumericalAbort
from mfke.problems import Sampler, builtin_problem
from mfke.randomenv import (
    Mode,
    doleans_increment,
    quenched_simulate,
    run_environments,
    sample_environment,
)

CFG = SimConfig(N=2000, dt=0.01, T=0.5, seed=4, snapshot_times=(0.5,))


def test_no_modes_is_deterministic():
    env = sample_environment([None], CFG, 3)
    assert env.increments.shape == (0, CFG.n_steps)
    assert np.all(doleans_increment(np.linspace(-1, 1, 5), env, 0) == 1.0)


def test_brownian_increment_variance():
    cfg = SimConfig(N=1, dt=1e-3, T=100.0)
    env = sample_environment([None, Mode.cos()], cfg, 0)
    inc = env.increments[0]
    assert inc.size == 100000
    assert inc.var() == pytest.approx(1e-3, rel=0.03)


def test_same_seed_same_paths():
    a = sample_environment([None, Mode.cos(), Mode.bump()], CFG, 7)
    b = sample_environment([None, Mode.cos(), Mode.bump()], CFG, 7)
    c = sample_environment([None, Mode.cos(), Mode.bump()], CFG, 8)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)


def test_drift_mode_factor():
    env = sample_environment([Mode.constant(0.7)], CFG, 0)
    assert np.all(doleans_increment(np.zeros(3), env, 5) == math.exp(0.7 * 0.01))


def test_zero_modes_reduce_to_engine_bitwise():
    spec = builtin_problem("porous_media", {"q": 1.0})
    env = sample_environment([None], CFG, 0)
    a, b = quenched_simulate(spec, env, CFG), simulate(spec, CFG)
    assert np.array_equal(a.final.positions, b.final.positions)
    assert np.array_equal(a.final.log_weights, b.final.log_weights)
    assert np.array_equal(a.snapshots[0].values, b.snapshots[0].values)


def test_constant_drift_mode_mass():
    spec = builtin_problem("linear_fp", {}, initial=Sampler.gaussian())
    env = sample_environment([Mode.constant(-0.4)], CFG, 0)
    traj = quenched_simulate(spec, env, CFG)
    assert traj.final.mass() == pytest.approx(math.exp(-0.2), rel=1e-12)


def test_unit_mode_martingale_mean():
    spec = builtin_problem("linear_fp", {}, initial=Sampler.gaussian())
    cfg = SimConfig(N=200, dt=0.05, T=0.5, seed=1)
    summary = run_environments(spec, [None, Mode.constant(1.0)], cfg, 200, seed_env=10)
    mean, se = summary.mean[-1], summary.standard_error[-1]
    assert abs(mean - 1.0) <= 3 * se
    assert summary.masses.shape == (200, cfg.n_steps + 1)


def test_weights_stay_positive():
    spec = builtin_problem("porous_media", {"q": 1.0})
    env = sample_environment([None, Mode.cos(amplitude=2.0)], CFG, 2)
    traj = quenched_simulate(spec, env, CFG)
    assert np.all(traj.final.weights > 0) and np.all(traj.snapshots[0].values >= 0)


def test_overflow_aborts():
    env = sample_environment([Mode.constant(1e6)], SimConfig(N=1, dt=0.01, T=0.02), 0)
    with pytest.raises(NumericalAbort):
        doleans_increment(np.zeros(1), env, 0)


def test_requires_driftless_conservative_problem():
    env = sample_environment([None], CFG, 0)
    with pytest.raises(DomainError):
        quenched_simulate(builtin_problem("burgers_flux", {"nu": 1.0}), env, CFG)
    with pytest.raises(DomainError):
        quenched_simulate(builtin_problem("linear_fp", {"lam": -1.0}), env, CFG)


def test_mode_dict_roundtrip_and_validation():
    for m in (Mode.constant(2.0), Mode.cos(2.0, 0.5, 0.1), Mode.bump(1.0, 0.3, 2.0)):
        assert Mode.from_dict(m.to_dict()) == m
    with pytest.raises(DomainError):
        Mode.from_dict({"kind": "cos", "width": 1.0})
    with pytest.raises(DomainError):
        Mode("sine")
