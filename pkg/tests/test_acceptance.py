"""Acceptance suite: one test per criterion, each recorded for the summary."""
from __future__ import annotations

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from mfke.control import control_pipeline
from mfke.engine import GridSpec, SimConfig, simulate
from mfke.jumps import simulate_jumps
from mfke.measures import empirical_test_functional, wasserstein1, wasserstein1_densities
from mfke.oracle import cole_hopf_burgers, fd_solve, hjb_fd_solve, hjb_linearized
from mfke.problems import Sampler, builtin_problem
from mfke.randomenv import Mode, quenched_simulate, run_environments, sample_environment
from mfke.report import read_snapshots
from mfke.reversal import default_bumps, solve_backward, weak_form_residuals, weak_form_tolerance

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
SEEDS = range(10)


def _std_normal_w1(x: np.ndarray) -> float:
    m = 2_000_000
    q = norm.ppf((np.arange(m) + 0.5) / m)
    return wasserstein1(x, q)


# --------------------------------------------------------------------- 1

def test_linear_fokker_planck_baseline(acceptance, monkeypatch):
    monkeypatch.setenv("MFKE_THREADS", "1")
    spec = builtin_problem("linear_fp", {"sigma": 1.0, "b": 0.0}, initial=Sampler.dirac(0.0))
    cfg = SimConfig(N=100_000, dt=1e-3, T=1.0, seed=0, snapshot_times=(1.0,))
    started = time.perf_counter()
    traj = simulate(spec, cfg)
    elapsed = time.perf_counter() - started
    w1 = _std_normal_w1(traj.final.positions)

    means = {}
    for n in (10_000, 100_000):
        errs = [_std_normal_w1(simulate(spec, SimConfig(N=n, dt=1e-3, T=1.0, seed=s)).final.positions)
                for s in SEEDS]
        means[n] = float(np.mean(errs))
    ratio = means[10_000] / means[100_000]

    acceptance(1, w1 <= 0.02, f"W1={w1:.4f} (<=0.02)")
    acceptance(1, elapsed <= 60, f"runtime={elapsed:.1f}s (<=60)")
    acceptance(1, 2.5 <= ratio <= 4, f"MC ratio={ratio:.2f} (in [2.5,4])")
    assert w1 <= 0.02 and elapsed <= 60 and 2.5 <= ratio <= 4


# --------------------------------------------------------------------- 2

def test_exact_mass_identities(acceptance):
    cfg = SimConfig(N=5000, dt=0.01, T=1.0, seed=3)
    flat = simulate(builtin_problem("linear_fp", {"sigma": 1.0}, initial=Sampler.gaussian()), cfg)
    conservative = all(m == 1.0 for _, m in flat.diagnostics["mass_curve"])

    lam0, lam_t = -0.3, 0.7
    spec = builtin_problem("linear_fp", {"sigma": 1.0, "lam": lam0, "lam_t": lam_t}, initial=Sampler.gaussian())
    # left-Riemann sum accumulated in the same order as the engine
    acc, expected = 0.0, [1.0]
    for k in range(cfg.n_steps):
        acc = acc + (lam0 + lam_t * (k * cfg.dt)) * cfg.dt
        expected.append(math.exp(acc))
    curves = [[m for _, m in simulate(spec, SimConfig(N=5000, dt=0.01, T=1.0, seed=s)).diagnostics["mass_curve"]]
              for s in (3, 4, 11)]
    exact = all(c == expected for c in curves)
    acceptance(2, conservative, "Lambda=0: mass==1 bitwise at every step" if conservative else "Lambda=0: drift")
    acceptance(2, exact, "Lambda(t): left-Riemann exponential reproduced bitwise for 3 seeds"
               if exact else "Lambda(t): mismatch")
    assert conservative and exact


# --------------------------------------------------------------------- 3

def test_burgers_two_representations(acceptance):
    ref = read_snapshots(FIXTURES / "burgers_cole_hopf.csv")[0]
    grid = GridSpec(-8.0, 8.0, 2000)
    assert np.allclose(grid.points(), ref.grid)
    u0 = Sampler.gaussian(0.0, 0.5)
    started = time.perf_counter()
    l1 = {"burgers_flux": [], "burgers_fk": []}
    cross = []
    for seed in SEEDS:
        vals = {}
        for name in l1:
            spec = builtin_problem(name, {"nu": 1.0}, initial=u0)
            cfg = SimConfig(N=100_000, dt=2e-3, T=0.5, seed=seed, snapshot_times=(0.5,), grid=grid)
            vals[name] = simulate(spec, cfg).snapshots[-1].values
            l1[name].append(trapezoid(np.abs(vals[name] - ref.values), ref.grid))
        cross.append(trapezoid(np.abs(vals["burgers_flux"] - vals["burgers_fk"]), ref.grid))
    elapsed = time.perf_counter() - started
    flux, fk, gap = float(np.mean(l1["burgers_flux"])), float(np.mean(l1["burgers_fk"])), float(np.mean(cross))
    ok = flux <= 0.05 and fk <= 0.05 and gap <= 0.03 and elapsed <= 600
    acceptance(3, flux <= 0.05, f"flux L1={flux:.4f}")
    acceptance(3, fk <= 0.05, f"fk L1={fk:.4f}")
    acceptance(3, gap <= 0.03, f"flux-fk L1={gap:.4f}")
    acceptance(3, elapsed <= 600, f"runtime={elapsed:.0f}s (10-seed means)")
    assert ok


# --------------------------------------------------------------------- 4

def test_jump_weight_equivalence(acceptance):
    spec = builtin_problem("linear_fp", {"sigma": 1.0, "quad": 1.0, "lam_floor": 4.0},
                           initial=Sampler.gaussian(0.0, 1.0))
    phis = {"1": lambda x: np.ones_like(x), "x": lambda x: x, "x^2": lambda x: x * x,
            "1{x>0}": lambda x: (x > 0).astype(float)}
    jump = {k: [] for k in phis}
    weighted = {k: [] for k in phis}
    for seed in SEEDS:
        cfg = SimConfig(N=100_000, dt=1e-3, T=0.5, seed=seed)
        traj, diag = simulate_jumps(spec, cfg)
        mass = diag.mass_curve[-1][1]
        final = simulate(spec, cfg).final
        for k, phi in phis.items():
            jump[k].append(mass * float(np.mean(phi(traj.final.positions))))
            weighted[k].append(empirical_test_functional(final, phi))
    ok = True
    for k in phis:
        a, b = np.asarray(jump[k]), np.asarray(weighted[k])
        se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        gap = abs(a.mean() - b.mean())
        good = gap <= 2 * se
        ok &= good
        acceptance(4, good, f"phi={k}: |diff|={gap:.2e} vs 2SE={2 * se:.2e}")
    assert ok


# --------------------------------------------------------------------- 5

def test_time_reversal_round_trip(acceptance):
    theta, sigma, T, dt, eps, n = 1.0, 1.0, 0.25, 2.5e-3, 0.2, 100_000
    grid = GridSpec(-8.0, 8.0, 2001)
    x = grid.points()
    fspec = builtin_problem("linear_fp", {"sigma": sigma, "ou": theta}, initial=Sampler.gaussian(0.0, 1.0))
    fwd = simulate(fspec, SimConfig(N=n, dt=dt, T=T, seed=0, bandwidth=eps, snapshot_times=(T,), grid=grid))
    var_T = math.exp(-2 * theta * T) + sigma**2 / (2 * theta) * (1 - math.exp(-2 * theta * T))
    fwd_err = wasserstein1_densities(x, fwd.snapshots[-1].values, norm.pdf(x, 0.0, math.sqrt(var_T)))

    bspec = builtin_problem("terminal_fp", {"sigma": sigma, "ou": theta})
    bcfg = SimConfig(N=n, dt=dt, T=T, seed=1000, bandwidth=eps, snapshot_times=(T,), grid=grid)
    sol = solve_backward(bspec, bcfg, initial=fwd.final, test_functions=default_bumps(0.0, 1.0))
    u0 = sol.u_at(0.0)
    bwd_err = wasserstein1_densities(x, u0.values, norm.pdf(x))
    res = weak_form_residuals(sol)
    tol = weak_form_tolerance(n, dt, u0.meta["bandwidth"])

    ok_w1 = bwd_err <= 2 * fwd_err
    ok_res = bool(np.all(res <= tol)) and res.size == 5
    acceptance(5, ok_w1, f"W1 back={bwd_err:.4f} vs 2x forward={2 * fwd_err:.4f}")
    acceptance(5, ok_res, f"max weak-form residual={res.max():.4f} (tol {tol:.4f}, 5 bumps)")
    assert ok_w1 and ok_res


# --------------------------------------------------------------------- 6

def test_random_environment_conservativity(acceptance):
    spec = builtin_problem("porous_media", {"q": 1.0})
    cfg = SimConfig(N=10_000, dt=5e-3, T=0.5, seed=0, snapshot_times=(0.5,))
    summary = run_environments(spec, [None, Mode.cos(1.0)], cfg, 200, seed_env=0)
    mean, se = float(summary.mean[-1]), float(summary.standard_error[-1])
    ok_mean = abs(mean - 1.0) <= 3 * se

    plain = simulate(spec, cfg)
    quenched = quenched_simulate(spec, sample_environment([None], cfg, 0), cfg)
    bitwise = (np.array_equal(plain.final.positions, quenched.final.positions)
               and np.array_equal(plain.final.log_weights, quenched.final.log_weights)
               and np.array_equal(plain.snapshots[-1].values, quenched.snapshots[-1].values))
    acceptance(6, ok_mean, f"mean mass={mean:.4f} +/- {se:.4f} (200 envs)")
    acceptance(6, bitwise, "zero-mode run bitwise equal to the deterministic engine" if bitwise
               else "zero-mode run differs from the deterministic engine")
    assert ok_mean and bitwise


# --------------------------------------------------------------------- 7

def test_hjb_toy_problem(acceptance):
    ref = read_snapshots(FIXTURES / "hjb_v0.csv")[0]
    grid = GridSpec(-8.0, 8.0, 2000)
    assert np.allclose(grid.points(), ref.grid)
    cfg = SimConfig(N=100_000, dt=1e-3, T=0.5, seed=0, grid=grid)
    res = control_pipeline(1.0, 0.1, 1.0, Sampler.gaussian(0.0, 1.0), cfg, fd_dt=None)
    v0 = res.value[res.row(0.0)]
    l1 = float(trapezoid(np.abs(v0 - ref.values), ref.grid))
    identity = res.report["alpha_identity_residual"]
    ok_l1, ok_id = l1 <= 0.1, identity <= 1e-12
    neg = float(trapezoid(np.maximum(-ref.values, 0.0), ref.grid))
    acceptance(7, ok_l1, f"L1(v0 particle, HJB grid)={l1:.3g} (<=0.1; grid v0 negative part L1={neg:.3g})")
    acceptance(7, ok_id, f"alpha - D - v_x/2 max residual={identity:.1e}")
    assert ok_id
    assert ok_l1


# --------------------------------------------------------------------- 8

def test_oracle_self_consistency(acceptance):
    grid = GridSpec(-8.0, 8.0, 2000)
    x = grid.points()
    u0 = Sampler.gaussian(0.0, 0.5)
    burgers = builtin_problem("burgers_flux", {"nu": 1.0}, initial=u0)
    ch = cole_hopf_burgers(u0, 1.0, x, 0.5)
    fd = fd_solve(burgers, grid, 1e-3, 0.5)[-1]
    e_ch = float(np.max(np.abs(ch.values - fd.values)))

    heat = fd_solve(builtin_problem("linear_fp", {"sigma": 1.0}, initial=u0), grid, 1e-3, 0.5)[-1]
    e_heat = float(np.max(np.abs(heat.values - norm.pdf(x, 0.0, math.sqrt(0.75)))))

    g = Sampler.gaussian(0.0, 1.0)
    sol = hjb_fd_solve(1.0, 0.1, 0.0, g, grid, 1e-3, 0.5, snapshot_times=[0.0])
    e_hjb = float(np.max(np.abs(sol.value(0.0) - hjb_linearized(1.0, 0.1, 0.0, g, grid, 1e-3, 0.5))))

    acceptance(8, e_ch <= 1e-3, f"Cole-Hopf vs FD Linf={e_ch:.1e}")
    acceptance(8, e_heat <= 1e-4, f"heat vs Gaussian Linf={e_heat:.1e}")
    acceptance(8, e_hjb <= 1e-3, f"HJB vs linearization Linf={e_hjb:.1e}")
    assert e_ch <= 1e-3 and e_heat <= 1e-4 and e_hjb <= 1e-3


# --------------------------------------------------------------------- 9

_BASE = """mode = "{mode}"
[problem]
name = "{name}"
params = {params}
{law}
[sim]
N = 3000
dt = 0.01
T = 0.2
seed = 4
snapshot_times = [0.1, 0.2]
[sim.grid]
min = -5.0
max = 5.0
M = 201
{extra}"""

_GAUSS = 'initial = { kind = "gaussian", mean = 0.0, sd = 1.0 }'
_CASES = {
    "simulate": ("burgers_flux", "{ nu = 1.0 }", _GAUSS, ""),
    "jump": ("linear_fp", "{ sigma = 1.0, quad = 1.0, lam_floor = 4.0 }", _GAUSS, ""),
    "reverse": ("linear_fp", "{ sigma = 1.0, ou = 1.0 }", _GAUSS,
                '[reverse]\nsource = "forward"\n'),
    "randomenv": ("porous_media", "{ q = 1.0 }", _GAUSS,
                  '[randomenv]\nenvironments = 3\nmodes = [{ kind = "cos", amplitude = 1.0, '
                  "wavenumber = 1.0, phase = 0.0 }]\n"),
    "control": ("inventory_kpz", "{ sigma = 1.0, D = 0.1, h = 1.0 }", _GAUSS,
                "[control]\nfd_dt = 0.01\n"),
}


def _cli(args, threads):
    env = dict(os.environ, MFKE_THREADS=str(threads))
    proc = subprocess.run([sys.executable, "-m", "mfke", *args], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def _tree(path: Path) -> dict[str, bytes]:
    if path.is_file():
        return {"": path.read_bytes()}
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_determinism_across_threads(tmp_path, acceptance):
    configs = {}
    for mode, (name, params, law, extra) in _CASES.items():
        p = tmp_path / f"{mode}.toml"
        p.write_text(_BASE.format(mode=mode, name=name, params=params, law=law, extra=extra))
        configs[mode] = p

    commands = {mode: [mode, "--config", str(p)] for mode, p in configs.items()}
    commands["run"] = ["run", "--config", str(configs["simulate"])]
    commands["oracle"] = ["oracle", "--config", str(configs["simulate"]), "--problem", "fd", "--dt", "0.001"]
    bad = []
    outputs = {}
    for cmd, args in commands.items():
        trees = []
        for rep, threads in enumerate((1, 4, 4)):
            out = tmp_path / f"{cmd}_{rep}" if cmd != "oracle" else tmp_path / f"{cmd}_{rep}.csv"
            _cli([*args, "--out", str(out)], threads)
            trees.append(_tree(out))
        outputs[cmd] = tmp_path / f"{cmd}_0"
        if not trees[0] or any(t != trees[0] for t in trees[1:]):
            bad.append(cmd)

    trees = []
    for rep, threads in enumerate((1, 4)):
        out = tmp_path / f"compare_{rep}"
        _cli(["compare", "--run", str(outputs["simulate"]), "--reference", "cole_hopf", "--out", str(out)], threads)
        trees.append(_tree(out))
    if trees[0] != trees[1]:
        bad.append("compare")

    n = len(commands) + 1
    acceptance(9, not bad, f"{n - len(bad)}/{n} subcommands byte-identical at MFKE_THREADS=1 and 4"
               + (f"; differing: {bad}" if bad else ""))
    assert not bad
