"""``mfke`` command line: one subcommand per run mode.

Exit codes: 0 success, 2 configuration or domain error, 3 numerical abort,
4 oracle instability or quadrature failure.
"""
from __future__ import annotations

import argparse
import sys
import time as _time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import MODES, RunConfig
from .control import control_pipeline
from .engine import GridSpec, simulate
from .errors import ConfigError, DomainError, NumericalAbort, OracleInstability, QuadratureError
from .jumps import reconstruct_gamma, simulate_jumps
from .oracle import cole_hopf_burgers, fd_solve, heat_evolution, hjb_fd_solve
from .problems import Sampler, builtin_problem
from .randomenv import Mode, run_environments
from .report import (
    SAMPLES_FILE,
    SNAPSHOTS_FILE,
    compare_snapshots,
    read_samples,
    read_snapshots,
    write_json,
    write_samples,
    write_snapshots,
    write_table,
)
from .reversal import default_bumps, solve_backward, weak_form_residuals, weak_form_tolerance

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ORACLE = 0, 2, 3, 4


def _out_dir(args, rc: RunConfig | None) -> Path:
    out = args.out or (rc.out if rc is not None else None) or "mfke_out"
    path = Path(out)
    if rc is not None and rc.base_dir and not path.is_absolute() and not args.out:
        path = Path(rc.base_dir) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _strip_timing(diag: dict) -> dict:
    return {k: v for k, v in diag.items() if k != "wall_time"}


def _metadata(rc: RunConfig, cfg) -> dict:
    return {"version": __version__, "backend": BACKEND, "seed": cfg.seed, "mode": rc.mode}


def _finish(out: Path, rc: RunConfig, diagnostics: dict, started: float, timing: bool) -> None:
    write_json(out / "run_config.json", rc.to_dict())
    diag = _strip_timing(diagnostics)
    elapsed = _time.perf_counter() - started
    if timing:
        diag["wall_time"] = elapsed
    write_json(out / "diagnostics.json", diag)
    print(f"wrote {out} ({elapsed:.2f} s)")


# --------------------------------------------------------------- run modes

def cmd_simulate(rc: RunConfig, out: Path, timing: bool) -> None:
    started = _time.perf_counter()
    spec, cfg = rc.problem_spec(), rc.sim_config()
    traj = simulate(spec, cfg)
    write_snapshots(out / SNAPSHOTS_FILE, traj.snapshots)
    write_samples(out / SAMPLES_FILE, traj.final)
    write_table(out / "mass.csv", ["t", "mass"], traj.diagnostics["mass_curve"])
    diag = dict(traj.diagnostics)
    diag.pop("mass_curve")
    diag.update(_metadata(rc, cfg))
    _finish(out, rc, diag, started, timing)


def cmd_jump(rc: RunConfig, out: Path, timing: bool) -> None:
    started = _time.perf_counter()
    spec, cfg = rc.problem_spec(), rc.sim_config()
    traj, jd = simulate_jumps(spec, cfg)
    gamma = reconstruct_gamma(traj, spec, jd)
    write_snapshots(out / SNAPSHOTS_FILE, traj.snapshots)
    write_snapshots(out / "gamma.csv", gamma)
    write_samples(out / SAMPLES_FILE, traj.final)
    jdict = jd.to_dict()
    write_table(out / "mass.csv", ["t", "mass"], jdict.pop("mass_curve"))
    write_table(out / "mean_lambda.csv", ["t", "mean_lambda"], jdict.pop("mean_lambda"))
    diag = {k: v for k, v in traj.diagnostics.items() if k != "mass_curve"}
    diag.update(jdict)
    diag.update(_metadata(rc, cfg))
    _finish(out, rc, diag, started, timing)


def cmd_reverse(rc: RunConfig, out: Path, timing: bool) -> None:
    started = _time.perf_counter()
    sec = rc.section("reverse")
    spec, cfg = rc.problem_spec(), rc.sim_config()
    initial = None
    if sec["source"] == "forward":
        fwd_cfg = cfg if sec["forward_bandwidth"] is None else rc.sim_config(bandwidth=sec["forward_bandwidth"])
        initial = simulate(spec, fwd_cfg).final
        bwd_spec = builtin_problem("terminal_fp", _terminal_params(rc))
    else:
        bwd_spec = spec
    bumps = default_bumps(sec["bump_centre"], sec["bump_scale"]) if sec["bumps"] else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        # backward noise must not reuse the forward stream
        bwd_cfg = rc.sim_config(seed=cfg.seed + 1000) if initial is not None else cfg
        sol = solve_backward(bwd_spec, bwd_cfg, initial=initial, test_functions=bumps)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_snapshots(out / "v_snapshots.csv", sol.v.snapshots)
    write_snapshots(out / SNAPSHOTS_FILE, sol.u)
    write_samples(out / SAMPLES_FILE, sol.v.final)
    diag = dict(sol.diagnostics)
    if bumps:
        res = weak_form_residuals(sol)
        bw = sol.v.snapshots[-1].meta.get("bandwidth") if sol.v.snapshots else None
        bw = float(bw) if bw is not None else (float(cfg.bandwidth) if not isinstance(cfg.bandwidth, str) else 0.0)
        diag["weak_form_residuals"] = res.tolist()
        diag["weak_form_tolerance"] = weak_form_tolerance(cfg.N, cfg.dt, bw)
    diag.update(_metadata(rc, bwd_cfg))
    _finish(out, rc, diag, started, timing)


def _terminal_params(rc: RunConfig) -> dict:
    p = rc.problem["params"]
    if rc.problem["name"] not in ("linear_fp", "terminal_fp"):
        raise DomainError("source='forward' reversal needs a linear_fp or terminal_fp problem")
    if any(p.get(k, 0.0) for k in ("lam", "lam_t", "quad")):
        raise DomainError("the backward solver needs Λ ≡ 0")
    return {k: p[k] for k in ("sigma", "b", "ou") if k in p}


def cmd_randomenv(rc: RunConfig, out: Path, timing: bool) -> None:
    started = _time.perf_counter()
    sec = rc.section("randomenv")
    spec, cfg = rc.problem_spec(), rc.sim_config()
    drift = Mode.from_dict(sec["drift_mode"]) if sec["drift_mode"] is not None else None
    modes = [drift] + [Mode.from_dict(m) for m in sec["modes"]]
    summary = run_environments(spec, modes, cfg, sec["environments"], seed_env=sec["seed_env"])
    rows = [(r["t"], r["mean"], r["variance"], r["se"]) for r in summary.table()]
    write_table(out / "environments.csv", ["t", "mean", "variance", "se"], rows)
    write_table(out / "final_masses.csv", ["seed_env", "mass"],
                [(str(s), m) for s, m in zip(summary.seeds, summary.masses[:, -1])])
    final = summary.table()[-1]
    diag = {"environments": len(summary.seeds), "final_mean_mass": final["mean"],
            "final_se": final["se"], "seed_env": sec["seed_env"]}
    diag.update(_metadata(rc, cfg))
    _finish(out, rc, diag, started, timing)


def cmd_control(rc: RunConfig, out: Path, timing: bool) -> None:
    started = _time.perf_counter()
    if rc.problem["name"] != "inventory_kpz":
        raise DomainError("control mode needs the inventory_kpz problem")
    p = rc.problem_spec().params
    g = rc._sampler(rc.problem["initial"]) or Sampler.gaussian(0.0, 1.0)
    cfg = rc.sim_config()
    sec = rc.section("control")
    fd_grid = None
    if sec["fd_grid"] is not None:
        fg = sec["fd_grid"]
        fd_grid = GridSpec(float(fg["min"]), float(fg["max"]), int(fg["M"])).points()
    res = control_pipeline(float(p["sigma"]), float(p["D"]), float(p["h"]), g, cfg,
                           fd_dt=sec["fd_dt"], fd_grid=fd_grid, u_min=float(p["u_min"]))
    rows = []
    for i, t in enumerate(res.times):
        ref = (np.interp(res.grid, res.reference.grid, res.reference.value(t))
               if res.reference is not None else np.full(res.grid.shape, np.nan))
        rows.extend((t, x, v, a, r) for x, v, a, r in zip(res.grid, res.value[i], res.alpha[i], ref))
    write_table(out / "value.csv", ["t", "x", "v", "alpha", "v_fd"], rows)
    diag = dict(res.report)
    diag.update(_metadata(rc, cfg))
    _finish(out, rc, diag, started, timing)


def _oracle_snapshots(problem: str, rc: RunConfig | None, nu: float, t: float, dt: float, grid):
    x = grid.points()
    if problem == "burgers":
        u0 = rc._sampler(rc.problem["initial"]) if rc is not None and rc.problem["initial"] else None
        u0 = u0 or Sampler.gaussian(0.0, 0.5)
        return [cole_hopf_burgers(u0, nu, x, t)]
    if problem == "heat":
        u0 = rc._sampler(rc.problem["initial"]) if rc is not None and rc.problem["initial"] else None
        u0 = u0 or Sampler.gaussian(0.0, 0.5)
        return [heat_evolution(u0, 0.5 * nu * nu, x, t)]
    if rc is None or rc.problem["name"] is None:
        raise ConfigError(f"oracle problem {problem!r} needs a --config with a [problem] section")
    if problem == "fd":
        times = list(rc.sim["snapshot_times"]) or [t]
        return fd_solve(rc.problem_spec(), x, dt, max(times), snapshot_times=times)
    p = rc.problem_spec().params
    g = rc._sampler(rc.problem["initial"]) or Sampler.gaussian(0.0, 1.0)
    sol = hjb_fd_solve(float(p["sigma"]), float(p["D"]), float(p["h"]), g, x, dt, t, snapshot_times=[0.0])
    return [sol.snapshot(0.0)]


def cmd_oracle(args, rc: RunConfig | None) -> None:
    started = _time.perf_counter()
    sec = dict(rc.section("oracle")) if rc is not None else {"problem": "burgers", "nu": 1.0, "t": 0.5, "dt": 1e-3}
    for key in ("problem", "nu", "t", "dt"):
        val = getattr(args, key if key != "t" else "time", None)
        if val is not None:
            sec[key] = val
    g = rc.sim["grid"] if rc is not None else {"min": -8.0, "max": 8.0, "M": 2000}
    if args.grid is not None:
        g = {"min": args.grid[0], "max": args.grid[1], "M": int(args.grid[2])}
    grid = GridSpec(float(g["min"]), float(g["max"]), int(g["M"]))
    snaps = _oracle_snapshots(sec["problem"], rc, float(sec["nu"]), float(sec["t"]), float(sec["dt"]), grid)
    target = Path(args.out or "reference.csv")
    if target.suffix.lower() != ".csv":
        target.mkdir(parents=True, exist_ok=True)
        target = target / SNAPSHOTS_FILE
    target.parent.mkdir(parents=True, exist_ok=True)
    write_snapshots(target, snaps)
    print(f"wrote {target} ({_time.perf_counter() - started:.2f} s)")


def cmd_compare(args, rc: RunConfig | None) -> None:
    started = _time.perf_counter()
    sec = dict(rc.section("compare")) if rc is not None else {"run": None, "reference": "cole_hopf",
                                                              "interpolate": False}
    run_path = args.run or sec["run"]
    if run_path is None:
        raise ConfigError("compare needs --run (a run directory or snapshot CSV)")
    ref_arg = args.reference or sec["reference"]
    interpolate = bool(args.interpolate or sec["interpolate"])
    run_snaps = read_snapshots(run_path)
    run_dir = Path(run_path) if Path(run_path).is_dir() else None
    run_samples = read_samples(run_dir) if run_dir is not None else None
    ref_samples = None
    meta = {"version": __version__, "run": str(run_path), "reference": str(ref_arg)}
    if run_dir is not None and (run_dir / "run_config.json").exists():
        run_rc = RunConfig.load(run_dir / "run_config.json")
        meta["run_seed"] = run_rc.sim["seed"]
    else:
        run_rc = None
    if ref_arg == "cole_hopf":
        if run_rc is None or run_rc.problem["name"] not in ("burgers_flux", "burgers_fk"):
            raise ConfigError("reference 'cole_hopf' needs a Burgers run directory with run_config.json")
        nu = float(run_rc.problem["params"]["nu"])
        u0 = run_rc._sampler(run_rc.problem["initial"]) or Sampler.gaussian(0.0, 0.5)
        ref_snaps = []
        for s in run_snaps:
            if s.time > 0:
                ref_snaps.append(cole_hopf_burgers(u0, nu, s.grid, s.time))
            else:
                ref_snaps.append(type(s)(s.grid, u0.pdf(s.grid), u0.scale, 0.0))
    else:
        ref_snaps = read_snapshots(ref_arg)
        if Path(ref_arg).is_dir():
            ref_samples = read_samples(ref_arg)
            if (Path(ref_arg) / "run_config.json").exists():
                meta["reference_seed"] = RunConfig.load(Path(ref_arg) / "run_config.json").sim["seed"]
    report = compare_snapshots(run_snaps, ref_snaps, interpolate=interpolate,
                               run_samples=run_samples, ref_samples=ref_samples, metadata=meta)
    out = Path(args.out or "compare_out")
    out.mkdir(parents=True, exist_ok=True)
    report.metadata["wall_time"] = _time.perf_counter() - started
    (out / "report.json").write_text(report.to_json(timing=args.timing), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    sys.stdout.write(report.to_text())


# -------------------------------------------------------------------- main

_RUNNERS = {
    "simulate": cmd_simulate,
    "jump": cmd_jump,
    "reverse": cmd_reverse,
    "randomenv": cmd_randomenv,
    "control": cmd_control,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfke", description="McKean Feynman-Kac particle laboratory")
    parser.add_argument("--version", action="version", version=f"mfke {__version__} ({BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML or JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--timing", action="store_true", help="record wall time in the written outputs")

    common(sub.add_parser("run", help="run the mode named in the config"))
    for name in _RUNNERS:
        p = sub.add_parser(name, help=f"{name} mode")
        common(p)
        if name == "randomenv":
            p.add_argument("--environments", type=int, help="number of environments")
    p = sub.add_parser("oracle", help="write a grid reference solution")
    common(p, config_required=False)
    p.add_argument("--problem", choices=("burgers", "heat", "fd", "hjb"))
    p.add_argument("--nu", type=float)
    p.add_argument("--time", "-t", type=float, dest="time")
    p.add_argument("--dt", type=float)
    p.add_argument("--grid", type=float, nargs=3, metavar=("MIN", "MAX", "M"))
    p = sub.add_parser("compare", help="compare a run with a reference")
    common(p, config_required=False)
    p.add_argument("--run")
    p.add_argument("--reference", help="run directory, snapshot CSV or 'cole_hopf'")
    p.add_argument("--interpolate", action="store_true")
    return parser


def _dispatch(args) -> None:
    rc = RunConfig.load(args.config) if args.config else None
    mode = rc.mode if args.command == "run" else args.command
    if mode == "oracle":
        return cmd_oracle(args, rc)
    if mode == "compare":
        return cmd_compare(args, rc)
    if rc is None:
        raise ConfigError(f"{mode} needs --config")
    if getattr(args, "environments", None) is not None:
        if args.environments < 1:
            raise ConfigError("--environments must be positive")
        rc.sections["randomenv"]["environments"] = args.environments
    if rc.problem["name"] is None:
        raise ConfigError("line 1: problem.name: missing")
    _RUNNERS[mode](rc, _out_dir(args, rc), args.timing)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _dispatch(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (OracleInstability, QuadratureError) as exc:
        hint = getattr(exc, "suggested_dt", None)
        extra = f" (try dt={hint:.3g})" if hint else ""
        print(f"oracle failure: {exc}{extra}", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

__all__ = ["MODES", "build_parser", "main"]
