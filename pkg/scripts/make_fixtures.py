"""Regenerate the frozen oracle fixtures under fixtures/."""
from __future__ import annotations

from pathlib import Path

from mfke.engine import GridSpec
from mfke.oracle import cole_hopf_burgers, hjb_fd_solve
from mfke.problems import Sampler
from mfke.report import write_snapshots

ROOT = Path(__file__).resolve().parent.parent / "fixtures"

GRID = GridSpec(-8.0, 8.0, 2000)
# inventory toy problem: sigma 1, D 0.1, h(x) = x^2, g = N(0, 1) density, T 0.5
HJB = {"sigma": 1.0, "D": 0.1, "h": 1.0, "dt": 1e-3, "T": 0.5}


def main() -> None:
    ROOT.mkdir(exist_ok=True)
    sol = hjb_fd_solve(HJB["sigma"], HJB["D"], HJB["h"], Sampler.gaussian(0.0, 1.0), GRID,
                       HJB["dt"], HJB["T"], snapshot_times=[0.0])
    write_snapshots(ROOT / "hjb_v0.csv", [sol.snapshot(0.0)])
    ref = cole_hopf_burgers(Sampler.gaussian(0.0, 0.5), 1.0, GRID.points(), 0.5)
    write_snapshots(ROOT / "burgers_cole_hopf.csv", [ref])


if __name__ == "__main__":
    main()
