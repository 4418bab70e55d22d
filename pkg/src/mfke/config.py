"""Run configuration: TOML/JSON parsing, validation with line numbers, echo."""
from __future__ import annotations

import copy
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .engine import GridSpec, SimConfig
from .errors import ConfigError, DomainError
from .problems import BUILTIN_PARAMS, ProblemSpec, Sampler, builtin_problem
from .randomenv import Mode

MODES = ("simulate", "jump", "reverse", "randomenv", "control", "oracle", "compare")

SIM_DEFAULTS = {
    "N": 10000,
    "dt": 1e-3,
    "T": 1.0,
    "seed": 0,
    "bandwidth": "silverman",
    "snapshot_times": [],
    "kernel": "gaussian",
    "kde_method": "auto",
    "lambda_max": None,
    "grid": {"min": -8.0, "max": 8.0, "M": 2000},
}

SECTION_DEFAULTS = {
    "jump": {},
    "reverse": {"source": "terminal", "bumps": True, "bump_centre": 0.0, "bump_scale": 1.0,
                "forward_bandwidth": None},
    "randomenv": {"environments": 10, "seed_env": 0, "drift_mode": None,
                  "modes": [{"kind": "cos", "amplitude": 1.0, "wavenumber": 1.0, "phase": 0.0}]},
    "control": {"fd_dt": 1e-3, "fd_grid": None},
    "oracle": {"problem": "burgers", "nu": 1.0, "t": 0.5, "dt": 1e-3},
    "compare": {"run": None, "reference": "cole_hopf", "interpolate": False},
}

TOP_KEYS = {"mode", "out", "problem", "sim", *SECTION_DEFAULTS}
PROBLEM_KEYS = {"name", "params", "initial", "terminal"}


class _Locator:
    """Best-effort line lookup for keys in the original config text."""

    def __init__(self, text: str, is_json: bool):
        self.lines = text.splitlines()
        self.is_json = is_json

    def line_of(self, path: tuple[str, ...]) -> int | None:
        if not path:
            return None
        key = path[-1]
        if self.is_json:
            pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
            return next((i + 1 for i, ln in enumerate(self.lines) if pat.search(ln)), None)
        section = ".".join(path[:-1])
        current = ""
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        header = re.compile(r"^\s*\[+\s*([^\]]+?)\s*\]+")
        inline = re.compile(r"[{,]\s*" + re.escape(key) + r"\s*=")
        fallback = None
        for i, ln in enumerate(self.lines):
            m = header.match(ln)
            if m:
                current = m.group(1)
                if current == ".".join(path):
                    return i + 1
                continue
            if pat.match(ln) or inline.search(ln):
                if current == section:
                    return i + 1
                if fallback is None and (section.startswith(current) or current == ""):
                    fallback = i + 1
        return fallback


def _fail(msg: str, path: tuple[str, ...], loc: _Locator | None):
    line = loc.line_of(path) if loc is not None else None
    where = ".".join(path)
    prefix = f"line {line}: " if line else ""
    raise ConfigError(f"{prefix}{where}: {msg}" if where else f"{prefix}{msg}")


def _check_keys(d: dict, allowed, path: tuple[str, ...], loc):
    for k in d:
        if k not in allowed:
            _fail(f"unknown key {k!r}", path + (k,), loc)


@dataclass
class RunConfig:
    """Validated run description with every default made explicit."""

    mode: str
    problem: dict
    sim: dict
    sections: dict = field(default_factory=dict)
    out: str | None = None
    base_dir: str | None = None

    # ------------------------------------------------------------ parsing
    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        is_json = path.suffix.lower() == ".json"
        return cls.parse(text, is_json=is_json, base_dir=path.parent)

    @classmethod
    def parse(cls, text: str, is_json: bool = False, base_dir=None) -> RunConfig:
        loc = _Locator(text, is_json)
        try:
            raw = json.loads(text) if is_json else tomllib.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a table/object")
        return cls.from_dict(raw, loc=loc, base_dir=base_dir)

    @classmethod
    def from_dict(cls, raw: dict, loc: _Locator | None = None, base_dir=None) -> RunConfig:
        raw = copy.deepcopy(raw)
        _check_keys(raw, TOP_KEYS, (), loc)
        mode = raw.get("mode", "simulate")
        if mode not in MODES:
            _fail(f"unknown mode {mode!r}; choose from {list(MODES)}", ("mode",), loc)

        prob = raw.get("problem", {})
        if not isinstance(prob, dict):
            _fail("must be a table", ("problem",), loc)
        _check_keys(prob, PROBLEM_KEYS, ("problem",), loc)
        name = prob.get("name")
        if mode not in ("oracle", "compare") or name is not None:
            if name not in BUILTIN_PARAMS:
                _fail(f"unknown problem {name!r}; choose from {sorted(BUILTIN_PARAMS)}",
                      ("problem", "name"), loc)
            params = prob.get("params", {})
            _check_keys(params, BUILTIN_PARAMS[name], ("problem", "params"), loc)
        problem = {"name": name, "params": dict(prob.get("params", {})),
                   "initial": prob.get("initial"), "terminal": prob.get("terminal")}

        sim_raw = raw.get("sim", {})
        _check_keys(sim_raw, SIM_DEFAULTS, ("sim",), loc)
        sim = copy.deepcopy(SIM_DEFAULTS)
        grid = dict(sim["grid"])
        grid_raw = sim_raw.get("grid", {})
        _check_keys(grid_raw, grid, ("sim", "grid"), loc)
        grid.update(grid_raw)
        sim.update({k: v for k, v in sim_raw.items() if k != "grid"})
        sim["grid"] = grid
        sim["snapshot_times"] = list(sim["snapshot_times"])
        _validate_sim(sim, loc)

        sections = {}
        for sec, defaults in SECTION_DEFAULTS.items():
            given = raw.get(sec, {})
            if not isinstance(given, dict):
                _fail("must be a table", (sec,), loc)
            _check_keys(given, defaults, (sec,), loc)
            merged = copy.deepcopy(defaults)
            merged.update(given)
            sections[sec] = merged
        _validate_sections(sections, loc)

        rc = cls(mode, problem, sim, sections, raw.get("out"),
                 str(base_dir) if base_dir is not None else None)
        # fail early on problem-level errors with the offending section
        if name is not None:
            try:
                rc.problem_spec()
            except DomainError as exc:
                _fail(str(exc), ("problem",), loc)
        return rc

    # -------------------------------------------------------------- build
    def _sampler(self, d) -> Sampler | None:
        if d is None:
            return None
        base = Path(self.base_dir) if self.base_dir else None
        return Sampler.from_dict(d, base_dir=base)

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        extra = {}
        if self.sim.get("lambda_max") is not None:
            extra["lambda_max"] = float(self.sim["lambda_max"])
        try:
            return builtin_problem(p["name"], p["params"], initial=self._sampler(p["initial"]),
                                   terminal=self._sampler(p["terminal"]), **extra)
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed problem section: {exc}") from exc

    def sim_config(self, **overrides) -> SimConfig:
        s = dict(self.sim)
        s.update(overrides)
        g = s["grid"]
        return SimConfig(N=int(s["N"]), dt=float(s["dt"]), T=float(s["T"]), seed=int(s["seed"]),
                         bandwidth=s["bandwidth"], snapshot_times=tuple(s["snapshot_times"]),
                         grid=GridSpec(float(g["min"]), float(g["max"]), int(g["M"])),
                         kernel_family=s["kernel"], kde_method=s["kde_method"])

    def section(self, name: str) -> dict:
        return self.sections[name]

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "problem": copy.deepcopy(self.problem), "sim": copy.deepcopy(self.sim)}
        out.update(copy.deepcopy(self.sections))
        if self.out is not None:
            out["out"] = self.out
        return out

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _validate_sim(sim: dict, loc):
    if not (isinstance(sim["N"], int) and not isinstance(sim["N"], bool) and sim["N"] >= 1):
        _fail("N must be a positive integer", ("sim", "N"), loc)
    for key in ("dt", "T"):
        if not (_is_number(sim[key]) and sim[key] > 0):
            _fail(f"{key} must be a positive number", ("sim", key), loc)
    if not (isinstance(sim["seed"], int) and 0 <= sim["seed"] < 2**64):
        _fail("seed must be a 64-bit nonnegative integer", ("sim", "seed"), loc)
    bw = sim["bandwidth"]
    if not (bw == "silverman" or (_is_number(bw) and bw > 0)):
        _fail("bandwidth must be 'silverman' or a positive number", ("sim", "bandwidth"), loc)
    if sim["kernel"] not in ("gaussian", "epanechnikov"):
        _fail("kernel must be 'gaussian' or 'epanechnikov'", ("sim", "kernel"), loc)
    if sim["kde_method"] not in ("direct", "binned", "auto"):
        _fail("kde_method must be 'direct', 'binned' or 'auto'", ("sim", "kde_method"), loc)
    lm = sim["lambda_max"]
    if lm is not None and not (_is_number(lm) and lm > 0):
        _fail("lambda_max must be positive", ("sim", "lambda_max"), loc)
    g = sim["grid"]
    if not (isinstance(g["M"], int) and g["M"] >= 2):
        _fail("M must be an integer >= 2", ("sim", "grid", "M"), loc)
    if not (_is_number(g["min"]) and _is_number(g["max"]) and g["max"] > g["min"]):
        _fail("grid needs finite min < max", ("sim", "grid", "max"), loc)
    if not all(_is_number(t) for t in sim["snapshot_times"]):
        _fail("snapshot_times must be numbers", ("sim", "snapshot_times"), loc)
    try:
        RunConfig("simulate", {}, sim).sim_config()
    except DomainError as exc:
        key = "snapshot_times" if "snapshot" in str(exc) else ("dt" if "T/dt" in str(exc) else "")
        _fail(str(exc), ("sim", key) if key else ("sim",), loc)


def _validate_sections(sections: dict, loc):
    rev = sections["reverse"]
    if rev["source"] not in ("terminal", "forward"):
        _fail("source must be 'terminal' or 'forward'", ("reverse", "source"), loc)
    env = sections["randomenv"]
    if not (isinstance(env["environments"], int) and env["environments"] >= 1):
        _fail("environments must be a positive integer", ("randomenv", "environments"), loc)
    try:
        for m in env["modes"]:
            Mode.from_dict(m)
        if env["drift_mode"] is not None:
            Mode.from_dict(env["drift_mode"])
    except (DomainError, TypeError) as exc:
        _fail(str(exc), ("randomenv", "modes"), loc)
    ctl = sections["control"]
    if not (_is_number(ctl["fd_dt"]) and ctl["fd_dt"] > 0):
        _fail("fd_dt must be positive", ("control", "fd_dt"), loc)
    orc = sections["oracle"]
    if orc["problem"] not in ("burgers", "heat", "fd", "hjb"):
        _fail("problem must be one of burgers, heat, fd, hjb", ("oracle", "problem"), loc)
    for key in ("nu", "t", "dt"):
        if not (_is_number(orc[key]) and orc[key] > 0):
            _fail(f"{key} must be positive", ("oracle", key), loc)


__all__ = ["MODES", "RunConfig", "SIM_DEFAULTS"]
