from __future__ import annotations

import json

import pytest

from mfke.config import SIM_DEFAULTS, RunConfig
from mfke.errors import ConfigError

BASE = """mode = "simulate"

[problem]
name = "linear_fp"
params = { sigma = 1.0 }

[sim]
N = 100
dt = 0.01
T = 0.1
seed = 3
"""


def test_defaults_made_explicit():
    rc = RunConfig.parse(BASE)
    d = rc.to_dict()
    assert d["sim"]["grid"] == SIM_DEFAULTS["grid"]
    assert d["sim"]["bandwidth"] == "silverman"
    assert d["reverse"]["source"] == "terminal"
    cfg = rc.sim_config()
    assert cfg.N == 100 and cfg.n_steps == 10 and cfg.seed == 3


def test_echo_reparses_identically(tmp_path):
    rc = RunConfig.parse(BASE)
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(rc.to_dict()))
    assert RunConfig.load(path) == rc


def test_zero_dt_names_field_and_line():
    with pytest.raises(ConfigError, match=r"line 9: sim\.dt"):
        RunConfig.parse(BASE.replace("dt = 0.01", "dt = 0"))


def test_unknown_keys_rejected_with_line():
    with pytest.raises(ConfigError, match=r"line 12: sim\.bogus: unknown key"):
        RunConfig.parse(BASE + "bogus = 1\n")
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        RunConfig.parse(BASE + "[reverse]\ncolour = 1\n")
    with pytest.raises(ConfigError, match="problem.params.mu"):
        RunConfig.parse(BASE.replace("sigma = 1.0", "mu = 1.0"))


def test_json_errors_have_lines():
    with pytest.raises(ConfigError, match="line 2"):
        RunConfig.parse('{"mode": "simulate",\n "sim": {,}}', is_json=True)
    with pytest.raises(ConfigError, match=r"line 1: .*unknown key"):
        RunConfig.parse('{"mode": "simulate", "extra": 1}', is_json=True)


def test_bad_values():
    with pytest.raises(ConfigError, match="mode"):
        RunConfig.parse(BASE.replace('"simulate"', '"dance"'))
    with pytest.raises(ConfigError, match="integer number of steps"):
        RunConfig.parse(BASE.replace("T = 0.1", "T = 0.105"))
    with pytest.raises(ConfigError, match="problem.name"):
        RunConfig.parse(BASE.replace('"linear_fp"', '"warp"'))
    with pytest.raises(ConfigError, match="bandwidth"):
        RunConfig.parse(BASE + 'bandwidth = "wide"\n')
    with pytest.raises(ConfigError, match="randomenv.modes"):
        RunConfig.parse(BASE + '[randomenv]\nmodes = [{ kind = "saw" }]\n')


def test_overrides_do_not_mutate():
    rc = RunConfig.parse(BASE)
    cfg = rc.sim_config(seed=99)
    assert cfg.seed == 99 and rc.sim["seed"] == 3
