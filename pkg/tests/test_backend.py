from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from mfke import _pykernels

core = pytest.importorskip("mfke._core")


@pytest.fixture
def sample():
    rng = np.random.default_rng(4)
    pos = rng.normal(size=3000)
    w = np.exp(rng.normal(scale=0.3, size=3000))
    q = np.linspace(-5, 5, 701)
    return pos, w, q


@pytest.mark.parametrize("family", [_pykernels.GAUSSIAN, _pykernels.EPANECHNIKOV])
@pytest.mark.parametrize("deriv", [0, 1])
def test_compiled_matches_numpy(sample, family, deriv):
    pos, w, q = sample
    a = core.kde_1d(pos, w, q, 0.3, family, deriv, 1)
    b = _pykernels.kde_1d(pos, w, q, 0.3, family, deriv, 1)
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-14)


def test_compiled_thread_invariant(sample):
    pos, w, q = sample
    one = core.kde_1d(pos, w, q, 0.2, _pykernels.GAUSSIAN, 1, 1)
    for n in (2, 3, 8):
        assert np.array_equal(one, core.kde_1d(pos, w, q, 0.2, _pykernels.GAUSSIAN, 1, n))


def test_python_backend_selected_by_env():
    env = dict(os.environ, MFKE_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import mfke; print(mfke.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_empty_query(sample):
    pos, w, _ = sample
    q = np.empty(0)
    assert core.kde_1d(pos, w, q, 0.3, 0, 0, 1).shape == (0,)
    assert _pykernels.kde_1d(pos, w, q, 0.3, 0, 0, 1).shape == (0,)
