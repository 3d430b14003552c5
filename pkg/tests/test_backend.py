import os
import subprocess
import sys

import numpy as np
import pytest

from scenesound.nn import backend
from scenesound.nn import _kernels_py

needs_ext = pytest.mark.skipif("cython" not in backend.available(), reason="extension not built")


def _probe(env_value):
    env = dict(os.environ, SCENESOUND_BACKEND=env_value)
    cmd = [sys.executable, "-c", "from scenesound.nn import backend; print(backend.BACKEND)"]
    return subprocess.run(cmd, env=env, capture_output=True, text=True)


def test_python_always_available():
    assert "python" in backend.available()
    assert backend.get("python") is _kernels_py


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown"):
        backend.get("fortran")


def test_env_forces_fallback():
    res = _probe("python")
    assert res.returncode == 0 and res.stdout.strip() == "python"


@needs_ext
def test_default_prefers_compiled():
    assert _probe("").stdout.strip() == "cython"


def _gru_inputs(seed, B=3, T=11, H=5, dtype=np.float64):
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((B, T, 3 * H)).astype(dtype)
    U = (0.5 * rng.standard_normal((3, H, H))).astype(dtype)
    return xp, U


@needs_ext
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("seed", range(3))
def test_gru_kernels_agree(seed, dtype):
    xp, U = _gru_inputs(seed, dtype=dtype)
    a = _kernels_py.gru_scan_forward(xp, U)
    b = backend.get("cython").gru_scan_forward(xp, U)
    tol = 1e-12 if dtype == np.float64 else 1e-5
    for x, y in zip(a, b):
        assert y.dtype == dtype
        np.testing.assert_allclose(x, y, atol=tol)
    dh = np.random.default_rng(seed + 100).standard_normal(a[0].shape).astype(dtype)
    ga = _kernels_py.gru_scan_backward(dh, *a, U)
    gb = backend.get("cython").gru_scan_backward(dh, *a, U)
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, atol=tol * 10)


@needs_ext
@pytest.mark.parametrize("pools", [(2, 1), (1, 5), (4, 3), (3, 3)])
def test_maxpool_kernels_agree(pools):
    rng = np.random.default_rng(sum(pools))
    x = rng.integers(-3, 4, (2, 3, 12, 15)).astype(np.float64)  # many ties
    pf, pt = pools
    out_a, idx_a = _kernels_py.maxpool_forward(x, pf, pt)
    out_b, idx_b = backend.get("cython").maxpool_forward(x, pf, pt)
    np.testing.assert_array_equal(out_a, out_b)
    np.testing.assert_array_equal(idx_a, idx_b)
    dout = rng.standard_normal(out_a.shape)
    np.testing.assert_array_equal(
        _kernels_py.maxpool_backward(dout, idx_a, x.shape, pf, pt),
        backend.get("cython").maxpool_backward(dout, idx_b, x.shape, pf, pt),
    )
