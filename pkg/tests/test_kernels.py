import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import LineString, Point

from unctraj import _accel, kernels

PAIRS = [
    (kernels.laplace_kl_elementwise_numpy, kernels.laplace_kl_elementwise_numba),
    (kernels.segment_max_numpy, kernels.segment_max_numba),
    (kernels.segment_max_backward_numpy, kernels.segment_max_backward_numba),
    (kernels.mode_displacements_numpy, kernels.mode_displacements_numba),
    (kernels.point_polyline_distance_numpy, kernels.point_polyline_distance_numba),
]


def _same(a, b, rtol=1e-12):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=rtol, atol=1e-12) and np.shape(x) == np.shape(y) for x, y in zip(a, b))


@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_laplace_kl_parity(seed, n):
    rng = np.random.default_rng(seed)
    args = (rng.normal(size=(n, 2)), rng.uniform(0.1, 5, (n, 2)), rng.normal(size=(n, 2)), rng.uniform(0.1, 5, (n, 2)))
    assert _same(*(f(*args) for f in PAIRS[0]))


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 6), min_size=1, max_size=8))
def test_segment_max_parity(seed, sizes):
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    values = rng.normal(size=(int(offsets[-1]), 5))
    out_np, arg_np = kernels.segment_max_numpy(values, offsets)
    out_nb, arg_nb = kernels.segment_max_numba(values, offsets)
    assert np.array_equal(out_np, out_nb) and np.array_equal(arg_np, arg_nb)
    for i, (lo, hi) in enumerate(zip(offsets[:-1], offsets[1:])):
        expected = values[lo:hi].max(axis=0) if hi > lo else np.zeros(5)
        assert np.array_equal(out_np[i], expected)
    grad = rng.normal(size=out_np.shape)
    assert np.array_equal(
        kernels.segment_max_backward_numpy(grad, arg_np, values.shape[0]),
        kernels.segment_max_backward_numba(grad, arg_nb, values.shape[0]),
    )


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_mode_displacement_parity(seed, n, k):
    rng = np.random.default_rng(seed)
    pred, gt = rng.normal(size=(n, k, 30, 2)), rng.normal(size=(n, 30, 2))
    assert _same(kernels.mode_displacements_numpy(pred, gt), kernels.mode_displacements_numba(pred, gt))


@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_point_polyline_parity_and_shapely(seed, n_vertices):
    rng = np.random.default_rng(seed)
    poly = rng.uniform(-10, 10, size=(n_vertices, 2))
    pts = rng.uniform(-15, 15, size=(20, 2))
    a = kernels.point_polyline_distance_numpy(pts, poly)
    b = kernels.point_polyline_distance_numba(pts, poly)
    assert _same(a, b, rtol=1e-10)
    line = LineString(poly)
    assert np.allclose(a, [line.distance(Point(p)) for p in pts], atol=1e-9)


def test_public_names_follow_backend():
    expected = kernels.segment_max_numba if _accel.USE_NUMBA else kernels.segment_max_numpy
    assert kernels.segment_max is expected


@pytest.mark.parametrize("flag, backend", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, backend):
    env = dict(os.environ, UNCTRAJ_DISABLE_NUMBA=flag)
    code = "from unctraj import _accel, kernels; print(_accel.backend_name(), kernels.segment_max.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out == [backend, f"segment_max_{backend}"]


def test_numpy_backend_runs_verify():
    env = dict(os.environ, UNCTRAJ_DISABLE_NUMBA="1")
    proc = subprocess.run([sys.executable, "-m", "unctraj.cli", "verify"], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
