import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unctraj.uncertainty import (
    LaplacePoint,
    laplace_kl,
    literal_positional_uncertainty,
    positional_uncertainty,
    prediction_difference,
    semantic_fuse,
    verify_proportionality,
)


def trapezoid_kl(mu1, b1, mu2, b2, lo=-40.0, hi=40.0, step=1e-3):
    """Independent oracle: trapezoid rule on a fixed grid plus the two kinks."""
    x = np.union1d(np.arange(lo, hi + step / 2, step), [mu1, mu2])
    lp = -np.log(2 * b1) - np.abs(x - mu1) / b1
    lq = -np.log(2 * b2) - np.abs(x - mu2) / b2
    f = np.exp(lp) * (lp - lq)
    return float(np.sum(np.diff(x) * 0.5 * (f[1:] + f[:-1])))


def test_kl_examples():
    assert laplace_kl(0, 1, 0, 1) == 0.0
    assert laplace_kl(0, 1, 1, 1) == pytest.approx(math.exp(-1), abs=1e-12)
    assert laplace_kl(0, 1, 0, 2) == pytest.approx(math.log(2) - 0.5, abs=1e-12)


# Frozen from trapezoid_kl (step 1e-3 on [-40, 40]).
FROZEN = [((0, 1, 1, 1), 0.36787944), ((0, 1, 0, 2), 0.19314718)]


@pytest.mark.parametrize("args, value", FROZEN)
def test_kl_matches_frozen_oracle(args, value):
    assert trapezoid_kl(*args) == pytest.approx(value, abs=1e-6)
    assert laplace_kl(*args) == pytest.approx(value, abs=1e-6)


def test_kl_matches_trapezoid_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(20):
        b1, b2 = rng.uniform(0.3, 3.0, 2)
        mu1, mu2 = rng.uniform(-3, 3, 2)
        span = 40.0 * max(b1, b2)
        oracle = trapezoid_kl(mu1, b1, mu2, b2, lo=-span, hi=span, step=2e-4)
        assert laplace_kl(mu1, b1, mu2, b2) == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_kl_domain_error(bad):
    with pytest.raises(ValueError):
        laplace_kl(0, bad, 0, 1)
    with pytest.raises(ValueError):
        laplace_kl(0, 1, 0, bad)


scales = st.floats(0.1, 5.0)
locs = st.floats(-10.0, 10.0)


@given(locs, scales, locs, scales)
def test_kl_non_negative(mu1, b1, mu2, b2):
    assert laplace_kl(mu1, b1, mu2, b2) >= 0.0


@given(locs, scales, locs, scales, st.floats(-50, 50), st.floats(0.2, 20))
def test_kl_shift_and_scale_invariance(mu1, b1, mu2, b2, shift, k):
    base = laplace_kl(mu1, b1, mu2, b2)
    assert laplace_kl(mu1 + shift, b1, mu2 + shift, b2) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert laplace_kl(k * mu1, k * b1, k * mu2, k * b2) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_kl_identity_of_indiscernibles():
    rng = np.random.default_rng(2)
    mu = rng.uniform(-10, 10, 100)
    b = rng.uniform(0.1, 5, 100)
    assert np.all(laplace_kl(mu, b, mu, b) == 0.0)
    mu2 = mu + rng.uniform(0.01, 1, 100) * rng.choice([-1, 1], 100)
    b2 = b * rng.uniform(0.5, 1.5, 100)
    mu1 = rng.uniform(-10, 10, 1000)
    assert np.all(laplace_kl(mu, b, mu2, b2) > 0)
    assert np.all(laplace_kl(mu1, rng.uniform(0.1, 5, 1000), mu1 + 0.1, rng.uniform(0.1, 5, 1000)) > 0)


def test_positional_uncertainty_examples():
    p = LaplacePoint((0.3, 0.7), (0.2, 0.4))
    assert positional_uncertainty(p, p) == 0.0
    a, b = LaplacePoint((0, 0), (1, 1)), LaplacePoint((1, 0), (1, 2))
    assert positional_uncertainty(a, b) == pytest.approx(math.exp(-1) + math.log(2) - 0.5, abs=1e-12)
    swap = lambda q: LaplacePoint(q.mu[::-1], q.b[::-1])
    assert positional_uncertainty(swap(a), swap(b)) == positional_uncertainty(a, b)


def test_positional_uncertainty_batched_matches_scalar():
    rng = np.random.default_rng(3)
    mu1, mu2 = rng.uniform(size=(2, 50, 2))
    b1, b2 = rng.uniform(0.05, 1, size=(2, 50, 2))
    batch = positional_uncertainty((mu1, b1), (mu2, b2))
    for i in range(50):
        one = positional_uncertainty(LaplacePoint(mu1[i], b1[i]), LaplacePoint(mu2[i], b2[i]))
        assert batch[i] == pytest.approx(one, rel=1e-14)


def test_laplace_point_validation():
    with pytest.raises(ValueError):
        LaplacePoint((0, 0), (1, 0))
    with pytest.raises(ValueError):
        LaplacePoint((0, np.nan), (1, 1))


def test_literal_form_positive_only():
    assert literal_positional_uncertainty([0.5, 0.5], [0.5, 0.5]) == 0.0
    with pytest.raises(ValueError):
        literal_positional_uncertainty([0.5, 0.0], [0.5, 0.5])


def test_semantic_fuse_examples():
    f = semantic_fuse([0.7, 0.1, 0.1, 0.1], [0.5, 0.3, 0.1, 0.1])
    assert np.allclose(f.c_bar, [0.6, 0.2, 0.1, 0.1])
    assert np.allclose(f.delta_c, [0.04, 0.04, 0.0, 0.0])
    same = semantic_fuse([0.25] * 4, [0.25] * 4)
    assert not np.any(same.delta_c)
    extreme = semantic_fuse([1, 0, 0, 0], [0, 1, 0, 0])
    assert np.array_equal(extreme.delta_c, [1, 1, 0, 0])


def test_semantic_fuse_rejects_off_simplex():
    with pytest.raises(ValueError):
        semantic_fuse([0.5, 0.5, 0.5, 0.0], [0.25] * 4)
    with pytest.raises(ValueError):
        semantic_fuse([0.25] * 4, [0.5] * 2)


def test_semantic_fuse_10k_pairs():
    rng = np.random.default_rng(4)
    c, c2 = rng.dirichlet(np.ones(4), size=(2, 10_000))
    f = semantic_fuse(c, c2)
    assert np.max(np.abs(f.c_bar.sum(axis=1) - 1)) < 1e-12
    assert np.all(f.c_bar >= 0)
    assert np.all((f.delta_c >= 0) & (f.delta_c <= 1))
    assert not np.any(semantic_fuse(c, c).delta_c)


def test_prediction_difference_examples():
    assert prediction_difference([0.7, 0.3], [0.7, 0.3]) == 0.0
    assert prediction_difference([0.7, 0.3], [0.5, 0.5]) == pytest.approx(math.sqrt(0.08), abs=1e-12)
    assert prediction_difference([0.7, 0.3], [0.5, 0.5], "L1") == pytest.approx(0.4, abs=1e-12)
    with pytest.raises(ValueError):
        prediction_difference([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        prediction_difference([1, 2], [1, 2], "Linf")


vec3 = st.lists(st.floats(-100, 100), min_size=3, max_size=3).map(np.array)


@given(vec3, vec3, vec3, st.floats(-10, 10), st.sampled_from(["L1", "L2"]))
def test_prediction_difference_norm_axioms(a, b, c, k, norm):
    d = lambda u, v: prediction_difference(u, v, norm)
    assert d(a, b) == pytest.approx(d(b, a), rel=1e-12, abs=1e-12)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9
    zero = np.zeros(3)
    assert d(k * a, zero) == pytest.approx(abs(k) * d(a, zero), rel=1e-9, abs=1e-9)


def test_linear_probe_slope():
    res = verify_proportionality("linear", n_samples=100_000, seed=0)
    assert abs(res.slope - 2 / math.sqrt(math.pi)) < 0.02 * 2 / math.sqrt(math.pi)
    assert res.correlation > 0.99
    assert abs(res.intercept) < 0.02


def test_sigmoid_probe_correlation_and_intercept():
    res = verify_proportionality("sigmoid", n_samples=100_000, seed=1)
    assert res.correlation > 0.99
    assert abs(res.intercept) < 0.02


def test_zero_sigma_entry_gives_zero_difference():
    res = verify_proportionality("sigmoid", sigma_grid=(0.0, 0.1, 0.2, 0.4), n_samples=10_000)
    assert res.mean_d[0] == 0.0


def test_proportionality_deterministic_and_csv():
    a = verify_proportionality("linear", n_samples=10_000, seed=5)
    assert a == verify_proportionality("linear", n_samples=10_000, seed=5)
    lines = a.to_csv().splitlines()
    assert lines[0] == "sigma,mean_D" and len(lines) == 5


@pytest.mark.parametrize(
    "kw", [{"sigma_grid": (0.1, 0.1, 0.1, 0.1)}, {"sigma_grid": (0.1, 0.2, 0.3)}, {"n_samples": 100}]
)
def test_proportionality_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        verify_proportionality("linear", **kw)
