"""Dual-head uncertainty measures.

* positional uncertainty: KL divergence between the per-axis Laplace
  distributions emitted by the primary and auxiliary heads, in nats;
* semantic fusion: mean class score and componentwise squared difference;
* prediction difference ``||p_main - p_aux||``;
* a Monte-Carlo check that the expected prediction difference grows
  linearly with the parameter standard deviation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

SIMPLEX_TOL = 1e-6


# ---------------------------------------------------------------------------
# Laplace KL
# ---------------------------------------------------------------------------


def _check_scales(*scales):
    for b in scales:
        b = np.asarray(b, dtype=np.float64)
        if not np.all(np.isfinite(b)) or np.any(b <= 0):
            raise ValueError("Laplace scale must be positive and finite")


def laplace_kl(mu1, b1, mu2, b2):
    """KL(Laplace(mu1, b1) || Laplace(mu2, b2)) in nats.

    Closed form ``ln(b2/b1) + |mu1-mu2|/b2 + (b1/b2) exp(-|mu1-mu2|/b1) - 1``.
    Broadcasts over array arguments; returns a float for scalar input.
    """
    _check_scales(b1, b2)
    out = kernels.laplace_kl_elementwise(mu1, b1, mu2, b2)
    # Rounding can leave -1e-17 for identical arguments.
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LaplacePoint:
    """2D Laplace position: location ``mu`` and per-axis scale ``b``."""

    mu: tuple
    b: tuple

    def __post_init__(self):
        mu = tuple(float(v) for v in self.mu)
        b = tuple(float(v) for v in self.b)
        if len(mu) != 2 or len(b) != 2:
            raise ValueError("LaplacePoint needs 2D mu and b")
        if not all(math.isfinite(v) for v in mu):
            raise ValueError("mu must be finite")
        _check_scales(b)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "b", b)


def positional_uncertainty(primary, aux):
    """beta = KL over x plus KL over y, direction KL(primary || aux).

    Accepts two :class:`LaplacePoint` (returns a float) or arrays
    ``(mu, b)`` of shape (..., 2) for each head (returns (...,) array).
    """
    if isinstance(primary, LaplacePoint):
        mu1, b1, mu2, b2 = (np.asarray(v) for v in (primary.mu, primary.b, aux.mu, aux.b))
        return float(np.sum(laplace_kl(mu1, b1, mu2, b2)))
    (mu1, b1), (mu2, b2) = primary, aux
    return np.sum(laplace_kl(mu1, b1, mu2, b2), axis=-1)


def literal_positional_uncertainty(mu, mu_aux):
    """Elementwise ``sum(mu * log(mu / mu_aux))`` over the two coordinates.

    Treats the coordinate vectors as unnormalized densities. Only defined
    for strictly positive (normalized) coordinates; kept for comparison with
    :func:`positional_uncertainty`.
    """
    mu = np.asarray(mu, dtype=np.float64)
    mu_aux = np.asarray(mu_aux, dtype=np.float64)
    if np.any(mu <= 0) or np.any(mu_aux <= 0):
        raise ValueError("literal form needs strictly positive coordinates")
    return np.sum(mu * np.log(mu / mu_aux), axis=-1)


# ---------------------------------------------------------------------------
# Semantic fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SemanticFusion:
    c_bar: np.ndarray
    delta_c: np.ndarray


def _check_simplex(c, name):
    if np.any(c < -SIMPLEX_TOL) or np.any(np.abs(c.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError(f"{name} is not on the probability simplex")


def semantic_fuse(c, c_aux) -> SemanticFusion:
    """Mean class score and squared per-class disagreement of two heads.

    Works on single vectors or on (..., C) batches.
    """
    c = np.asarray(c, dtype=np.float64)
    c_aux = np.asarray(c_aux, dtype=np.float64)
    if c.shape != c_aux.shape:
        raise ValueError("score vectors differ in shape")
    _check_simplex(c, "c")
    _check_simplex(c_aux, "c_aux")
    return SemanticFusion(c_bar=0.5 * (c + c_aux), delta_c=(c - c_aux) ** 2)


# ---------------------------------------------------------------------------
# Prediction difference and the proportionality check
# ---------------------------------------------------------------------------


def prediction_difference(p_main, p_aux, norm: str = "L2") -> float:
    p_main = np.asarray(p_main, dtype=np.float64)
    p_aux = np.asarray(p_aux, dtype=np.float64)
    if p_main.shape != p_aux.shape:
        raise ValueError(f"length mismatch: {p_main.shape} vs {p_aux.shape}")
    diff = (p_main - p_aux).ravel()
    if norm == "L2":
        return float(np.sqrt(np.dot(diff, diff)))
    if norm == "L1":
        return float(np.sum(np.abs(diff)))
    raise ValueError(f"unknown norm {norm!r}")


PROBES = {
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "linear": lambda z: z,
}

DEFAULT_SIGMA_GRID = (0.05, 0.1, 0.2, 0.4)


@dataclass(frozen=True)
class ProportionalityResult:
    slope: float
    intercept: float
    correlation: float
    sigmas: tuple
    mean_d: tuple

    def __iter__(self):
        return iter((self.slope, self.intercept, self.correlation))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "mean_D"])
        for s, d in zip(self.sigmas, self.mean_d):
            w.writerow([repr(float(s)), repr(float(d))])
        return buf.getvalue()


def verify_proportionality(
    probe="sigmoid",
    sigma_grid=DEFAULT_SIGMA_GRID,
    n_samples=100_000,
    seed=0,
    x=1.0,
    theta0=0.0,
) -> ProportionalityResult:
    """Fit mean prediction difference against parameter standard deviation.

    For each sigma, main and auxiliary parameters are drawn i.i.d. from
    N(theta0, sigma^2) and D = |p(theta_main x) - p(theta_aux x)| is
    averaged. One set of standard normal draws is shared by the whole grid
    (common random numbers), so the curve is smooth in sigma.
    """
    fn = PROBES[probe] if isinstance(probe, str) else probe
    sig = np.asarray(sigma_grid, dtype=np.float64)
    if sig.size < 4:
        raise ValueError("sigma_grid needs at least 4 points")
    if np.ptp(sig) == 0:
        raise ValueError("degenerate sigma grid: all values equal")
    if np.any(sig < 0):
        raise ValueError("sigmas must be non-negative")
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, int(n_samples)))
    mean_d = np.empty(sig.size)
    for i, s in enumerate(sig):
        t_main = theta0 + s * z[0]
        t_aux = theta0 + s * z[1]
        mean_d[i] = np.mean(np.abs(fn(t_main * x) - fn(t_aux * x)))
    slope, intercept = np.polyfit(sig, mean_d, 1)
    if np.ptp(mean_d) == 0:
        corr = 0.0
    else:
        corr = float(np.corrcoef(sig, mean_d)[0, 1])
    return ProportionalityResult(float(slope), float(intercept), corr, tuple(sig.tolist()), tuple(mean_d.tolist()))
