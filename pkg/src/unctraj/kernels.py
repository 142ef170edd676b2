"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names (``laplace_kl_elementwise``, ``segment_max`` ...) are bound
to one of the two implementations at import time, see ``_accel``. The
``*_numpy`` / ``*_numba`` variants stay importable so that tests and the
benchmark can compare them directly.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Laplace KL divergence, elementwise over arrays of parameters
# ---------------------------------------------------------------------------


def laplace_kl_elementwise_numpy(mu1, b1, mu2, b2):
    mu1, b1, mu2, b2 = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (mu1, b1, mu2, b2))
    )
    d = np.abs(mu1 - mu2)
    return np.log(b2 / b1) + d / b2 + (b1 / b2) * np.exp(-d / b1) - 1.0


@njit
def _laplace_kl_flat(mu1, b1, mu2, b2, out):
    for i in range(mu1.shape[0]):
        d = abs(mu1[i] - mu2[i])
        out[i] = math.log(b2[i] / b1[i]) + d / b2[i] + (b1[i] / b2[i]) * math.exp(-d / b1[i]) - 1.0


def laplace_kl_elementwise_numba(mu1, b1, mu2, b2):
    arrs = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mu1, b1, mu2, b2)))
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(a).ravel() for a in arrs]
    out = np.empty(flat[0].shape[0], dtype=np.float64)
    _laplace_kl_flat(flat[0], flat[1], flat[2], flat[3], out)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Ragged (segment) max-pooling with argmax bookkeeping
# ---------------------------------------------------------------------------
# ``values`` is (N, D); ``offsets`` is (S + 1,) with segment s spanning rows
# offsets[s]:offsets[s + 1]. Empty segments pool to zeros with argmax -1.
# Ties resolve to the first row, identically on both backends.


def segment_max_numpy(values, offsets):
    values = np.asarray(values, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    n_seg = offsets.shape[0] - 1
    d = values.shape[1]
    out = np.zeros((n_seg, d), dtype=np.float64)
    arg = np.full((n_seg, d), -1, dtype=np.int64)
    sizes = np.diff(offsets)
    nonempty = np.flatnonzero(sizes > 0)
    if nonempty.size == 0:
        return out, arg
    starts = offsets[nonempty]
    seg_max = np.maximum.reduceat(values, starts, axis=0)
    # reduceat over starts of non-empty segments only covers rows up to the
    # next start, which is correct because empty segments contribute no rows.
    seg_of_row = np.repeat(np.arange(nonempty.size), sizes[nonempty])
    rows = np.arange(values.shape[0], dtype=np.int64)
    big = np.int64(values.shape[0])
    hit = values == seg_max[seg_of_row]
    cand = np.where(hit, rows[:, None], big)
    first = np.minimum.reduceat(cand, starts, axis=0)
    out[nonempty] = seg_max
    arg[nonempty] = first
    return out, arg


@njit
def _segment_max_loop(values, offsets, out, arg):
    n_seg = offsets.shape[0] - 1
    d = values.shape[1]
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi <= lo:
            continue
        for j in range(d):
            best = values[lo, j]
            best_i = lo
            for i in range(lo + 1, hi):
                v = values[i, j]
                if v > best:
                    best = v
                    best_i = i
            out[s, j] = best
            arg[s, j] = best_i


def segment_max_numba(values, offsets):
    values = np.ascontiguousarray(values, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    n_seg = offsets.shape[0] - 1
    out = np.zeros((n_seg, values.shape[1]), dtype=np.float64)
    arg = np.full((n_seg, values.shape[1]), -1, dtype=np.int64)
    _segment_max_loop(values, offsets, out, arg)
    return out, arg


def segment_max_backward_numpy(grad_out, arg, n_rows):
    grad_out = np.asarray(grad_out, dtype=np.float64)
    grad = np.zeros((n_rows, grad_out.shape[1]), dtype=np.float64)
    valid = arg >= 0
    cols = np.broadcast_to(np.arange(grad_out.shape[1]), arg.shape)
    # (row, col) pairs are unique: one argmax per segment and column.
    grad[arg[valid], cols[valid]] = grad_out[valid]
    return grad


@njit
def _segment_max_backward_loop(grad_out, arg, grad):
    for s in range(arg.shape[0]):
        for j in range(arg.shape[1]):
            i = arg[s, j]
            if i >= 0:
                grad[i, j] += grad_out[s, j]


def segment_max_backward_numba(grad_out, arg, n_rows):
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    arg = np.ascontiguousarray(arg, dtype=np.int64)
    grad = np.zeros((n_rows, grad_out.shape[1]), dtype=np.float64)
    _segment_max_backward_loop(grad_out, arg, grad)
    return grad


# ---------------------------------------------------------------------------
# Per-mode displacement errors
# ---------------------------------------------------------------------------


def mode_displacements_numpy(pred, gt):
    """ADE and FDE of every mode. ``pred`` (N, K, T, 2), ``gt`` (N, T, 2)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    dist = np.sqrt(np.sum((pred - gt[:, None]) ** 2, axis=-1))
    return dist.mean(axis=-1), dist[..., -1]


@njit
def _mode_displacements_loop(pred, gt, ade, fde):
    n, k, t = pred.shape[0], pred.shape[1], pred.shape[2]
    for a in range(n):
        for m in range(k):
            acc = 0.0
            last = 0.0
            for s in range(t):
                dx = pred[a, m, s, 0] - gt[a, s, 0]
                dy = pred[a, m, s, 1] - gt[a, s, 1]
                last = math.sqrt(dx * dx + dy * dy)
                acc += last
            ade[a, m] = acc / t
            fde[a, m] = last


def mode_displacements_numba(pred, gt):
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    ade = np.empty(pred.shape[:2], dtype=np.float64)
    fde = np.empty(pred.shape[:2], dtype=np.float64)
    _mode_displacements_loop(pred, gt, ade, fde)
    return ade, fde


# ---------------------------------------------------------------------------
# Point to polyline distance
# ---------------------------------------------------------------------------


def point_polyline_distance_numpy(points, polyline):
    """Euclidean distance from each of ``points`` (N, 2) to ``polyline`` (P, 2)."""
    points = np.asarray(points, dtype=np.float64)
    poly = np.asarray(polyline, dtype=np.float64)
    a = poly[:-1]
    ab = poly[1:] - a
    denom = np.sum(ab * ab, axis=1)
    denom = np.where(denom > 0, denom, 1.0)
    ap = points[:, None, :] - a[None]
    t = np.clip(np.sum(ap * ab[None], axis=2) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(np.min(np.sum((points[:, None, :] - closest) ** 2, axis=2), axis=1))


@njit
def _point_polyline_loop(points, poly, out):
    for i in range(points.shape[0]):
        px = points[i, 0]
        py = points[i, 1]
        best = np.inf
        for j in range(poly.shape[0] - 1):
            ax = poly[j, 0]
            ay = poly[j, 1]
            abx = poly[j + 1, 0] - ax
            aby = poly[j + 1, 1] - ay
            denom = abx * abx + aby * aby
            if denom <= 0:
                denom = 1.0
            t = ((px - ax) * abx + (py - ay) * aby) / denom
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            dx = px - (ax + t * abx)
            dy = py - (ay + t * aby)
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        out[i] = math.sqrt(best)


def point_polyline_distance_numba(points, polyline):
    points = np.ascontiguousarray(points, dtype=np.float64)
    poly = np.ascontiguousarray(polyline, dtype=np.float64)
    out = np.empty(points.shape[0], dtype=np.float64)
    _point_polyline_loop(points, poly, out)
    return out


if USE_NUMBA:
    laplace_kl_elementwise = laplace_kl_elementwise_numba
    segment_max = segment_max_numba
    segment_max_backward = segment_max_backward_numba
    mode_displacements = mode_displacements_numba
    point_polyline_distance = point_polyline_distance_numba
else:
    laplace_kl_elementwise = laplace_kl_elementwise_numpy
    segment_max = segment_max_numpy
    segment_max_backward = segment_max_backward_numpy
    mode_displacements = mode_displacements_numpy
    point_polyline_distance = point_polyline_distance_numpy
