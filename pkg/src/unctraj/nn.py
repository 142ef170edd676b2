"""Small numpy neural-net plumbing shared by the two trainable models.

Parameters live in an ordered ``dict[str, np.ndarray]``; gradients use the
same keys.
"""

from __future__ import annotations

import math

import numpy as np


class TrainingDiverged(RuntimeError):
    pass


def init_dense(rng, n_out, n_in):
    return rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_out, n_in))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads, max_norm):
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Momentum:
    """Heavy-ball SGD: v <- m v + g; p <- p - lr v."""

    def __init__(self, params, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, p in params.items():
            v = self.velocity[k]
            v *= self.momentum
            v += grads[k]
            p -= self.lr * v


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name, params, lr):
    if name == "momentum":
        return Momentum(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def finite_difference_check(stacked_loss, params, grads, epsilon, chunk=256):
    """Max relative error between ``grads`` and central differences.

    ``stacked_loss(stacked)`` receives a dict with the same keys as
    ``params`` where every array carries a leading copy axis (length 1 for
    untouched tensors) and returns one loss per copy, in float64 or wider.
    Perturbations of one
    tensor are evaluated ``chunk`` entries at a time, each entry once with
    ``+epsilon`` and once with ``-epsilon``; every parameter is covered.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    base = {k: v[None] for k, v in params.items()}
    worst = 0.0
    for k, p in params.items():
        g = grads[k].reshape(-1)
        for lo in range(0, p.size, chunk):
            idx = np.arange(lo, min(lo + chunk, p.size))
            n = idx.size
            stack = np.repeat(p.reshape(1, -1), 2 * n, axis=0)
            stack[np.arange(n), idx] += epsilon
            stack[n + np.arange(n), idx] -= epsilon
            trial = dict(base)
            trial[k] = stack.reshape((2 * n,) + p.shape)
            # Keep whatever precision the loss was computed in until after
            # the subtraction.
            losses = np.asarray(stacked_loss(trial))
            numeric = ((losses[:n] - losses[n:]) / (2.0 * epsilon)).astype(np.float64)
            for a, num in zip(g[idx], numeric):
                worst = max(worst, relative_error(float(a), float(num)))
    return worst


# ---------------------------------------------------------------------------
# Checkpoint text format
# ---------------------------------------------------------------------------
#
#   checkpoint 1
#   model <kind>
#   meta <key> <value>            (zero or more)
#   param <name> <dim> [<dim> ...]
#   <row-major values, one matrix row per line, 17 significant digits>
#   end

CHECKPOINT_VERSION = 1


def _fmt17(v):
    return format(float(v), ".17g")


def dump_checkpoint(kind, params, meta=None) -> str:
    lines = [f"checkpoint {CHECKPOINT_VERSION}", f"model {kind}"]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"param {name} " + " ".join(str(d) for d in arr.shape))
        rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        for row in rows:
            lines.append(" ".join(_fmt17(x) for x in row))
    lines.append("end")
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str):
    """Return ``(kind, params, meta)``; meta values stay strings."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != ["checkpoint", str(CHECKPOINT_VERSION)]:
        raise ValueError("not a checkpoint (bad header)")
    kind = lines[1].split(maxsplit=1)[1]
    meta, params = {}, {}
    i = 2
    while i < len(lines):
        tok = lines[i].split()
        if tok[0] == "end":
            break
        if tok[0] == "meta":
            meta[tok[1]] = tok[2] if len(tok) > 2 else ""
            i += 1
        elif tok[0] == "param":
            name, shape = tok[1], tuple(int(d) for d in tok[2:])
            n_rows = shape[0] if len(shape) > 1 else 1
            vals = []
            for ln in lines[i + 1 : i + 1 + n_rows]:
                vals.extend(float(x) for x in ln.split())
            arr = np.array(vals, dtype=np.float64)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"param {name}: expected {np.prod(shape)} values, got {arr.size}")
            params[name] = arr.reshape(shape)
            i += 1 + n_rows
        else:
            raise ValueError(f"unexpected checkpoint record {tok[0]!r}")
    else:
        raise ValueError("checkpoint missing 'end'")
    return kind, params, meta
