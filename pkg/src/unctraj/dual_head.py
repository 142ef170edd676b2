"""Dual-head per-vertex map estimator.

Shared encoder ``10 -> 32 -> 32`` (tanh). The primary head reads the deep
(layer-2) tap, the auxiliary head reads the shallow (layer-1) tap through a
dropout mask. Each head is affine and emits ``(mu[2], log_b[2], logits[C])``:
a per-axis Laplace position in normalized BEV units and class logits.

``mu`` is measured from the observed vertex (the anchor carried in the
context vector); the Laplace location is ``anchor + mu``. Regressing
absolute coordinates through a dropout layer is biased: the Laplace NLL
pulls each head toward the median of its train-mode output, whose typical
mask keeps nearly every unit at scale 1/(1-r), so the eval-mode output
settles near (1-r) times the target. Relative to the anchor the quantity
being shrunk is noise-sized, which keeps that bias negligible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .map_model import NUM_CLASSES
from .nn import (
    TrainingDiverged,
    clip_by_global_norm,
    dump_checkpoint,
    finite_difference_check,
    init_dense,
    load_checkpoint,
    make_optimizer,
)
from .noise_sim import CONTEXT_WIDTH, ObservationSet, context_anchor
from .seeding import make_rng
from .uncertainty import positional_uncertainty, semantic_fuse

HIDDEN = 32
HEAD_OUT = 2 + 2 + NUM_CLASSES
LN2 = math.log(2.0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0e-4
    regression_loss_weight: float = 0.03
    grad_norm_clip: float = 3.0
    dropout_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    optimizer: str = "momentum"
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.regression_loss_weight <= 0 or self.grad_norm_clip <= 0:
            raise ValueError("regression_loss_weight and grad_norm_clip must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class DualHeadModel:
    def __init__(self, params, dropout_rate=0.1):
        self.params = params
        self.dropout_rate = float(dropout_rate)

    @classmethod
    def init(cls, seed=0, dropout_rate=0.1):
        rng = make_rng(seed, 7)
        p = {
            "enc1.W": init_dense(rng, HIDDEN, CONTEXT_WIDTH),
            "enc1.b": np.zeros(HIDDEN),
            "enc2.W": init_dense(rng, HIDDEN, HIDDEN),
            "enc2.b": np.zeros(HIDDEN),
            "primary.W": init_dense(rng, HEAD_OUT, HIDDEN),
            "primary.b": np.zeros(HEAD_OUT),
            "aux.W": init_dense(rng, HEAD_OUT, HIDDEN),
            "aux.b": np.zeros(HEAD_OUT),
        }
        return cls(p, dropout_rate)

    @classmethod
    def zeros(cls, dropout_rate=0.1):
        m = cls.init(0, dropout_rate)
        for v in m.params.values():
            v[...] = 0.0
        return m

    def copy(self):
        return DualHeadModel({k: v.copy() for k, v in self.params.items()}, self.dropout_rate)

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def dumps(self) -> str:
        return dump_checkpoint("dual_head", self.params, {"dropout_rate": repr(self.dropout_rate)})

    @classmethod
    def loads(cls, text):
        kind, params, meta = load_checkpoint(text)
        if kind != "dual_head":
            raise ValueError(f"expected a dual_head checkpoint, got {kind!r}")
        return cls(params, float(meta.get("dropout_rate", 0.1)))


@dataclass(frozen=True, eq=False)
class HeadOutput:
    mu: np.ndarray  # (N, 2)
    log_b: np.ndarray  # (N, 2)
    logits: np.ndarray  # (N, C)

    @property
    def b(self):
        return np.exp(self.log_b)

    @property
    def scores(self):
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    primary: HeadOutput
    aux: HeadOutput
    cache: dict

    @property
    def anchor(self):
        return self.cache["anchor"]

    def location(self, head: HeadOutput):
        """Laplace location in normalized BEV coordinates."""
        return self.anchor + head.mu


def _split(out):
    return HeadOutput(out[:, 0:2], out[:, 2:4], out[:, 4:])


def forward(model: DualHeadModel, x, mode="eval", seed=None, rng=None, mask=None) -> ForwardResult:
    """Run both heads on context vectors ``x`` (N, 10).

    In ``train`` mode the auxiliary input is multiplied by a fresh Bernoulli
    keep-mask scaled by 1/(1-r) (drawn from ``rng`` or ``seed``; an explicit
    ``mask`` overrides both). ``eval`` disables dropout.
    """
    p = model.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p["enc1.W"].shape[1]:
        raise ValueError(f"context width mismatch: expected {p['enc1.W'].shape[1]}, got {x.shape}")
    for k, v in p.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite parameter {k}")
    h1 = np.tanh(x @ p["enc1.W"].T + p["enc1.b"])
    h2 = np.tanh(h1 @ p["enc2.W"].T + p["enc2.b"])
    r = model.dropout_rate
    if mode == "train" and (r > 0 or mask is not None):
        if mask is None:
            if rng is None:
                rng = np.random.default_rng(seed)
            mask = (rng.random(h1.shape) >= r).astype(np.float64)
        drop = mask / (1.0 - r)
    elif mode in ("train", "eval"):
        drop = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a = h1 if drop is None else h1 * drop
    out_p = h2 @ p["primary.W"].T + p["primary.b"]
    out_a = a @ p["aux.W"].T + p["aux.b"]
    cache = {"x": x, "anchor": context_anchor(x), "h1": h1, "h2": h2, "a": a, "drop": drop, "out_p": out_p, "out_a": out_a}
    return ForwardResult(_split(out_p), _split(out_a), cache)


@dataclass(frozen=True)
class LossParts:
    total: float
    regression: float
    classification: float


def laplace_nll(mu, log_b, target):
    """Per-element Laplace negative log-likelihood ``ln(2b) + |t - mu| / b``."""
    return LN2 + log_b + np.abs(target - mu) * np.exp(-log_b)


def cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return logz - z[np.arange(len(labels)), labels]


def _head_loss_grad(out, target, labels, weight, n, kink_mask):
    mu, log_b, logits = out[:, 0:2], out[:, 2:4], out[:, 4:]
    resid = target - mu
    inv_b = np.exp(-log_b)
    nll = LN2 + log_b + np.abs(resid) * inv_b
    keep = np.ones_like(nll) if kink_mask is None else (~kink_mask).astype(np.float64)
    reg = float(np.sum(nll * keep)) / n
    ce = cross_entropy(logits, labels)
    cls = float(np.sum(ce)) / n
    g = np.empty_like(out)
    g[:, 0:2] = -np.sign(resid) * inv_b * keep * (weight / n)
    g[:, 2:4] = (1.0 - np.abs(resid) * inv_b) * keep * (weight / n)
    z = logits - logits.max(axis=1, keepdims=True)
    sm = np.exp(z)
    sm /= sm.sum(axis=1, keepdims=True)
    sm[np.arange(len(labels)), labels] -= 1.0
    g[:, 4:] = sm / n
    return reg, cls, g


def _check_targets(targets, labels):
    targets = np.asarray(targets, dtype=np.float64)
    if np.any(np.isnan(targets)):
        raise ValueError("NaN in regression targets")
    return targets, np.asarray(labels, dtype=np.int64)


def loss(result: ForwardResult, targets, labels, regression_loss_weight=0.03, kink_mask=None) -> LossParts:
    """Mean-over-vertices loss of both heads.

    total = w * sum_heads LaplaceNLL + sum_heads CrossEntropy; the NLL sums
    the two axes of each vertex.
    """
    targets, labels = _check_targets(targets, labels)
    n = targets.shape[0]
    rel = targets - result.anchor
    rp, cp, _ = _head_loss_grad(result.cache["out_p"], rel, labels, regression_loss_weight, n, kink_mask)
    ra, ca, _ = _head_loss_grad(result.cache["out_a"], rel, labels, regression_loss_weight, n, kink_mask)
    reg, cls = rp + ra, cp + ca
    return LossParts(regression_loss_weight * reg + cls, reg, cls)


def loss_and_grad(model, x, targets, labels, regression_loss_weight=0.03, mode="eval", rng=None, mask=None, kink_mask=None):
    """Loss parts and gradients w.r.t. every parameter."""
    targets, labels = _check_targets(targets, labels)
    res = forward(model, x, mode=mode, rng=rng, mask=mask)
    c = res.cache
    p = model.params
    n = targets.shape[0]
    rel = targets - c["anchor"]
    rp, cp, gp = _head_loss_grad(c["out_p"], rel, labels, regression_loss_weight, n, kink_mask)
    ra, ca, ga = _head_loss_grad(c["out_a"], rel, labels, regression_loss_weight, n, kink_mask)
    grads = {
        "primary.W": gp.T @ c["h2"],
        "primary.b": gp.sum(axis=0),
        "aux.W": ga.T @ c["a"],
        "aux.b": ga.sum(axis=0),
    }
    dh2 = gp @ p["primary.W"]
    dz2 = dh2 * (1.0 - c["h2"] ** 2)
    grads["enc2.W"] = dz2.T @ c["h1"]
    grads["enc2.b"] = dz2.sum(axis=0)
    da = ga @ p["aux.W"]
    dh1 = dz2 @ p["enc2.W"] + (da if c["drop"] is None else da * c["drop"])
    dz1 = dh1 * (1.0 - c["h1"] ** 2)
    grads["enc1.W"] = dz1.T @ c["x"]
    grads["enc1.b"] = dz1.sum(axis=0)
    reg, cls = rp + ra, cp + ca
    parts = LossParts(regression_loss_weight * reg + cls, reg, cls)
    return parts, {k: grads[k] for k in p}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    total: float
    regression: float
    classification: float


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "total", "regression", "classification"])
    for row in trace:
        w.writerow([row.epoch, repr(row.total), repr(row.regression), repr(row.classification)])
    return buf.getvalue()


def training_arrays(observations):
    """Stack observation sets into ``(x, targets, labels)``."""
    if isinstance(observations, ObservationSet):
        observations = [observations]
    obs = ObservationSet.concatenate(observations)
    return obs.context, obs.targets, obs.true_class


def scheduled_lr(cfg, epoch):
    """Learning rate used during ``epoch`` (1-based)."""
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    if cfg.lr_schedule == "cosine":
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / max(cfg.epochs, 1)))
    raise ValueError(f"unknown lr_schedule {cfg.lr_schedule!r}")


def train(dataset, cfg: TrainConfig, model: DualHeadModel | None = None):
    """Mini-batch training with global gradient-norm clipping.

    ``dataset`` is an ``(x, targets, labels)`` triple or observation sets.
    Returns ``(model, trace)``; trace row 0 is the loss before training,
    every row is evaluated on the full dataset in eval mode.
    """
    if isinstance(dataset, tuple) and len(dataset) == 3 and isinstance(dataset[0], np.ndarray):
        x, t, y = dataset
    else:
        x, t, y = training_arrays(dataset)
    x = np.asarray(x, dtype=np.float64)
    t, y = _check_targets(t, y)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if model is None:
        model = DualHeadModel.init(cfg.seed, cfg.dropout_rate)
    else:
        model = model.copy()
        model.dropout_rate = cfg.dropout_rate
    rng = make_rng(cfg.seed, 11)
    opt = make_optimizer(cfg.optimizer, model.params, cfg.learning_rate)
    w = cfg.regression_loss_weight

    def evaluate(epoch):
        parts = loss(forward(model, x, "eval"), t, y, w)
        if not math.isfinite(parts.total):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}: {parts}")
        return TraceRow(epoch, parts.total, parts.regression, parts.classification)

    trace = [evaluate(0)]
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = scheduled_lr(cfg, epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            parts, grads = loss_and_grad(model, x[idx], t[idx], y[idx], w, mode="train", rng=rng)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"non-finite batch loss at epoch {epoch}, batch offset {start}")
            clip_by_global_norm(grads, cfg.grad_norm_clip)
            opt.step(model.params, grads)
        trace.append(evaluate(epoch))
    return model, trace


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


def _sw(w):
    return np.swapaxes(w, -1, -2)


def stacked_loss(stacked, x, targets, labels, regression_loss_weight=0.03, kink_mask=None):
    """Eval-mode total loss for a stack of parameter sets (leading copy axis).

    A plain re-implementation of ``forward`` + ``loss`` used as the
    finite-difference route of :func:`grad_check`.
    """
    P = stacked
    n = targets.shape[0]
    keep = 1.0 if kink_mask is None else (~kink_mask).astype(np.float64)
    rel = targets - context_anchor(x)
    h1 = np.tanh(x @ _sw(P["enc1.W"]) + P["enc1.b"][:, None, :])
    h2 = np.tanh(h1 @ _sw(P["enc2.W"]) + P["enc2.b"][:, None, :])
    total = 0.0
    for out in (
        h2 @ _sw(P["primary.W"]) + P["primary.b"][:, None, :],
        h1 @ _sw(P["aux.W"]) + P["aux.b"][:, None, :],
    ):
        mu, log_b, z = out[..., 0:2], out[..., 2:4], out[..., 4:]
        nll = (LN2 + log_b + np.abs(rel - mu) * np.exp(-log_b)) * keep
        zmax = z.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[..., 0]
        picked = np.take_along_axis(z, labels[None, :, None], axis=-1)[..., 0]
        total = total + regression_loss_weight * nll.sum(axis=(-1, -2)) / n + (lse - picked).sum(axis=-1) / n
    return total


def grad_check(model, sample, epsilon=1e-5, regression_loss_weight=0.03) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``sample`` is ``(x, targets, labels)``. Dropout is off. Regression terms
    whose residual lies within ``10 * epsilon`` of the |.| kink are masked
    out of the loss for both routes.
    """
    x, t, y = sample
    x = np.asarray(x, dtype=np.float64)
    t, y = _check_targets(t, y)
    res = forward(model, x, "eval")
    kink = np.abs(t - res.location(res.primary)) < 10 * epsilon
    kink |= np.abs(t - res.location(res.aux)) < 10 * epsilon
    _, grads = loss_and_grad(model, x, t, y, regression_loss_weight, kink_mask=kink)
    return finite_difference_check(
        lambda P: stacked_loss(P, x, t, y, regression_loss_weight, kink),
        model.params,
        grads,
        epsilon,
    )


# ---------------------------------------------------------------------------
# Uncertain map estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UncertainMapElement:
    """Fused element: primary positions (normalized), beta, c_bar, delta_c per vertex."""

    id: int
    cls: int
    vertex_index: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    c_bar: np.ndarray
    delta_c: np.ndarray

    @property
    def beta_mean(self) -> float:
        return float(self.beta.mean())

    @property
    def c_bar_mean(self) -> np.ndarray:
        return self.c_bar.mean(axis=0)

    @property
    def delta_c_mean(self) -> np.ndarray:
        return self.delta_c.mean(axis=0)


@dataclass(frozen=True, eq=False)
class VertexEstimates:
    """Flat per-vertex estimates in observation order."""

    element_ids: np.ndarray
    vertex_index: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    c_bar: np.ndarray
    delta_c: np.ndarray

    def __len__(self):
        return self.mu.shape[0]


def estimate_vertices(model: DualHeadModel, observations: ObservationSet) -> VertexEstimates:
    res = forward(model, observations.context, "eval")
    p, a = res.primary, res.aux
    beta = positional_uncertainty((p.mu, p.b), (a.mu, a.b))
    fused = semantic_fuse(p.scores, a.scores)
    return VertexEstimates(
        np.asarray(observations.element_ids),
        np.asarray(observations.vertex_index),
        res.location(p),
        beta,
        fused.c_bar,
        fused.delta_c,
    )


def estimate_uncertain_map(model, observations: ObservationSet, element_table) -> list:
    """Group per-vertex estimates by element id (order of first appearance)."""
    known = set(element_table)
    unknown = sorted(set(np.unique(observations.element_ids).tolist()) - known)
    if unknown:
        raise KeyError(f"observations reference unknown element ids {unknown}")
    v = estimate_vertices(model, observations)
    out = []
    _, first = np.unique(v.element_ids, return_index=True)
    for eid in v.element_ids[np.sort(first)]:
        sel = v.element_ids == eid
        c_bar = v.c_bar[sel]
        out.append(
            UncertainMapElement(
                int(eid),
                int(np.argmax(c_bar.mean(axis=0))),
                v.vertex_index[sel],
                v.mu[sel],
                v.beta[sel],
                c_bar,
                v.delta_c[sel],
            )
        )
    return out
