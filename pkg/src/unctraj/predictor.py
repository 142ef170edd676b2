"""Multimodal trajectory forecaster fed by uncertainty-augmented map tokens.

Every map vertex becomes an 11-wide token ``(mu[2], beta, c_bar[4],
delta_c[4])``. For each agent the tokens are moved into the agent frame
(origin at the last observed position, x axis along the recent heading),
cropped to a box of the perception-range size and re-normalized, then
embedded (affine + tanh, 11 -> 32) and max-pooled into a map context.

Decoder: ``z = tanh(A h + B ctx + c)`` with ``h`` the flattened agent-frame
history. Each of the K modes is a set of coefficients on a fixed polynomial
basis of per-step displacements; positions are the cumulative sum of the
steps, so every mode starts at the last observed position. A direct affine
path from ``h`` to the coefficients lets the model express constant-velocity
extrapolation without using the hidden layer.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .map_model import DT, FUTURE_LEN, HALF_EXTENT, HISTORY_LEN, NUM_CLASSES, denormalize_from_bev
from .nn import TrainingDiverged, clip_by_global_norm, dump_checkpoint, finite_difference_check, init_dense
from .nn import load_checkpoint, make_optimizer
from .seeding import make_rng

K_MODES = 6
TOKEN_WIDTH = 2 + 1 + NUM_CLASSES + NUM_CLASSES
EMBED = 32
HIDDEN = 32
N_BASIS = 4
POS_SCALE = 10.0  # meters, RMS of a unit basis coefficient
HIST_SCALE = 10.0  # meters
HEADING_LAG = 5
# The last history point is the agent-frame origin, so it is left out.
HIST_WIDTH = 2 * (HISTORY_LEN - 1)

BETA_COL = slice(2, 3)
DELTA_C_COL = slice(3 + NUM_CLASSES, TOKEN_WIDTH)

VARIANTS = {
    "baseline": (False, False),
    "pos_only": (True, False),
    "sem_only": (False, True),
    "both": (True, True),
}
VARIANT_ALIASES = {"no_uncertainty": "baseline", "with_uncertainty": "both"}


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS) + sorted(VARIANT_ALIASES)}")
    return name


def token_mask(variant: str) -> np.ndarray:
    """1 where a token column is visible to the model, 0 where it is zeroed."""
    use_pos, use_sem = VARIANTS[canonical_variant(variant)]
    m = np.ones(TOKEN_WIDTH)
    if not use_pos:
        m[BETA_COL] = 0.0
    if not use_sem:
        m[DELTA_C_COL] = 0.0
    return m


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MapToken:
    mu: np.ndarray
    beta: float
    c_bar: np.ndarray
    delta_c: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(2)
        c_bar = np.asarray(self.c_bar, dtype=np.float64).reshape(NUM_CLASSES)
        delta_c = np.asarray(self.delta_c, dtype=np.float64).reshape(NUM_CLASSES)
        if not np.all(np.isfinite(mu)):
            raise ValueError("token position must be finite")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        if np.any(c_bar < -1e-9) or abs(c_bar.sum() - 1.0) > 1e-6:
            raise ValueError("c_bar must lie on the simplex")
        if np.any(delta_c < 0) or np.any(delta_c > 1):
            raise ValueError("delta_c must lie in [0, 1]")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "c_bar", c_bar)
        object.__setattr__(self, "delta_c", delta_c)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.mu, [self.beta], self.c_bar, self.delta_c])


def token_array(tokens) -> np.ndarray:
    """(V, 11) array from MapTokens, vertex estimates or an array."""
    if hasattr(tokens, "beta") and hasattr(tokens, "delta_c") and not isinstance(tokens, MapToken):
        v = tokens
        return np.column_stack([v.mu, v.beta, v.c_bar, v.delta_c]).astype(np.float64)
    if isinstance(tokens, np.ndarray):
        arr = np.asarray(tokens, dtype=np.float64)
        return arr.reshape(-1, TOKEN_WIDTH)
    rows = [t.as_array() for t in tokens]
    return np.array(rows, dtype=np.float64).reshape(-1, TOKEN_WIDTH)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    modes: np.ndarray  # (K, 30, 2) meters, ego frame
    scores: np.ndarray  # (K,)

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if modes.shape != (K_MODES, FUTURE_LEN, 2):
            raise ValueError(f"modes must have shape {(K_MODES, FUTURE_LEN, 2)}, got {modes.shape}")
        if scores.shape != (K_MODES,):
            raise ValueError(f"scores must have shape ({K_MODES},)")
        if not np.all(np.isfinite(modes)):
            raise ValueError("non-finite mode coordinates")
        if np.any(scores < 0) or abs(scores.sum() - 1.0) > 1e-9:
            raise ValueError("scores must lie on the simplex")
        modes.flags.writeable = False
        scores.flags.writeable = False
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True, eq=False)
class AgentSample:
    """One training / evaluation item: ego-frame history, scene tokens, future."""

    history: np.ndarray
    tokens: np.ndarray
    future: np.ndarray | None = None
    scene_id: int = 0
    agent_id: int = 0


def agent_samples(scene, tokens) -> list:
    tok = token_array(tokens)
    return [
        AgentSample(ag.history.samples, tok, ag.future.samples, int(scene.seed), int(ag.id)) for ag in scene.agents
    ]


# ---------------------------------------------------------------------------
# Agent frame
# ---------------------------------------------------------------------------


def _check_history(history):
    h = np.asarray(history, dtype=np.float64)
    if h.shape != (HISTORY_LEN, 2):
        raise ValueError(f"history must be ({HISTORY_LEN}, 2), got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite history")
    return h


def agent_frame(history):
    """Origin and rotation ``R`` with ``local = (g - origin) @ R``."""
    origin = history[-1]
    d = history[-1] - history[-1 - HEADING_LAG]
    theta = math.atan2(d[1], d[0]) if np.hypot(*d) > 1e-6 else 0.0
    c, s = math.cos(theta), math.sin(theta)
    return origin, np.array([[c, -s], [s, c]])


def local_tokens(tokens, origin, rot):
    """Tokens moved into the agent frame and cropped to the perception-size box."""
    tok = np.asarray(tokens, dtype=np.float64)
    if tok.shape[0] == 0:
        return tok.reshape(0, TOKEN_WIDTH)
    local = (denormalize_from_bev(tok[:, 0:2]) - origin) @ rot
    h = np.asarray(HALF_EXTENT)
    inside = np.all(np.abs(local) <= h, axis=1)
    out = tok[inside].copy()
    out[:, 0:2] = 0.5 * (local[inside] / h + 1.0)
    return out


def _basis():
    """Orthonormalized cumulative polynomial basis, (T, D).

    Column d spans the positions produced by per-step displacements growing
    like tau**d; QR removes their strong collinearity. Columns are scaled to
    an RMS of ``POS_SCALE`` meters over the horizon so unit coefficients
    correspond to displacements of typical size.
    """
    tau = np.arange(1, FUTURE_LEN + 1) / FUTURE_LEN
    cum = np.cumsum(tau[:, None] ** np.arange(N_BASIS)[None, :], axis=0)
    q, r = np.linalg.qr(cum)
    q *= np.sign(np.diag(r))  # fix the sign convention
    return POS_SCALE * math.sqrt(FUTURE_LEN) * q


BASIS = _basis()
BASIS.flags.writeable = False

# Initial mode biases: constant-speed arcs (curvature 1/m, speed m/s) so
# that every mode starts out covering a different maneuver and can win
# some agents under the winner-takes-all loss.
ANCHOR_ARCS = ((0.0, 7.0), (0.04, 6.0), (-0.04, 6.0), (0.12, 5.0), (-0.12, 5.0), (0.0, 3.0))


def anchor_coefficients():
    t = np.arange(1, FUTURE_LEN + 1) * DT
    out = np.empty((K_MODES, N_BASIS, 2))
    for k, (kappa, speed) in enumerate(ANCHOR_ARCS):
        s = speed * t
        if kappa == 0.0:
            xy = np.column_stack([s, np.zeros_like(s)])
        else:
            xy = np.column_stack([np.sin(kappa * s) / kappa, (1.0 - np.cos(kappa * s)) / kappa])
        out[k] = np.linalg.lstsq(BASIS, xy, rcond=None)[0]
    return out


@dataclass(frozen=True, eq=False)
class AgentBatch:
    hist: np.ndarray  # (N, 38) agent-frame history / HIST_SCALE
    tokens: np.ndarray  # (M, 11) agent-frame tokens, concatenated
    offsets: np.ndarray  # (N + 1,)
    origin: np.ndarray  # (N, 2)
    rot: np.ndarray  # (N, 2, 2)
    future: np.ndarray | None  # (N, 30, 2) agent frame, or None

    def __len__(self):
        return self.hist.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        sizes = np.diff(self.offsets)[idx]
        parts = [self.tokens[self.offsets[i] : self.offsets[i + 1]] for i in idx]
        tokens = np.concatenate(parts) if parts else np.zeros((0, TOKEN_WIDTH))
        return AgentBatch(
            self.hist[idx],
            tokens,
            np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
            self.origin[idx],
            self.rot[idx],
            None if self.future is None else self.future[idx],
        )


def prepare(samples) -> AgentBatch:
    samples = list(samples)
    hist, toks, sizes, origins, rots, futs = [], [], [], [], [], []
    for s in samples:
        h = _check_history(s.history)
        origin, rot = agent_frame(h)
        hist.append(((h[:-1] - origin) @ rot).ravel() / HIST_SCALE)
        t = local_tokens(s.tokens, origin, rot)
        toks.append(t)
        sizes.append(t.shape[0])
        origins.append(origin)
        rots.append(rot)
        if s.future is not None:
            futs.append((np.asarray(s.future, dtype=np.float64) - origin) @ rot)
    n = len(samples)
    has_future = n > 0 and len(futs) == n
    return AgentBatch(
        np.array(hist).reshape(n, HIST_WIDTH),
        np.concatenate(toks) if toks else np.zeros((0, TOKEN_WIDTH)),
        np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        np.array(origins).reshape(n, 2),
        np.array(rots).reshape(n, 2, 2),
        np.array(futs).reshape(n, FUTURE_LEN, 2) if has_future else None,
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class PredictorModel:
    """Parameters plus the fixed token standardization and variant mask."""

    def __init__(self, params, token_mean=None, token_std=None, variant="both"):
        self.params = params
        self.token_mean = np.zeros(TOKEN_WIDTH) if token_mean is None else np.asarray(token_mean, dtype=np.float64)
        self.token_std = np.ones(TOKEN_WIDTH) if token_std is None else np.asarray(token_std, dtype=np.float64)
        self.variant = canonical_variant(variant)

    @property
    def mask(self):
        return token_mask(self.variant)

    @classmethod
    def init(cls, seed=0, variant="both", token_mean=None, token_std=None):
        rng = make_rng(seed, 13)
        n_coef = K_MODES * N_BASIS * 2
        p = {
            "embed.W": init_dense(rng, EMBED, TOKEN_WIDTH),
            "embed.b": np.zeros(EMBED),
            "hist.W": init_dense(rng, HIDDEN, HIST_WIDTH),
            "ctx.W": init_dense(rng, HIDDEN, EMBED),
            "hidden.b": np.zeros(HIDDEN),
            "coef.W": 0.1 * init_dense(rng, n_coef, HIDDEN),
            "skip.W": 0.1 * init_dense(rng, n_coef, HIST_WIDTH),
            "coef.b": anchor_coefficients().reshape(n_coef),
            "score.W": 0.1 * init_dense(rng, K_MODES, HIDDEN),
            "score.b": np.zeros(K_MODES),
        }
        return cls(p, token_mean, token_std, variant)

    @classmethod
    def zeros(cls, variant="both"):
        m = cls.init(0, variant)
        for v in m.params.values():
            v[...] = 0.0
        return m

    def copy(self):
        return PredictorModel(
            {k: v.copy() for k, v in self.params.items()}, self.token_mean.copy(), self.token_std.copy(), self.variant
        )

    def dumps(self) -> str:
        meta = {
            "variant": self.variant,
            "token_mean": ",".join(format(v, ".17g") for v in self.token_mean),
            "token_std": ",".join(format(v, ".17g") for v in self.token_std),
        }
        return dump_checkpoint("predictor", self.params, meta)

    @classmethod
    def loads(cls, text):
        kind, params, meta = load_checkpoint(text)
        if kind != "predictor":
            raise ValueError(f"expected a predictor checkpoint, got {kind!r}")
        mean = np.array([float(v) for v in meta["token_mean"].split(",")])
        std = np.array([float(v) for v in meta["token_std"].split(",")])
        return cls(params, mean, std, meta["variant"])


def _model_tokens(model, tokens):
    return (tokens - model.token_mean) / model.token_std * model.mask


def encode_map(model: PredictorModel, tokens) -> np.ndarray:
    """Order-invariant context vector (width 32) of one token set.

    Tokens are used as given (no agent-frame transform). An empty set maps
    to the all-zero context.
    """
    tok = token_array(tokens)
    if tok.shape[0] == 0:
        return np.zeros(EMBED)
    x = _model_tokens(model, tok)
    emb = np.tanh(x @ model.params["embed.W"].T + model.params["embed.b"])
    return emb.max(axis=0)


@dataclass(frozen=True, eq=False)
class _Cache:
    x: np.ndarray
    emb: np.ndarray
    arg: np.ndarray
    ctx: np.ndarray
    z: np.ndarray


def _forward(model, batch: AgentBatch):
    P = model.params
    x = _model_tokens(model, batch.tokens)
    emb = np.tanh(x @ P["embed.W"].T + P["embed.b"])
    ctx, arg = kernels.segment_max(emb, batch.offsets)
    z = np.tanh(batch.hist @ P["hist.W"].T + ctx @ P["ctx.W"].T + P["hidden.b"])
    coef = z @ P["coef.W"].T + batch.hist @ P["skip.W"].T + P["coef.b"]
    coef = coef.reshape(-1, K_MODES, N_BASIS, 2)
    local = np.einsum("td,nkdc->nktc", BASIS, coef)
    logits = z @ P["score.W"].T + P["score.b"]
    return local, logits, _Cache(x, emb, arg, ctx, z)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _to_ego(local, batch):
    # local rows -> ego: g = origin + local @ R^T
    return np.einsum("nktc,njc->nktj", local, batch.rot) + batch.origin[:, None, None, :]


def predict_batch(model: PredictorModel, batch: AgentBatch):
    """Ego-frame modes (N, K, 30, 2) and scores (N, K)."""
    local, logits, _ = _forward(model, batch)
    return _to_ego(local, batch), _softmax(logits)


def predict(model: PredictorModel, history, tokens) -> PredictionSet:
    h = _check_history(history)
    modes, scores = predict_batch(model, prepare([AgentSample(h, token_array(tokens))]))
    return PredictionSet(modes[0], scores[0])


# ---------------------------------------------------------------------------
# Constant-velocity baseline
# ---------------------------------------------------------------------------

CV_HEADING_OFFSETS_DEG = (0.0, 10.0, -10.0, 20.0, -20.0, 0.0)
CV_SPEED_FACTORS = (1.0, 1.0, 1.0, 1.0, 1.0, 0.8)


def constant_velocity_baseline(history) -> PredictionSet:
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] != 2:
        raise ValueError("need at least 2 history points")
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite history")
    v = h[-1] - h[-2]
    steps = np.arange(1, FUTURE_LEN + 1)[:, None]
    modes = np.empty((K_MODES, FUTURE_LEN, 2))
    for k, (deg, f) in enumerate(zip(CV_HEADING_OFFSETS_DEG, CV_SPEED_FACTORS)):
        c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
        vk = f * np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
        modes[k] = h[-1] + steps * vk
    return PredictionSet(modes, np.full(K_MODES, 1.0 / K_MODES))


# ---------------------------------------------------------------------------
# Winner-takes-all loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredLoss:
    total: float
    regression: float
    classification: float


def _wta_terms(local, logits, future):
    err = local - future[:, None]
    dist = np.sqrt(np.sum(err * err, axis=-1))  # (N, K, T)
    se = dist.mean(axis=-1)  # (N, K) per-mode ADE
    best = np.argmin(se, axis=1)
    rows = np.arange(se.shape[0])
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    ce = lse - z[rows, best]
    return err, dist, se, best, ce


def mode_weights(best, relax=0.0):
    """Regression weight per mode: ``1 - relax`` on the winner, the rest shared.

    ``relax = 0`` is plain winner-takes-all. A small positive value keeps
    losing modes drifting toward the data so none of them stays dead.
    """
    n = best.shape[0]
    w = np.full((n, K_MODES), relax / (K_MODES - 1))
    w[np.arange(n), best] = 1.0 - relax
    return w


def wta_loss(model, batch: AgentBatch, agent_mask=None, relax=0.0) -> PredLoss:
    local, logits, _ = _forward(model, batch)
    _, _, se, best, ce = _wta_terms(local, logits, batch.future)
    keep = np.ones(len(batch)) if agent_mask is None else np.asarray(agent_mask, dtype=np.float64)
    n = len(batch)
    reg = float(np.sum(np.sum(se * mode_weights(best, relax), axis=1) * keep) / n)
    cls = float(np.sum(ce * keep) / n)
    return PredLoss(reg + cls, reg, cls)


def loss_and_grad(model, batch: AgentBatch, agent_mask=None, relax=0.0):
    P = model.params
    local, logits, c = _forward(model, batch)
    err, dist, se, best, ce = _wta_terms(local, logits, batch.future)
    n = len(batch)
    rows = np.arange(n)
    keep = np.ones(n) if agent_mask is None else np.asarray(agent_mask, dtype=np.float64)
    w = mode_weights(best, relax)
    reg = float(np.sum(np.sum(se * w, axis=1) * keep) / n)
    cls = float(np.sum(ce * keep) / n)

    unit = err / np.maximum(dist, 1e-300)[..., None]
    d_local = unit * (w * (keep / (n * FUTURE_LEN))[:, None])[:, :, None, None]
    d_coef = np.einsum("td,nktc->nkdc", BASIS, d_local).reshape(n, -1)
    d_logits = _softmax(logits)
    d_logits[rows, best] -= 1.0
    d_logits *= (keep / n)[:, None]

    g = {
        "coef.W": d_coef.T @ c.z,
        "skip.W": d_coef.T @ batch.hist,
        "coef.b": d_coef.sum(axis=0),
        "score.W": d_logits.T @ c.z,
        "score.b": d_logits.sum(axis=0),
    }
    d_z = d_coef @ P["coef.W"] + d_logits @ P["score.W"]
    d_pre = d_z * (1.0 - c.z**2)
    g["hist.W"] = d_pre.T @ batch.hist
    g["ctx.W"] = d_pre.T @ c.ctx
    g["hidden.b"] = d_pre.sum(axis=0)
    d_ctx = d_pre @ P["ctx.W"]
    d_emb = kernels.segment_max_backward(d_ctx, c.arg, c.emb.shape[0])
    d_pre_e = d_emb * (1.0 - c.emb**2)
    g["embed.W"] = d_pre_e.T @ c.x
    g["embed.b"] = d_pre_e.sum(axis=0)
    return PredLoss(reg + cls, reg, cls), {k: g[k] for k in P}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictorConfig:
    learning_rate: float = 3.0e-3
    grad_norm_clip: float = 3.0
    epochs: int = 40
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    lr_schedule: str = "cosine"
    variant: str = "both"
    wta_relax: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.wta_relax < 1.0:
            raise ValueError("wta_relax must lie in [0, 1)")
        if self.learning_rate < 0 or self.grad_norm_clip <= 0:
            raise ValueError("learning_rate must be >= 0 and grad_norm_clip > 0")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")
        object.__setattr__(self, "variant", canonical_variant(self.variant))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class PredTraceRow:
    epoch: int
    total: float
    regression: float
    classification: float


def pred_trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "total", "regression", "classification"])
    for r in trace:
        w.writerow([r.epoch, repr(r.total), repr(r.regression), repr(r.classification)])
    return buf.getvalue()


def token_statistics(batch: AgentBatch):
    """Column mean / std of agent-frame tokens (std floored at 1e-6)."""
    if batch.tokens.shape[0] == 0:
        return np.zeros(TOKEN_WIDTH), np.ones(TOKEN_WIDTH)
    return batch.tokens.mean(axis=0), np.maximum(batch.tokens.std(axis=0), 1e-6)


def _lr_at(cfg, epoch):
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    if cfg.lr_schedule == "cosine":
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / max(cfg.epochs, 1)))
    raise ValueError(f"unknown lr_schedule {cfg.lr_schedule!r}")


def train_predictor(dataset, cfg: PredictorConfig, model: PredictorModel | None = None):
    """Winner-takes-all training. ``dataset``: AgentSamples or a prepared batch.

    Token standardization is fitted on the training tokens (all 11 columns,
    so it does not depend on the variant); the variant mask is applied after
    it. Returns ``(model, trace)`` with trace row 0 taken before training.
    """
    batch = dataset if isinstance(dataset, AgentBatch) else prepare(dataset)
    if len(batch) == 0:
        raise ValueError("empty training set")
    if batch.future is None:
        raise ValueError("training samples need futures")
    if model is None:
        mean, std = token_statistics(batch)
        model = PredictorModel.init(cfg.seed, cfg.variant, mean, std)
    else:
        model = model.copy()
        model.variant = cfg.variant
    rng = make_rng(cfg.seed, 17)
    opt = make_optimizer(cfg.optimizer, model.params, cfg.learning_rate)

    def evaluate(epoch):
        parts = wta_loss(model, batch, relax=cfg.wta_relax)
        if not math.isfinite(parts.total):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}: {parts}")
        return PredTraceRow(epoch, parts.total, parts.regression, parts.classification)

    trace = [evaluate(0)]
    n = len(batch)
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = _lr_at(cfg, epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            sub = batch.subset(order[start : start + cfg.batch_size])
            parts, grads = loss_and_grad(model, sub, relax=cfg.wta_relax)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"non-finite batch loss at epoch {epoch}, batch offset {start}")
            clip_by_global_norm(grads, cfg.grad_norm_clip)
            opt.step(model.params, grads)
        trace.append(evaluate(epoch))
    return model, trace


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


def stacked_loss(stacked, model, batch: AgentBatch, agent_mask, relax=0.0):
    """Total WTA loss for a stack of parameter sets, written independently
    of the training path (per-segment loops, no shared kernels).

    Evaluated in extended precision: the squared-error term is large next to
    the gradients of weakly coupled weights, and float64 roundoff in the
    central difference would otherwise dominate.
    """
    ld = np.longdouble
    P = {k: np.asarray(v, dtype=ld) for k, v in stacked.items()}
    x = _model_tokens(model, batch.tokens).astype(ld)
    hist = batch.hist.astype(ld)
    basis = BASIS.astype(ld)
    emb = np.tanh(np.einsum("mi,sji->smj", x, P["embed.W"]) + P["embed.b"][:, None, :])
    s_count = emb.shape[0]
    n = len(batch)
    ctx = np.zeros((s_count, n, EMBED), dtype=ld)
    for i in range(n):
        lo, hi = batch.offsets[i], batch.offsets[i + 1]
        if hi > lo:
            ctx[:, i] = emb[:, lo:hi].max(axis=1)
    z = np.tanh(
        np.einsum("ni,sji->snj", hist, P["hist.W"])
        + np.einsum("sni,sji->snj", ctx, P["ctx.W"])
        + P["hidden.b"][:, None, :]
    )
    coef = (
        np.einsum("sni,sji->snj", z, P["coef.W"])
        + np.einsum("ni,sji->snj", hist, P["skip.W"])
        + P["coef.b"][:, None, :]
    ).reshape(-1, n, K_MODES, N_BASIS, 2)
    local = np.einsum("td,snkdc->snktc", basis, coef)
    err = local - batch.future.astype(ld)[None, :, None]
    se = np.mean(np.sqrt(np.sum(err**2, axis=-1)), axis=-1)  # (S, N, K)
    logits = np.einsum("sni,sji->snj", z, P["score.W"]) + P["score.b"][:, None, :]
    best = np.argmin(se, axis=-1)
    m = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=-1)) + m[..., 0]
    picked_se = np.take_along_axis(se, best[..., None], axis=-1)[..., 0]
    reg = (1 - relax) * picked_se + relax / (K_MODES - 1) * (se.sum(axis=-1) - picked_se)
    picked_logit = np.take_along_axis(logits, best[..., None], axis=-1)[..., 0]
    keep = np.asarray(agent_mask, dtype=ld)
    return ((reg + lse - picked_logit) * keep).sum(axis=-1) / n


def kink_mask(model, batch: AgentBatch, tol=1e-4, relax=0.0):
    """Agents away from a winner switch, a zero step distance or a max-pool
    tie (True = keep)."""
    local, logits, c = _forward(model, batch)
    _, dist, se, best, _ = _wta_terms(local, logits, batch.future)
    srt = np.sort(se, axis=1)
    keep = (srt[:, 1] - srt[:, 0]) > tol
    if relax > 0:
        keep &= dist.min(axis=(1, 2)) > tol
    else:
        keep &= dist[np.arange(len(batch)), best].min(axis=1) > tol
    for i in range(len(batch)):
        lo, hi = batch.offsets[i], batch.offsets[i + 1]
        if hi - lo >= 2:
            top = np.sort(c.emb[lo:hi], axis=0)[-2:]
            if np.any(top[1] - top[0] < tol):
                keep[i] = False
    return keep


def grad_check(model: PredictorModel, sample, epsilon=1e-5, relax=0.0) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``sample`` is a prepared batch or AgentSamples with futures. Agents near
    a kink (see :func:`kink_mask`) are masked out of both routes.
    """
    batch = sample if isinstance(sample, AgentBatch) else prepare(sample)
    keep = kink_mask(model, batch, relax=relax)
    _, grads = loss_and_grad(model, batch, keep, relax)
    return finite_difference_check(
        lambda P: stacked_loss(P, model, batch, keep, relax), model.params, grads, epsilon
    )


# ---------------------------------------------------------------------------
# Prediction dump
# ---------------------------------------------------------------------------


def predictions_to_csv(rows) -> str:
    """``rows``: iterable of ``(scene_id, agent_id, PredictionSet)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scene_id", "agent_id", "mode", "step", "x", "y", "score"])
    for scene_id, agent_id, ps in rows:
        for k in range(K_MODES):
            score = repr(float(ps.scores[k]))
            for t in range(FUTURE_LEN):
                w.writerow([scene_id, agent_id, k, t + 1, repr(float(ps.modes[k, t, 0])), repr(float(ps.modes[k, t, 1])), score])
    return buf.getvalue()
