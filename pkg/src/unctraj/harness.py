"""Experiment orchestration: data, map stage, predictor stage, ablation, render, verify.

Directory layout under ``out_dir``::

    data/{train,val,test}.scenes   scene documents with observation records
    data/manifest.json             per-file sha256, counts, config hash
    map/model.ckpt, map/trace.csv
    estimates/{split}.csv          per-vertex mu, beta, c_bar, delta_c
    pred/{variant}.ckpt, pred/{variant}_trace.csv
    eval/{variant}_metrics.{csv,json}, eval/{variant}_predictions.csv
    ablation.csv

All randomness comes from ``master_seed`` via :mod:`unctraj.seeding`; the
``seed`` fields of the nested configs are overwritten with derived seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dual_head import DualHeadModel, TrainConfig, VertexEstimates, estimate_uncertain_map, estimate_vertices
from .dual_head import trace_to_csv, train
from .map_model import NUM_CLASSES
from .metrics import MetricReport, evaluate, reports_to_csv, report_to_json
from .noise_sim import LAYOUTS, NoiseConfig, ObservationSet, corrupt_observation, generate_scene, uniform_confusion
from .predictor import AgentSample, PredictionSet, PredictorConfig, PredictorModel, VARIANTS, constant_velocity_baseline
from .predictor import pred_trace_to_csv, predict_batch, predictions_to_csv, prepare, token_array, train_predictor
from .render import render_svg
from .scene_io import emit_scenes, parse_scenes
from .seeding import stage_seed

SPLITS = ("train", "val", "test")
ABLATION_ROWS = (("baseline", False, False), ("pos_only", True, False), ("sem_only", False, True), ("both", True, True))


class ConfigError(ValueError):
    pass


def _default_noise():
    return NoiseConfig(pos_scale_b=0.3, confusion=uniform_confusion(0.2))


def _default_map_train():
    return TrainConfig(learning_rate=3e-3, epochs=60, batch_size=128, optimizer="adam", lr_schedule="cosine")


def _default_pred_train():
    return PredictorConfig(learning_rate=3e-3, epochs=40, batch_size=128, wta_relax=0.05)


@dataclass(frozen=True)
class ExperimentConfig:
    layouts: tuple = LAYOUTS
    n_train: int = 400
    n_val: int = 40
    n_test: int = 150
    noise: NoiseConfig = field(default_factory=_default_noise)
    map_train: TrainConfig = field(default_factory=_default_map_train)
    pred_train: PredictorConfig = field(default_factory=_default_pred_train)
    unc_pos: bool = True
    unc_sem: bool = True
    out_dir: str = "run"
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layouts", tuple(self.layouts))
        errors = []
        if not self.layouts:
            errors.append("layouts: must name at least one layout")
        for lay in self.layouts:
            if lay not in LAYOUTS:
                errors.append(f"layouts: unknown layout {lay!r}")
        for name in ("n_train", "n_val", "n_test"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                errors.append(f"{name}: scene count must be a positive integer, got {v!r}")
        if not isinstance(self.master_seed, (int, np.integer)) or self.master_seed < 0:
            errors.append(f"master_seed: must be a non-negative integer, got {self.master_seed!r}")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def variant(self) -> str:
        for name, pos, sem in ABLATION_ROWS:
            if (pos, sem) == (bool(self.unc_pos), bool(self.unc_sem)):
                return name
        raise AssertionError("unreachable")

    def counts(self):
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}

    def to_dict(self) -> dict:
        return {
            "layouts": list(self.layouts),
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "noise": self.noise.to_dict(),
            "map_train": self.map_train.to_dict(),
            "pred_train": self.pred_train.to_dict(),
            "unc_pos": self.unc_pos,
            "unc_sem": self.unc_sem,
            "out_dir": self.out_dir,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        try:
            if "noise" in d and isinstance(d["noise"], dict):
                d["noise"] = NoiseConfig.from_dict(d["noise"])
            if "map_train" in d and isinstance(d["map_train"], dict):
                d["map_train"] = TrainConfig.from_dict({**_default_map_train().to_dict(), **d["map_train"]})
            if "pred_train" in d and isinstance(d["pred_train"], dict):
                d["pred_train"] = PredictorConfig.from_dict({**_default_pred_train().to_dict(), **d["pred_train"]})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def hash(self) -> str:
        """sha256 of the canonical JSON, ignoring ``out_dir``."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    # Derived seeds --------------------------------------------------------

    def scene_seed(self, split: str, index: int) -> int:
        return stage_seed(self.master_seed, "data", SPLITS.index(split), index)

    def noise_config(self) -> NoiseConfig:
        return dataclasses.replace(self.noise, seed=stage_seed(self.master_seed, "noise"))

    def map_config(self) -> TrainConfig:
        return dataclasses.replace(self.map_train, seed=stage_seed(self.master_seed, "map_train"))

    def pred_config(self, variant: str | None = None) -> PredictorConfig:
        return dataclasses.replace(
            self.pred_train, seed=stage_seed(self.master_seed, "pred_train"), variant=variant or self.variant
        )


# ---------------------------------------------------------------------------
# Paths and files
# ---------------------------------------------------------------------------


def _path(cfg, *parts):
    return os.path.join(cfg.out_dir, *parts)


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def generate_split(cfg: ExperimentConfig, split: str):
    noise = cfg.noise_config()
    out = []
    for i in range(cfg.counts()[split]):
        scene = generate_scene(cfg.layouts[i % len(cfg.layouts)], cfg.scene_seed(split, i))
        out.append((scene, corrupt_observation(scene, noise)))
    return out


def cmd_gen_data(cfg: ExperimentConfig) -> dict:
    files = {}
    for split in SPLITS:
        path = _write(_path(cfg, "data", f"{split}.scenes"), emit_scenes(generate_split(cfg, split)))
        files[f"{split}.scenes"] = sha256_file(path)
    manifest = {
        "toolkit_version": __version__,
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "counts": cfg.counts(),
        "files": files,
    }
    _write(_path(cfg, "data", "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(cfg) -> dict:
    path = _path(cfg, "data", "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no dataset at {os.path.dirname(path)!r}; run gen-data first")
    return json.loads(_read(path))


def data_checksum(manifest) -> str:
    joined = "".join(f"{k}:{v}\n" for k, v in sorted(manifest["files"].items()))
    return hashlib.sha256(joined.encode()).hexdigest()


def load_split(cfg, split):
    manifest = load_manifest(cfg)
    path = _path(cfg, "data", f"{split}.scenes")
    if sha256_file(path) != manifest["files"][f"{split}.scenes"]:
        raise ValueError(f"{path}: checksum does not match the manifest")
    return parse_scenes(_read(path))


# ---------------------------------------------------------------------------
# Map stage
# ---------------------------------------------------------------------------


def train_map_stage(cfg, train_items):
    return train([obs for _, obs in train_items], cfg.map_config())


def cmd_train_map(cfg: ExperimentConfig):
    model, trace = train_map_stage(cfg, load_split(cfg, "train"))
    _write(_path(cfg, "map", "model.ckpt"), model.dumps())
    _write(_path(cfg, "map", "trace.csv"), trace_to_csv(trace))
    return model, trace


def load_map_model(cfg) -> DualHeadModel:
    path = _path(cfg, "map", "model.ckpt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} missing; run train-map first")
    return DualHeadModel.loads(_read(path))


ESTIMATE_HEADER = (
    ["scene_seed", "element_id", "vertex_index", "mu_u", "mu_v", "beta"]
    + [f"c_bar{i}" for i in range(NUM_CLASSES)]
    + [f"delta_c{i}" for i in range(NUM_CLASSES)]
)


def estimates_to_csv(rows) -> str:
    """``rows``: iterable of ``(scene_seed, VertexEstimates)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_HEADER)
    for seed, v in rows:
        for i in range(len(v)):
            vals = [v.mu[i, 0], v.mu[i, 1], v.beta[i], *v.c_bar[i], *v.delta_c[i]]
            w.writerow([seed, int(v.element_ids[i]), int(v.vertex_index[i])] + [repr(float(x)) for x in vals])
    return buf.getvalue()


def estimates_from_csv(text) -> dict:
    """scene_seed -> VertexEstimates."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ESTIMATE_HEADER:
        raise ValueError("not an estimates table")
    by_scene = {}
    for r in rows[1:]:
        by_scene.setdefault(int(r[0]), []).append(r)
    out = {}
    for seed, rs in by_scene.items():
        ints = np.array([[int(r[1]), int(r[2])] for r in rs], dtype=np.int64)
        vals = np.array([[float(x) for x in r[3:]] for r in rs])
        c = NUM_CLASSES
        out[seed] = VertexEstimates(ints[:, 0], ints[:, 1], vals[:, 0:2], vals[:, 2], vals[:, 3 : 3 + c], vals[:, 3 + c :])
    return out


def estimate_split(model, items) -> dict:
    empty = VertexEstimates(
        np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros(0),
        np.zeros((0, NUM_CLASSES)), np.zeros((0, NUM_CLASSES)),
    )
    return {
        int(scene.seed): (estimate_vertices(model, obs) if obs is not None and len(obs) else empty)
        for scene, obs in items
    }


def cmd_estimate(cfg: ExperimentConfig, model=None) -> dict:
    model = model or load_map_model(cfg)
    out = {}
    for split in SPLITS:
        est = estimate_split(model, load_split(cfg, split))
        _write(_path(cfg, "estimates", f"{split}.csv"), estimates_to_csv(est.items()))
        out[split] = est
    return out


def load_estimates(cfg, split) -> dict:
    path = _path(cfg, "estimates", f"{split}.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} missing; run estimate first")
    return estimates_from_csv(_read(path))


# ---------------------------------------------------------------------------
# Predictor stage
# ---------------------------------------------------------------------------


def samples_for(items, estimates) -> list:
    out = []
    for scene, _ in items:
        tok = token_array(estimates[int(scene.seed)])
        for ag in scene.agents:
            out.append(AgentSample(ag.history.samples, tok, ag.future.samples, int(scene.seed), int(ag.id)))
    return out


def cmd_train_pred(cfg: ExperimentConfig, variant=None, train_batch=None):
    variant = variant or cfg.variant
    if train_batch is None:
        train_batch = prepare(samples_for(load_split(cfg, "train"), load_estimates(cfg, "train")))
    model, trace = train_predictor(train_batch, cfg.pred_config(variant))
    _write(_path(cfg, "pred", f"{variant}.ckpt"), model.dumps())
    _write(_path(cfg, "pred", f"{variant}_trace.csv"), pred_trace_to_csv(trace))
    return model, trace


def load_predictor(cfg, variant) -> PredictorModel:
    path = _path(cfg, "pred", f"{variant}.ckpt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} missing; run train-pred first")
    return PredictorModel.loads(_read(path))


def _ego_future(batch):
    return np.einsum("ntc,njc->ntj", batch.future, batch.rot) + batch.origin[:, None, :]


def evaluate_predictor(model, samples, batch=None):
    batch = batch if batch is not None else prepare(samples)
    modes, scores = predict_batch(model, batch)
    return evaluate(modes, _ego_future(batch)), modes, scores


def cmd_eval(cfg: ExperimentConfig, variant=None, model=None) -> MetricReport:
    variant = variant or cfg.variant
    model = model or load_predictor(cfg, variant)
    samples = samples_for(load_split(cfg, "test"), load_estimates(cfg, "test"))
    report, modes, scores = evaluate_predictor(model, samples)
    rows = [(s.scene_id, s.agent_id, PredictionSet(m, p)) for s, m, p in zip(samples, modes, scores)]
    _write(_path(cfg, "eval", f"{variant}_predictions.csv"), predictions_to_csv(rows))
    _write(_path(cfg, "eval", f"{variant}_metrics.csv"), reports_to_csv([(variant, report)]))
    _write(_path(cfg, "eval", f"{variant}_metrics.json"), report_to_json(report))
    return report


def constant_velocity_report(samples) -> MetricReport:
    modes = np.array([constant_velocity_baseline(s.history).modes for s in samples])
    return evaluate(modes, np.array([s.future for s in samples]))


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------


def provenance_block(cfg, manifest) -> str:
    return (
        "# provenance\n"
        f"# config_hash: {cfg.hash()}\n"
        f"# data_checksum: {data_checksum(manifest)}\n"
        f"# toolkit_version: {__version__}\n"
        f"# master_seed: {cfg.master_seed}\n"
    )


def ablation_to_csv(cfg, manifest, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "unc_pos", "unc_sem", "min_ade", "min_fde", "miss_rate", "n_agents"])
    for name, pos, sem, r in results:
        w.writerow([name, int(pos), int(sem), repr(r.min_ade), repr(r.min_fde), repr(r.miss_rate), r.n_agents])
    return provenance_block(cfg, manifest) + buf.getvalue()


def parse_ablation_csv(text) -> dict:
    """row name -> MetricReport; provenance lines become ``meta``."""
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            if ":" in line:
                k, v = line[1:].split(":", 1)
                meta[k.strip()] = v.strip()
        else:
            body.append(line)
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    reports = {
        r["row"]: MetricReport(float(r["min_ade"]), float(r["min_fde"]), float(r["miss_rate"]), int(r["n_agents"]))
        for r in rows
    }
    return {"meta": meta, "rows": reports}


def cmd_run_ablation(cfg: ExperimentConfig, rows=ABLATION_ROWS, log=None) -> str:
    """Train and evaluate the four variants on identical data and seeds.

    Uses the dataset under ``out_dir`` (which must exist); the map stage is
    rerun from its derived seed so the table depends only on the config.
    """
    manifest = load_manifest(cfg)
    items = {split: load_split(cfg, split) for split in ("train", "test")}
    map_model, map_trace = train_map_stage(cfg, items["train"])
    _write(_path(cfg, "map", "model.ckpt"), map_model.dumps())
    _write(_path(cfg, "map", "trace.csv"), trace_to_csv(map_trace))
    est = {split: estimate_split(map_model, items[split]) for split in items}
    train_batch = prepare(samples_for(items["train"], est["train"]))
    test_batch = prepare(samples_for(items["test"], est["test"]))
    results = []
    for name, pos, sem in rows:
        model, trace = train_predictor(train_batch, cfg.pred_config(name))
        _write(_path(cfg, "pred", f"{name}.ckpt"), model.dumps())
        _write(_path(cfg, "pred", f"{name}_trace.csv"), pred_trace_to_csv(trace))
        report, _, _ = evaluate_predictor(model, None, test_batch)
        if log:
            log(f"{name}: minADE {report.min_ade:.4f} minFDE {report.min_fde:.4f} MR {report.miss_rate:.4f}")
        results.append((name, pos, sem, report))
    text = ablation_to_csv(cfg, manifest, results)
    _write(_path(cfg, "ablation.csv"), text)
    return text


# ---------------------------------------------------------------------------
# Render
# ---------------------------------------------------------------------------


def cmd_render(cfg: ExperimentConfig, split="test", index=0, variant=None, path=None) -> str:
    items = load_split(cfg, split)
    if not 0 <= index < len(items):
        raise IndexError(f"scene index {index} out of range for split {split!r} ({len(items)} scenes)")
    scene, obs = items[index]
    map_model = load_map_model(cfg)
    elements = estimate_uncertain_map(map_model, obs, scene.element_table()) if obs is not None else []
    preds = {}
    variant = variant or cfg.variant
    if os.path.exists(_path(cfg, "pred", f"{variant}.ckpt")):
        model = load_predictor(cfg, variant)
        tok = token_array(estimate_vertices(map_model, obs)) if obs is not None else np.zeros((0, 11))
        samples = [AgentSample(a.history.samples, tok, None, int(scene.seed), a.id) for a in scene.agents]
        if samples:
            modes, scores = predict_batch(model, prepare(samples))
            preds = {s.agent_id: PredictionSet(m, p) for s, m, p in zip(samples, modes, scores)}
    svg = render_svg(scene, elements, preds)
    _write(path or _path(cfg, "render", f"{split}_{index}.svg"), svg)
    return svg


# ---------------------------------------------------------------------------
# Verify
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: str
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.6g} (tolerance {self.tolerance})"


def laplace_kl_by_quadrature(mu1, b1, mu2, b2) -> float:
    """Numerical KL via adaptive quadrature on both sides of the two kinks."""
    from scipy.integrate import quad

    def integrand(x):
        lp = -math.log(2 * b1) - abs(x - mu1) / b1
        lq = -math.log(2 * b2) - abs(x - mu2) / b2
        return math.exp(lp) * (lp - lq)

    lo, hi = sorted((mu1, mu2))
    span = 60.0 * max(b1, b2)
    total = 0.0
    for a, b in ((lo - span, lo), (lo, hi), (hi, hi + span)):
        if b > a:
            total += quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return total


def kl_oracle_pairs(seed, n=200):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-3.0, 3.0, size=(n, 2))
    b = np.exp(rng.uniform(math.log(0.1), math.log(5.0), size=(n, 2)))
    return mu, b


def run_verify(seed=0, inject_kl_sign_bug=False) -> list:
    from .uncertainty import laplace_kl, semantic_fuse, verify_proportionality
    from . import dual_head, metrics, predictor

    kl = laplace_kl if not inject_kl_sign_bug else (lambda *a: -laplace_kl(*a))
    results = []

    mu, b = kl_oracle_pairs(seed)
    err = max(
        abs(kl(mu[i, 0], b[i, 0], mu[i, 1], b[i, 1]) - laplace_kl_by_quadrature(mu[i, 0], b[i, 0], mu[i, 1], b[i, 1]))
        for i in range(mu.shape[0])
    )
    results.append(CheckResult("laplace_kl vs quadrature (200 pairs, max abs error)", err, "< 1e-6", err < 1e-6))

    res = verify_proportionality("linear", seed=seed)
    target = 2.0 / math.sqrt(math.pi)
    rel = abs(res.slope - target) / target
    results.append(CheckResult("linear probe slope vs 2/sqrt(pi) (relative error)", rel, "< 0.02", rel < 0.02))
    results.append(CheckResult("linear probe correlation", res.correlation, "> 0.99", res.correlation > 0.99))
    res = verify_proportionality("sigmoid", seed=seed)
    results.append(CheckResult("sigmoid probe correlation", res.correlation, "> 0.99", res.correlation > 0.99))

    rng = np.random.default_rng(seed + 1)
    c = rng.dirichlet(np.ones(NUM_CLASSES), size=10_000)
    c2 = rng.dirichlet(np.ones(NUM_CLASSES), size=10_000)
    fused = semantic_fuse(c, c2)
    dev = float(np.max(np.abs(fused.c_bar.sum(axis=1) - 1.0)))
    ok = dev < 1e-12 and np.all(fused.c_bar >= 0) and np.all((fused.delta_c >= 0) & (fused.delta_c <= 1))
    ok = ok and not np.any(semantic_fuse(c, c).delta_c)
    results.append(CheckResult("semantic fusion simplex deviation", dev, "< 1e-12, delta_c in [0,1], agreement -> 0", bool(ok)))

    gt = np.zeros((30, 2))
    ade = metrics.min_ade(np.repeat((gt + [0.0, 1.0])[None], 6, axis=0), gt)
    fde = metrics.min_fde(np.repeat((gt + [3.0, 4.0])[None], 6, axis=0), gt)
    mr = metrics.miss_rate([np.repeat((gt + [2.0, 0.0])[None], 6, axis=0)], [gt])
    results.append(CheckResult("constant-offset minADE", ade, "== 1.0", ade == 1.0))
    results.append(CheckResult("3-4-5 minFDE", fde, "== 5.0", fde == 5.0))
    results.append(CheckResult("miss rate at exactly 2 m", mr, "== 0.0", mr == 0.0))

    sample_rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for k in range(3):
        m = dual_head.DualHeadModel.init(seed + k)
        x = sample_rng.normal(size=(8, 10))
        t = sample_rng.uniform(size=(8, 2))
        y = sample_rng.integers(0, NUM_CLASSES, size=8)
        worst = max(worst, dual_head.grad_check(m, (x, t, y), 1e-5))
    results.append(CheckResult("dual-head grad check (3 models)", worst, "< 1e-4", worst < 1e-4))

    batch = grad_check_batch(seed)
    worst = max(predictor.grad_check(PredictorModel.init(seed + k), batch, 1e-5) for k in range(2))
    results.append(CheckResult("predictor grad check (2 models)", worst, "< 1e-4", worst < 1e-4))
    return results


def grad_check_batch(seed=0, n_agents=2, tokens_per_agent=8):
    """A small agent batch from a generated scene, for gradient checks."""
    from .dual_head import DualHeadModel as _DH

    scene = generate_scene("intersection", seed)
    obs = corrupt_observation(scene, _default_noise())
    est = estimate_vertices(_DH.init(seed), obs)
    batch = prepare(samples_for([(scene, obs)], {int(scene.seed): est})[:n_agents])
    rng = np.random.default_rng(seed)
    keep = []
    for i in range(len(batch)):
        lo, hi = batch.offsets[i], batch.offsets[i + 1]
        pick = np.sort(rng.choice(np.arange(lo, hi), size=min(tokens_per_agent, hi - lo), replace=False))
        keep.append(pick)
    sizes = [len(k) for k in keep]
    return dataclasses.replace(
        batch,
        tokens=batch.tokens[np.concatenate(keep)],
        offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
    )


def cmd_verify(seed=0, inject_kl_sign_bug=False, out=print) -> int:
    results = run_verify(seed, inject_kl_sign_bug)
    for r in results:
        out(r.line())
    failed = sum(not r.passed for r in results)
    out(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0
