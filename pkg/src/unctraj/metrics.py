"""Multimodal forecasting metrics: minADE, minFDE, miss rate.

Endpoint is the last (30th) future step. A miss is a best endpoint error
strictly greater than ``MISS_THRESHOLD``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels

MISS_THRESHOLD = 2.0  # meters


def _modes(pred):
    return np.asarray(pred.modes if hasattr(pred, "modes") else pred, dtype=np.float64)


def _pair(pred, gt):
    modes = _modes(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if modes.ndim != 3 or modes.shape[-1] != 2 or gt.ndim != 2 or gt.shape[-1] != 2:
        raise ValueError("expected modes (K, T, 2) and ground truth (T, 2)")
    if modes.shape[1] != gt.shape[0]:
        raise ValueError(f"length mismatch: modes have {modes.shape[1]} steps, ground truth {gt.shape[0]}")
    return modes, gt


def displacement_errors(pred, gt):
    """Per-mode ADE and FDE, each of shape (K,)."""
    modes, gt = _pair(pred, gt)
    ade, fde = kernels.mode_displacements(modes[None], gt[None])
    return ade[0], fde[0]


def min_ade(pred, gt) -> float:
    return float(displacement_errors(pred, gt)[0].min())


def min_fde(pred, gt) -> float:
    return float(displacement_errors(pred, gt)[1].min())


def miss_rate(preds, gts) -> float:
    preds, gts = list(preds), list(gts)
    if not preds:
        raise ValueError("empty agent set")
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth tracks")
    misses = sum(min_fde(p, g) > MISS_THRESHOLD for p, g in zip(preds, gts))
    return misses / len(preds)


@dataclass(frozen=True)
class MetricReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    n_agents: int

    def __post_init__(self):
        if self.n_agents < 0 or self.min_ade < 0 or self.min_fde < 0:
            raise ValueError("metrics must be non-negative")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


def evaluate(modes, gts) -> MetricReport:
    """Report for a batch: ``modes`` (N, K, T, 2), ``gts`` (N, T, 2)."""
    modes = np.asarray(modes, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if modes.shape[0] == 0:
        raise ValueError("empty agent set")
    if modes.shape[0] != gts.shape[0] or modes.shape[2] != gts.shape[1]:
        raise ValueError(f"shape mismatch: modes {modes.shape}, ground truth {gts.shape}")
    ade, fde = kernels.mode_displacements(modes, gts)
    best_fde = fde.min(axis=1)
    return MetricReport(
        float(ade.min(axis=1).mean()),
        float(best_fde.mean()),
        float(np.mean(best_fde > MISS_THRESHOLD)),
        int(modes.shape[0]),
    )


def aggregate(reports) -> MetricReport:
    """Agent-weighted means across reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    n = sum(r.n_agents for r in reports)
    if n == 0:
        return MetricReport(0.0, 0.0, 0.0, 0)
    w = [r.n_agents / n for r in reports]
    return MetricReport(
        sum(wi * r.min_ade for wi, r in zip(w, reports)),
        sum(wi * r.min_fde for wi, r in zip(w, reports)),
        sum(wi * r.miss_rate for wi, r in zip(w, reports)),
        n,
    )


FIELDS = ("min_ade", "min_fde", "miss_rate", "n_agents")


def reports_to_csv(rows) -> str:
    """``rows``: iterable of ``(label, MetricReport)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("row",) + FIELDS)
    for label, r in rows:
        w.writerow([label, repr(r.min_ade), repr(r.min_fde), repr(r.miss_rate), r.n_agents])
    return buf.getvalue()


def report_to_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> MetricReport:
    return MetricReport(**json.loads(text))
