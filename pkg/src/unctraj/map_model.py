"""Vectorized map and scene data model.

Coordinates are ego-centric bird's-eye-view meters: x longitudinal
(forward), y lateral (left). The perception box is 60 m x 30 m centered on
the ego vehicle, i.e. half-extents (30, 15).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

HALF_EXTENT = (30.0, 15.0)
NUM_CLASSES = 4
HISTORY_LEN = 20
FUTURE_LEN = 30
DT = 0.1


class ElementClass(enum.IntEnum):
    BOUNDARY = 0
    DIVIDER = 1
    PED_CROSSING = 2
    CENTERLINE = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "ElementClass":
        try:
            return _FROM_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown element class {label!r}") from None


_LABELS = {
    ElementClass.BOUNDARY: "boundary",
    ElementClass.DIVIDER: "divider",
    ElementClass.PED_CROSSING: "ped_crossing",
    ElementClass.CENTERLINE: "centerline",
}
_FROM_LABEL = {v: k for k, v in _LABELS.items()}


def _frozen_points(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64, copy=True).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MapElement:
    """A classed polyline. ``points`` is a read-only (P, 2) array."""

    id: int
    cls: ElementClass
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "cls", ElementClass(self.cls))
        object.__setattr__(self, "points", _frozen_points(self.points))

    def __eq__(self, other):
        if not isinstance(other, MapElement):
            return NotImplemented
        return (
            self.id == other.id
            and self.cls == other.cls
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Agent samples at 10 Hz; ``samples`` is a read-only (T, 2) array."""

    agent_id: int
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "agent_id", int(self.agent_id))
        object.__setattr__(self, "samples", _frozen_points(self.samples))

    def __len__(self):
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.agent_id == other.agent_id and bool(np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Agent:
    history: Trajectory
    future: Trajectory

    @property
    def id(self) -> int:
        return self.history.agent_id

    def __eq__(self, other):
        if not isinstance(other, Agent):
            return NotImplemented
        return self.history == other.history and self.future == other.future

    __hash__ = None


@dataclass(frozen=True)
class EgoPose:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0


@dataclass(frozen=True, eq=False)
class Scene:
    elements: tuple
    agents: tuple
    ego_pose: EgoPose = field(default_factory=EgoPose)
    seed: int = 0
    layout: str = ""

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "agents", tuple(self.agents))

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.layout == other.layout
            and self.ego_pose == other.ego_pose
            and self.elements == other.elements
            and self.agents == other.agents
        )

    __hash__ = None

    def element_table(self) -> dict:
        return {e.id: e for e in self.elements}


# ---------------------------------------------------------------------------
# Coordinate conventions
# ---------------------------------------------------------------------------


def _check_range(half_extent):
    h = np.asarray(half_extent, dtype=np.float64)
    if h.shape != (2,) or not np.all(h > 0) or not np.all(np.isfinite(h)):
        raise ValueError(f"half-extents must be two positive finite numbers, got {half_extent!r}")
    return h


def normalize_to_bev(point, half_extent=HALF_EXTENT) -> np.ndarray:
    """Map meters inside the perception box affinely onto the unit square.

    Accepts a single point or an (N, 2) array. Points outside the box raise
    ``ValueError``; clip with :func:`clip_to_perception_range` first.
    """
    h = _check_range(half_extent)
    p = np.asarray(point, dtype=np.float64)
    if np.any(np.abs(p) > h) or not np.all(np.isfinite(p)):
        raise ValueError("point outside the perception range")
    return (p + h) / (2.0 * h)


def denormalize_from_bev(uv, half_extent=HALF_EXTENT) -> np.ndarray:
    h = _check_range(half_extent)
    return np.asarray(uv, dtype=np.float64) * (2.0 * h) - h


def _inside(points, half_extent):
    h = np.asarray(half_extent, dtype=np.float64)
    return np.all(np.abs(points) <= h, axis=1)


def _longest_run(mask):
    best_start, best_len = 0, 0
    start = None
    for i, m in enumerate(list(mask) + [False]):
        if m and start is None:
            start = i
        elif not m and start is not None:
            if i - start > best_len:
                best_start, best_len = start, i - start
            start = None
    return best_start, best_start + best_len


def clip_to_perception_range(elements, half_extent=HALF_EXTENT) -> list:
    """Keep the inside part of every element.

    Vertices outside the box are removed without interpolating the crossing.
    A polyline that leaves and re-enters the box keeps its longest
    contiguous inside run (first one on ties). Elements with fewer than two
    surviving points are dropped; order is preserved.
    """
    out = []
    for el in elements:
        mask = _inside(el.points, half_extent)
        if mask.all():
            out.append(el)
            continue
        lo, hi = _longest_run(mask)
        if hi - lo >= 2:
            out.append(MapElement(el.id, el.cls, el.points[lo:hi]))
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    ident: int
    message: str

    def __str__(self):
        return f"{self.subject} {self.ident}: {self.message}"


def validate_scene(scene: Scene) -> list:
    """Return every invariant violation of ``scene``; empty list means ok."""
    problems = []
    seen = {}
    for el in scene.elements:
        if el.id in seen:
            problems.append(Violation("duplicate_id", "element", el.id, f"duplicate element id {el.id}"))
        seen[el.id] = True
        if el.points.shape[0] < 2:
            problems.append(Violation("too_short", "element", el.id, "fewer than 2 points"))
        if not np.all(np.isfinite(el.points)):
            problems.append(Violation("non_finite", "element", el.id, "non-finite coordinates"))
    agent_ids = set()
    for ag in scene.agents:
        aid = ag.history.agent_id
        if aid in agent_ids:
            problems.append(Violation("duplicate_id", "agent", aid, f"duplicate agent id {aid}"))
        agent_ids.add(aid)
        if ag.future.agent_id != aid:
            problems.append(Violation("id_mismatch", "agent", aid, "history and future agent ids differ"))
        if len(ag.history) != HISTORY_LEN:
            problems.append(
                Violation("history_length", "agent", aid, f"history has {len(ag.history)} steps, expected {HISTORY_LEN}")
            )
        if len(ag.future) != FUTURE_LEN:
            problems.append(
                Violation("future_length", "agent", aid, f"future has {len(ag.future)} steps, expected {FUTURE_LEN}")
            )
        if not (np.all(np.isfinite(ag.history.samples)) and np.all(np.isfinite(ag.future.samples))):
            problems.append(Violation("non_finite", "agent", aid, "non-finite trajectory coordinates"))
    return problems
