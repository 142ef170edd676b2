"""Synthetic driving scenes and noisy map observations.

Scenes are generated in the ego frame over a 120 m stretch so agents can
drive in and out of the 60 m x 30 m perception box. ``corrupt_observation``
stands in for the camera/BEV perception stack: it clips the ground-truth map
to the perception box, drops occluded vertices, jitters positions and
confuses class labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .map_model import (
    DT,
    FUTURE_LEN,
    HALF_EXTENT,
    HISTORY_LEN,
    NUM_CLASSES,
    Agent,
    EgoPose,
    ElementClass,
    MapElement,
    Scene,
    Trajectory,
    clip_to_perception_range,
    normalize_to_bev,
)
from .seeding import make_rng

LAYOUTS = ("straight", "curve", "intersection", "parking")
LANE_WIDTH = 3.5
VERTEX_SPACING = 2.0
# Neighbor offsets in the context vector are expressed in units of this many meters.
OFFSET_SCALE = 4.0
CONTEXT_WIDTH = 2 + 4 + NUM_CLASSES
SPEED_RANGE = (2.0, 12.0)


# ---------------------------------------------------------------------------
# Path helpers
# ---------------------------------------------------------------------------


def _arclength(path):
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _resample(path, spacing=VERTEX_SPACING):
    s = _arclength(path)
    n = max(2, int(round(s[-1] / spacing)) + 1)
    t = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(t, s, path[:, 0]), np.interp(t, s, path[:, 1])])


def _normals(path):
    tan = np.gradient(path, axis=0)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    return np.column_stack([-tan[:, 1], tan[:, 0]])


def _offset(path, d):
    return path + d * _normals(path)


def _heading_path(s_grid, heading_fn, origin, heading0=0.0):
    """Integrate a heading profile into a dense polyline passing through ``origin`` at s=0."""
    h = heading0 + heading_fn(s_grid)
    ds = np.diff(s_grid)
    hm = 0.5 * (h[1:] + h[:-1])
    steps = np.column_stack([np.cos(hm) * ds, np.sin(hm) * ds])
    pts = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    i0 = int(np.argmin(np.abs(s_grid)))
    return pts - pts[i0] + np.asarray(origin, dtype=np.float64)


def _line(p0, p1, spacing=VERTEX_SPACING):
    return _resample(np.array([p0, p1], dtype=np.float64), spacing)


def _arc(center, radius, a0, a1, spacing=VERTEX_SPACING):
    n = max(3, int(math.ceil(abs(a1 - a0) * radius / spacing)) + 1)
    a = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)])


class _Builder:
    def __init__(self):
        self.elements = []
        self.paths = []  # (dense polyline, cyclic, max_speed)

    def add(self, cls, pts, spacing=VERTEX_SPACING):
        self.elements.append(MapElement(len(self.elements), cls, _resample(np.asarray(pts), spacing)))

    def path(self, pts, cyclic=False, max_speed=SPEED_RANGE[1]):
        self.paths.append((_resample(np.asarray(pts, dtype=np.float64), 0.5), cyclic, max_speed))


# ---------------------------------------------------------------------------
# Layouts
# ---------------------------------------------------------------------------


def _parallel_road(b, ref, n_lanes, spacing=VERTEX_SPACING):
    """Boundaries, dividers and bidirectional lane centerlines along ``ref``."""
    half = n_lanes * LANE_WIDTH
    b.add(ElementClass.BOUNDARY, _offset(ref, -half), spacing)
    b.add(ElementClass.BOUNDARY, _offset(ref, half), spacing)
    for k in range(-n_lanes + 1, n_lanes):
        b.add(ElementClass.DIVIDER, _offset(ref, k * LANE_WIDTH), spacing)
    for k in range(n_lanes):
        off = (k + 0.5) * LANE_WIDTH
        fwd = _offset(ref, -off)
        back = _offset(ref, off)[::-1]
        b.add(ElementClass.CENTERLINE, fwd, spacing)
        b.add(ElementClass.CENTERLINE, back, spacing)
        b.path(fwd)
        b.path(back)


def _layout_straight(rng, b):
    n_lanes = int(rng.integers(1, 3))
    psi = math.radians(rng.uniform(-4.0, 4.0))
    ego_lane = int(rng.integers(0, n_lanes))
    s = np.linspace(-62.0, 62.0, 249)
    ref = _heading_path(s, lambda t: np.zeros_like(t), (0.0, 0.0), psi)
    # Shift so the ego lane (driving direction +x, right of the reference) passes through the origin.
    ref = ref + (ego_lane + 0.5) * LANE_WIDTH * np.array([-math.sin(psi), math.cos(psi)])
    _parallel_road(b, ref, n_lanes)


def _layout_curve(rng, b):
    n_lanes = int(rng.integers(1, 3))
    radius = rng.uniform(30.0, 90.0)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    s_bend = rng.uniform(-10.0, 15.0)
    max_turn = math.radians(rng.uniform(45.0, 90.0))
    ego_lane = int(rng.integers(0, n_lanes))
    s = np.linspace(-62.0, 75.0, 549)

    def heading(t):
        return sign * np.clip((t - s_bend) / radius, 0.0, max_turn)

    ref = _heading_path(s, heading, (0.0, 0.0))
    ref = ref + np.array([0.0, (ego_lane + 0.5) * LANE_WIDTH])
    _parallel_road(b, ref, n_lanes)


def _layout_intersection(rng, b):
    w = LANE_WIDTH
    xc = rng.uniform(6.0, 18.0)
    yc = 0.5 * w  # ego drives in the eastbound lane, right of the main road axis
    far = 60.0
    xw, xe = xc - w, xc + w
    ys, yn = yc - w, yc + w
    boundary, divider, cross, center = (
        ElementClass.BOUNDARY,
        ElementClass.DIVIDER,
        ElementClass.PED_CROSSING,
        ElementClass.CENTERLINE,
    )
    for y in (ys, yn):
        b.add(boundary, _line((-far, y), (xw, y)))
        b.add(boundary, _line((xe, y), (far, y)))
    for x in (xw, xe):
        b.add(boundary, _line((x, yn), (x, far)))
        b.add(boundary, _line((x, ys), (x, -far)))
    b.add(divider, _line((-far, yc), (xw, yc)))
    b.add(divider, _line((xe, yc), (far, yc)))
    b.add(divider, _line((xc, yn), (xc, far)))
    b.add(divider, _line((xc, ys), (xc, -far)))
    gap = 2.0
    b.add(cross, _line((xw - gap, ys), (xw - gap, yn)), 1.0)
    b.add(cross, _line((xe + gap, ys), (xe + gap, yn)), 1.0)
    b.add(cross, _line((xw, yn + gap), (xe, yn + gap)), 1.0)
    b.add(cross, _line((xw, ys - gap), (xe, ys - gap)), 1.0)

    east = _line((-far, yc - w / 2), (far, yc - w / 2))
    west = _line((far, yc + w / 2), (-far, yc + w / 2))
    north = _line((xc + w / 2, -far), (xc + w / 2, far))
    south = _line((xc - w / 2, far), (xc - w / 2, -far))
    for c in (east, west, north, south):
        b.add(center, c)

    # Turning connectors from the eastbound approach.
    left = _arc((xw, yn), 1.5 * w, -math.pi / 2, 0.0)
    right = _arc((xw, ys), 0.5 * w, math.pi / 2, 0.0)
    # And from the westbound approach.
    left_w = _arc((xe, ys), 1.5 * w, math.pi / 2, math.pi)
    right_w = _arc((xe, yn), 0.5 * w, -math.pi / 2, -math.pi)
    for c in (left, right, left_w, right_w):
        b.add(center, c, 1.0)

    turn_speed = 6.0
    b.path(east)
    b.path(west)
    b.path(north)
    b.path(south)
    b.path(
        np.vstack([_line((-far, yc - w / 2), (xw, yc - w / 2)), left, _line((xc + w / 2, yn), (xc + w / 2, far))]),
        max_speed=turn_speed,
    )
    b.path(
        np.vstack([_line((-far, yc - w / 2), (xw, yc - w / 2)), right, _line((xc - w / 2, ys), (xc - w / 2, -far))]),
        max_speed=turn_speed,
    )
    b.path(
        np.vstack([_line((far, yc + w / 2), (xe, yc + w / 2)), left_w, _line((xc - w / 2, ys), (xc - w / 2, -far))]),
        max_speed=turn_speed,
    )
    b.path(
        np.vstack([_line((far, yc + w / 2), (xe, yc + w / 2)), right_w, _line((xc + w / 2, yn), (xc + w / 2, far))]),
        max_speed=turn_speed,
    )


def _rounded_rect(x0, x1, y0, y1, r):
    """Counter-clockwise closed loop starting at the middle of the bottom side."""
    xm = 0.5 * (x0 + x1)
    parts = [
        _line((xm, y0), (x1 - r, y0), 0.5),
        _arc((x1 - r, y0 + r), r, -math.pi / 2, 0.0, 0.5),
        _line((x1, y0 + r), (x1, y1 - r), 0.5),
        _arc((x1 - r, y1 - r), r, 0.0, math.pi / 2, 0.5),
        _line((x1 - r, y1), (x0 + r, y1), 0.5),
        _arc((x0 + r, y1 - r), r, math.pi / 2, math.pi, 0.5),
        _line((x0, y1 - r), (x0, y0 + r), 0.5),
        _arc((x0 + r, y0 + r), r, math.pi, 1.5 * math.pi, 0.5),
        _line((x0 + r, y0), (xm, y0), 0.5),
    ]
    return np.vstack(parts)


def _layout_parking(rng, b):
    half_len = rng.uniform(14.0, 26.0)
    height = rng.uniform(10.0, 16.0)
    radius = rng.uniform(4.0, 6.0)
    shift = rng.uniform(-6.0, 6.0)
    x0, x1 = -half_len + shift, half_len + shift
    loop = _rounded_rect(x0, x1, 0.0, height, radius)
    w = LANE_WIDTH
    outer = _rounded_rect(x0 - w, x1 + w, -w, height + w, radius + w)
    inner_r = max(min(radius - w, 0.5 * (height - 2 * w) - 0.1), 0.3)
    inner = _rounded_rect(x0 + w, x1 - w, w, height - w, inner_r)
    b.add(ElementClass.BOUNDARY, outer)
    b.add(ElementClass.BOUNDARY, inner)
    b.add(ElementClass.DIVIDER, _line((x0 + w + 1.0, -w - 3.0), (x1 - w - 1.0, -w - 3.0)))
    b.add(ElementClass.CENTERLINE, loop)
    b.path(loop, cyclic=True, max_speed=6.0)


_LAYOUT_FNS = {
    "straight": _layout_straight,
    "curve": _layout_curve,
    "intersection": _layout_intersection,
    "parking": _layout_parking,
}


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


def _sample_track(rng, path, cyclic, max_speed, margin=(28.0, 14.0), tries=50):
    s = _arclength(path)
    total = s[-1]
    n_steps = HISTORY_LEN + FUTURE_LEN
    for _ in range(tries):
        v = rng.uniform(SPEED_RANGE[0], min(max_speed, SPEED_RANGE[1]))
        length = v * DT * (n_steps - 1)
        if not cyclic and length >= total:
            continue
        s0 = rng.uniform(0.0, total if cyclic else total - length)
        ts = s0 + v * DT * np.arange(n_steps)
        if cyclic:
            ts = np.mod(ts, total)
        xy = np.column_stack([np.interp(ts, s, path[:, 0]), np.interp(ts, s, path[:, 1])])
        last = xy[HISTORY_LEN - 1]
        if abs(last[0]) > margin[0] or abs(last[1]) > margin[1]:
            continue
        normals = _normals(path)
        nrm = np.column_stack([np.interp(ts, s, normals[:, 0]), np.interp(ts, s, normals[:, 1])])
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        amp = rng.uniform(0.0, 0.3)
        freq = rng.uniform(0.05, 0.2)
        phase = rng.uniform(0.0, 2 * math.pi)
        lat = amp * np.sin(2 * math.pi * freq * DT * np.arange(n_steps) + phase)
        xy = xy + lat[:, None] * nrm + rng.normal(0.0, 0.02, size=xy.shape)
        return xy
    return None


def generate_scene(layout: str, seed: int, n_agents: int | None = None) -> Scene:
    """Deterministic synthetic scene for ``(layout, seed)``."""
    if layout not in _LAYOUT_FNS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    rng = make_rng(seed, LAYOUTS.index(layout))
    b = _Builder()
    _LAYOUT_FNS[layout](rng, b)
    if n_agents is None:
        n_agents = int(rng.integers(4, 9))
    agents = []
    for _ in range(50 * n_agents):
        if len(agents) >= n_agents:
            break
        path, cyclic, vmax = b.paths[int(rng.integers(len(b.paths)))]
        xy = _sample_track(rng, path, cyclic, vmax)
        if xy is None:
            continue
        aid = len(agents)
        agents.append(Agent(Trajectory(aid, xy[:HISTORY_LEN]), Trajectory(aid, xy[HISTORY_LEN:])))
    return Scene(tuple(b.elements), tuple(agents), EgoPose(0.0, 0.0, 0.0), int(seed), layout)


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------


def uniform_confusion(eps: float, n: int = NUM_CLASSES) -> np.ndarray:
    """Row-stochastic matrix keeping the true class with probability 1 - eps."""
    m = np.full((n, n), eps / (n - 1))
    np.fill_diagonal(m, 1.0 - eps)
    return m


@dataclass(frozen=True)
class NoiseConfig:
    """Perception noise parameters.

    ``occlusion_sectors`` holds ``(start_deg, end_deg, drop_prob)`` triples,
    angles measured counter-clockwise from the ego x axis in degrees; a
    sector with start > end wraps through 180.
    """

    pos_scale_b: float = 0.1
    occlusion_sectors: tuple = ()
    confusion: tuple = field(default_factory=lambda: tuple(map(tuple, np.eye(NUM_CLASSES))))
    seed: int = 0
    distribution: str = "laplace"

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=np.float64)
        object.__setattr__(self, "confusion", tuple(tuple(float(v) for v in row) for row in conf))
        object.__setattr__(
            self,
            "occlusion_sectors",
            tuple((float(a), float(b), float(p)) for a, b, p in self.occlusion_sectors),
        )
        if not (self.pos_scale_b > 0 and math.isfinite(self.pos_scale_b)):
            raise ValueError("pos_scale_b must be positive and finite")
        if conf.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"confusion must be {NUM_CLASSES}x{NUM_CLASSES}")
        if np.any(conf < 0) or np.any(np.abs(conf.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("confusion rows must be non-negative and sum to 1")
        for _, _, p in self.occlusion_sectors:
            if not 0.0 <= p <= 1.0:
                raise ValueError("occlusion drop_prob must lie in [0, 1]")
        if self.distribution not in ("laplace", "gaussian"):
            raise ValueError("distribution must be 'laplace' or 'gaussian'")

    @property
    def confusion_matrix(self) -> np.ndarray:
        return np.asarray(self.confusion, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["occlusion_sectors"] = [list(s) for s in self.occlusion_sectors]
        d["confusion"] = [list(r) for r in self.confusion]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        d = dict(d)
        if "confusion_eps" in d:
            d["confusion"] = uniform_confusion(float(d.pop("confusion_eps")))
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "NoiseConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Per-vertex observations of one scene (parallel arrays, V rows).

    positions: noisy normalized BEV positions in [0, 1]^2
    element_ids / vertex_index: which ground-truth (clipped) vertex was seen
    true_class / observed_class: class indices
    context: (V, CONTEXT_WIDTH) estimator input
    targets: true normalized positions
    """

    positions: np.ndarray
    element_ids: np.ndarray
    vertex_index: np.ndarray
    true_class: np.ndarray
    observed_class: np.ndarray
    context: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.positions.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ObservationSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("positions", "element_ids", "vertex_index", "true_class", "observed_class", "context", "targets")
        )

    __hash__ = None

    @classmethod
    def empty(cls):
        z2 = np.zeros((0, 2))
        zi = np.zeros(0, dtype=np.int64)
        return cls(z2, zi, zi, zi, zi, np.zeros((0, CONTEXT_WIDTH)), z2)

    @classmethod
    def concatenate(cls, sets):
        sets = list(sets)
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in cls.__dataclass_fields__))


def _in_sector(angles_deg, start, end):
    if start <= end:
        return (angles_deg >= start) & (angles_deg <= end)
    return (angles_deg >= start) | (angles_deg <= end)


def build_context(positions_m, element_ids, observed_class):
    """Context vectors for vertices listed element by element in polyline order.

    Neighbor offsets point to the previous / next surviving vertex of the same
    element (zero at polyline ends), in units of ``OFFSET_SCALE`` meters.
    """
    n = positions_m.shape[0]
    ctx = np.zeros((n, CONTEXT_WIDTH))
    if n == 0:
        return ctx
    ctx[:, 0:2] = 2.0 * normalize_to_bev(positions_m) - 1.0
    same_prev = np.zeros(n, dtype=bool)
    same_prev[1:] = element_ids[1:] == element_ids[:-1]
    prev_off = np.zeros((n, 2))
    prev_off[1:] = positions_m[:-1] - positions_m[1:]
    prev_off[~same_prev] = 0.0
    same_next = np.zeros(n, dtype=bool)
    same_next[:-1] = same_prev[1:]
    next_off = np.zeros((n, 2))
    next_off[:-1] = positions_m[1:] - positions_m[:-1]
    next_off[~same_next] = 0.0
    ctx[:, 2:4] = prev_off / OFFSET_SCALE
    ctx[:, 4:6] = next_off / OFFSET_SCALE
    ctx[np.arange(n), 6 + observed_class] = 1.0
    return ctx


def context_anchor(context) -> np.ndarray:
    """Observed normalized position encoded in the first two context columns."""
    return 0.5 * (np.asarray(context, dtype=np.float64)[:, 0:2] + 1.0)


def corrupt_observation(scene: Scene, cfg: NoiseConfig) -> ObservationSet:
    """Noisy per-vertex observations of ``scene`` under ``cfg``.

    Random draws come in a fixed order (occlusion, jitter, class) from a
    stream keyed by ``(cfg.seed, scene.seed)``, so configurations differing
    only in ``pos_scale_b`` share the same underlying standard draws.
    """
    elements = clip_to_perception_range(scene.elements)
    if not elements:
        return ObservationSet.empty()
    pts = np.concatenate([e.points for e in elements])
    eids = np.concatenate([np.full(len(e.points), e.id, dtype=np.int64) for e in elements])
    vidx = np.concatenate([np.arange(len(e.points), dtype=np.int64) for e in elements])
    tcls = np.concatenate([np.full(len(e.points), int(e.cls), dtype=np.int64) for e in elements])
    n = pts.shape[0]

    rng = make_rng(cfg.seed, scene.seed)
    u_occ = rng.random(n)
    if cfg.distribution == "laplace":
        std_noise = rng.laplace(0.0, 1.0, size=(n, 2))
    else:
        std_noise = rng.normal(0.0, 1.0, size=(n, 2))
    u_cls = rng.random(n)

    keep = np.ones(n, dtype=bool)
    if cfg.occlusion_sectors:
        ang = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
        for start, end, p in cfg.occlusion_sectors:
            keep &= ~(_in_sector(ang, start, end) & (u_occ < p))

    h = np.asarray(HALF_EXTENT)
    noisy = np.clip(pts + cfg.pos_scale_b * std_noise, -h, h)
    cdf = np.cumsum(cfg.confusion_matrix, axis=1)
    cdf[:, -1] = 1.0
    ocls = np.array([int(np.searchsorted(cdf[c], u, side="right")) for c, u in zip(tcls, u_cls)], dtype=np.int64)
    ocls = np.minimum(ocls, NUM_CLASSES - 1)

    noisy, eids, vidx, tcls, ocls, pts = (a[keep] for a in (noisy, eids, vidx, tcls, ocls, pts))
    ctx = build_context(noisy, eids, ocls)
    return ObservationSet(
        positions=normalize_to_bev(noisy),
        element_ids=eids,
        vertex_index=vidx,
        true_class=tcls,
        observed_class=ocls,
        context=ctx,
        targets=normalize_to_bev(pts),
    )
