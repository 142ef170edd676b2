import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unctraj.map_model import (
    HALF_EXTENT,
    Agent,
    ElementClass,
    MapElement,
    Scene,
    Trajectory,
    clip_to_perception_range,
    denormalize_from_bev,
    normalize_to_bev,
    validate_scene,
)


def _agent(aid, n_hist=20, n_fut=30):
    return Agent(Trajectory(aid, np.zeros((n_hist, 2))), Trajectory(aid, np.ones((n_fut, 2))))


@pytest.mark.parametrize(
    "point, expected",
    [((0, 0), (0.5, 0.5)), ((30, 15), (1.0, 1.0)), ((-15, 7.5), (0.25, 0.75)), ((-30, -15), (0.0, 0.0))],
)
def test_normalize_examples(point, expected):
    assert np.allclose(normalize_to_bev(point, (30, 15)), expected, rtol=0, atol=1e-15)


def test_normalize_rejects_outside_and_bad_range():
    with pytest.raises(ValueError):
        normalize_to_bev((30.01, 0.0))
    with pytest.raises(ValueError):
        normalize_to_bev((0.0, 0.0), (0.0, 15.0))


def test_round_trip_1000_points():
    rng = np.random.default_rng(0)
    h = np.asarray(HALF_EXTENT)
    p = rng.uniform(-h, h, size=(1000, 2))
    back = denormalize_from_bev(normalize_to_bev(p))
    assert np.max(np.abs(back - p)) < 1e-9
    assert np.all(np.abs(back - p) <= 1e-12 * np.maximum(np.abs(p), 1.0))


def test_class_order_is_stable():
    assert [c.value for c in ElementClass] == [0, 1, 2, 3]
    assert [c.label for c in ElementClass] == ["boundary", "divider", "ped_crossing", "centerline"]
    with pytest.raises(ValueError):
        ElementClass.from_label("crosswalk")


def test_clip_inside_unchanged():
    el = MapElement(1, ElementClass.DIVIDER, [[0, 0], [5, 1], [10, 2]])
    (out,) = clip_to_perception_range([el])
    assert out == el


def test_clip_drops_outside_element():
    inside = MapElement(1, ElementClass.DIVIDER, [[0, 0], [5, 1]])
    outside = MapElement(2, ElementClass.BOUNDARY, [[40, 0], [50, 0]])
    out = clip_to_perception_range([inside, outside])
    assert [e.id for e in out] == [1]


def test_clip_truncates_at_last_inside_vertex():
    pts = np.array([[24.0, 1.0], [27.0, 1.0], [29.5, 1.0], [31.0, 1.0], [34.0, 1.0]])
    (out,) = clip_to_perception_range([MapElement(3, ElementClass.BOUNDARY, pts)])
    # brute-force point-in-box filter
    expected = pts[[i for i, p in enumerate(pts) if abs(p[0]) <= 30 and abs(p[1]) <= 15]]
    assert np.array_equal(out.points, expected)


def test_clip_single_surviving_point_drops_element():
    el = MapElement(4, ElementClass.CENTERLINE, [[29.0, 0], [31.0, 0], [40.0, 0]])
    assert clip_to_perception_range([el]) == []


polylines = st.lists(
    st.tuples(st.floats(-45, 45, allow_nan=False), st.floats(-25, 25, allow_nan=False)), min_size=2, max_size=12
)


@given(st.lists(polylines, min_size=0, max_size=5))
def test_clip_idempotent_and_inside(lines):
    els = [MapElement(i, i % 4, p) for i, p in enumerate(lines)]
    once = clip_to_perception_range(els)
    twice = clip_to_perception_range(once)
    assert once == twice
    for e in once:
        assert len(e.points) >= 2
        assert np.all(np.abs(e.points) <= np.asarray(HALF_EXTENT))
    ids = [e.id for e in once]
    assert ids == sorted(ids)


def test_validate_ok():
    scene = Scene([MapElement(1, 0, [[0, 0], [1, 0]])], [_agent(7)])
    assert validate_scene(scene) == []


def test_validate_short_history_names_agent():
    scene = Scene([MapElement(1, 0, [[0, 0], [1, 0]])], [_agent(7), _agent(9, n_hist=19)])
    (v,) = validate_scene(scene)
    assert v.subject == "agent" and v.ident == 9
    assert "19" in v.message


def test_validate_duplicate_element_id():
    scene = Scene([MapElement(5, 0, [[0, 0], [1, 0]]), MapElement(5, 1, [[0, 1], [1, 1]])], [])
    (v,) = validate_scene(scene)
    assert v.kind == "duplicate_id" and v.ident == 5


def test_validate_reports_every_violation():
    bad = MapElement(2, 0, [[0, 0], [np.inf, 0]])
    scene = Scene([bad, MapElement(2, 1, [[0, 0], [1, 0]])], [_agent(1, n_fut=29)])
    kinds = sorted(v.kind for v in validate_scene(scene))
    assert len(kinds) == 3
    assert "duplicate_id" in kinds and "non_finite" in kinds
