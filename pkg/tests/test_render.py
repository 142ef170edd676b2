import dataclasses
import os
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from unctraj.dual_head import DualHeadModel, estimate_uncertain_map
from unctraj.noise_sim import NoiseConfig, corrupt_observation, generate_scene, uniform_confusion
from unctraj.predictor import constant_velocity_baseline
from unctraj.render import PALETTE, ellipse_radius, render_svg

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "intersection_seed3.svg")
SVG = "{http://www.w3.org/2000/svg}"


def _fixture():
    scene = generate_scene("intersection", 3)
    obs = corrupt_observation(scene, NoiseConfig(pos_scale_b=0.3, confusion=uniform_confusion(0.2), seed=1))
    elements = estimate_uncertain_map(DualHeadModel.init(0), obs, scene.element_table())
    preds = {a.id: constant_velocity_baseline(a.history.samples) for a in scene.agents}
    return scene, elements, preds


def _radii(svg):
    return [float(e.get("rx")) for e in ET.fromstring(svg).iter(SVG + "ellipse")]


def test_valid_standalone_svg():
    scene, elements, preds = _fixture()
    root = ET.fromstring(render_svg(scene, elements, preds))
    assert root.tag == SVG + "svg"
    strokes = {e.get("stroke") for e in root.iter(SVG + "polyline")}
    assert set(PALETTE.values()) & strokes
    assert root.find(f"{SVG}rect[@id='ego']").get("fill") == "#d62728"
    modes = [e for e in root.iter(SVG + "polyline") if e.get("class") == "mode"]
    assert len(modes) == 6 * len(scene.agents)


def test_zero_beta_draws_no_ellipses():
    scene, elements, _ = _fixture()
    flat = [dataclasses.replace(e, beta=np.zeros_like(e.beta)) for e in elements]
    svg = render_svg(scene, flat)
    assert "<ellipse" not in svg
    assert _radii(render_svg(scene, elements))


def test_doubling_beta_scales_radii_by_sqrt2():
    scene, elements, _ = _fixture()
    doubled = [dataclasses.replace(e, beta=2 * e.beta) for e in elements]
    a = np.array([ellipse_radius(b) for e in elements for b in e.beta if b > 0])
    b = np.array([ellipse_radius(b) for e in doubled for b in e.beta if b > 0])
    assert np.allclose(b / a, np.sqrt(2), rtol=1e-12)
    ra, rb = np.array(_radii(render_svg(scene, elements))), np.array(_radii(render_svg(scene, doubled)))
    assert np.allclose(rb / ra, np.sqrt(2), rtol=1e-3)


def test_band_opacity_follows_delta_c():
    scene, elements, _ = _fixture()
    svg = render_svg(scene, elements)
    for e in elements:
        m = re.search(rf'class="band" data-id="{e.id}" [^>]*stroke-opacity="([0-9.]+)"', svg)
        expected = float(np.max(e.delta_c_mean))
        if expected > 0:
            assert float(m.group(1)) == pytest.approx(expected, abs=1e-4)


def test_inconsistent_ids():
    scene, elements, preds = _fixture()
    bad = dataclasses.replace(elements[0], id=999)
    with pytest.raises(ValueError, match="999"):
        render_svg(scene, [bad])
    with pytest.raises(ValueError, match="agent"):
        render_svg(scene, elements, {12345: next(iter(preds.values()))})


def test_golden_file():
    scene, elements, preds = _fixture()
    svg = render_svg(scene, elements, preds)
    if os.environ.get("UNCTRAJ_REGEN_GOLDEN"):
        with open(GOLDEN, "w") as fh:
            fh.write(svg)
    with open(GOLDEN) as fh:
        assert svg == fh.read()
