import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unctraj import kernels
from unctraj.dual_head import DualHeadModel, estimate_vertices
from unctraj.map_model import FUTURE_LEN, HISTORY_LEN
from unctraj.noise_sim import NoiseConfig, corrupt_observation, generate_scene, uniform_confusion
from unctraj.predictor import (
    BETA_COL,
    DELTA_C_COL,
    EMBED,
    K_MODES,
    TOKEN_WIDTH,
    AgentSample,
    MapToken,
    PredictionSet,
    PredictorConfig,
    PredictorModel,
    agent_samples,
    canonical_variant,
    constant_velocity_baseline,
    encode_map,
    grad_check,
    mode_weights,
    pred_trace_to_csv,
    predict,
    predict_batch,
    predictions_to_csv,
    prepare,
    token_array,
    token_mask,
    train_predictor,
)


def _random_tokens(rng, n):
    mu = rng.uniform(0.05, 0.95, size=(n, 2))
    beta = rng.exponential(0.5, size=(n, 1))
    c_bar = rng.dirichlet(np.ones(4), size=n)
    delta_c = rng.uniform(0, 0.2, size=(n, 4))
    return np.hstack([mu, beta, c_bar, delta_c])


def _straight_history(speed=5.0, heading=0.0, start=(0.0, 0.0)):
    t = np.arange(HISTORY_LEN) * 0.1
    d = np.array([math.cos(heading), math.sin(heading)])
    return np.asarray(start) + speed * t[:, None] * d


def _scene_samples(layout, seeds, noise=0.3, eps=0.2, map_seed=0):
    cfg = NoiseConfig(pos_scale_b=noise, confusion=uniform_confusion(eps), seed=1)
    m = DualHeadModel.init(map_seed)
    out = []
    for s in seeds:
        scene = generate_scene(layout, s)
        out += agent_samples(scene, estimate_vertices(m, corrupt_observation(scene, cfg)))
    return out


def _ego_future(batch):
    return np.einsum("ntc,njc->ntj", batch.future, batch.rot) + batch.origin[:, None]


@pytest.fixture(scope="module")
def small_batch():
    return prepare(_scene_samples("intersection", range(3)))


def test_variants_and_masks():
    assert canonical_variant("no_uncertainty") == "baseline"
    assert canonical_variant("with_uncertainty") == "both"
    assert token_mask("baseline")[BETA_COL].sum() == 0 and token_mask("baseline")[DELTA_C_COL].sum() == 0
    assert token_mask("pos_only")[BETA_COL].all() and not token_mask("pos_only")[DELTA_C_COL].any()
    assert token_mask("sem_only")[DELTA_C_COL].all() and not token_mask("sem_only")[BETA_COL].any()
    assert token_mask("both").all()
    with pytest.raises(ValueError):
        canonical_variant("everything")


def test_map_token_validation():
    tok = MapToken([0.5, 0.5], 0.2, [0.25] * 4, [0.0] * 4)
    assert tok.as_array().shape == (TOKEN_WIDTH,)
    assert np.array_equal(token_array([tok]), tok.as_array()[None])
    with pytest.raises(ValueError):
        MapToken([0.5, 0.5], -0.1, [0.25] * 4, [0.0] * 4)
    with pytest.raises(ValueError):
        MapToken([0.5, 0.5], 0.1, [0.5] * 4, [0.0] * 4)
    with pytest.raises(ValueError):
        MapToken([0.5, 0.5], 0.1, [0.25] * 4, [1.5, 0, 0, 0])


def test_prediction_set_validation():
    with pytest.raises(ValueError):
        PredictionSet(np.zeros((5, FUTURE_LEN, 2)), np.full(5, 0.2))
    with pytest.raises(ValueError):
        PredictionSet(np.zeros((K_MODES, FUTURE_LEN, 2)), np.full(K_MODES, 0.5))
    bad = np.zeros((K_MODES, FUTURE_LEN, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        PredictionSet(bad, np.full(K_MODES, 1 / K_MODES))


def test_encode_map_single_token_is_its_embedding():
    m = PredictorModel.init(1)
    tok = _random_tokens(np.random.default_rng(0), 1)
    P = m.params
    expected = np.tanh(((tok - m.token_mean) / m.token_std * m.mask) @ P["embed.W"].T + P["embed.b"])[0]
    assert np.array_equal(encode_map(m, tok), expected)


def test_encode_map_empty_is_zero_context():
    out = encode_map(PredictorModel.init(0), np.zeros((0, TOKEN_WIDTH)))
    assert out.shape == (EMBED,) and not out.any()


@given(st.integers(0, 10_000), st.integers(1, 30))
def test_encode_map_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    tok = _random_tokens(rng, n)
    m = PredictorModel.init(seed % 7)
    assert np.array_equal(encode_map(m, tok), encode_map(m, tok[rng.permutation(n)]))


def test_encode_map_sees_beta():
    m = PredictorModel.init(3)
    tok = _random_tokens(np.random.default_rng(1), 5)
    doubled = tok.copy()
    doubled[:, BETA_COL] *= 2
    assert np.linalg.norm(encode_map(m, tok) - encode_map(m, doubled)) > 0


@given(st.integers(0, 10_000))
def test_masking_exactness(seed):
    rng = np.random.default_rng(seed)
    hist = _straight_history(rng.uniform(2, 10), rng.uniform(-3, 3))
    tok = _random_tokens(rng, 12)
    mu = (tok[:, 0:2] - 0.5) * 0.3 + 0.5  # keep tokens near the agent
    tok[:, 0:2] = mu
    changed_beta, changed_dc = tok.copy(), tok.copy()
    changed_beta[:, BETA_COL] = rng.exponential(3.0, size=(12, 1))
    changed_dc[:, DELTA_C_COL] = rng.uniform(0, 1, size=(12, 4))
    for variant, other in (("baseline", changed_beta), ("baseline", changed_dc), ("pos_only", changed_dc), ("sem_only", changed_beta)):
        m = PredictorModel.init(seed % 5, variant)
        a, b = predict(m, hist, tok), predict(m, hist, other)
        assert np.array_equal(a.modes, b.modes) and np.array_equal(a.scores, b.scores)


def test_zero_model_stays_at_last_point():
    p = predict(PredictorModel.zeros(), np.zeros((HISTORY_LEN, 2)), _random_tokens(np.random.default_rng(0), 4))
    assert not p.modes.any()
    assert np.allclose(p.scores, 1 / K_MODES)
    moved = predict(PredictorModel.zeros(), _straight_history(start=(3.0, -2.0)), np.zeros((0, TOKEN_WIDTH)))
    assert np.array_equal(moved.modes, np.broadcast_to(_straight_history(start=(3.0, -2.0))[-1], moved.modes.shape))


def test_predict_deterministic_and_valid(small_batch):
    m = PredictorModel.init(2)
    a = predict_batch(m, small_batch)
    b = predict_batch(m, small_batch)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].shape == (len(small_batch), K_MODES, FUTURE_LEN, 2)
    assert np.allclose(a[1].sum(axis=1), 1.0) and np.all(a[1] >= 0)


def test_predict_rejects_bad_history():
    m = PredictorModel.init(0)
    with pytest.raises(ValueError):
        predict(m, np.zeros((19, 2)), [])
    h = np.zeros((HISTORY_LEN, 2))
    h[3, 1] = np.inf
    with pytest.raises(ValueError):
        predict(m, h, [])


def test_prediction_is_rotation_and_translation_equivariant():
    rng = np.random.default_rng(5)
    m = PredictorModel.init(4)
    hist = _straight_history(6.0, 0.3, (2.0, 1.0)) + rng.normal(0, 0.05, size=(HISTORY_LEN, 2))
    tok = _random_tokens(rng, 10)
    tok[:, 0:2] = (tok[:, 0:2] - 0.5) * 0.3 + 0.5
    shift = np.array([1.5, -0.75])
    moved = tok.copy()
    moved[:, 0] += shift[0] / 60.0
    moved[:, 1] += shift[1] / 30.0
    a = predict(m, hist, tok)
    b = predict(m, hist + shift, moved)
    assert np.allclose(b.modes, a.modes + shift, atol=1e-9)
    assert np.allclose(a.scores, b.scores, atol=1e-12)


# --- constant velocity --------------------------------------------------


def test_cv_straight_line():
    hist = np.column_stack([np.arange(HISTORY_LEN) * 0.1, np.zeros(HISTORY_LEN)])
    p = constant_velocity_baseline(hist)
    assert p.modes[0, -1] == pytest.approx([hist[-1, 0] + 3.0, 0.0], abs=1e-12)
    assert np.allclose(p.scores, 1 / K_MODES)
    assert p.modes[5, -1] == pytest.approx([hist[-1, 0] + 2.4, 0.0], abs=1e-12)
    heading = [math.degrees(math.atan2(*(m[-1] - hist[-1])[::-1])) for m in p.modes[1:5]]
    assert heading == pytest.approx([10, -10, 20, -20])


def test_cv_zero_velocity():
    p = constant_velocity_baseline(np.tile([4.0, -1.0], (HISTORY_LEN, 1)))
    assert np.all(p.modes == [4.0, -1.0])


def test_cv_needs_two_points():
    with pytest.raises(ValueError):
        constant_velocity_baseline(np.zeros((1, 2)))


def test_cv_circular_arc_gap():
    R, w = 20.0, 0.02  # radius (m), angle per step (rad)
    th = (np.arange(HISTORY_LEN) - (HISTORY_LEN - 1)) * w
    hist = R * np.column_stack([np.cos(th), np.sin(th)])
    future = R * np.column_stack([np.cos(w * np.arange(1, 31)), np.sin(w * np.arange(1, 31))])
    p = constant_velocity_baseline(hist)
    # closed form: last chord v = R (1 - cos w, sin w); mode k rotates it by
    # its heading offset and scales it; the endpoint is (R, 0) + 30 v_k
    expected = []
    for deg, f in zip((0, 10, -10, 20, -20, 0), (1, 1, 1, 1, 1, 0.8)):
        a = math.radians(deg)
        vx, vy = R * (1 - math.cos(w)), R * math.sin(w)
        ex = R + 30 * f * (math.cos(a) * vx - math.sin(a) * vy)
        ey = 30 * f * (math.sin(a) * vx + math.cos(a) * vy)
        expected.append(math.hypot(ex - R * math.cos(30 * w), ey - R * math.sin(30 * w)))
    ade, fde = kernels.mode_displacements(p.modes[None], future[None])
    assert fde[0] == pytest.approx(expected, abs=1e-9)
    assert fde[0, 0] > 0  # the tangent mode leaves the arc
    assert fde[0].min() == pytest.approx(min(expected), abs=1e-9)


# --- training -----------------------------------------------------------


def test_lr_zero_keeps_parameters(small_batch):
    m0 = PredictorModel.init(3)
    m, trace = train_predictor(small_batch, PredictorConfig(learning_rate=0.0, epochs=2, seed=3))
    for k in m0.params:
        assert np.array_equal(m.params[k], m0.params[k])
    assert len({r.total for r in trace}) == 1


def test_training_deterministic(small_batch):
    cfg = PredictorConfig(epochs=2, batch_size=16, seed=1)
    a = train_predictor(small_batch, cfg)
    b = train_predictor(small_batch, cfg)
    assert pred_trace_to_csv(a[1]) == pred_trace_to_csv(b[1])
    assert a[0].dumps() == b[0].dumps()
    assert a[1][-1].total <= a[1][0].total


def test_training_needs_futures():
    with pytest.raises(ValueError):
        train_predictor([AgentSample(np.zeros((HISTORY_LEN, 2)), np.zeros((0, TOKEN_WIDTH)))], PredictorConfig())
    with pytest.raises(ValueError):
        train_predictor([], PredictorConfig())


def test_checkpoint_round_trip(small_batch):
    m, _ = train_predictor(small_batch, PredictorConfig(epochs=1, seed=2, variant="pos_only"))
    back = PredictorModel.loads(m.dumps())
    assert back.variant == "pos_only"
    assert np.array_equal(back.token_mean, m.token_mean) and np.array_equal(back.token_std, m.token_std)
    assert np.array_equal(predict_batch(back, small_batch)[0], predict_batch(m, small_batch)[0])


@pytest.mark.parametrize("seed", range(3))
def test_grad_check(small_batch, seed):
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(small_batch), size=2, replace=False)
    assert grad_check(PredictorModel.init(seed), small_batch.subset(idx), 1e-5) < 1e-4


def test_grad_check_relaxed(small_batch):
    assert grad_check(PredictorModel.init(5), small_batch.subset([0, 1]), 1e-5, relax=0.05) < 1e-4


@given(st.lists(st.integers(0, K_MODES - 1), min_size=1, max_size=20), st.floats(0.0, 0.99))
def test_mode_weights_rows_sum_to_one(best, relax):
    w = mode_weights(np.array(best), relax)
    assert np.allclose(w.sum(axis=1), 1.0)
    assert np.allclose(w[np.arange(len(best)), best], 1.0 - relax)
    if relax == 0.0:
        assert np.count_nonzero(w) == len(best)


def test_relax_validated():
    with pytest.raises(ValueError):
        PredictorConfig(wta_relax=1.0)


def test_straight_agents_learned():
    train_batch = prepare(_scene_samples("straight", range(60)))
    test_batch = prepare(_scene_samples("straight", range(1000, 1030)))
    m, _ = train_predictor(train_batch, PredictorConfig(epochs=15, batch_size=32, seed=0))
    modes, _ = predict_batch(m, test_batch)
    _, fde = kernels.mode_displacements(modes, _ego_future(test_batch))
    assert np.mean(fde.min(axis=1) <= 2.0) >= 0.9


def test_prediction_dump():
    p = constant_velocity_baseline(_straight_history())
    text = predictions_to_csv([(7, 2, p)])
    lines = text.splitlines()
    assert lines[0] == "scene_id,agent_id,mode,step,x,y,score"
    assert len(lines) == 1 + K_MODES * FUTURE_LEN
    first = lines[1].split(",")
    assert first[:4] == ["7", "2", "0", "1"]
    assert float(first[4]) == p.modes[0, 0, 0] and float(first[6]) == pytest.approx(1 / 6)
