import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soisep.blstm import (
    Batch,
    NetworkConfig,
    NetworkWeights,
    RMSPropState,
    TrainingDiverged,
    batch_loss_and_grads,
    estimate_memory,
    evaluate_loss,
    forward,
    load_checkpoint,
    msa_loss,
    msa_loss_grad,
    param_shapes,
    parameter_count,
    predict_proba,
    preprocess,
    rmsprop_update,
    save_checkpoint,
    train,
    train_step,
    vad_mask,
)


def toy_batch(T=6, F=5, B=2, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(rng.standard_normal((B, T, 2 * F)), rng.random((B, T, F)) > 0.5,
                 rng.uniform(0.1, 2.0, (B, T, F)), rng.random((B, T, F)) > 0.2)


def finite_difference_errors(weights, batch, step=1e-4):
    _, grads = batch_loss_and_grads(batch, weights)
    worst = {}
    for name, w in weights.params.items():
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + step
            up = batch_loss_and_grads(batch, weights)[0]
            w[idx] = orig - step
            down = batch_loss_and_grads(batch, weights)[0]
            w[idx] = orig
            num[idx] = (up - down) / (2 * step)
        scale = np.maximum(np.abs(num), np.abs(grads[name]))
        rel = np.abs(num - grads[name]) / np.maximum(scale, 1e-6)
        worst[name] = float(rel.max())
    return worst


@pytest.mark.parametrize("layers", [1, 2])
def test_gradients_match_finite_differences(layers):
    w = NetworkWeights.init(layers, 4, 5, seed=3)
    errors = finite_difference_errors(w, toy_batch())
    assert max(errors.values()) < 1e-3, errors


def swap_directions(w: NetworkWeights):
    H = w.hidden
    p = {}
    for k, v in w.params.items():
        if k.startswith("l"):
            l, d, name = k.split(".")
            other = "bw" if d == "fw" else "fw"
            v = w.params[f"{l}.{other}.{name}"]
            if name == "Wx" and l != "l0":
                v = np.concatenate([v[H:], v[:H]])
        elif k == "fc.W":
            v = np.concatenate([v[H:], v[:H]])
        p[k] = v.copy()
    return NetworkWeights(w.layers, w.hidden, w.n_freq, p)


def test_bidirectional_time_reversal_symmetry():
    w = NetworkWeights.init(3, 6, 5, seed=1)
    x = np.random.default_rng(2).standard_normal((9, 10))
    a = predict_proba(x, w)
    b = predict_proba(x[::-1], swap_directions(w))
    np.testing.assert_allclose(a, b[::-1], atol=1e-12)


def test_zero_weights_give_half():
    w = NetworkWeights.zeros(2, 8, 5)
    prob = predict_proba(np.random.default_rng(0).standard_normal((7, 10)), w)
    np.testing.assert_allclose(prob, 0.5)
    masks = forward(np.zeros((7, 10)), w)
    assert not masks.soi.any() and masks.int.all()


def test_float32_masks_agree():
    cfg = NetworkConfig(layers=2, hidden=32)
    w = NetworkWeights.for_config(cfg, seed=0)
    rng = np.random.default_rng(1)
    x = preprocess(rng.standard_normal(cfg.buffer_len), rng.standard_normal(cfg.buffer_len), cfg)
    m64 = forward(x, w).soi
    m32 = forward(x, w.astype(np.float32)).soi
    assert np.mean(m64 == m32) >= 0.999


def test_feature_width_checked():
    with pytest.raises(ValueError):
        predict_proba(np.zeros((3, 7)), NetworkWeights.zeros(1, 2, 5))


def test_preprocess_shape():
    cfg = NetworkConfig(buffer_len=8192)
    x = preprocess(np.random.default_rng(0).standard_normal(8192), np.zeros(8192), cfg)
    assert x.shape == (33, 514)
    assert not np.any(x[:, 257:])  # silent interference channel standardizes to zeros
    with pytest.raises(ValueError):
        preprocess(np.zeros(100), np.zeros(100), cfg)


def test_vad_mask_threshold():
    mag = np.array([[1.0, 0.1, 0.011, 0.009]])
    np.testing.assert_array_equal(vad_mask(mag, 40.0), [[True, True, True, False]])


def test_msa_loss_values_and_gradient():
    rng = np.random.default_rng(0)
    p = rng.random((4, 3))
    o = rng.random((4, 3)) > 0.5
    s = rng.uniform(0.5, 2, (4, 3))
    v = rng.random((4, 3)) > 0.3
    loss, grad = msa_loss_grad(p, o, s, v)
    assert np.isclose(loss, msa_loss(p, 1 - p, o, ~o, s, v))
    assert np.isclose(loss, np.sum(((o - v * p) * s) ** 2) + np.sum(((p - o) * s) ** 2))
    eps = 1e-6
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        q = p.copy()
        q[idx] += eps
        num[idx] = (msa_loss_grad(q, o, s, v)[0] - loss) / eps
    np.testing.assert_allclose(grad, num, atol=1e-4)
    perfect, _ = msa_loss_grad(o.astype(float), o, s, np.ones_like(v))
    assert perfect == 0.0


# --- parameter count -------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(layers=st.integers(1, 5), hidden=st.integers(1, 300), n_freq=st.integers(2, 600))
def test_parameter_count_matches_shapes(layers, hidden, n_freq):
    n = sum(int(np.prod(s)) for s in param_shapes(layers, hidden, n_freq).values())
    assert parameter_count(layers, hidden, n_freq) == n


def test_recommended_size():
    cfg = NetworkConfig()
    assert parameter_count(3, 200, 257) == 3_273_314
    assert NetworkWeights.for_config(cfg).count() == 3_273_314
    assert np.isclose(estimate_memory(cfg), 13.093256)


@pytest.mark.parametrize("kwargs", [dict(layers=0), dict(hidden=0), dict(buffer_len=1000),
                                    dict(fft_len=511), dict(vad_db=-1.0), dict(learning_rate=0.0),
                                    dict(momentum=1.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        NetworkConfig(**kwargs)


# --- optimizer ---------------------------------------------------------------

def test_rmsprop_zero_gradient_is_noop():
    w = NetworkWeights.init(1, 3, 4, seed=0)
    state = RMSPropState.zeros_like(w)
    zero = {k: np.zeros_like(v) for k, v in w.params.items()}
    new, state2 = rmsprop_update(w, zero, state, lr=1e-2)
    for k in w.params:
        np.testing.assert_array_equal(new.params[k], w.params[k])
    assert state2.step == 1


def test_rmsprop_first_step_size():
    w = NetworkWeights.zeros(1, 2, 3)
    g = {k: np.full_like(v, 3.0) for k, v in w.params.items()}
    new, _ = rmsprop_update(w, g, RMSPropState.zeros_like(w), lr=0.01, decay=0.9)
    expected = -0.01 * 3.0 / np.sqrt(0.1 * 9.0 + 1e-8)
    for v in new.params.values():
        np.testing.assert_allclose(v, expected)


def test_step_descends_at_small_rate():
    cfg = NetworkConfig(layers=1, hidden=8, buffer_len=4096, learning_rate=1e-5)
    batch = toy_batch(T=17, F=257, B=4, seed=1)
    w = NetworkWeights.for_config(cfg, seed=0)
    state = RMSPropState.zeros_like(w)
    before = evaluate_loss(batch, w)
    for _ in range(3):
        w, state, _ = train_step(batch, w, state, cfg)
    assert evaluate_loss(batch, w) < before


def test_vad_gate_sets_loss_floor():
    # a gated bin whose ideal mask is SOI keeps residual O_soi whatever the prediction
    o = np.array([[True, True, False]])
    s = np.array([[2.0, 1.0, 1.0]])
    v = np.array([[False, True, True]])
    loss, grad = msa_loss_grad(o.astype(float), o, s, v)
    assert np.isclose(loss, 4.0)
    assert grad[0, 0] == 0.0


def test_overfits_single_example():
    cfg = NetworkConfig(layers=1, hidden=32, buffer_len=4096, learning_rate=3e-3)
    batch = toy_batch(T=17, F=257, B=1, seed=2)
    batch.vad[:] = True
    w = NetworkWeights.for_config(cfg, seed=0)
    start = evaluate_loss(batch, w)
    state = RMSPropState.zeros_like(w)
    for step in range(5000):
        w, state, loss = train_step(batch, w, state, cfg)
        if loss < 0.01 * start:
            break
    assert evaluate_loss(batch, w) < 0.01 * start, step


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected():
    cfg = NetworkConfig(layers=1, hidden=4, buffer_len=4096)
    batch = toy_batch(T=17, F=257, B=1)
    batch.magnitude[0, 0, 0] = np.inf
    w = NetworkWeights.for_config(cfg)
    with pytest.raises(TrainingDiverged):
        train_step(batch, w, RMSPropState.zeros_like(w), cfg)


# --- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = NetworkConfig(layers=2, hidden=5, buffer_len=4096, vad_db=30.0)
    w = NetworkWeights.for_config(cfg, seed=4)
    state = RMSPropState.zeros_like(w)
    save_checkpoint(tmp_path / "a.ckpt", w, cfg, state)
    w2, cfg2, state2 = load_checkpoint(tmp_path / "a.ckpt")
    assert cfg2 == cfg and state2.step == 0
    for k in w.params:
        np.testing.assert_array_equal(w.params[k], w2.params[k])
    save_checkpoint(tmp_path / "b.ckpt", w2, cfg2, state2)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = NetworkConfig(layers=1, hidden=6, buffer_len=4096, learning_rate=1e-3)
    data = toy_batch(T=17, F=257, B=6, seed=5)
    full_w, full_s, _ = train(data, cfg, 4, batch_size=6, seed=1)
    w, s, _ = train(data, cfg, 2, batch_size=6, seed=1, checkpoint_path=tmp_path / "c.ckpt")
    w, cfg2, s = load_checkpoint(tmp_path / "c.ckpt")
    w, s, _ = train(data, cfg2, 2, batch_size=6, seed=1, weights=w, state=s)
    assert s.step == full_s.step == 4
    for k in w.params:
        np.testing.assert_allclose(w.params[k], full_w.params[k], atol=1e-12)


def test_train_log(tmp_path):
    cfg = NetworkConfig(layers=1, hidden=4, buffer_len=4096, learning_rate=1e-3)
    train(toy_batch(T=17, F=257, B=3), cfg, 3, batch_size=2, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,wall_time" and len(lines) == 4


def test_msa_loss_examples():
    rng = np.random.default_rng(3)
    o = rng.random((5, 7)) > 0.5
    ones = np.ones((5, 7))
    confused = msa_loss((~o).astype(float), o.astype(float), o, ~o, ones, ones)
    assert confused == 2 * o.size
    assert msa_loss(rng.random((5, 7)), rng.random((5, 7)), o, ~o, np.zeros((5, 7)), ones) == 0.0
    with pytest.raises(ValueError):
        msa_loss(ones, ones, o, ~o, ones[:2], ones)
