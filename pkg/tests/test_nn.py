import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstcast.dataset import Scaler, SequenceSet
from burstcast.nn import (
    AdamState,
    EarlyStopping,
    ModelSpec,
    NonFiniteError,
    ReduceLROnPlateau,
    ShapeError,
    TrainConfig,
    TrainingError,
    adam_step,
    additive_attention,
    bilstm_forward,
    count_parameters,
    dropout_mask,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grads,
    lstm_cell_forward,
    lstm_forward,
    mse_loss,
    param_layout,
    predict,
    save_checkpoint,
    softmax,
    train,
)
from burstcast.nn.model import zero_params
from oracles import gradient_check, random_tiny_spec, scalar_lstm_cell, scalar_lstm_sequence


def rand_lstm(rng, n_in, d):
    return rng.normal(size=(n_in, 4 * d)), rng.normal(size=(d, 4 * d)), rng.normal(size=4 * d)


# --- cell -------------------------------------------------------------------


def test_zero_cell_gives_zero_state():
    W, U, b = np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8)
    h, c = lstm_cell_forward(np.zeros(3), np.zeros(2), np.zeros(2), W, U, b)
    assert np.all(h == 0) and np.all(c == 0)


def test_saturated_gates_keep_cell_state():
    d = 3
    b = np.zeros(4 * d)
    b[:d] = -800.0  # input gate closed
    b[d : 2 * d] = 800.0  # forget gate open
    c_prev = np.array([0.3, -1.2, 2.0])
    _, c = lstm_cell_forward(np.ones(2), np.zeros(d), c_prev, np.zeros((2, 4 * d)), np.zeros((d, 4 * d)), b)
    np.testing.assert_allclose(c, c_prev, atol=1e-15)


def test_cell_matches_scalar_loop_reference():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_in, d, n_b = (int(v) for v in rng.integers(1, 6, size=3))
        W, U, b = rand_lstm(rng, n_in, d)
        x = rng.normal(size=(n_b, n_in))
        h0 = rng.normal(size=(n_b, d))
        c0 = rng.normal(size=(n_b, d))
        h, c = lstm_cell_forward(x, h0, c0, W, U, b)
        for r in range(n_b):
            hr, cr = scalar_lstm_cell(x[r], h0[r], c0[r], W.tolist(), U.tolist(), b.tolist())
            assert np.max(np.abs(h[r] - hr)) < 1e-12
            assert np.max(np.abs(c[r] - cr)) < 1e-12


def test_sequence_forward_matches_scalar_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n_in, d, n_l = (int(v) for v in rng.integers(1, 5, size=3))
        W, U, b = rand_lstm(rng, n_in, d)
        X = rng.normal(size=(2, n_l, n_in))
        H, _ = lstm_forward(X, W, U, b)
        for r in range(2):
            ref = np.array(scalar_lstm_sequence(X[r].tolist(), W.tolist(), U.tolist(), b.tolist()))
            assert np.max(np.abs(H[r] - ref)) < 1e-12


def test_cell_shape_errors():
    with pytest.raises(ShapeError):
        lstm_cell_forward(np.zeros(3), np.zeros(2), np.zeros(2), np.zeros((4, 8)), np.zeros((2, 8)), np.zeros(8))
    with pytest.raises(ShapeError):
        lstm_forward(np.zeros((2, 3)), np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))


# --- bidirectional ------------------------------------------------------------


def test_bilstm_width_and_symmetry():
    rng = np.random.default_rng(2)
    p = rand_lstm(rng, 4, 32)
    X = rng.normal(size=(2, 6, 4))
    H, _ = bilstm_forward(X, p, p)
    assert H.shape == (2, 6, 64)
    Hr, _ = bilstm_forward(X[:, ::-1], p, p)
    # with shared weights, the reverse half on X is the forward half on reversed X, reversed in time
    np.testing.assert_allclose(H[..., 32:], Hr[:, ::-1, :32], atol=1e-14)


def test_bilstm_single_step():
    rng = np.random.default_rng(3)
    f, bw = rand_lstm(rng, 3, 2), rand_lstm(rng, 3, 2)
    X = rng.normal(size=(1, 1, 3))
    H, _ = bilstm_forward(X, f, bw)
    hf, _ = lstm_cell_forward(X[0, 0], np.zeros(2), np.zeros(2), *f)
    hb, _ = lstm_cell_forward(X[0, 0], np.zeros(2), np.zeros(2), *bw)
    np.testing.assert_allclose(H[0, 0], np.concatenate([hf, hb]), atol=1e-15)


def test_bilstm_last_only_matches_full():
    rng = np.random.default_rng(4)
    f, bw = rand_lstm(rng, 3, 4), rand_lstm(rng, 3, 4)
    X = rng.normal(size=(5, 7, 3))
    full, _ = bilstm_forward(X, f, bw)
    last, _ = bilstm_forward(X, f, bw, last_only=True)
    np.testing.assert_allclose(last[:, 0], full[:, -1], atol=1e-14)


# --- attention ----------------------------------------------------------------


def test_softmax_closed_form():
    alpha = softmax(np.log(np.array([1.0, 2.0, 4.0, 8.0])))
    assert np.max(np.abs(alpha - np.array([1, 2, 4, 8]) / 15)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-300, 300), min_size=1, max_size=40), st.floats(-100, 100))
def test_softmax_simplex_and_shift(scores, shift):
    s = np.array(scores)
    a = softmax(s)
    assert np.all(a >= 0) and abs(a.sum() - 1) < 1e-12
    assert np.max(np.abs(softmax(s + shift) - a)) < 1e-12


def test_attention_identical_states_uniform():
    rng = np.random.default_rng(5)
    H = np.tile(rng.normal(size=4), (6, 1))
    ctx, alpha, _ = additive_attention(H, rng.normal(size=(3, 4)), rng.normal(size=3))
    np.testing.assert_allclose(alpha, np.full(6, 1 / 6), atol=1e-15)
    np.testing.assert_allclose(ctx, H[0], atol=1e-14)


def test_attention_saturation_picks_one_state():
    # one hidden state drives tanh to +1 on every unit, the rest to ~0
    H = np.zeros((5, 2))
    H[3] = [50.0, 50.0]
    Wa = np.eye(2)
    v = np.array([40.0, 40.0])
    ctx, alpha, _ = additive_attention(H, Wa, v)
    assert alpha[3] > 1 - 1e-12
    np.testing.assert_allclose(ctx, H[3], atol=1e-9)


# --- full model ---------------------------------------------------------------


def test_parameter_counts():
    assert count_parameters(ModelSpec("bilstm", 16, 30)) == 39489
    assert count_parameters(ModelSpec("lstm_attention", 16, 30)) == 35297
    assert count_parameters(ModelSpec("uni_lstm", 16, 30)) == 15681
    one_layer = ModelSpec("uni_lstm", 16, 30, hidden=(32,))
    layer = dict(param_layout(one_layer))
    assert sum(int(np.prod(layer[k])) for k in ("lstm0.W", "lstm0.U", "lstm0.b")) == 6272
    spec = ModelSpec("bilstm", 16, 30)
    dense = dict(param_layout(spec))
    assert int(np.prod(dense["dense.W"])) + dense["dense.b"][0] == 2080


def test_attention_adds_parameters_at_equal_widths():
    uni = ModelSpec("uni_lstm", 16, 30, hidden=(64, 32))
    att = ModelSpec("lstm_attention", 16, 30, hidden=(64, 32))
    assert count_parameters(uni) < count_parameters(att)


def test_zero_params_predict_zero():
    rng = np.random.default_rng(6)
    for v in ("uni_lstm", "lstm_attention", "bilstm"):
        spec = ModelSpec(v, 3, 4, hidden=(3, 2), dense=4)
        assert np.all(predict(spec, zero_params(spec), rng.normal(size=(5, 4, 3))) == 0)


def test_zero_dropout_train_equals_eval():
    rng = np.random.default_rng(7)
    for v in ("uni_lstm", "lstm_attention", "bilstm"):
        spec = ModelSpec(v, 3, 4, hidden=(3, 2), dense=4, dropout=0.0)
        p = init_params(spec, rng)
        X = rng.normal(size=(5, 4, 3))
        a, _ = forward(spec, p, X, train=True, rng=np.random.default_rng(0))
        b, _ = forward(spec, p, X)
        assert np.array_equal(a, b)


def test_forward_shape_error():
    spec = ModelSpec("bilstm", 3, 4, hidden=(2, 2))
    with pytest.raises(ShapeError):
        forward(spec, init_params(spec, np.random.default_rng(0)), np.zeros((2, 4, 5)))


def test_mse_loss_examples():
    assert mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 5.0
    y = np.array([1.0, 2.0])
    assert mse_loss(y, y) == 0.0
    r = np.array([0.5, -1.5, 2.0])
    assert mse_loss(2 * r, np.zeros(3)) == pytest.approx(4 * mse_loss(r, np.zeros(3)))
    with pytest.raises(ShapeError):
        mse_loss(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("variant", ["uni_lstm", "lstm_attention", "bilstm"])
def test_gradients_match_finite_differences(variant):
    for seed in range(5):
        assert gradient_check(random_tiny_spec(variant, seed), seed) < 1e-4


def test_zero_residual_gives_zero_gradients():
    rng = np.random.default_rng(8)
    spec = ModelSpec("lstm_attention", 2, 3, hidden=(3, 2), dense=3, dropout=0.0)
    p = init_params(spec, rng)
    X = rng.normal(size=(4, 3, 2))
    y = predict(spec, p, X)
    _, grads = loss_and_grads(spec, p, X, y)
    assert all(np.all(g == 0) for g in grads.values())


def test_unused_parameters_have_no_gradient():
    spec = ModelSpec("bilstm", 2, 3, hidden=(2, 2), dense=2)
    p = init_params(spec, np.random.default_rng(0))
    _, grads = loss_and_grads(spec, p, np.ones((2, 3, 2)), np.zeros(2))
    assert "attn.W" not in grads and "attn.v" not in grads
    assert set(grads) == set(p)


def test_dropout_mask_expectation():
    rng = np.random.default_rng(9)
    masks = np.stack([dropout_mask(rng, (200,), 0.2) for _ in range(500)])
    vals = masks.ravel()
    assert abs(vals.mean() - 1.0) < 3 * vals.std() / math.sqrt(vals.size)
    assert dropout_mask(rng, (3,), 0.0) is None


# --- optimizer and schedules --------------------------------------------------


def test_adam_first_step_is_signed_lr():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.3, -4.0, 1e-3])}
    adam_step(p, g, AdamState(), lr=0.01)
    np.testing.assert_allclose(p["w"], [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], rtol=1e-5)


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, 2.0])}
    st_ = AdamState()
    for _ in range(10):
        adam_step(p, {"w": np.zeros(2)}, st_, lr=0.1)
    assert np.array_equal(p["w"], [1.0, 2.0])


def test_adam_minimises_square():
    p = {"w": np.array([1.0])}
    st_ = AdamState()
    for _ in range(100):
        adam_step(p, {"w": 2 * p["w"]}, st_, lr=0.1)
    assert abs(p["w"][0]) < 0.1


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, AdamState(), lr=0.1)


def test_plateau_halves_after_patience():
    sch = ReduceLROnPlateau(lr=1e-3, factor=0.5, patience=5)
    lrs = [sch.step(1.0) for _ in range(11)]
    assert lrs[4] == 1e-3 and lrs[5] == 5e-4 and lrs[10] == 2.5e-4


def test_early_stopping_constant_metric():
    es = EarlyStopping(patience=15)
    stopped = None
    for epoch in range(1, 51):
        es.update(epoch, 3.0)
        if es.should_stop:
            stopped = epoch
            break
    assert stopped == 16 and es.best_epoch == 1


# --- training -----------------------------------------------------------------


def teacher_data(seed, n, lookback=4, n_features=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, lookback, n_features))
    w = np.array([0.7, -0.4])
    y = X[:, -1, :] @ w
    return SequenceSet(
        inputs=X,
        targets=y,
        targets_scaled=y,
        geo_index=np.zeros(n, dtype=int),
        target_week=np.arange(n),
        target_row=np.arange(n),
        lookback=lookback,
    )


IDENTITY = Scaler(np.zeros(2), np.ones(2), 0.0, 1.0)


def test_training_loss_falls_on_linear_teacher():
    spec = ModelSpec("uni_lstm", 2, 4, hidden=(8, 8), dense=8, dropout=0.0)
    model = train(spec, teacher_data(0, 256), teacher_data(1, 64), TrainConfig(learning_rate=3e-3, max_epochs=20), IDENTITY)
    assert model.history[19]["train_loss"] < model.history[0]["train_loss"]


def test_training_is_deterministic_and_checkpoint_roundtrips(tmp_path):
    spec = ModelSpec("bilstm", 2, 4, hidden=(3, 3), dense=4)
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=4, seed=5)
    a = train(spec, teacher_data(0, 64), teacher_data(1, 32), cfg, IDENTITY)
    b = train(spec, teacher_data(0, 64), teacher_data(1, 32), cfg, IDENTITY)
    assert a.history == b.history
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    save_checkpoint(a, tmp_path / "m.json")
    c = load_checkpoint(tmp_path / "m.json")
    assert all(np.array_equal(a.params[k], c.params[k]) for k in a.params)
    X = teacher_data(2, 8).inputs
    assert np.array_equal(a.predict(X), c.predict(X))


def test_best_checkpoint_is_min_validation_rmse():
    spec = ModelSpec("uni_lstm", 2, 4, hidden=(4, 4), dense=4)
    m = train(spec, teacher_data(0, 64), teacher_data(1, 32), TrainConfig(learning_rate=1e-2, max_epochs=8), IDENTITY)
    rmses = [h["val_rmse"] for h in m.history]
    assert m.best_epoch == int(np.argmin(rmses)) + 1
    val = teacher_data(1, 32)
    got = math.sqrt(np.mean((m.predict(val.inputs) - val.targets) ** 2))
    assert got == pytest.approx(min(rmses), rel=1e-12)


def test_training_rejects_empty_or_mismatched():
    spec = ModelSpec("uni_lstm", 2, 4, hidden=(2, 2))
    empty = teacher_data(0, 0)
    with pytest.raises(TrainingError):
        train(spec, empty, teacher_data(1, 4), TrainConfig(max_epochs=1), IDENTITY)
    with pytest.raises(TrainingError):
        train(ModelSpec("uni_lstm", 2, 5, hidden=(2, 2)), teacher_data(0, 8), teacher_data(1, 4), TrainConfig(), IDENTITY)
