import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laa_detect.errors import ConfigError, NumericError, ParseError, ShapeError, TrainingError
from laa_detect.nn import (
    CellState, LstmParams, MlpParams, TrainConfig, bptt, lstm_cell_forward, mlp_backprop, mlp_forward,
    mlp_predict, mlp_train, predict, sequence_forward, train,
)
from laa_detect.nn.lstm import bce, sequence_logit
from laa_detect.nn.params import map_params, tensors
from laa_detect.nn.training import fit
from laa_detect.nn.serialize import load_model, model_from_dict, model_to_dict, save_model, write_history
from oracles import central_difference, reference_lstm, relative_error

LSTM_FIELDS = [f.name for f in dataclasses.fields(LstmParams)]
MLP_FIELDS = [f.name for f in dataclasses.fields(MlpParams)]


def random_lstm(rng, F, H, scale=0.5):
    p = LstmParams.initialize(F, H, rng, scale)
    for name in ("b_f", "b_i", "b_c", "b_o"):
        setattr(p, name, rng.uniform(-scale, scale, size=H))
    p.b_out = float(rng.uniform(-scale, scale))
    return p


def max_grad_error(loss_fn, analytic, params, names):
    numeric = central_difference(loss_fn, params, names)
    worst = 0.0
    for name in names:
        a = np.atleast_1d(np.asarray(getattr(analytic, name), dtype=float)).ravel()
        n = np.atleast_1d(np.asarray(numeric[name], dtype=float)).ravel()
        worst = max(worst, max(relative_error(x, y) for x, y in zip(a, n)))
    return worst


# --- cell and sequence ----------------------------------------------------------


def test_zero_cell_outputs_zero_state():
    p = LstmParams.zeros(3, 4)
    out = lstm_cell_forward(np.array([1.0, -2.0, 3.0]), CellState(np.zeros(4), np.zeros(4)), p)
    assert np.all(out.c == 0.0) and np.all(out.h == 0.0)


def test_saturated_forget_gate_keeps_cell():
    p = LstmParams.zeros(2, 3)
    p.b_f = np.full(3, 10.0)
    v = np.array([0.3, -0.7, 1.2])
    out = lstm_cell_forward(np.zeros(2), CellState(np.zeros(3), v), p)
    sig10 = 1.0 / (1.0 + math.exp(-10.0))
    assert out.c == pytest.approx(sig10 * v, abs=1e-15)
    assert out.c == pytest.approx(v, rel=1e-4)


def test_cell_shape_errors():
    p = LstmParams.zeros(3, 4)
    with pytest.raises(ShapeError):
        lstm_cell_forward(np.zeros(2), CellState(np.zeros(4), np.zeros(4)), p)
    with pytest.raises(ShapeError):
        lstm_cell_forward(np.zeros(3), CellState(np.zeros(5), np.zeros(5)), p)
    with pytest.raises(ShapeError):
        sequence_forward(np.zeros((24, 5)), p)


@pytest.mark.parametrize("seed", range(3))
def test_forward_matches_reference_lstm(seed):
    rng = np.random.default_rng(seed)
    F, H, T = 7, 5, 24
    p = random_lstm(rng, F, H)
    seq = rng.normal(size=(T, F))
    h_ref, c_ref, prob_ref = reference_lstm(
        seq.tolist(), p.W_f.tolist(), p.W_i.tolist(), p.W_c.tolist(), p.W_o.tolist(),
        p.b_f.tolist(), p.b_i.tolist(), p.b_c.tolist(), p.b_o.tolist(), p.w_out.tolist(), p.b_out)
    state = CellState(np.zeros(H), np.zeros(H))
    for x in seq:
        state = lstm_cell_forward(x, state, p)
    assert np.max(np.abs(state.h - np.array(h_ref))) < 1e-12
    assert np.max(np.abs(state.c - np.array(c_ref))) < 1e-12
    assert abs(sequence_forward(seq, p) - prob_ref) < 1e-12


def test_batch_matches_single_sequences(rng):
    p = random_lstm(rng, 4, 3)
    batch = rng.normal(size=(6, 10, 4))
    probs = sequence_forward(batch, p)
    for k in range(6):
        assert probs[k] == pytest.approx(sequence_forward(batch[k], p), rel=1e-14)


def test_sequence_head_limits():
    p = LstmParams.zeros(5, 3)
    seq = np.random.default_rng(0).normal(size=(24, 5))
    assert sequence_forward(seq, p) == 0.5
    p.b_out = 10.0
    assert sequence_forward(seq, p) == pytest.approx(0.9999546, abs=1e-7)


def test_feature_permutation_invariance(rng):
    F, H = 6, 4
    p = random_lstm(rng, F, H)
    seq = rng.normal(size=(24, F))
    perm = rng.permutation(F)
    twin = dataclasses.replace(p)
    for name in ("W_f", "W_i", "W_c", "W_o"):
        w = getattr(p, name)
        setattr(twin, name, np.concatenate([w[:, :F][:, perm], w[:, F:]], axis=1))
    assert abs(sequence_forward(seq[:, perm], twin) - sequence_forward(seq, p)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 5.0))
def test_state_ranges_and_monotone_head(seed, scale):
    rng = np.random.default_rng(seed)
    p = random_lstm(rng, 3, 4, scale)
    seq = rng.normal(size=(8, 3)) * 3
    state = CellState(np.zeros(4), np.zeros(4))
    for x in seq:
        state = lstm_cell_forward(x, state, p)
        assert np.all(np.abs(state.h) < 1.0)
        assert np.all(np.isfinite(state.c))
    base = sequence_forward(seq, p)
    p.b_out += 0.5
    assert sequence_forward(seq, p) > base or base > 1 - 1e-12


# --- loss and gradients --------------------------------------------------------------


def test_bce_closed_form():
    assert bce(0.5, 1) == pytest.approx(math.log(2))
    assert bce(0.0, 1) == pytest.approx(-math.log(1e-12))


def test_head_bias_gradient_is_residual(rng):
    p = random_lstm(rng, 3, 4)
    seq = rng.normal(size=(6, 3))
    for label in (0, 1):
        _, g = bptt(seq, label, p)
        assert g.b_out == pytest.approx(sequence_forward(seq, p) - label, abs=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_lstm_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_lstm(rng, 5, 4)
    seq = rng.normal(size=(6, 5))
    label = int(rng.integers(0, 2))
    _, g = bptt(seq, label, p)
    err = max_grad_error(lambda q: bptt(seq, label, q)[0], g, p, LSTM_FIELDS)
    assert err < 1e-4


def test_lstm_batch_gradient_is_mean_of_singles(rng):
    p = random_lstm(rng, 3, 2)
    xs = rng.normal(size=(4, 5, 3))
    ys = np.array([0, 1, 1, 0])
    loss, g = bptt(xs, ys, p)
    singles = [bptt(xs[k], ys[k], p) for k in range(4)]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]))
    for name in LSTM_FIELDS:
        mean = np.mean([np.asarray(getattr(s[1], name)) for s in singles], axis=0)
        assert np.asarray(getattr(g, name)) == pytest.approx(mean, abs=1e-14)


def test_bptt_rejects_bad_labels(rng):
    p = random_lstm(rng, 3, 2)
    with pytest.raises(ValueError):
        bptt(np.zeros((4, 3)), 2, p)


def test_non_finite_logit_names_tensor(rng):
    p = random_lstm(rng, 3, 2)
    p.b_out = float("nan")
    with pytest.raises(NumericError, match="logit"):
        bptt(np.zeros((4, 3)), 1, p)


def test_mlp_zero_params_and_gradient(rng):
    assert mlp_forward(np.ones((24, 3)), MlpParams.zeros(72, 5)) == 0.5
    p = MlpParams.initialize(5 * 3, 6, rng, 0.5)
    p.b1 = rng.uniform(-0.5, 0.5, size=6)
    p.b2 = 0.3
    xs = rng.normal(size=(3, 5, 3))
    ys = np.array([1, 0, 1])
    _, g = mlp_backprop(xs, ys, p)
    err = max_grad_error(lambda q: mlp_backprop(xs, ys, q)[0], g, p, MLP_FIELDS)
    assert err < 1e-4


# --- prediction --------------------------------------------------------------------------


def test_threshold_conventions():
    p = LstmParams.zeros(2, 2)
    seq = np.zeros((3, 2))
    assert predict(seq, p, 0.5) == 1
    assert predict(seq, p, 0.4) == 1
    p.b_out = 100.0
    assert predict(seq, p, 1.0) == 0
    assert mlp_predict(np.zeros((3, 2)), MlpParams.zeros(6, 2), 0.5) == 1
    assert mlp_predict(np.zeros((3, 2)), MlpParams(np.zeros((2, 6)), np.zeros(2), np.zeros(2), 100.0), 1.0) == 0


# --- training ------------------------------------------------------------------------------


def toy_set(seed=0, n=10, T=24, F=6):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, T, F))
    y = np.array([0, 1] * (n // 2))
    x[y == 1, :, 0] += 0.3
    return x, y


def test_training_is_deterministic():
    data = toy_set()
    cfg = TrainConfig(hidden_size=4, epochs=5, seed=3)
    p1, h1 = train(data, data, cfg)
    p2, h2 = train(data, data, cfg)
    assert h1 == h2
    for name, value in tensors(p1).items():
        assert np.array_equal(value, tensors(p2)[name])


def test_zero_learning_rate_keeps_initialisation():
    data = toy_set()
    for opt in ("sgd", "momentum", "adam"):
        cfg = TrainConfig(hidden_size=4, epochs=3, learning_rate=0.0, optimizer=opt, seed=1)
        p, _ = train(data, data, cfg)
        init = LstmParams.initialize(6, 4, np.random.default_rng(1), cfg.init_scale, cfg.forget_bias)
        for name, value in tensors(p).items():
            assert np.array_equal(value, tensors(init)[name])


def test_initialisation_range():
    p = LstmParams.initialize(67, 32, np.random.default_rng(0), 0.1, 1.0)
    assert p.W_f.shape == (32, 99)
    assert np.abs(p.W_c).max() <= 0.1
    assert np.all(p.b_f == 1.0) and np.all(p.b_i == 0.0)


@pytest.mark.parametrize("opt", ["adam", "momentum"])
def test_lstm_memorises_toy_set(opt):
    data = toy_set()
    lr = 0.003 if opt == "adam" else 0.05
    _, hist = train(data, data, TrainConfig(hidden_size=8, epochs=200, optimizer=opt, learning_rate=lr))
    assert max(r.val_acc for r in hist) >= 0.99


def test_mlp_memorises_toy_set():
    data = toy_set()
    _, hist = mlp_train(data, data, TrainConfig(hidden_size=64, epochs=200, learning_rate=0.001))
    assert max(r.val_acc for r in hist) >= 0.99


def test_saturated_training_stays_finite():
    data = toy_set()
    p, hist = train(data, data, TrainConfig(hidden_size=4, epochs=5, optimizer="sgd", learning_rate=1e300))
    assert all(np.isfinite(r.train_loss) for r in hist)
    assert all(np.all(np.isfinite(v)) for v in tensors(p).values())


@pytest.mark.filterwarnings("ignore:overflow")
def test_overflowing_update_is_training_error():
    data = toy_set()
    init = lambda rng: LstmParams.initialize(6, 2, rng)
    huge = lambda x, y, p: (0.5, map_params(lambda t: np.full_like(t, 1e308), p))
    cfg = TrainConfig(hidden_size=2, epochs=3, optimizer="sgd", learning_rate=10.0)
    with pytest.raises(TrainingError) as err:
        fit(data, data, cfg, init, huge, lambda x, p: predict(x, p))
    assert err.value.epoch == 1


def test_non_finite_logit_is_training_error():
    data = toy_set()

    def init(rng):
        p = LstmParams.initialize(6, 2, rng)
        p.b_out = float("inf")
        return p

    with pytest.raises(TrainingError, match="logit") as err:
        fit(data, data, TrainConfig(hidden_size=2, epochs=3), init, bptt, lambda x, p: predict(x, p))
    assert err.value.epoch == 1


def test_train_config_validation():
    for bad in (dict(hidden_size=0), dict(learning_rate=-1.0), dict(optimizer="rmsprop"),
                dict(momentum=1.0), dict(decision_threshold=0.0), dict(clip_norm=0.0), dict(init_scale=0.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_gradient_clipping_bounds_steps():
    data = toy_set()
    cfg = TrainConfig(hidden_size=4, epochs=2, optimizer="sgd", learning_rate=1.0, clip_norm=1e-3, seed=0)
    p, _ = train(data, data, cfg)
    init = LstmParams.initialize(6, 4, np.random.default_rng(0), cfg.init_scale, cfg.forget_bias)
    moved = np.sqrt(sum(np.sum((tensors(p)[k] - tensors(init)[k]) ** 2) for k in LSTM_FIELDS))
    assert moved <= 2 * 1e-3 + 1e-12


# --- persistence ----------------------------------------------------------------------------


def test_model_file_round_trip(tmp_path, rng):
    p = random_lstm(rng, 5, 3)
    path = tmp_path / "m.json"
    save_model(path, "lstm", p, 0.5, {"note": "x"})
    kind, q, doc = load_model(path)
    assert kind == "lstm" and doc["note"] == "x"
    for name, value in tensors(p).items():
        assert np.array_equal(value, tensors(q)[name])
    seq = rng.normal(size=(24, 5))
    assert sequence_logit(seq, q) == sequence_logit(seq, p)


def test_malformed_model_is_parse_error(tmp_path, rng):
    doc = model_to_dict("mlp", MlpParams.zeros(4, 2), 0.5)
    doc["params"]["W1"]["shape"] = [3, 3]
    with pytest.raises(ParseError):
        model_from_dict(doc)
    with pytest.raises(ParseError):
        model_from_dict({"schema": 1, "kind": "cnn"})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ParseError):
        load_model(bad)


def test_history_csv(tmp_path):
    _, hist = train(toy_set(), toy_set(), TrainConfig(hidden_size=2, epochs=3))
    path = tmp_path / "h.csv"
    write_history(path, hist)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_acc"
    assert len(lines) == 4
