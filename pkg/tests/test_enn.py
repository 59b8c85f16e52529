import itertools
import json
from dataclasses import replace

import numpy as np
import pytest

from heatcast.dataset import DatasetVariant, TimeSeriesTable, build_supervectors, compute_stats
from heatcast.enn import (
    TrainConfig,
    fit,
    forward,
    gradients,
    init_model,
    load_model,
    predict_pairs,
    predict_series,
    reset_context,
    save_model,
    step_context,
    train_epoch,
)
from heatcast.errors import ConfigurationError, DivergenceError, FormatError
from heatcast.evaluation import mape


def _randomize_context(model, rng):
    model.context = [rng.normal(0, 0.5, model.hidden_size) for _ in range(model.n_hidden_layers)]


def _loss(model, u, target):
    y, _ = forward(model, u)
    return 0.5 * float((target - y[0]) ** 2)


# === Forward ===


def _straight_line_forward(model, u):
    s = model.hidden_size
    x = [
        np.tanh(sum(model.w_in[i, j] * u[j] for j in range(len(u)))
                + sum(model.w_context[0][i, j] * model.context[0][j] for j in range(s)))
        for i in range(s)
    ]
    for p, w in enumerate(model.w_hidden, start=1):
        x = [
            np.tanh(sum(w[i, j] * x[j] for j in range(s))
                    + sum(model.w_context[p][i, j] * model.context[p][j] for j in range(s)))
            for i in range(s)
        ]
    return [sum(model.w_out[k, j] * x[j] for j in range(s)) for k in range(model.output_size)]


@pytest.mark.parametrize("trial", range(10))
def test_forward_matches_straight_line_oracle(trial):
    rng = np.random.default_rng(trial)
    n, s, r = int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(2, 8))
    model = init_model(n, r, s, seed=trial)
    _randomize_context(model, rng)
    u = rng.normal(size=r)
    y, _ = forward(model, u)
    np.testing.assert_allclose(y, _straight_line_forward(model, u), rtol=0, atol=1e-12)


def test_forward_leaves_context_alone_and_step_advances_it():
    model = init_model(2, 5, 4, seed=1)
    before = [c.copy() for c in model.context]
    _, act = forward(model, np.ones(5))
    for a, b in zip(model.context, before):
        np.testing.assert_array_equal(a, b)
    step_context(model, act)
    for c, h in zip(model.context, act.hidden):
        np.testing.assert_array_equal(c, h)
    reset_context(model)
    assert all(not c.any() for c in model.context)


def test_init_is_seeded():
    a, b, c = init_model(3, 7, seed=5), init_model(3, 7, seed=5), init_model(3, 7, seed=6)
    for wa, wb in zip(a.weights(), b.weights()):
        np.testing.assert_array_equal(wa, wb)
    assert not np.array_equal(a.w_in, c.w_in)
    assert a.hidden_size == 15
    assert np.all(np.abs(a.w_in) <= 1 / np.sqrt(7))


def test_init_rejects_zero_layers():
    with pytest.raises(ConfigurationError):
        init_model(0, 4)


# === Gradients ===


@pytest.mark.parametrize("n,s,r", list(itertools.product((1, 2), (3, 5), (3, 7))))
def test_gradients_match_central_differences(n, s, r):
    h = 1e-5
    for trial in range(3):
        rng = np.random.default_rng(100 * n + 10 * s + r + trial)
        model = init_model(n, r, s, seed=int(rng.integers(1 << 30)))
        _randomize_context(model, rng)
        u, target = rng.normal(size=r), float(rng.normal())
        _, act = forward(model, u)
        analytic = gradients(model, act, target)
        flat = [analytic.w_in, *analytic.w_hidden, analytic.w_out, *analytic.w_context]

        for w, g in zip(model.weights(), flat):
            numeric = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                keep = w[idx]
                w[idx] = keep + h
                up = _loss(model, u, target)
                w[idx] = keep - h
                down = _loss(model, u, target)
                w[idx] = keep
                numeric[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(g, numeric, rtol=1e-4, atol=1e-9)


# === Training ===


@pytest.fixture
def sets(make_table):
    t = make_table(hours=240, seed=3)
    stats = compute_stats(t)
    train = build_supervectors(t.between("2024-01-01", "2024-01-07"), DatasetVariant.D, 4, 2, stats)
    validation = build_supervectors(t.between("2024-01-08", "2024-01-10"), DatasetVariant.D, 4, 1, stats)
    return train, validation


def test_training_reduces_loss(sets):
    train, _ = sets
    model = init_model(2, train.input_size, 8, seed=0)
    trace = fit(model, train, None, TrainConfig(epochs=30, early_stop_patience=0))
    assert trace.final_epoch == 30
    assert trace.losses[-1] < trace.losses[0]
    assert model.factor_order == ("temp", "solar", "wind")
    assert model.window_length == 4


def test_training_is_deterministic(sets):
    train, validation = sets
    cfg = TrainConfig(epochs=3, early_stop_patience=0)
    a, b = init_model(2, 7, 6, seed=9), init_model(2, 7, 6, seed=9)
    fit(a, train, None, cfg)
    fit(b, train, None, cfg)
    np.testing.assert_array_equal(predict_pairs(a, validation).predicted, predict_pairs(b, validation).predicted)


def test_zero_rates_freeze_layers(sets):
    train, _ = sets
    model = init_model(2, 7, 6, seed=2)
    before = [w.copy() for w in model.weights()]
    cfg = TrainConfig(epochs=1, context_learning_rate=0.0, input_learning_rate=0.0, early_stop_patience=0)
    train_epoch(model, train, cfg)
    np.testing.assert_array_equal(model.w_in, before[0])
    for w, b in zip(model.w_context, before[-2:]):
        np.testing.assert_array_equal(w, b)
    assert not np.array_equal(model.w_out, before[2])


def test_divergence_is_raised(sets):
    train, _ = sets
    model = init_model(1, 7, 6, seed=0)
    with pytest.raises(DivergenceError) as info:
        train_epoch(model, train, TrainConfig(learning_rate=1e6))
    assert not np.isfinite(info.value.loss)


def test_early_stopping_restores_best_epoch(sets):
    train, validation = sets
    model = init_model(2, 7, 8, seed=4)
    trace = fit(model, train, validation, TrainConfig(epochs=40, early_stop_patience=3))
    assert len(trace.validation_mape) == trace.final_epoch
    best = trace.best_epoch
    assert trace.validation_mape[best - 1] == min(trace.validation_mape)

    assert mape(predict_pairs(model, validation)) == pytest.approx(trace.validation_mape[best - 1], rel=1e-12)


def test_context_resets_at_segment_starts():
    rng = np.random.default_rng(0)
    block = {name: rng.uniform(1.0, 100.0, 20) for name in ("demand", "temp", "solar", "wind")}
    stamps = np.datetime64("2024-01-01T00", "h") + np.concatenate([np.arange(20), np.arange(30, 50)])
    t = TimeSeriesTable.from_arrays(stamps, *(np.tile(block[name], 2) for name in ("demand", "temp", "solar", "wind")))
    stats = compute_stats(t)
    data = build_supervectors(t, DatasetVariant.A, 4, 1, stats)
    model = init_model(2, data.input_size, 5, seed=0)
    model.norm_stats, model.factor_order, model.window_length = stats, ("temp",), 4
    pairs = predict_pairs(model, data)
    assert len(pairs) == 32
    np.testing.assert_array_equal(pairs.predicted[:16], pairs.predicted[16:])


# === Inference and persistence ===


def test_predict_with_mismatched_window_is_configuration_error(sets, make_table):
    train, _ = sets
    model = init_model(1, train.input_size, 4, seed=0)
    fit(model, train, None, TrainConfig(epochs=1, early_stop_patience=0))
    t = make_table(hours=60, seed=3)
    other = build_supervectors(t, DatasetVariant.D, 2, 1, train.stats)
    with pytest.raises(ConfigurationError):
        predict_pairs(model, other)


def test_predict_series_pairs_hours_with_megawatts(sets):
    train, validation = sets
    model = init_model(1, 7, 4, seed=0)
    fit(model, train, None, TrainConfig(epochs=1, early_stop_patience=0))
    series = predict_series(model, validation)
    assert len(series) == len(validation)
    assert series[0][0] == validation.target_hours[0]


def test_save_and_load_keep_weights_exactly(tmp_path, sets):
    train, validation = sets
    model = init_model(3, 7, 5, seed=8)
    fit(model, train, None, TrainConfig(epochs=2, early_stop_patience=0))
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.input_size == 7
    assert loaded.factor_order == ("temp", "solar", "wind")
    for a, b in zip(model.weights(), loaded.weights()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(
        predict_pairs(model, validation).predicted, predict_pairs(loaded, validation).predicted
    )
    doc = json.loads(path.read_text())
    assert doc["dims"] == {"n": 3, "r": 7, "s": 5, "m": 1}


def test_load_rejects_bad_documents(tmp_path, sets):
    train, _ = sets
    model = init_model(1, 7, 4, seed=0)
    fit(model, train, None, TrainConfig(epochs=1, early_stop_patience=0))
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())

    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(path)

    doc["format_version"] = 1
    doc["weights"]["w_out"] = [[1.0]]
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(path)

    path.write_text("{not json")
    with pytest.raises(FormatError):
        load_model(path)


def test_load_rejects_non_utf8_bytes(tmp_path):
    path = tmp_path / "model.json"
    path.write_bytes(b"\xff\xfe\x00{}")
    with pytest.raises(FormatError):
        load_model(path)


# === Training protocol ===


def test_learning_rates_decay_per_epoch():
    cfg = TrainConfig(
        learning_rate=0.01, context_learning_rate=0.004, output_learning_rate=0.02, learning_rate_decay=0.5
    )
    assert cfg.rate("input", 1) == 0.01
    assert cfg.rate("hidden", 3) == pytest.approx(0.005)
    assert cfg.rate("output", 3) == pytest.approx(0.01)
    assert cfg.rate("context", 5) == pytest.approx(0.004 / 3)
    assert TrainConfig(learning_rate_decay=0.0).rate("input", 50) == 0.01
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate_decay=-1.0)


def test_rows_outside_the_update_mask_only_carry_context(make_table):
    t = make_table(hours=120, seed=3)
    hourly = build_supervectors(t, DatasetVariant.D, 4, 2, compute_stats(t), hourly_context=True)
    frozen = replace(hourly, update_mask=np.zeros(len(hourly), dtype=bool))
    model = init_model(2, 7, 5, seed=0)
    before = [w.copy() for w in model.weights()]
    assert train_epoch(model, frozen, TrainConfig()) == 0.0
    for a, b in zip(model.weights(), before):
        np.testing.assert_array_equal(a, b)
    train_epoch(model, hourly, TrainConfig())
    assert not np.array_equal(model.w_out, before[2])


def _after_one_epoch(data, **cfg):
    model = init_model(1, data.input_size, 4, seed=0)
    train_epoch(model, data, TrainConfig(**cfg), epoch=2)
    return model.w_out.copy()


def test_segment_order_is_drawn_from_the_seed(make_table):
    t = make_table(hours=400, seed=1, gaps=tuple(range(40, 400, 40)))
    data = build_supervectors(t, DatasetVariant.D, 4, 2, compute_stats(t))
    assert len(data.segment_slices()) == 10
    np.testing.assert_array_equal(_after_one_epoch(data, seed=1), _after_one_epoch(data, seed=1))
    assert not np.array_equal(_after_one_epoch(data, seed=1), _after_one_epoch(data, seed=2))
    assert not np.array_equal(_after_one_epoch(data, seed=1), _after_one_epoch(data, seed=1, shuffle_segments=False))
    np.testing.assert_array_equal(
        _after_one_epoch(data, seed=1, shuffle_segments=False), _after_one_epoch(data, seed=2, shuffle_segments=False)
    )


def test_one_segment_trains_the_same_in_any_order(make_table):
    t = make_table(hours=100, seed=1)
    data = build_supervectors(t, DatasetVariant.D, 4, 2, compute_stats(t))
    np.testing.assert_array_equal(_after_one_epoch(data, seed=1), _after_one_epoch(data, shuffle_segments=False))
