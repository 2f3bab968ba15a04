import math

import numpy as np
import pytest

from rnnquant.data import char_stream_source
from rnnquant.errors import (
    ArgumentError,
    DegenerateWeightsError,
    IntegrityError,
)
from rnnquant.network import NetworkParams, Topology, forward, quantize_params
from rnnquant.numerics import seeded_rng
from rnnquant.optim import AdadeltaMomentum
from rnnquant.quantizers import WeightQuantSpec, quantization_error
from rnnquant.training import (
    DualWeights,
    TrainConfig,
    TrainLogRow,
    WindowSource,
    direct_quantize,
    evaluate_bpc,
    evaluate_fer,
    lr_and_stopping,
    read_log_csv,
    retrain_step,
    train,
)


def tiny_lm_params(seed=0, n_symbols=16, hidden=(6, 6)):
    topo = Topology((n_symbols, *hidden, n_symbols))
    return NetworkParams.initialize(topo, seeded_rng(seed))


def toy_text(n=600, n_symbols=16, seed=1):
    rng = seeded_rng(seed)
    # periodic-ish text so there is something to learn
    base = rng.integers(0, n_symbols, size=24)
    reps = np.tile(base, n // 24 + 1)[:n]
    noise = rng.integers(0, n_symbols, size=n)
    take = rng.random(n) < 0.1
    return np.where(take, noise, reps).astype(np.int64)


def lm_source(sym, config):
    per_stream = (len(sym) - 1) // config.streams
    return WindowSource(
        factory=lambda: char_stream_source(sym, config.streams, config.forward_steps),
        windows_per_epoch=per_stream // config.forward_steps,
    )


# ---------------------------------------------------------------- config

def test_train_config_invariants():
    with pytest.raises(ArgumentError):
        TrainConfig(forward_steps=8, backward_steps=4)
    with pytest.raises(ArgumentError):
        TrainConfig(streams=0)
    with pytest.raises(ArgumentError):
        TrainConfig(learning_rate=1e-5, lr_floor=1e-3)
    with pytest.raises(ArgumentError):
        TrainConfig(momentum=1.0)


# ------------------------------------------------------------ lr schedule

def test_lr_schedule_continue_on_improvement():
    cfg = TrainConfig(early_stop_patience=3)
    assert lr_and_stopping([3.0, 2.5, 2.0], 1.0, cfg) == "continue"


def test_lr_schedule_decay_on_flat_log():
    cfg = TrainConfig(early_stop_patience=3)
    assert lr_and_stopping([2.0, 2.0, 2.0, 2.0], 1.0, cfg) == "decay"


def test_lr_schedule_stop_at_floor():
    cfg = TrainConfig(early_stop_patience=3, learning_rate=1.0, lr_floor=1e-3)
    assert lr_and_stopping([2.0, 2.0, 2.0, 2.0], 1e-3, cfg) == "stop"


# -------------------------------------------------------- direct quantize

def test_direct_quantize_two_bit_uses_three_values():
    params = tiny_lm_params()
    dual, outcomes = direct_quantize(params, [2] * 5)
    for label in params.topology.weight_group_labels():
        values = np.unique(dual.shadow.group_values(label))
        assert len(values) <= 3
        # group error agrees with an independent recomputation
        spec = dual.specs[label]
        recomputed = quantization_error(params.group_values(label), spec)
        assert np.isclose(outcomes[label].error, recomputed)


def test_direct_quantize_32_bit_is_nearly_lossless():
    params = tiny_lm_params(seed=4)
    dual, _ = direct_quantize(params, [32] * 5)
    for label in params.topology.weight_group_labels():
        spec = dual.specs[label]
        diff = np.abs(dual.shadow.group_values(label) - params.group_values(label))
        assert diff.max() <= spec.step / 2 + 1e-18


def test_direct_quantize_rejects_all_zero_group():
    params = tiny_lm_params()
    for arr in params.group_arrays("In-L1"):
        arr[...] = 0.0
    with pytest.raises(DegenerateWeightsError):
        direct_quantize(params, [3] * 5)


def test_direct_quantize_partial_groups():
    params = tiny_lm_params()
    dual, outcomes = direct_quantize(params, {"In-L1": 3})
    assert set(outcomes) == {"In-L1"}
    assert dual.specs["L1"] is None
    assert np.array_equal(dual.shadow.group_values("L1"), params.group_values("L1"))


# ------------------------------------------------------------ dual weights

def test_retrain_step_keeps_shadow_consistent():
    params = tiny_lm_params(seed=5)
    dual, _ = direct_quantize(params, [3] * 5)
    opt = AdadeltaMomentum(momentum=0.9)
    state = opt.init_state(dual.master)
    rng = seeded_rng(6)
    for _ in range(30):
        inputs = rng.integers(0, 16, size=(4, 2))
        targets = rng.integers(0, 16, size=(4, 2))
        retrain_step(dual, inputs, targets, opt, state, lr=1.0)
        dual.check()  # exact shadow == Q(master)


def test_retrain_step_master_never_snapped():
    params = tiny_lm_params(seed=7)
    dual, _ = direct_quantize(params, [2] * 5)
    opt = AdadeltaMomentum(momentum=0.0)
    state = opt.init_state(dual.master)
    rng = seeded_rng(8)
    for _ in range(10):
        retrain_step(dual, rng.integers(0, 16, size=(3, 2)),
                     rng.integers(0, 16, size=(3, 2)), opt, state, lr=1.0)
    # a 2-bit grid holds <= 3 values; the master must stay off-grid rich
    master_values = np.unique(np.round(dual.master.group_values("In-L1"), 12))
    assert len(master_values) > 3


def test_retrain_step_zero_gradient_leaves_weights():
    topo = Topology((4, 5, 4), output_kind="linear")
    params = NetworkParams.initialize(topo, seeded_rng(9))
    dual, _ = direct_quantize(params, [8, 8, 8])
    opt = AdadeltaMomentum(momentum=0.9)
    state = opt.init_state(dual.master)
    x = seeded_rng(10).normal(size=(3, 2, 4))
    out, _, _ = forward(dual.shadow, x)
    before = {n: a.copy() for n, a in dual.master.named_arrays()}
    retrain_step(dual, x, out.copy(), opt, state, lr=1.0, loss="squared-error")
    for name, arr in dual.master.named_arrays():
        assert np.array_equal(arr, before[name])
    dual.check()


def test_retrain_step_detects_inconsistent_dual():
    params = tiny_lm_params(seed=11)
    dual, _ = direct_quantize(params, [3] * 5)
    dual.shadow.layers[0].w_x[0, 0] += 0.5  # corrupt the shadow
    opt = AdadeltaMomentum()
    state = opt.init_state(dual.master)
    with pytest.raises(IntegrityError):
        retrain_step(dual, np.zeros((2, 1), dtype=np.int64),
                     np.zeros((2, 1), dtype=np.int64), opt, state)


def test_high_bit_retraining_tracks_float_training():
    sym = toy_text()
    config = TrainConfig(forward_steps=4, backward_steps=8, streams=4,
                         max_epochs=1, max_updates=10, momentum=0.9,
                         learning_rate=1.0, lr_floor=1e-3, seed=3)
    metric = lambda p: evaluate_bpc(p, sym[:200])

    params_a = tiny_lm_params(seed=12)
    res_a = train(params_a, config, lm_source(sym, config), metric)

    params_b = tiny_lm_params(seed=12)
    dual, _ = direct_quantize(params_b, [26] * 5)
    res_b = train(params_b, config, lm_source(sym, config), metric, dual=dual)

    for (name, a), (_, b) in zip(res_a.params.named_arrays(),
                                 res_b.dual.master.named_arrays()):
        scale = max(float(np.abs(a).max()), 1e-12)
        assert np.abs(a - b).max() < 1e-6 * scale, name


# ---------------------------------------------------------------- metrics

def constant_predictor(n_symbols, logits):
    topo = Topology((n_symbols, 4, n_symbols))
    params = NetworkParams.zeros(topo)
    params.b_out[:] = logits
    return params


def test_bpc_uniform_predictor_is_eight_bits():
    params = constant_predictor(256, np.zeros(256))
    sym = seeded_rng(13).integers(0, 256, size=512)
    assert np.isclose(evaluate_bpc(params, sym), 8.0, atol=1e-12)


def test_bpc_perfect_predictor_near_zero():
    logits = np.full(256, -60.0)
    logits[7] = 60.0
    params = constant_predictor(256, logits)
    assert evaluate_bpc(params, np.full(300, 7, dtype=np.int64)) < 1e-6


def test_bpc_alternating_text_closed_form():
    # constant (0.75, 0.25) distribution on alternating symbols:
    # mean of -log2 is (−log2 0.75 − log2 0.25) / 2
    logits = np.full(16, -60.0)
    logits[0] = math.log(0.75)
    logits[1] = math.log(0.25)
    params = constant_predictor(16, logits)
    sym = np.array([0, 1] * 50 + [0], dtype=np.int64)
    assert np.isclose(evaluate_bpc(params, sym), 1.207518749639422, atol=1e-9)


def test_bpc_requires_two_symbols_and_flags_clamps():
    params = constant_predictor(16, np.zeros(16))
    with pytest.raises(ArgumentError):
        evaluate_bpc(params, [3])
    logits = np.full(16, 60.0)
    logits[2] = -60.0  # symbol 2 gets ~e-52 probability
    clamped_params = constant_predictor(16, logits)
    bpc, clamped = evaluate_bpc(clamped_params, np.array([0, 2, 0, 2]), details=True)
    assert clamped == 2
    assert np.isclose(bpc, 2 / 3 * 40.0, rtol=0.2)  # clamped at 1e-12 -> ~40 bits


def test_bpc_chunking_invariant():
    params = tiny_lm_params(seed=14)
    sym = toy_text(400)
    assert evaluate_bpc(params, sym, chunk=64) == evaluate_bpc(params, sym, chunk=4096)


def test_fer_trivial_cases():
    topo = Topology((3, 4, 4))
    params = NetworkParams.zeros(topo)
    params.b_out[:] = [10.0, 0.0, 0.0, 0.0]  # always predicts class 0
    feats = np.zeros((4, 3))
    assert evaluate_fer(params, [(feats, np.zeros(4, dtype=int))]) == 0.0
    assert evaluate_fer(params, [(feats, np.ones(4, dtype=int))]) == 100.0
    assert evaluate_fer(params, [(feats, np.array([0, 0, 0, 1]))]) == 25.0
    with pytest.raises(ArgumentError):
        evaluate_fer(params, [])


def test_metrics_are_pure():
    params = tiny_lm_params(seed=15)
    sym = toy_text(300)
    assert evaluate_bpc(params, sym) == evaluate_bpc(params, sym)


# ------------------------------------------------------------- train loop

def test_training_reduces_loss_and_logs():
    sym = toy_text(1200)
    config = TrainConfig(forward_steps=8, backward_steps=16, streams=4,
                         max_epochs=6, seed=5)
    params = tiny_lm_params(seed=16)
    metric = lambda p: evaluate_bpc(p, sym[:200])
    result = train(params, config, lm_source(sym, config), metric)
    assert len(result.log) == 6
    assert result.log[-1].train_loss < result.log[0].train_loss
    assert result.best_metric <= result.log[0].valid_metric
    assert not result.diverged


def test_training_is_seed_deterministic(tmp_path):
    sym = toy_text(1000)
    config = TrainConfig(forward_steps=8, backward_steps=16, streams=4,
                         max_epochs=3, seed=6)
    metric = lambda p: evaluate_bpc(p, sym[:200])
    logs = []
    for run in range(2):
        params = tiny_lm_params(seed=17)
        path = tmp_path / f"log{run}.csv"
        result = train(params, config, lm_source(sym, config), metric,
                       log_path=path, config_hash="cafe")
        logs.append(read_log_csv(path))
    assert [(r.train_loss, r.valid_metric) for r in logs[0]] == \
           [(r.train_loss, r.valid_metric) for r in logs[1]]
    assert (tmp_path / "log0.csv").read_text().startswith("# config_hash=cafe")


def test_training_aborts_on_divergence():
    topo = Topology((4, 5, 4))
    params = NetworkParams.initialize(topo, seeded_rng(18))
    feats = seeded_rng(19).normal(size=(160, 4))
    feats[140:] = np.nan  # poisoned tail reaches training mid-epoch
    labels = np.zeros(160, dtype=np.int64)
    from rnnquant.data import stream_batcher
    config = TrainConfig(forward_steps=4, backward_steps=4, streams=2,
                         max_epochs=3, seed=7)
    source = WindowSource(
        factory=lambda: stream_batcher(feats, labels, 2, 4),
        windows_per_epoch=20,
    )
    result = train(params, config, source, lambda p: 1.0)
    assert result.diverged
    for _, arr in result.params.named_arrays():
        assert np.all(np.isfinite(arr))


def test_lr_decays_on_plateau_and_stops():
    sym = toy_text(400)
    # metric is constant -> plateau from the second eval on
    config = TrainConfig(forward_steps=4, backward_steps=4, streams=2,
                         max_epochs=50, early_stop_patience=2,
                         learning_rate=1.0, lr_floor=0.05, seed=8)
    params = tiny_lm_params(seed=20)
    result = train(params, config, lm_source(sym, config), lambda p: 1.0)
    lrs = [row.learning_rate for row in result.log]
    assert min(lrs) < 1.0  # decayed at least once
    assert result.epochs_run < 50  # stopped before the epoch cap


def test_log_row_roundtrip(tmp_path):
    row = TrainLogRow(3, 120, 0.1, 1.234567890123, 4.5e-3, 12.5)
    path = tmp_path / "log.csv"
    from rnnquant.training import _LogWriter
    writer = _LogWriter(path, config_hash="beef")
    writer.append(row)
    back = read_log_csv(path)[0]
    assert back.train_loss == row.train_loss
    assert back.valid_metric == row.valid_metric
    assert back.update_count == row.update_count
