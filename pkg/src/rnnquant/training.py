"""Training loops: floating-point BPTT and retrain-based quantization.

Updates run over S parallel streams. Each update advances every stream by
F fresh frames but unfolds the network over the trailing B >= F frames
(recomputing activations over the overlap), injects loss only at the F
new outputs, and averages gradients over the S*F frame-gradients.

Retraining keeps dual weights: the quantized shadow is used in the
forward and backward passes, the update lands on the floating-point
master, and the shadow is recomputed as Q(master) with the frozen
per-group step after every update.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DegenerateWeightsError, IntegrityError, NumericFault
from .network import (
    LstmState,
    NetworkParams,
    bptt_backward,
    forward,
    quantize_params,
)
from .optim import AdadeltaMomentum
from .quantizers import (
    QuantizationOutcome,
    WeightQuantSpec,
    bits_to_levels,
    optimize_step_size,
)

LOG_COLUMNS = ("epoch", "update_count", "learning_rate", "train_loss",
               "valid_metric", "wall_seconds")


@dataclass
class TrainConfig:
    """Knobs of the multi-stream truncated-BPTT trainer.

    learning_rate is the global multiplier on the adadelta step and is
    what the plateau schedule decays down to lr_floor.
    """

    forward_steps: int = 32
    backward_steps: int = 64
    streams: int = 16
    learning_rate: float = 1.0
    lr_floor: float = 1e-3
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    nesterov: bool = False
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    early_stop_patience: int = 3
    max_epochs: int = 20
    evals_per_epoch: int = 1
    max_grad_norm: float = 0.0   # 0 disables clipping
    max_updates: int = 0         # 0 means unlimited
    seed: int = 0

    def __post_init__(self):
        if not (self.backward_steps >= self.forward_steps >= 1):
            raise ArgumentError("need backward_steps >= forward_steps >= 1")
        if self.streams < 1:
            raise ArgumentError("streams must be >= 1")
        if not (0.0 < self.lr_floor <= self.learning_rate):
            raise ArgumentError("need 0 < lr_floor <= learning_rate")
        if not (0.0 <= self.momentum < 1.0):
            raise ArgumentError("momentum must be in [0, 1)")
        if not (0.0 < self.lr_decay_factor < 1.0):
            raise ArgumentError("lr_decay_factor must be in (0, 1)")
        if self.early_stop_patience < 1 or self.max_epochs < 1:
            raise ArgumentError("patience and max_epochs must be >= 1")


@dataclass
class DualWeights:
    """Floating-point master weights paired with their quantized shadow."""

    master: NetworkParams
    shadow: NetworkParams
    specs: dict  # group label -> WeightQuantSpec or None

    @classmethod
    def from_master(cls, master: NetworkParams, specs: dict) -> "DualWeights":
        return cls(master=master, shadow=quantize_params(master, specs), specs=specs)

    def refresh_shadow(self) -> None:
        """Recompute shadow = Q(master) with the frozen per-group steps."""
        fresh = quantize_params(self.master, self.specs)
        for (_, dst), (_, src) in zip(self.shadow.named_arrays(), fresh.named_arrays()):
            dst[...] = src

    def check(self) -> None:
        """Raise IntegrityError unless shadow == Q(master) exactly."""
        fresh = quantize_params(self.master, self.specs)
        for (name, have), (_, want) in zip(self.shadow.named_arrays(), fresh.named_arrays()):
            if not np.array_equal(have, want):
                raise IntegrityError(f"shadow of {name} is stale against Q(master)")

    def copy(self) -> "DualWeights":
        return DualWeights(self.master.copy(), self.shadow.copy(), dict(self.specs))


def direct_quantize(params: NetworkParams, group_bits) -> tuple:
    """Quantize trained weights group-by-group with L2-optimal steps.

    group_bits maps group labels to bit-widths (or is a sequence aligned
    with the topology's group order); a None entry leaves that group in
    floating point. Returns (DualWeights, {label: QuantizationOutcome}).
    """
    labels = params.topology.weight_group_labels()
    if not isinstance(group_bits, dict):
        bits_list = list(group_bits)
        if len(bits_list) != len(labels):
            raise ArgumentError(
                f"expected {len(labels)} per-group bit-widths, got {len(bits_list)}"
            )
        group_bits = dict(zip(labels, bits_list))
    unknown = set(group_bits) - set(labels)
    if unknown:
        raise ArgumentError(f"unknown weight groups {sorted(unknown)}")
    specs: dict = {label: None for label in labels}
    outcomes: dict = {}
    for label, bits in group_bits.items():
        if bits is None:
            continue
        values = params.group_values(label)
        if not np.any(values):
            raise DegenerateWeightsError(f"group {label} is all-zero")
        outcome = optimize_step_size(values, bits_to_levels(int(bits)))
        outcomes[label] = outcome
        specs[label] = WeightQuantSpec(levels=outcome.levels, step=outcome.step)
    return DualWeights.from_master(params.copy(), specs), outcomes


def lr_and_stopping(valid_metrics, learning_rate: float, config: TrainConfig) -> str:
    """Plateau policy: 'continue', 'decay', or 'stop'.

    Decay fires when the best (lowest) metric is early_stop_patience or
    more evaluations old; stop fires when the decayed rate would fall
    below lr_floor.
    """
    metrics = list(valid_metrics)
    if not metrics:
        raise ArgumentError("need at least one logged evaluation")
    since_best = len(metrics) - 1 - int(np.argmin(metrics))
    if since_best < config.early_stop_patience:
        return "continue"
    if learning_rate * config.lr_decay_factor < config.lr_floor:
        return "stop"
    return "decay"


def gradient_norm(grads: NetworkParams) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for _, a in grads.named_arrays()))


def clip_gradients(grads: NetworkParams, max_norm: float) -> None:
    if max_norm <= 0:
        return
    norm = gradient_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for _, a in grads.named_arrays():
            a *= scale


def retrain_step(dual: DualWeights, inputs, targets, optimizer: AdadeltaMomentum,
                 opt_state: dict, *, lr: float = 1.0, loss: str = "cross-entropy",
                 state: LstmState = None, frame_weights=None,
                 signal_specs=None, input_spec=None, check: bool = True):
    """One retraining update on a ready window.

    Forward and backward run on the quantized shadow (and quantized
    signals when specs are given); the averaged gradient updates the
    floating-point master; the shadow is then re-snapped under the frozen
    per-group steps. frame_weights defaults to the 1/(T*S) mini-batch
    average.

    Returns (mean frame loss over weighted frames, final LstmState).
    """
    if check:
        dual.check()
    inputs = np.asarray(inputs)
    n_steps, batch = inputs.shape[0], inputs.shape[1]
    if frame_weights is None:
        frame_weights = np.full(n_steps, 1.0 / (n_steps * batch))
    outputs, cache, final_state = forward(
        dual.shadow, inputs, state=state,
        signal_specs=signal_specs, input_spec=input_spec,
    )
    loss_val, grads = bptt_backward(dual.shadow, cache, targets, loss, frame_weights)
    optimizer.step(dual.master, grads, opt_state, lr)
    dual.refresh_shadow()
    return loss_val, final_state


@dataclass
class TrainLogRow:
    epoch: int
    update_count: int
    learning_rate: float
    train_loss: float
    valid_metric: float
    wall_seconds: float

    def as_csv(self) -> list:
        return [self.epoch, self.update_count, repr(self.learning_rate),
                repr(self.train_loss), repr(self.valid_metric),
                f"{self.wall_seconds:.3f}"]


@dataclass
class TrainResult:
    params: NetworkParams        # best-validation master weights
    best_metric: float
    log: list
    dual: DualWeights = None     # best-validation dual pair when retraining
    diverged: bool = False
    epochs_run: int = 0


class _LogWriter:
    """Append-only CSV training log."""

    def __init__(self, path, config_hash: str = None):
        self.path = Path(path) if path else None
        if self.path and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                if config_hash:
                    fh.write(f"# config_hash={config_hash}\n")
                csv.writer(fh).writerow(LOG_COLUMNS)

    def append(self, row: TrainLogRow) -> None:
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(row.as_csv())


@dataclass
class WindowSource:
    """A per-epoch window iterator factory plus its per-epoch length."""

    factory: object    # () -> iterator of StreamWindow
    windows_per_epoch: int


def train(params: NetworkParams, config: TrainConfig, source: WindowSource,
          valid_fn, *, loss: str = "cross-entropy", dual: DualWeights = None,
          signal_specs=None, input_spec=None, log_path=None,
          config_hash: str = None) -> TrainResult:
    """Multi-stream truncated-BPTT training loop.

    valid_fn(eval_params) -> lower-is-better metric; it is called on the
    quantized shadow during retraining and on the master otherwise. The
    loop snapshots the best-validation parameters, decays the learning
    rate on validation plateaus, stops at the rate floor, the epoch cap,
    or the update cap, and aborts (returning the last good parameters) if
    the loss diverges.
    """
    master = dual.master if dual is not None else params
    forward_params = dual.shadow if dual is not None else params
    optimizer = AdadeltaMomentum(
        rho=config.adadelta_rho, eps=config.adadelta_eps,
        momentum=config.momentum, nesterov=config.nesterov,
    )
    opt_state = optimizer.init_state(master)
    writer = _LogWriter(log_path, config_hash)

    lr = config.learning_rate
    best_metric = math.inf
    best_master = master.copy()
    plateau = 0
    metric_log: list = []
    log: list = []
    update_count = 0
    epoch_loss_sum, epoch_loss_n = 0.0, 0
    t_start = time.monotonic()
    diverged = False
    stop = False
    epochs_run = 0

    overlap = config.backward_steps - config.forward_steps
    frames_per_update = config.forward_steps * config.streams

    last_eval_at = -1

    def evaluate(epoch: int) -> None:
        nonlocal best_metric, best_master, plateau, lr, stop, last_eval_at
        nonlocal epoch_loss_sum, epoch_loss_n
        last_eval_at = update_count
        metric = float(valid_fn(forward_params if dual is not None else master))
        mean_loss = epoch_loss_sum / max(epoch_loss_n, 1)
        epoch_loss_sum, epoch_loss_n = 0.0, 0
        row = TrainLogRow(epoch, update_count, lr, mean_loss, metric,
                          time.monotonic() - t_start)
        log.append(row)
        writer.append(row)
        metric_log.append(metric)
        if metric < best_metric:
            best_metric = metric
            best_master = master.copy()
            plateau = 0
            return
        plateau += 1
        if plateau >= config.early_stop_patience:
            if lr * config.lr_decay_factor < config.lr_floor:
                stop = True
            else:
                lr *= config.lr_decay_factor
                plateau = 0

    n_windows = max(source.windows_per_epoch, 1)
    evals = max(1, config.evals_per_epoch)
    marks = {round(j * n_windows / evals) for j in range(1, evals)}

    for epoch in range(1, config.max_epochs + 1):
        state = None
        hist_inputs = None
        hist_targets = None
        epochs_run = epoch
        for w_index, window in enumerate(source.factory(), start=1):
            if not window.continued:
                state = None
                hist_inputs = hist_targets = None
            if hist_inputs is not None:
                window_inputs = np.concatenate([hist_inputs, window.inputs], axis=0)
                window_targets = np.concatenate([hist_targets, window.targets], axis=0)
            else:
                window_inputs = window.inputs
                window_targets = window.targets
            n_steps = window_inputs.shape[0]
            weights = np.zeros(n_steps)
            weights[n_steps - config.forward_steps:] = 1.0 / frames_per_update

            try:
                _, cache, _ = forward(
                    forward_params, window_inputs, state=state,
                    signal_specs=signal_specs, input_spec=input_spec,
                )
                loss_val, grads = bptt_backward(
                    forward_params, cache, window_targets, loss, weights)
            except NumericFault:
                diverged = True
                break
            if not math.isfinite(loss_val):
                diverged = True
                break
            clip_gradients(grads, config.max_grad_norm)
            optimizer.step(master, grads, opt_state, lr)
            if dual is not None:
                dual.refresh_shadow()
            update_count += 1
            epoch_loss_sum += loss_val
            epoch_loss_n += 1

            # slide the unfolding buffer forward by F frames; the carried
            # state is the state just before the buffered frames
            keep = min(overlap, n_steps)
            drop = n_steps - keep
            if drop > 0:
                state = LstmState(
                    hidden=[h[drop - 1].copy() for h in cache.hidden_q],
                    cell=[c[drop - 1].copy() for c in cache.cell],
                )
            hist_inputs = window_inputs[drop:] if keep > 0 else None
            hist_targets = window_targets[drop:] if keep > 0 else None

            if config.max_updates and update_count >= config.max_updates:
                stop = True
            if w_index in marks and w_index < n_windows:
                evaluate(epoch)
            if stop:
                break
        if diverged:
            break
        if update_count > last_eval_at:
            evaluate(epoch)
        if stop:
            break

    # hand back the best-validation weights
    result_master = best_master if metric_log else master.copy()
    result_dual = None
    if dual is not None:
        specs = dict(dual.specs)
        result_dual = DualWeights.from_master(result_master.copy(), specs)
    return TrainResult(
        params=result_master,
        best_metric=best_metric if metric_log else math.inf,
        log=log,
        dual=result_dual,
        diverged=diverged,
        epochs_run=epochs_run,
    )


def evaluate_bpc(params: NetworkParams, symbols, *, signal_specs=None,
                 input_spec=None, chunk: int = 2048, details: bool = False):
    """Bits per character of a byte sequence under the network's softmax.

    Processes the sequence as one continuous stream (state threads across
    chunks). Probabilities below 1e-12 are clamped and counted.
    """
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    if sym.size < 2:
        raise ArgumentError("sequence must have at least 2 symbols")
    total_bits = 0.0
    clamped = 0
    state = None
    for start in range(0, sym.size - 1, chunk):
        stop = min(start + chunk, sym.size - 1)
        inputs = sym[start:stop, None]
        targets = sym[start + 1:stop + 1]
        outputs, _, state = forward(
            params, inputs, state=state, signal_specs=signal_specs,
            input_spec=input_spec, collect_cache=False,
        )
        p_true = outputs[np.arange(stop - start), 0, targets]
        clamped += int(np.count_nonzero(p_true < 1e-12))
        total_bits += float(-np.log2(np.maximum(p_true, 1e-12)).sum())
    bpc = total_bits / (sym.size - 1)
    if details:
        return bpc, clamped
    return bpc


def evaluate_fer(params: NetworkParams, sequences, *, signal_specs=None,
                 input_spec=None) -> float:
    """Frame error rate (percent misclassified via argmax) over sequences."""
    seqs = list(sequences)
    if not seqs:
        raise ArgumentError("no sequences to evaluate")
    wrong = 0
    total = 0
    for feats, labels in seqs:
        outputs, _, _ = forward(
            params, np.asarray(feats)[:, None, :], signal_specs=signal_specs,
            input_spec=input_spec, collect_cache=False,
        )
        pred = outputs[:, 0, :].argmax(axis=1)
        wrong += int(np.count_nonzero(pred != np.asarray(labels)))
        total += len(labels)
    return 100.0 * wrong / total


def read_log_csv(path) -> list:
    """Parse a training-log CSV back into TrainLogRow objects."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(line for line in fh if not line.startswith("#")):
            if rec == list(LOG_COLUMNS):
                continue
            rows.append(TrainLogRow(
                epoch=int(rec[0]), update_count=int(rec[1]),
                learning_rate=float(rec[2]), train_loss=float(rec[3]),
                valid_metric=float(rec[4]), wall_seconds=float(rec[5]),
            ))
    return rows
