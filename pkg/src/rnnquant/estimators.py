"""Estimator-style front ends for the two reference tasks.

Both estimators follow the familiar conventions: constructor arguments
are stored verbatim (so get_params/set_params/clone work), fitting
happens only in fit, and learned state lands in trailing-underscore
attributes. The quantization workflow is fit -> quantize -> retrain;
after quantize, scoring and prediction run on the quantized network.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import (
    CharCorpus,
    FrameDataset,
    char_stream_source,
    frame_stream_source,
    normalize_features,
)
from .errors import ArgumentError, DataError
from .network import NetworkParams, Topology, split_signal_specs, forward
from .numerics import seeded_rng
from .quantizers import SignalQuantSpec
from .training import (
    DualWeights,
    TrainConfig,
    WindowSource,
    direct_quantize,
    evaluate_bpc,
    evaluate_fer,
    train,
)

_TRAIN_FIELDS = (
    "forward_steps", "backward_steps", "streams", "learning_rate", "lr_floor",
    "lr_decay_factor", "momentum", "nesterov", "adadelta_rho", "adadelta_eps",
    "early_stop_patience", "max_epochs", "evals_per_epoch", "max_grad_norm",
    "max_updates", "seed",
)


class _QuantizableLstmEstimator(BaseEstimator):
    """Shared quantize/retrain mechanics for the task estimators."""

    def _train_config(self, **overrides) -> TrainConfig:
        kwargs = {name: getattr(self, name) for name in _TRAIN_FIELDS}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**kwargs)

    def _eval_params(self) -> NetworkParams:
        if getattr(self, "dual_", None) is not None:
            return self.dual_.shadow
        return self.params_

    def _signal_args(self):
        specs = getattr(self, "signal_specs_", None)
        if not specs:
            return None, None
        return split_signal_specs(self.topology_, specs)

    def _signal_spec_map(self, signal_bits) -> dict:
        """Per-layer specs from a bit list; input is linear, hidden tanh."""
        if signal_bits is None:
            return {}
        labels = self.topology_.signal_layer_labels()
        if not self._quantize_input_signal():
            labels = labels[1:]
        bits = list(signal_bits)
        if len(bits) != len(labels):
            raise ArgumentError(
                f"expected {len(labels)} signal bit-widths for {labels}, got {len(bits)}"
            )
        specs = {}
        for label, b in zip(labels, bits):
            if b is None:
                continue
            if label == "Input":
                specs[label] = SignalQuantSpec("linear", int(b), tuple(self.input_range))
            else:
                specs[label] = SignalQuantSpec("tanh", int(b))
        return specs

    def quantize(self, weight_bits, signal_bits=None):
        """Direct quantization: per-group optimal steps, optional signals.

        weight_bits is a single int (uniform), a per-group sequence, or a
        {label: bits} dict; signal_bits is a per-layer sequence.
        """
        self._check_fitted()
        if isinstance(weight_bits, (int, np.integer)):
            weight_bits = [int(weight_bits)] * len(self.topology_.weight_group_labels())
        self.dual_, self.quant_outcomes_ = direct_quantize(self.params_, weight_bits)
        self.signal_specs_ = self._signal_spec_map(signal_bits)
        return self

    def dequantize(self):
        """Back to the floating-point master network."""
        self.dual_ = None
        self.signal_specs_ = {}
        return self

    def retrain(self, max_epochs=None, learning_rate=None, log_path=None):
        """Quantization-aware retraining of the current dual weights."""
        self._check_fitted()
        if getattr(self, "dual_", None) is None:
            raise ArgumentError("call quantize() before retrain()")
        config = self._train_config(max_epochs=max_epochs, learning_rate=learning_rate)
        input_spec, layer_specs = self._signal_args()
        result = train(
            self.dual_.master, config, self._window_source(config),
            self._valid_metric_fn(), loss=self._loss,
            dual=self.dual_, signal_specs=layer_specs, input_spec=input_spec,
            log_path=log_path,
        )
        self.dual_ = result.dual
        self.retrain_log_ = result.log
        self.best_metric_ = result.best_metric
        return self

    def _check_fitted(self):
        if getattr(self, "params_", None) is None:
            raise ArgumentError("estimator is not fitted")

    def _quantize_input_signal(self) -> bool:
        raise NotImplementedError

    def _window_source(self, config) -> WindowSource:
        raise NotImplementedError

    def _valid_metric_fn(self):
        raise NotImplementedError


class LstmLanguageModel(_QuantizableLstmEstimator):
    """Byte-level LSTM language model scored in bits per character.

    Text is consumed as raw bytes one-hot encoded over 256 symbols. fit
    trains floating-point weights with multi-stream truncated BPTT and
    keeps the best-validation parameters.

    Parameters mirror TrainConfig plus the architecture:

    hidden_sizes : tuple of LSTM layer widths.
    valid_fraction / test_fraction : corpus split sizes (train gets the rest).
    """

    _loss = "cross-entropy"

    def __init__(self, hidden_sizes=(64, 64), n_symbols=256,
                 valid_fraction=0.05, test_fraction=0.05,
                 init_scale=0.08, forget_bias=1.0, input_range=(-3.0, 3.0),
                 forward_steps=32, backward_steps=64, streams=16,
                 learning_rate=1.0, lr_floor=1e-3, lr_decay_factor=0.1,
                 momentum=0.9, nesterov=False, adadelta_rho=0.95,
                 adadelta_eps=1e-6, early_stop_patience=3, max_epochs=20,
                 evals_per_epoch=1, max_grad_norm=0.0, max_updates=0, seed=0):
        self.hidden_sizes = hidden_sizes
        self.n_symbols = n_symbols
        self.valid_fraction = valid_fraction
        self.test_fraction = test_fraction
        self.init_scale = init_scale
        self.forget_bias = forget_bias
        self.input_range = input_range
        self.forward_steps = forward_steps
        self.backward_steps = backward_steps
        self.streams = streams
        self.learning_rate = learning_rate
        self.lr_floor = lr_floor
        self.lr_decay_factor = lr_decay_factor
        self.momentum = momentum
        self.nesterov = nesterov
        self.adadelta_rho = adadelta_rho
        self.adadelta_eps = adadelta_eps
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.evals_per_epoch = evals_per_epoch
        self.max_grad_norm = max_grad_norm
        self.max_updates = max_updates
        self.seed = seed

    def _quantize_input_signal(self) -> bool:
        return False  # one-hot input symbols are exactly representable

    def _as_corpus(self, data) -> CharCorpus:
        if isinstance(data, CharCorpus):
            return data
        if isinstance(data, str):
            data = data.encode("utf-8")
        if isinstance(data, (bytes, bytearray)):
            fractions = (1.0 - self.valid_fraction - self.test_fraction,
                         self.valid_fraction, self.test_fraction)
            return CharCorpus.from_bytes(bytes(data), fractions)
        raise DataError(f"cannot interpret {type(data).__name__} as a corpus")

    def _symbols(self, data) -> np.ndarray:
        if data is None:
            self._check_fitted()
            return self.corpus_.split("test")
        if isinstance(data, CharCorpus):
            return data.symbols
        if isinstance(data, str):
            data = data.encode("utf-8")
        if isinstance(data, (bytes, bytearray)):
            return np.frombuffer(bytes(data), dtype=np.uint8)
        return np.asarray(data, dtype=np.int64)

    def _window_source(self, config) -> WindowSource:
        split = self.corpus_.split("train")
        per_stream = (len(split) - 1) // config.streams
        return WindowSource(
            factory=lambda: char_stream_source(
                split, config.streams, config.forward_steps),
            windows_per_epoch=per_stream // config.forward_steps,
        )

    def _valid_metric_fn(self):
        valid = self.corpus_.split("valid")
        if len(valid) < 2:  # tiny corpora: fall back to a train tail
            valid = self.corpus_.split("train")[-1024:]
        input_spec, layer_specs = self._signal_args()

        def metric(params):
            return evaluate_bpc(params, valid, signal_specs=layer_specs,
                                input_spec=input_spec)
        return metric

    def fit(self, X, y=None, log_path=None):
        """Train floating-point weights on a corpus (bytes, str, CharCorpus)."""
        self.corpus_ = self._as_corpus(X)
        self.topology_ = Topology(
            (self.n_symbols, *self.hidden_sizes, self.n_symbols), "softmax")
        config = self._train_config()
        params = NetworkParams.initialize(
            self.topology_, seeded_rng(config.seed),
            scale=self.init_scale, forget_bias=self.forget_bias)
        self.dual_ = None
        self.signal_specs_ = {}
        result = train(
            params, config, self._window_source(config),
            self._valid_metric_fn(), loss=self._loss, log_path=log_path)
        self.params_ = result.params
        self.train_log_ = result.log
        self.best_metric_ = result.best_metric
        self.diverged_ = result.diverged
        return self

    def bpc(self, data=None) -> float:
        """Bits per character on data (default: the fitted test split)."""
        self._check_fitted()
        input_spec, layer_specs = self._signal_args()
        return evaluate_bpc(self._eval_params(), self._symbols(data),
                            signal_specs=layer_specs, input_spec=input_spec)

    def predict_proba(self, data) -> np.ndarray:
        """Next-symbol distribution after each position of data."""
        self._check_fitted()
        sym = self._symbols(data).astype(np.int64)
        input_spec, layer_specs = self._signal_args()
        outputs, _, _ = forward(
            self._eval_params(), sym[:, None], signal_specs=layer_specs,
            input_spec=input_spec, collect_cache=False)
        return outputs[:, 0, :]

    def score(self, X, y=None) -> float:
        """Higher-is-better score: negative bits per character."""
        return -self.bpc(X)


class LstmFrameClassifier(_QuantizableLstmEstimator):
    """Frame-wise sequence classifier scored by frame error rate.

    fit accepts a FrameDataset (normalized internally when it carries no
    stats yet) or parallel lists of frame arrays and label arrays.
    """

    _loss = "cross-entropy"

    def __init__(self, hidden_sizes=(64,), input_range=(-3.0, 3.0),
                 valid_fraction=0.15, test_fraction=0.15,
                 init_scale=0.08, forget_bias=1.0,
                 forward_steps=16, backward_steps=32, streams=8,
                 learning_rate=1.0, lr_floor=1e-3, lr_decay_factor=0.1,
                 momentum=0.9, nesterov=False, adadelta_rho=0.95,
                 adadelta_eps=1e-6, early_stop_patience=3, max_epochs=15,
                 evals_per_epoch=1, max_grad_norm=0.0, max_updates=0, seed=0):
        self.hidden_sizes = hidden_sizes
        self.input_range = input_range
        self.valid_fraction = valid_fraction
        self.test_fraction = test_fraction
        self.init_scale = init_scale
        self.forget_bias = forget_bias
        self.forward_steps = forward_steps
        self.backward_steps = backward_steps
        self.streams = streams
        self.learning_rate = learning_rate
        self.lr_floor = lr_floor
        self.lr_decay_factor = lr_decay_factor
        self.momentum = momentum
        self.nesterov = nesterov
        self.adadelta_rho = adadelta_rho
        self.adadelta_eps = adadelta_eps
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.evals_per_epoch = evals_per_epoch
        self.max_grad_norm = max_grad_norm
        self.max_updates = max_updates
        self.seed = seed

    def _quantize_input_signal(self) -> bool:
        return True

    def _as_dataset(self, X, y=None) -> FrameDataset:
        if isinstance(X, FrameDataset):
            ds = X
        else:
            feats = [np.asarray(f, dtype=np.float64) for f in X]
            if y is None:
                raise DataError("labels required when X is a list of frame arrays")
            labels = [np.asarray(l, dtype=np.int64) for l in y]
            n = len(feats)
            n_valid = max(1, int(n * self.valid_fraction)) if n > 2 else 0
            n_test = max(1, int(n * self.test_fraction)) if n > 2 else 0
            classes = int(max(l.max() for l in labels)) + 1
            ds = FrameDataset(list(zip(feats, labels)), classes,
                              (n - n_valid - n_test, n_valid, n_test))
        if ds.feature_mean is None:
            ds = normalize_features(ds)
        return ds

    def _window_source(self, config) -> WindowSource:
        seqs = self.dataset_.split("train")
        total = sum(len(l) for _, l in seqs)
        per_stream = total // config.streams
        return WindowSource(
            factory=lambda: frame_stream_source(
                seqs, config.streams, config.forward_steps),
            windows_per_epoch=per_stream // config.forward_steps,
        )

    def _valid_metric_fn(self):
        valid = self.dataset_.split("valid") or self.dataset_.split("train")
        input_spec, layer_specs = self._signal_args()

        def metric(params):
            return evaluate_fer(params, valid, signal_specs=layer_specs,
                                input_spec=input_spec)
        return metric

    def fit(self, X, y=None, log_path=None):
        self.dataset_ = self._as_dataset(X, y)
        self.classes_ = np.arange(self.dataset_.n_classes)
        self.topology_ = Topology(
            (self.dataset_.feature_dim, *self.hidden_sizes, self.dataset_.n_classes),
            "softmax")
        config = self._train_config()
        params = NetworkParams.initialize(
            self.topology_, seeded_rng(config.seed),
            scale=self.init_scale, forget_bias=self.forget_bias)
        self.dual_ = None
        self.signal_specs_ = {}
        result = train(
            params, config, self._window_source(config),
            self._valid_metric_fn(), loss=self._loss, log_path=log_path)
        self.params_ = result.params
        self.train_log_ = result.log
        self.best_metric_ = result.best_metric
        self.diverged_ = result.diverged
        return self

    def _normalize(self, feats) -> np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        return (feats - self.dataset_.feature_mean) / self.dataset_.feature_std

    def predict_proba(self, X) -> list:
        """Per-frame class distributions for each raw (unnormalized) sequence."""
        self._check_fitted()
        input_spec, layer_specs = self._signal_args()
        out = []
        for feats in X:
            probs, _, _ = forward(
                self._eval_params(), self._normalize(feats)[:, None, :],
                signal_specs=layer_specs, input_spec=input_spec,
                collect_cache=False)
            out.append(probs[:, 0, :])
        return out

    def predict(self, X) -> list:
        return [p.argmax(axis=1) for p in self.predict_proba(X)]

    def score(self, X, y) -> float:
        """Frame-level accuracy over parallel sequence/label lists."""
        pred = self.predict(X)
        right = sum(int(np.count_nonzero(p == np.asarray(l))) for p, l in zip(pred, y))
        total = sum(len(l) for l in y)
        return right / total

    def frame_error_rate(self, split: str = "test") -> float:
        """FER (percent) on one split of the fitted dataset."""
        self._check_fitted()
        seqs = self.dataset_.split(split)
        input_spec, layer_specs = self._signal_args()
        return evaluate_fer(self._eval_params(), seqs,
                            signal_specs=layer_specs, input_spec=input_spec)
