"""Stacked LSTM networks with quantization hooks.

The forward pass can run on quantized weights (pass params through
``quantize_params`` first, or hand it a quantized shadow copy) and can
quantize each layer's output signal before it is consumed downstream and
on the recurrent path. The backward pass propagates errors through the
unfolded window against exactly the cached quantized weights and signals;
the signal quantizer is treated as identity (straight-through), so no
extra derivative term appears.

Gate blocks inside the packed matrices are ordered
[input, forget, cell-candidate, output].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .capacity import count_group_weights, group_labels
from .errors import ArgumentError, NumericFault, ShapeError
from .numerics import sigmoid, softmax
from .quantizers import SignalQuantSpec, WeightQuantSpec, quantize_signal, quantize_weight

GATE_ORDER = ("input", "forget", "cell", "output")

OUTPUT_KINDS = ("softmax", "linear")


@dataclass(frozen=True)
class Topology:
    """Network shape: [input, hidden..., output] sizes plus the head kind."""

    layer_sizes: tuple
    output_kind: str = "softmax"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ArgumentError("need input, at least one hidden, and output size")
        if any(s < 1 for s in sizes):
            raise ArgumentError(f"layer sizes must be >= 1, got {sizes}")
        if self.output_kind not in OUTPUT_KINDS:
            raise ArgumentError(f"unknown output kind {self.output_kind!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def hidden_sizes(self) -> tuple:
        return self.layer_sizes[1:-1]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def weight_group_labels(self) -> list[str]:
        return group_labels(self.n_hidden)

    def signal_layer_labels(self) -> list[str]:
        """Quantizable signal layers: the input and each hidden layer."""
        return ["Input"] + [f"L{i}" for i in range(1, self.n_hidden + 1)]


@dataclass
class LstmLayerParams:
    """One LSTM layer: packed input weights, recurrent weights, biases."""

    w_x: np.ndarray  # (4N, fan_in)
    w_h: np.ndarray  # (4N, N)
    b: np.ndarray    # (4N,)

    @property
    def units(self) -> int:
        return self.w_h.shape[1]

    def copy(self) -> "LstmLayerParams":
        return LstmLayerParams(self.w_x.copy(), self.w_h.copy(), self.b.copy())


class NetworkParams:
    """All learnable arrays of a network, addressable by weight group."""

    def __init__(self, topology: Topology, layers, w_out, b_out):
        self.topology = topology
        self.layers = list(layers)
        self.w_out = w_out
        self.b_out = b_out

    @classmethod
    def initialize(cls, topology: Topology, rng: np.random.Generator,
                   scale: float = 0.08, forget_bias: float = 1.0) -> "NetworkParams":
        """Uniform[-scale, scale] weights, zero biases except forget-gate bias."""
        sizes = topology.layer_sizes
        layers = []
        for i, n in enumerate(topology.hidden_sizes):
            fan_in = sizes[i]
            w_x = rng.uniform(-scale, scale, (4 * n, fan_in))
            w_h = rng.uniform(-scale, scale, (4 * n, n))
            b = np.zeros(4 * n)
            b[n:2 * n] = forget_bias
            layers.append(LstmLayerParams(w_x, w_h, b))
        w_out = rng.uniform(-scale, scale, (topology.output_size, sizes[-2]))
        b_out = np.zeros(topology.output_size)
        return cls(topology, layers, w_out, b_out)

    @classmethod
    def zeros(cls, topology: Topology) -> "NetworkParams":
        sizes = topology.layer_sizes
        layers = [
            LstmLayerParams(
                np.zeros((4 * n, sizes[i])), np.zeros((4 * n, n)), np.zeros(4 * n)
            )
            for i, n in enumerate(topology.hidden_sizes)
        ]
        return cls(topology, layers, np.zeros((topology.output_size, sizes[-2])),
                   np.zeros(topology.output_size))

    def named_arrays(self) -> list:
        """(name, array) pairs in a fixed documented order."""
        out = []
        for i, layer in enumerate(self.layers, start=1):
            out.append((f"L{i}.w_x", layer.w_x))
            out.append((f"L{i}.w_h", layer.w_h))
            out.append((f"L{i}.b", layer.b))
        out.append(("out.w", self.w_out))
        out.append(("out.b", self.b_out))
        return out

    def group_arrays(self, label: str) -> list:
        """Arrays (views) belonging to one weight group."""
        labels = self.topology.weight_group_labels()
        if label not in labels:
            raise ArgumentError(f"unknown weight group {label!r}, expected one of {labels}")
        idx = labels.index(label)
        if label == labels[-1]:
            return [self.w_out, self.b_out]
        layer = self.layers[idx // 2]
        if idx % 2 == 0:  # forward group
            return [layer.w_x]
        return [layer.w_h, layer.b]

    def group_values(self, label: str) -> np.ndarray:
        """Flat concatenation of one group's values."""
        return np.concatenate([a.ravel() for a in self.group_arrays(label)])

    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.topology,
            [layer.copy() for layer in self.layers],
            self.w_out.copy(),
            self.b_out.copy(),
        )


@dataclass(frozen=True)
class GroupInfo:
    """One weight group: its actual and its nominal (bookkeeping) size.

    The executable model carries 4N biases per recurrent group; the
    nominal count keeps the 4N^2 + 5N accounting used for capacity
    figures.
    """

    label: str
    count: int
    nominal_count: int


def enumerate_groups(topology: Topology) -> list[GroupInfo]:
    """Ordered weight groups with actual and nominal parameter counts."""
    params = NetworkParams.zeros(topology)
    nominal = count_group_weights(topology.layer_sizes)
    out = []
    for label in topology.weight_group_labels():
        actual = sum(a.size for a in params.group_arrays(label))
        out.append(GroupInfo(label, actual, nominal[label]))
    return out


def quantize_params(params: NetworkParams, specs: dict) -> NetworkParams:
    """Copy of params with each spec'd group snapped to its grid."""
    out = params.copy()
    for label, spec in specs.items():
        if spec is None:
            continue
        for arr in out.group_arrays(label):
            arr[...] = quantize_weight(arr, spec)
    return out


def split_signal_specs(topology: Topology, spec_by_label: dict):
    """Map {'Input': spec, 'L1': spec, ...} onto forward() arguments.

    Returns (input_spec, per-hidden-layer list). Unknown labels raise.
    """
    if not spec_by_label:
        return None, None
    known = topology.signal_layer_labels()
    unknown = set(spec_by_label) - set(known)
    if unknown:
        raise ArgumentError(f"unknown signal layers {sorted(unknown)}, expected {known}")
    input_spec = spec_by_label.get("Input")
    layer_specs = [spec_by_label.get(f"L{i}") for i in range(1, topology.n_hidden + 1)]
    return input_spec, layer_specs


@dataclass
class LstmState:
    """Per-layer hidden/cell carriers between windows.

    hidden holds the (possibly quantized) output signal actually consumed
    by downstream and recurrent connections.
    """

    hidden: list
    cell: list

    @classmethod
    def zeros(cls, topology: Topology, batch: int) -> "LstmState":
        return cls(
            hidden=[np.zeros((batch, n)) for n in topology.hidden_sizes],
            cell=[np.zeros((batch, n)) for n in topology.hidden_sizes],
        )

    def copy(self) -> "LstmState":
        return LstmState([h.copy() for h in self.hidden], [c.copy() for c in self.cell])


@dataclass
class ForwardCache:
    """Everything the backward pass needs about one forward window."""

    inputs: np.ndarray           # (T,S,D) floats or (T,S) one-hot indices
    input_is_index: bool
    gates: list                  # per layer (T,S,4N), post-activation [i,f,g,o]
    cell: list                   # per layer (T,S,N)
    tanh_cell: list              # per layer (T,S,N)
    hidden_q: list               # per layer (T,S,N), the consumed output signal
    initial: LstmState
    outputs: np.ndarray          # (T,S,out): probabilities or linear outputs
    timesteps: int = field(init=False)

    def __post_init__(self):
        self.timesteps = len(self.inputs)


def _input_product(w_x: np.ndarray, x_t, is_index: bool) -> np.ndarray:
    if is_index:
        return w_x[:, x_t].T  # gather replaces the one-hot matmul
    return x_t @ w_x.T


def lstm_step(layer: LstmLayerParams, x_t, h_prev, c_prev,
              weight_spec: WeightQuantSpec = None,
              signal_spec: SignalQuantSpec = None,
              input_is_index: bool = False):
    """One LSTM cell update for a batch.

    Returns (h_q, c, gates, tanh_c): the consumed output signal (quantized
    when signal_spec is given), the new cell state, the post-activation
    gate block, and tanh of the new cell.
    """
    w_x, w_h, b = layer.w_x, layer.w_h, layer.b
    if weight_spec is not None:
        w_x = quantize_weight(w_x, weight_spec)
        w_h = quantize_weight(w_h, weight_spec)
        b = quantize_weight(b, weight_spec)
    n = layer.units
    net = _input_product(w_x, x_t, input_is_index) + h_prev @ w_h.T + b
    gates = np.empty_like(net)
    gates[:, :2 * n] = sigmoid(net[:, :2 * n])        # input, forget
    gates[:, 2 * n:3 * n] = np.tanh(net[:, 2 * n:3 * n])  # candidate
    gates[:, 3 * n:] = sigmoid(net[:, 3 * n:])        # output
    c = gates[:, n:2 * n] * c_prev + gates[:, :n] * gates[:, 2 * n:3 * n]
    tanh_c = np.tanh(c)
    h = gates[:, 3 * n:] * tanh_c
    if signal_spec is not None:
        h = quantize_signal(h, signal_spec)
    return h, c, gates, tanh_c


def forward(params: NetworkParams, inputs, state: LstmState = None,
            signal_specs: list = None, input_spec: SignalQuantSpec = None,
            collect_cache: bool = True):
    """Run a window of timesteps through the network.

    Parameters
    ----------
    params : NetworkParams
        Weights to use. Pass a quantized copy (``quantize_params`` or a
        retraining shadow) for a fixed-point forward pass.
    inputs : ndarray
        Either dense (T, S, D) float frames or integer (T, S) one-hot
        symbol indices.
    state : LstmState or None
        Carried state; zeros at sequence start.
    signal_specs : list of SignalQuantSpec/None, per hidden layer.
    input_spec : SignalQuantSpec or None
        Quantizer for dense input frames (index inputs are exact already).
    collect_cache : bool
        When False (evaluation), per-step activations are not retained
        and the returned cache is None.

    Returns (outputs, cache, final_state); softmax heads yield rows
    summing to one.
    """
    topo = params.topology
    inputs = np.asarray(inputs)
    input_is_index = np.issubdtype(inputs.dtype, np.integer)
    if input_is_index:
        if inputs.ndim != 2:
            raise ShapeError(f"index inputs must be (T, S), got {inputs.shape}")
    else:
        inputs = inputs.astype(np.float64, copy=False)
        if inputs.ndim != 3 or inputs.shape[2] != topo.input_size:
            raise ShapeError(
                f"dense inputs must be (T, S, {topo.input_size}), got {inputs.shape}"
            )
        if input_spec is not None:
            inputs = quantize_signal(inputs, input_spec)
    n_steps, batch = inputs.shape[0], inputs.shape[1]
    if state is None:
        state = LstmState.zeros(topo, batch)
    if signal_specs is None:
        signal_specs = [None] * topo.n_hidden

    k = topo.n_hidden
    if collect_cache:
        gates = [np.empty((n_steps, batch, 4 * n)) for n in topo.hidden_sizes]
        cell = [np.empty((n_steps, batch, n)) for n in topo.hidden_sizes]
        tanh_cell = [np.empty((n_steps, batch, n)) for n in topo.hidden_sizes]
        hidden_q = [np.empty((n_steps, batch, n)) for n in topo.hidden_sizes]
        initial = state.copy()
    outputs = np.empty((n_steps, batch, topo.output_size))

    h = [state.hidden[l] for l in range(k)]
    c = [state.cell[l] for l in range(k)]
    for t in range(n_steps):
        x_t = inputs[t]
        is_index = input_is_index
        for l, layer in enumerate(params.layers):
            h_new, c_new, g, tc = lstm_step(
                layer, x_t, h[l], c[l],
                signal_spec=signal_specs[l], input_is_index=is_index,
            )
            if collect_cache:
                gates[l][t] = g
                cell[l][t] = c_new
                tanh_cell[l][t] = tc
                hidden_q[l][t] = h_new
            h[l], c[l] = h_new, c_new
            x_t, is_index = h_new, False
        logits = x_t @ params.w_out.T + params.b_out
        outputs[t] = softmax(logits) if topo.output_kind == "softmax" else logits

    if not np.all(np.isfinite(outputs)):
        bad = int(np.flatnonzero(~np.isfinite(outputs).all(axis=(1, 2)))[0])
        raise NumericFault(f"non-finite network output at timestep {bad}")

    cache = None
    if collect_cache:
        cache = ForwardCache(
            inputs=inputs,
            input_is_index=input_is_index,
            gates=gates,
            cell=cell,
            tanh_cell=tanh_cell,
            hidden_q=hidden_q,
            initial=initial,
            outputs=outputs,
        )
    final = LstmState([h[l].copy() for l in range(k)], [c[l].copy() for l in range(k)])
    return outputs, cache, final


def backward(params: NetworkParams, cache: ForwardCache, dlogits: np.ndarray) -> NetworkParams:
    """Backpropagate through the cached window.

    dlogits is the loss gradient at the head's pre-activation (for a
    softmax head with cross-entropy that is probs - onehot, already
    weighted/normalized per frame; zero rows skip a frame). Gradients are
    truncated at the window start and computed against the cached
    quantized weights and signals.
    """
    topo = params.topology
    n_steps = cache.timesteps
    if dlogits.shape != cache.outputs.shape:
        raise ShapeError(
            f"dlogits shape {dlogits.shape} does not match outputs {cache.outputs.shape}"
        )
    grads = NetworkParams.zeros(topo)
    k = topo.n_hidden
    batch = dlogits.shape[1]
    dh_rec = [np.zeros((batch, n)) for n in topo.hidden_sizes]
    dc_rec = [np.zeros((batch, n)) for n in topo.hidden_sizes]

    for t in range(n_steps - 1, -1, -1):
        dl = dlogits[t]
        h_top = cache.hidden_q[k - 1][t]
        grads.w_out += dl.T @ h_top
        grads.b_out += dl.sum(axis=0)
        dh = dl @ params.w_out
        for l in range(k - 1, -1, -1):
            layer = params.layers[l]
            n = layer.units
            g = cache.gates[l][t]
            i_g, f_g = g[:, :n], g[:, n:2 * n]
            g_g, o_g = g[:, 2 * n:3 * n], g[:, 3 * n:]
            tc = cache.tanh_cell[l][t]
            c_prev = cache.cell[l][t - 1] if t > 0 else cache.initial.cell[l]
            h_prev = cache.hidden_q[l][t - 1] if t > 0 else cache.initial.hidden[l]

            dh_total = dh + dh_rec[l]
            dc = dh_total * o_g * (1.0 - tc * tc) + dc_rec[l]
            dnet = np.empty_like(g)
            dnet[:, :n] = dc * g_g * i_g * (1.0 - i_g)
            dnet[:, n:2 * n] = dc * c_prev * f_g * (1.0 - f_g)
            dnet[:, 2 * n:3 * n] = dc * i_g * (1.0 - g_g * g_g)
            dnet[:, 3 * n:] = dh_total * tc * o_g * (1.0 - o_g)
            dc_rec[l] = dc * f_g

            grads.layers[l].b += dnet.sum(axis=0)
            grads.layers[l].w_h += dnet.T @ h_prev
            dh_rec[l] = dnet @ layer.w_h
            if l > 0:
                x_used = cache.hidden_q[l - 1][t]
                grads.layers[l].w_x += dnet.T @ x_used
                dh = dnet @ layer.w_x
            elif cache.input_is_index:
                np.add.at(grads.layers[0].w_x.T, cache.inputs[t], dnet)
            else:
                grads.layers[0].w_x += dnet.T @ cache.inputs[t]
    return grads


def loss_gradient(outputs: np.ndarray, targets, loss: str, frame_weights=None):
    """Loss value and head-gradient for a window.

    cross-entropy expects integer class targets (T, S) against softmax
    probabilities; squared-error expects float targets shaped like the
    outputs. frame_weights (T,) or (T, S) weight each frame's
    contribution (used for loss masking and mini-batch averaging).

    Returns (loss_value, dlogits).
    """
    n_steps, batch, width = outputs.shape
    if frame_weights is None:
        w = np.ones((n_steps, batch))
    else:
        w = np.asarray(frame_weights, dtype=np.float64)
        if w.ndim == 1:
            w = np.broadcast_to(w[:, None], (n_steps, batch))
    if loss == "cross-entropy":
        targets = np.asarray(targets)
        if targets.shape != (n_steps, batch):
            raise ShapeError(f"targets must be (T, S) = {(n_steps, batch)}, got {targets.shape}")
        ts, ss = np.meshgrid(np.arange(n_steps), np.arange(batch), indexing="ij")
        p_true = outputs[ts, ss, targets]
        value = float(np.sum(-np.log(np.maximum(p_true, 1e-300)) * w))
        dlogits = outputs * w[:, :, None]
        dlogits[ts, ss, targets] -= w
        return value, dlogits
    if loss == "squared-error":
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != outputs.shape:
            raise ShapeError(f"targets must match outputs {outputs.shape}, got {targets.shape}")
        diff = outputs - targets
        value = float(0.5 * np.sum(diff * diff * w[:, :, None]))
        return value, diff * w[:, :, None]
    raise ArgumentError(f"unknown loss {loss!r}")


def bptt_backward(params: NetworkParams, cache: ForwardCache, targets,
                  loss: str = "cross-entropy", frame_weights=None):
    """Gradients of the window loss w.r.t. every parameter.

    Returns (loss_value, grads). For a squared-error loss the head must
    be linear; for cross-entropy it must be softmax.
    """
    expected = "softmax" if loss == "cross-entropy" else "linear"
    if params.topology.output_kind != expected:
        raise ArgumentError(f"{loss} loss needs a {expected} head")
    value, dlogits = loss_gradient(cache.outputs, targets, loss, frame_weights)
    return value, backward(params, cache, dlogits)
