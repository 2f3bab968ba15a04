"""Weight-count bookkeeping and storage-capacity accounting.

An LSTM layer with N units fed by M units needs about 4N^2 + 4NM + 5N
weights. Parameters are partitioned layerwise into groups (In-L1, L1,
L1-L2, L2, ..., Lk, Lk-Out): forward groups carry the 4NM input weights,
each recurrent group carries 4N^2 + 5N, and the output group carries the
affine head. The capacity ratio compares the bit cost of a per-group
word-length assignment against a uniform 32-bit baseline.
"""

from __future__ import annotations

from .errors import ArgumentError


def lstm_layer_weight_count(units: int, fan_in: int) -> int:
    """Nominal weight demand of one LSTM layer: 4N^2 + 4NM + 5N."""
    return 4 * units * units + 4 * units * fan_in + 5 * units


def group_labels(hidden_layers: int) -> list[str]:
    """Ordered weight-group labels for a stack of LSTM layers.

    Three hidden layers give the seven groups In-L1, L1, L1-L2, L2,
    L2-L3, L3, L3-Out.
    """
    if hidden_layers < 1:
        raise ArgumentError("need at least one hidden layer")
    labels = []
    for i in range(1, hidden_layers + 1):
        labels.append("In-L1" if i == 1 else f"L{i - 1}-L{i}")
        labels.append(f"L{i}")
    labels.append(f"L{hidden_layers}-Out")
    return labels


def count_group_weights(layer_sizes) -> dict[str, int]:
    """Per-group nominal weight counts for sizes [input, hidden..., output].

    Forward groups get 4*N*M entries (M = producing layer size), each
    recurrent group 4*N^2 + 5*N, and the output group out*N + out.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 3:
        raise ArgumentError("layer_sizes needs input, at least one hidden, and output")
    if any(s < 1 for s in sizes):
        raise ArgumentError(f"all layer sizes must be >= 1, got {sizes}")
    hidden = sizes[1:-1]
    out = sizes[-1]
    counts: dict[str, int] = {}
    labels = group_labels(len(hidden))
    for i, n in enumerate(hidden):
        fan_in = sizes[i]  # previous layer (input for i == 0)
        counts[labels[2 * i]] = 4 * n * fan_in
        counts[labels[2 * i + 1]] = 4 * n * n + 5 * n
    counts[labels[-1]] = out * hidden[-1] + out
    return counts


def total_weight_count(layer_sizes) -> int:
    return sum(count_group_weights(layer_sizes).values())


def capacity_ratio(group_counts, group_bits, baseline_bits: int = 32) -> float:
    """Quantized storage as a percentage of the uniform-baseline storage.

    100 * sum(count_i * bits_i) / (sum(count_i) * baseline_bits).
    """
    counts = list(group_counts)
    bits = list(group_bits)
    if len(counts) != len(bits):
        raise ArgumentError(
            f"got {len(counts)} group counts but {len(bits)} bit-widths"
        )
    if not counts:
        raise ArgumentError("need at least one group")
    if any(b < 1 for b in bits) or baseline_bits < 1:
        raise ArgumentError("bit-widths must be >= 1")
    quantized = sum(c * b for c, b in zip(counts, bits))
    baseline = sum(counts) * baseline_bits
    return 100.0 * quantized / baseline
