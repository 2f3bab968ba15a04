"""Task data: byte-level text corpora, a synthetic frame-classification
task, feature normalization, and multi-stream batching.

Text is treated byte-wise: every 8-bit value is a legal symbol encoded
one-hot over 256 input units. The frame task stands in for a licensed
speech corpus: frame classes follow a seeded sticky Markov chain and
features are class-conditional Gaussians smoothed over time, so temporal
context carries information.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError
from .numerics import seeded_rng

FRAME_MAGIC = b"RNQD"
FRAME_VERSION = 1


@dataclass
class CharCorpus:
    """A byte corpus with contiguous (train, valid, test) splits."""

    symbols: np.ndarray  # uint8
    train_range: tuple
    valid_range: tuple
    test_range: tuple

    @classmethod
    def from_bytes(cls, data: bytes, fractions=(0.9, 0.05, 0.05)) -> "CharCorpus":
        if len(data) == 0:
            raise DataError("corpus is empty")
        f_train, f_valid = float(fractions[0]), float(fractions[1])
        if f_train <= 0 or f_valid < 0 or f_train + f_valid > 1 + 1e-12:
            raise ArgumentError(f"invalid split fractions {fractions}")
        n = len(data)
        n_train = int(n * f_train)
        n_valid = int(n * f_valid)
        if n_train == 0:
            raise DataError("train split is empty; corpus too small for fractions")
        symbols = np.frombuffer(data, dtype=np.uint8)
        return cls(
            symbols=symbols,
            train_range=(0, n_train),
            valid_range=(n_train, n_train + n_valid),
            test_range=(n_train + n_valid, n),
        )

    def split(self, name: str) -> np.ndarray:
        lo, hi = getattr(self, f"{name}_range")
        return self.symbols[lo:hi]

    def __len__(self) -> int:
        return len(self.symbols)


def load_char_corpus(path, fractions=(0.9, 0.05, 0.05)) -> CharCorpus:
    """Read a file byte-wise into a split corpus."""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read corpus {p}: {exc}") from exc
    return CharCorpus.from_bytes(data, fractions)


def one_hot(indices, n_symbols: int = 256) -> np.ndarray:
    """One-hot encode integer symbols; output rows have L1 norm exactly 1."""
    idx = np.asarray(indices)
    out = np.zeros(idx.shape + (n_symbols,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


@dataclass
class FrameDataset:
    """Labeled frame sequences with optional normalization statistics."""

    sequences: list          # of (features (T,D) float64, labels (T,) int64)
    n_classes: int
    splits: tuple            # (n_train, n_valid, n_test) sequence counts
    feature_mean: np.ndarray = None
    feature_std: np.ndarray = None
    flagged_dims: list = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.sequences[0][0].shape[1]

    def split(self, name: str) -> list:
        n_train, n_valid, _ = self.splits
        if name == "train":
            return self.sequences[:n_train]
        if name == "valid":
            return self.sequences[n_train:n_train + n_valid]
        if name == "test":
            return self.sequences[n_train + n_valid:]
        raise ArgumentError(f"unknown split {name!r}")


def synth_frame_task(seed: int, classes: int = 10, feature_dim: int = 24,
                     n_sequences: int = 120, length_range=(60, 120),
                     splits=(0.7, 0.15, 0.15), stay_prob: float = 0.7,
                     noise: float = 0.6, smoothing: float = 0.5) -> FrameDataset:
    """Generate a deterministic frame-classification dataset.

    Frame classes follow a sticky Markov chain (stay with ``stay_prob``,
    otherwise jump uniformly); the raw feature of a frame is a Gaussian
    around its class mean, low-pass filtered with the previous frame so a
    recurrent model can exploit context.
    """
    if classes < 2 or feature_dim < 1:
        raise ArgumentError("need classes >= 2 and feature_dim >= 1")
    rng = seeded_rng(seed)
    means = rng.normal(0.0, 1.0, (classes, feature_dim)) * 1.5
    sequences = []
    for _ in range(n_sequences):
        length = int(rng.integers(length_range[0], length_range[1] + 1))
        labels = np.empty(length, dtype=np.int64)
        labels[0] = rng.integers(classes)
        for t in range(1, length):
            if rng.random() < stay_prob:
                labels[t] = labels[t - 1]
            else:
                labels[t] = rng.integers(classes)
        raw = means[labels] + rng.normal(0.0, noise, (length, feature_dim))
        feats = np.empty_like(raw)
        feats[0] = raw[0]
        for t in range(1, length):
            feats[t] = smoothing * raw[t] + (1.0 - smoothing) * feats[t - 1]
        sequences.append((feats, labels))
    n_train = int(n_sequences * splits[0])
    n_valid = int(n_sequences * splits[1])
    return FrameDataset(
        sequences=sequences,
        n_classes=classes,
        splits=(n_train, n_valid, n_sequences - n_train - n_valid),
    )


def normalize_features(dataset: FrameDataset) -> FrameDataset:
    """Standardize all splits with the train split's per-dimension stats.

    Zero-variance dimensions keep std 1 and are flagged rather than
    producing NaNs.
    """
    train = dataset.split("train")
    if not train:
        raise DataError("train split is empty")
    stacked = np.concatenate([f for f, _ in train], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    flagged = [int(i) for i in np.flatnonzero(std == 0.0)]
    std = np.where(std == 0.0, 1.0, std)
    normalized = [((f - mean) / std, labels.copy()) for f, labels in dataset.sequences]
    return FrameDataset(
        sequences=normalized,
        n_classes=dataset.n_classes,
        splits=dataset.splits,
        feature_mean=mean,
        feature_std=std,
        flagged_dims=flagged,
    )


def denormalize_features(features, dataset: FrameDataset) -> np.ndarray:
    """Invert normalize_features using the stored train stats."""
    if dataset.feature_mean is None:
        raise ArgumentError("dataset carries no normalization stats")
    return np.asarray(features) * dataset.feature_std + dataset.feature_mean


@dataclass
class StreamWindow:
    """One multi-stream update window of aligned frame chunks."""

    inputs: np.ndarray   # (F, S) symbol indices or (F, S, D) frames
    targets: np.ndarray  # (F, S) class indices
    continued: bool      # False on the first window (reset carried state)


def stream_batcher(inputs, targets, streams: int, forward_steps: int):
    """Iterate aligned update windows over S contiguous streams.

    The frame axis is split into S streams with evenly spaced offsets
    (stream s starts at s * (total // S)); every window advances each
    stream by F frames. The epoch ends when the (equal-length) streams
    are exhausted, leaving at most S*F + S trailing frames unused.
    """
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if streams < 1 or forward_steps < 1:
        raise ArgumentError("streams and forward_steps must be >= 1")
    total = inputs.shape[0]
    if targets.shape[0] != total:
        raise ArgumentError("inputs and targets must align on the frame axis")
    if total < streams * forward_steps:
        raise ArgumentError(
            f"{total} frames cannot fill {streams} streams of {forward_steps} steps"
        )
    per_stream = total // streams
    offsets = np.arange(streams) * per_stream
    n_windows = per_stream // forward_steps
    for k in range(n_windows):
        cols_in = []
        cols_tg = []
        base = k * forward_steps
        for off in offsets:
            sl = slice(off + base, off + base + forward_steps)
            cols_in.append(inputs[sl])
            cols_tg.append(targets[sl])
        yield StreamWindow(
            inputs=np.stack(cols_in, axis=1),
            targets=np.stack(cols_tg, axis=1),
            continued=k > 0,
        )


def char_stream_source(split: np.ndarray, streams: int, forward_steps: int):
    """Window iterator over (symbol, next-symbol) pairs of a text split.

    A split of K bytes yields K - 1 streamed training pairs.
    """
    if len(split) < 2:
        raise DataError("text split needs at least 2 symbols")
    sym = np.asarray(split, dtype=np.int64)
    return stream_batcher(sym[:-1], sym[1:], streams, forward_steps)


def frame_stream_source(sequences, streams: int, forward_steps: int):
    """Window iterator over concatenated frame sequences.

    Sequence boundaries inside a stream are not state-reset; the carried
    context across a boundary is treated as background noise.
    """
    if not sequences:
        raise DataError("no sequences to stream")
    feats = np.concatenate([f for f, _ in sequences], axis=0)
    labels = np.concatenate([l for _, l in sequences], axis=0)
    return stream_batcher(feats, labels, streams, forward_steps)


def save_frame_dataset(dataset: FrameDataset, path) -> None:
    """Write the little-endian binary frame container plus a text manifest.

    Layout: magic 'RNQD', u32 version, u32 D, u32 C, u32 n_sequences,
    u32 n_train, u32 n_valid, u8 has_stats; u32 lengths[n_sequences];
    features as float64 (sum(lengths) x D, row-major); labels as int32;
    then, when has_stats, mean and std as float64[D] each.
    """
    p = Path(path)
    lengths = [len(labels) for _, labels in dataset.sequences]
    n_train, n_valid, _ = dataset.splits
    has_stats = dataset.feature_mean is not None
    with open(p, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack(
            "<IIIIIIB", FRAME_VERSION, dataset.feature_dim, dataset.n_classes,
            len(dataset.sequences), n_train, n_valid, int(has_stats),
        ))
        fh.write(np.asarray(lengths, dtype="<u4").tobytes())
        for feats, _ in dataset.sequences:
            fh.write(np.ascontiguousarray(feats, dtype="<f8").tobytes())
        for _, labels in dataset.sequences:
            fh.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())
        if has_stats:
            fh.write(np.ascontiguousarray(dataset.feature_mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(dataset.feature_std, dtype="<f8").tobytes())
    manifest = p.with_suffix(p.suffix + ".manifest")
    manifest.write_text(
        f"format = frame-dataset v{FRAME_VERSION}\n"
        f"feature_dim = {dataset.feature_dim}\n"
        f"classes = {dataset.n_classes}\n"
        f"sequences = {len(dataset.sequences)}\n"
        f"splits = {dataset.splits[0]} {dataset.splits[1]} {dataset.splits[2]}\n"
        f"frames = {sum(lengths)}\n"
        f"normalized = {has_stats}\n"
    )


def load_frame_dataset(path) -> FrameDataset:
    """Read a frame container written by save_frame_dataset."""
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read frame dataset {p}: {exc}") from exc
    if len(blob) < 4 + 25 or blob[:4] != FRAME_MAGIC:
        raise DataError(f"{p} is not a frame-dataset container")
    version, dim, classes, n_seq, n_train, n_valid, has_stats = struct.unpack_from(
        "<IIIIIIB", blob, 4)
    if version > FRAME_VERSION:
        raise DataError(f"unsupported frame-dataset version {version}")
    off = 4 + 25
    lengths = np.frombuffer(blob, dtype="<u4", count=n_seq, offset=off).astype(int)
    off += 4 * n_seq
    total = int(lengths.sum())
    feats = np.frombuffer(blob, dtype="<f8", count=total * dim, offset=off)
    feats = feats.reshape(total, dim).astype(np.float64)
    off += 8 * total * dim
    labels = np.frombuffer(blob, dtype="<i4", count=total, offset=off).astype(np.int64)
    off += 4 * total
    mean = std = None
    if has_stats:
        mean = np.frombuffer(blob, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        std = np.frombuffer(blob, dtype="<f8", count=dim, offset=off).copy()
    sequences = []
    pos = 0
    for ln in lengths:
        sequences.append((feats[pos:pos + ln].copy(), labels[pos:pos + ln].copy()))
        pos += ln
    return FrameDataset(
        sequences=sequences,
        n_classes=classes,
        splits=(n_train, n_valid, n_seq - n_train - n_valid),
        feature_mean=mean,
        feature_std=std,
    )
