"""Dense-array plumbing: validated matmul, activations, and seeded randomness.

Matrices are plain float64 numpy arrays in row-major order. All training
arithmetic stays in float64; quantized values are float64 numbers lying
exactly on their quantization grid.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, NumericFault, ShapeError

RNG_ALGORITHM = "pcg64"  # recorded in checkpoints for reproducibility

ACTIVATION_KINDS = ("sigmoid", "tanh", "linear")


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: equal seeds give equal draw sequences."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Coerce to a finite float64 2-D array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NumericFault(f"{name} contains non-finite values")
    return out


def as_vector(a, name: str = "array") -> np.ndarray:
    """Coerce to a finite float64 1-D array."""
    out = np.asarray(a, dtype=np.float64).ravel()
    if not np.all(np.isfinite(out)):
        raise NumericFault(f"{name} contains non-finite values")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking.

    Raises ShapeError reporting both operand shapes on inner-dimension
    mismatch instead of numpy's generic ValueError.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    """Logistic sigmoid, overflow-safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(kind: str, x):
    """Apply an activation function elementwise.

    sigmoid -> 1/(1+e^-x), tanh -> standard hyperbolic tangent,
    linear -> identity.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "linear":
        return x.copy()
    raise ArgumentError(f"unknown activation kind {kind!r}")


def activation_derivative(kind: str, y):
    """Derivative of an activation expressed through its output value y.

    sigmoid -> y(1-y), tanh -> 1-y^2, linear -> 1.
    """
    y = np.asarray(y, dtype=np.float64)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "linear":
        return np.ones_like(y)
    raise ArgumentError(f"unknown activation kind {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a (batch, classes) array."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
