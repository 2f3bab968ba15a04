"""Adadelta update rule composed with momentum.

The raw adadelta step is scaled by a global learning-rate multiplier,
which realizes a decreasing learning-rate schedule on top of the
per-parameter adaptive magnitudes. Momentum is classical by default; the
Nesterov flag switches to the lookahead form.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .network import NetworkParams


def adadelta_update(grad, state: dict, *, rho: float = 0.95, eps: float = 1e-6,
                    momentum: float = 0.0, lr: float = 1.0,
                    nesterov: bool = False) -> np.ndarray:
    """One update for a single parameter array; mutates state in place.

    state holds three arrays shaped like grad: 'sq_grad' (decaying mean of
    g^2), 'sq_delta' (decaying mean of raw-step^2), 'velocity'. The
    returned delta is lr * velocity (lr * lookahead for Nesterov) and is
    meant to be added to the parameter.
    """
    g = np.asarray(grad, dtype=np.float64)
    sq_grad, sq_delta, vel = state["sq_grad"], state["sq_delta"], state["velocity"]
    if sq_grad.shape != g.shape:
        raise ShapeError(f"state shape {sq_grad.shape} does not match grad {g.shape}")
    sq_grad *= rho
    sq_grad += (1.0 - rho) * g * g
    raw = -np.sqrt((sq_delta + eps) / (sq_grad + eps)) * g
    sq_delta *= rho
    sq_delta += (1.0 - rho) * raw * raw
    vel *= momentum
    vel += raw
    if nesterov:
        return lr * (momentum * vel + raw)
    return lr * vel


class AdadeltaMomentum:
    """Optimizer over a NetworkParams set with per-array accumulators."""

    def __init__(self, rho: float = 0.95, eps: float = 1e-6,
                 momentum: float = 0.9, nesterov: bool = False):
        self.rho = rho
        self.eps = eps
        self.momentum = momentum
        self.nesterov = nesterov

    def init_state(self, params: NetworkParams) -> dict:
        """Zeroed accumulators keyed by parameter name."""
        return {
            name: {
                "sq_grad": np.zeros_like(arr),
                "sq_delta": np.zeros_like(arr),
                "velocity": np.zeros_like(arr),
            }
            for name, arr in params.named_arrays()
        }

    def step(self, params: NetworkParams, grads: NetworkParams,
             state: dict, lr: float) -> None:
        """Apply one update in place to every parameter array."""
        grad_by_name = dict(grads.named_arrays())
        for name, arr in params.named_arrays():
            delta = adadelta_update(
                grad_by_name[name], state[name],
                rho=self.rho, eps=self.eps, momentum=self.momentum,
                lr=lr, nesterov=self.nesterov,
            )
            arr += delta
