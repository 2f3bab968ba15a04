"""Uniform fixed-point quantization of weights and signals.

Weights use a symmetric grid of M odd levels spaced by a step size chosen
to minimize the L2 quantization error through a two-step alternation:
assign integer memberships for the current step, then update the step in
closed form from the memberships. Signals use bounded codebooks tied to
the producing activation: all 2^b points on [0, 1] for sigmoid outputs,
and a symmetric (2^b - 1)-point grid including zero for tanh and linear
units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ArgumentError, DegenerateWeightsError
from .numerics import as_vector

SIGNAL_KINDS = ("sigmoid", "tanh", "linear")

#: targets accepted by bits_to_levels
LEVEL_TARGETS = ("weight", "sigmoid-signal", "symmetric-signal")


def bits_to_levels(bits: int, target: str = "weight") -> int:
    """Number of representable levels for a bit budget.

    Weights and symmetric signals use 2^bits - 1 levels (odd, symmetric
    around zero); sigmoid signals use all 2^bits points of [0, 1].
    """
    if not isinstance(bits, (int, np.integer)) or bits < 2:
        raise ArgumentError(f"bits must be an integer >= 2, got {bits!r}")
    if target == "sigmoid-signal":
        return 2**bits
    if target in ("weight", "symmetric-signal"):
        return 2**bits - 1
    raise ArgumentError(f"unknown target {target!r}, expected one of {LEVEL_TARGETS}")


@dataclass(frozen=True)
class WeightQuantSpec:
    """Symmetric uniform weight quantizer: M odd levels spaced by step."""

    levels: int
    step: float

    def __post_init__(self):
        if self.levels < 3 or self.levels % 2 == 0:
            raise ArgumentError(f"levels must be odd and >= 3, got {self.levels}")
        if not (self.step > 0):
            raise ArgumentError(f"step must be positive, got {self.step}")

    @classmethod
    def from_bits(cls, bits: int, step: float) -> "WeightQuantSpec":
        return cls(levels=bits_to_levels(bits, "weight"), step=step)

    @property
    def bits(self) -> int:
        """Smallest bit-width able to store all levels."""
        return int(np.ceil(np.log2(self.levels + 1)))

    @property
    def half_range(self) -> int:
        """(M - 1) / 2, the largest integer membership magnitude."""
        return (self.levels - 1) // 2


def weight_memberships(weights, step: float, levels: int) -> np.ndarray:
    """Integer grid memberships: sgn(w) * min(floor(|w|/step + 0.5), (M-1)/2)."""
    w = np.asarray(weights, dtype=np.float64)
    half = (levels - 1) // 2
    mags = np.minimum(np.floor(np.abs(w) / step + 0.5), half)
    return (np.sign(w) * mags).astype(np.int64)


def quantize_weight(weights, spec: WeightQuantSpec):
    """Quantize to the symmetric grid, saturating at +/- step*(M-1)/2.

    Ties round away from zero (the floor(.+0.5) convention). Accepts
    scalars or arrays; the output shape matches the input.
    """
    w = np.asarray(weights, dtype=np.float64)
    q = weight_memberships(w, spec.step, spec.levels) * spec.step
    if w.ndim == 0:
        return float(q)
    return q


def quantization_error(weights, spec: WeightQuantSpec) -> float:
    """L2 quantization error: half the sum of squared rounding residuals."""
    w = as_vector(weights, "weights")
    if w.size == 0:
        raise ArgumentError("weights must be non-empty")
    r = quantize_weight(w, spec) - w
    return 0.5 * float(np.dot(r, r))


@dataclass
class QuantizationOutcome:
    """Result of the step-size optimization for one weight group."""

    memberships: np.ndarray
    step: float
    error: float
    iterations: int
    levels: int
    #: L2 error after each full membership/step iteration (non-increasing)
    error_history: list = field(default_factory=list)

    @property
    def spec(self) -> WeightQuantSpec:
        return WeightQuantSpec(levels=self.levels, step=self.step)


#: largest n*(M-1)/2 for which the exact breakpoint scan is attempted
_SCAN_BUDGET = 4_000_000


def _scan_initial_step(w: np.ndarray, half: int, max_abs: float) -> float:
    """Exact minimizer of the L2 error over the step size.

    The error is piecewise quadratic in the step: memberships only change
    when the step crosses |w_i| / (k - 0.5). Sweeping those breakpoints
    in descending order while accumulating sum(w*z) and sum(z^2) yields
    every piece's parabola, whose clamped vertex gives the piece minimum.
    """
    aw = np.abs(w)
    ks = np.arange(1, half + 1)
    bps = (aw[None, :] / (ks[:, None] - 0.5)).ravel()
    d_wz = np.broadcast_to(aw, (half, aw.size)).ravel()
    d_zz = np.broadcast_to((2 * ks - 1)[:, None], (half, aw.size)).ravel()
    order = np.argsort(-bps, kind="stable")
    bps, d_wz, d_zz = bps[order], d_wz[order], d_zz[order]
    s_wz = np.cumsum(d_wz)
    s_zz = np.cumsum(d_zz)
    lo = np.append(bps[1:], 0.0)
    vertex = s_wz / s_zz
    cand = np.minimum(vertex, bps)  # piece is (lo, bps]; lower end owned by the next piece
    w2 = float(w @ w)
    err = 0.5 * (w2 - 2.0 * cand * s_wz + cand * cand * s_zz)
    err[cand <= lo] = np.inf
    best = int(np.argmin(err))
    return float(cand[best])


def optimize_step_size(
    weights,
    levels: int,
    rtol: float = 1e-8,
    max_iter: int = 100,
    init: str = "auto",
) -> QuantizationOutcome:
    """Find the L2-optimal step size by alternating two closed-form steps.

    Membership assignment alternates with the closed-form step update
    step = sum(w*z) / sum(z^2) until memberships stabilize, the relative
    step change drops below rtol, or max_iter is reached. The recorded
    error is non-increasing across iterations because each half-step
    minimizes the error in one variable.

    init='auto' seeds the iteration with an exact one-dimensional scan
    over the membership breakpoints (the alternation alone can settle in
    a local minimum of the piecewise-quadratic error); init='max-range'
    uses step0 = max|w| / ((M-1)/2), putting the largest weight on the
    top level. The scan falls back to max-range when n*(M-1)/2 exceeds
    its budget; fine grids are insensitive to the start.
    """
    w = as_vector(weights, "weights")
    if w.size == 0:
        raise ArgumentError("weights must be non-empty")
    if levels < 3 or levels % 2 == 0:
        raise ArgumentError(f"levels must be odd and >= 3, got {levels}")
    max_abs = float(np.max(np.abs(w)))
    if max_abs == 0.0:
        raise DegenerateWeightsError("all-zero weight group has no usable step size")
    if init not in ("auto", "max-range"):
        raise ArgumentError(f"unknown init {init!r}")

    half = (levels - 1) // 2
    if init == "auto" and w.size * half <= _SCAN_BUDGET:
        step = _scan_initial_step(w, half, max_abs)
    else:
        step = max_abs / half
    z = weight_memberships(w, step, levels)
    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        zf = z.astype(np.float64)  # int64 dot products overflow at high bit-widths
        zz = float(np.dot(zf, zf))
        if zz == 0.0:
            break
        new_step = float(np.dot(w, zf)) / zz
        new_z = weight_memberships(w, new_step, levels)
        r = new_z * new_step - w
        history.append(0.5 * float(np.dot(r, r)))
        converged = np.array_equal(new_z, z) or abs(new_step - step) <= rtol * new_step
        step, z = new_step, new_z
        if converged:
            break

    # realign the step with the final memberships so the stationarity
    # relation step == sum(w*z)/sum(z^2) holds exactly
    zf = z.astype(np.float64)
    zz = float(np.dot(zf, zf))
    if zz > 0.0:
        step = float(np.dot(w, zf)) / zz
    r = zf * step - w
    error = 0.5 * float(np.dot(r, r))
    return QuantizationOutcome(
        memberships=z,
        step=step,
        error=error,
        iterations=iterations,
        error_history=history,
        levels=levels,
    )


@dataclass(frozen=True)
class SignalQuantSpec:
    """Bounded activation quantizer for one signal layer.

    Sigmoid outputs use all 2^bits codebook points on [0, 1]; tanh and
    linear units use the symmetric (2^bits - 1)-point grid including
    zero. The range is fixed by the activation except for linear units,
    whose bounds must be supplied (the presentation default for
    standardized inputs is (-3, 3)).
    """

    kind: str
    bits: int
    value_range: tuple = None

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ArgumentError(f"unknown signal kind {self.kind!r}")
        if not isinstance(self.bits, (int, np.integer)) or self.bits < 2:
            raise ArgumentError(f"bits must be an integer >= 2, got {self.bits!r}")
        if self.kind == "sigmoid":
            rng = (0.0, 1.0)
        elif self.kind == "tanh":
            rng = (-1.0, 1.0)
        else:
            if self.value_range is None:
                raise ArgumentError("linear signals need an explicit value_range")
            lo, hi = float(self.value_range[0]), float(self.value_range[1])
            if not lo < hi:
                raise ArgumentError(f"invalid range ({lo}, {hi}): need lo < hi")
            rng = (lo, hi)
        object.__setattr__(self, "value_range", rng)

    @property
    def levels(self) -> int:
        target = "sigmoid-signal" if self.kind == "sigmoid" else "symmetric-signal"
        return bits_to_levels(self.bits, target)


def signal_codebook(spec: SignalQuantSpec) -> np.ndarray:
    """All representable points of the signal quantizer, ascending."""
    lo, hi = spec.value_range
    return np.linspace(lo, hi, spec.levels)


def quantize_signal(values, spec: SignalQuantSpec):
    """Snap values to the nearest codebook point, saturating outside range.

    Ties follow the weight quantizer's floor(.+0.5) convention: away from
    zero on zero-centered grids, toward the upper point otherwise.
    """
    y = np.asarray(values, dtype=np.float64)
    lo, hi = spec.value_range
    m = spec.levels
    if lo == -hi:  # zero-centered grid (tanh, symmetric linear)
        half = (m - 1) // 2
        step = hi / half
        mags = np.minimum(np.floor(np.abs(y) / step + 0.5), half)
        q = np.sign(y) * mags * step
    else:
        step = (hi - lo) / (m - 1)
        idx = np.clip(np.floor((y - lo) / step + 0.5), 0, m - 1)
        q = lo + idx * step
    if y.ndim == 0:
        return float(q)
    return q


class UniformWeightQuantizer(TransformerMixin, BaseEstimator):
    """Learns an L2-optimal step size on fit, snaps values on transform.

    Works on arrays of any shape (values are treated as one weight
    population, matching per-group quantization).

    Parameters
    ----------
    bits : int, default=8
        Bit budget; the grid gets 2^bits - 1 symmetric levels. Ignored
        when ``levels`` is given.
    levels : int or None
        Explicit odd level count M >= 3.
    rtol : float
        Relative step-change convergence threshold of the alternation.
    max_iter : int
        Iteration cap of the alternation.

    Attributes
    ----------
    levels_ : int          resolved level count
    step_ : float          optimized step size
    error_ : float         L2 error on the fitted weights
    n_iter_ : int          alternation iterations used
    memberships_ : ndarray integer grid memberships of the fitted weights
    """

    def __init__(self, bits=8, levels=None, rtol=1e-8, max_iter=100):
        self.bits = bits
        self.levels = levels
        self.rtol = rtol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        levels = self.levels if self.levels is not None else bits_to_levels(self.bits)
        outcome = optimize_step_size(
            np.asarray(X, dtype=np.float64).ravel(),
            levels,
            rtol=self.rtol,
            max_iter=self.max_iter,
        )
        self.levels_ = levels
        self.step_ = outcome.step
        self.error_ = outcome.error
        self.n_iter_ = outcome.iterations
        self.memberships_ = outcome.memberships
        return self

    @property
    def spec_(self) -> WeightQuantSpec:
        return WeightQuantSpec(levels=self.levels_, step=self.step_)

    def transform(self, X):
        return quantize_weight(np.asarray(X, dtype=np.float64), self.spec_)


class SignalQuantizer(TransformerMixin, BaseEstimator):
    """Stateless transformer view of the bounded signal quantizer.

    fit only validates the configuration; transform snaps values to the
    codebook.
    """

    def __init__(self, kind="sigmoid", bits=2, value_range=None):
        self.kind = kind
        self.bits = bits
        self.value_range = value_range

    def fit(self, X=None, y=None):
        self.spec_ = SignalQuantSpec(self.kind, self.bits, self.value_range)
        self.codebook_ = signal_codebook(self.spec_)
        return self

    def transform(self, X):
        return quantize_signal(np.asarray(X, dtype=np.float64), self.spec_)
