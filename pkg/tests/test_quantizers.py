import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnquant.errors import ArgumentError, DegenerateWeightsError
from rnnquant.numerics import seeded_rng
from rnnquant.quantizers import (
    SignalQuantSpec,
    SignalQuantizer,
    UniformWeightQuantizer,
    WeightQuantSpec,
    bits_to_levels,
    optimize_step_size,
    quantization_error,
    quantize_signal,
    quantize_weight,
    signal_codebook,
)

finite_floats = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
specs = st.builds(
    WeightQuantSpec,
    levels=st.integers(1, 60).map(lambda k: 2 * k + 1),
    step=st.floats(1e-6, 1e3),
)


def grid_search_error(w, levels, n_grid=20_000):
    """Independent oracle: dense scan of the step axis."""
    w = np.asarray(w, dtype=float)
    half = (levels - 1) // 2
    deltas = np.linspace(1e-9, 2 * np.abs(w).max(), n_grid)
    best = np.inf
    for lo in range(0, n_grid, 256):
        d = deltas[lo:lo + 256][:, None]
        z = np.sign(w) * np.minimum(np.floor(np.abs(w) / d + 0.5), half)
        err = 0.5 * ((z * d - w) ** 2).sum(axis=1)
        best = min(best, float(err.min()))
    return best


# ---------------------------------------------------------------- weights

def test_quantize_weight_examples():
    assert quantize_weight(0.0, WeightQuantSpec(5, 0.1)) == 0.0
    assert np.isclose(quantize_weight(0.26, WeightQuantSpec(5, 0.1)), 0.2)
    assert np.isclose(quantize_weight(-10.0, WeightQuantSpec(5, 0.1)), -0.2)
    assert np.isclose(quantize_weight(0.26, WeightQuantSpec(7, 0.1)), 0.3)


def test_levels_five_grid_matches_three_bit_storage():
    # M = 5 represents {-2d, -d, 0, d, 2d}
    spec = WeightQuantSpec(5, 1.0)
    values = {float(quantize_weight(x, spec)) for x in np.linspace(-10, 10, 2001)}
    assert values == {-2.0, -1.0, 0.0, 1.0, 2.0}
    assert spec.bits == 3


@given(w=finite_floats, spec=specs)
def test_quantize_weight_idempotent(w, spec):
    q = quantize_weight(w, spec)
    assert quantize_weight(q, spec) == q


@given(w=finite_floats, spec=specs)
def test_quantize_weight_odd_symmetry(w, spec):
    assert quantize_weight(-w, spec) == -quantize_weight(w, spec)


@given(w=finite_floats, spec=specs)
def test_quantize_weight_saturation_bound(w, spec):
    assert abs(quantize_weight(w, spec)) <= spec.step * (spec.levels - 1) / 2 + 1e-12


@given(w=finite_floats, spec=specs)
def test_quantize_weight_on_grid(w, spec):
    q = quantize_weight(w, spec)
    k = round(q / spec.step)
    assert abs(k * spec.step - q) < 1e-9 * max(1.0, abs(q))
    assert abs(k) <= (spec.levels - 1) // 2


def test_quantization_error_hand_value():
    assert np.isclose(
        quantization_error([0.1, 0.2, 0.9], WeightQuantSpec(3, 0.9)), 0.025)


def test_quantization_error_zero_on_grid_values():
    spec = WeightQuantSpec(5, 0.25)
    assert quantization_error([0.25, -0.5, 0.0], spec) == 0.0


def test_quantization_error_permutation_invariant():
    rng = seeded_rng(0)
    w = rng.normal(size=50)
    spec = WeightQuantSpec(7, 0.3)
    assert np.isclose(quantization_error(w, spec),
                      quantization_error(w[::-1], spec))


def test_quantization_error_empty_rejected():
    with pytest.raises(ArgumentError):
        quantization_error([], WeightQuantSpec(3, 1.0))


# ------------------------------------------------------- step optimization

def test_optimize_exactly_representable():
    out = optimize_step_size([-1.0, 1.0], 3)
    assert np.isclose(out.step, 1.0)
    assert out.error == 0.0


def test_optimize_hand_iteration():
    out = optimize_step_size([0.1, 0.2, 0.9], 3)
    assert np.isclose(out.step, 0.9)
    assert np.isclose(out.error, 0.025)
    assert out.iterations == 1
    assert np.array_equal(out.memberships, [0, 0, 1])
    assert np.isclose(grid_search_error([0.1, 0.2, 0.9], 3), 0.025, rtol=1e-3)


def test_optimize_rejects_all_zero():
    with pytest.raises(DegenerateWeightsError):
        optimize_step_size(np.zeros(10), 3)


def test_optimize_rejects_even_levels():
    with pytest.raises(ArgumentError):
        optimize_step_size([0.5], 4)


@pytest.mark.parametrize("levels", [3, 7, 15])
def test_optimize_matches_grid_oracle(levels):
    rng = seeded_rng(97)
    for _ in range(25):
        n = int(rng.integers(10, 1000))
        w = rng.normal(0, rng.uniform(0.2, 2.0), n)
        out = optimize_step_size(w, levels)
        assert out.error <= 1.0001 * grid_search_error(w, levels)


def test_optimize_error_history_non_increasing():
    rng = seeded_rng(3)
    for _ in range(20):
        w = rng.normal(0, 1.0, int(rng.integers(5, 200)))
        out = optimize_step_size(w, 7, init="max-range")
        h = out.error_history
        assert all(h[i + 1] <= h[i] + 1e-15 for i in range(len(h) - 1))


def test_optimize_stationarity():
    rng = seeded_rng(4)
    for levels in (3, 15):
        w = rng.normal(0, 1.0, 300)
        out = optimize_step_size(w, levels)
        z = out.memberships.astype(float)
        assert abs(out.step - float(w @ z) / float(z @ z)) <= 1e-10 * out.step


def test_optimize_high_levels_near_lossless():
    rng = seeded_rng(5)
    w = rng.normal(0, 0.1, 500)
    out = optimize_step_size(w, bits_to_levels(16))
    assert out.error < 1e-8


# ---------------------------------------------------------------- signals

def test_bits_to_levels():
    assert bits_to_levels(3, "weight") == 7
    assert bits_to_levels(2, "sigmoid-signal") == 4
    assert bits_to_levels(2, "symmetric-signal") == 3
    with pytest.raises(ArgumentError):
        bits_to_levels(1, "weight")
    with pytest.raises(ArgumentError):
        bits_to_levels(3, "bogus")


def test_two_bit_sigmoid_codebook_is_thirds():
    spec = SignalQuantSpec("sigmoid", 2)
    assert np.allclose(signal_codebook(spec), [0, 1 / 3, 2 / 3, 1])
    assert np.isclose(quantize_signal(0.4, spec), 1 / 3)


def test_two_bit_tanh_codebook():
    spec = SignalQuantSpec("tanh", 2)
    assert np.allclose(signal_codebook(spec), [-1, 0, 1])
    assert quantize_signal(-0.7, spec) == -1.0


def test_linear_signal_saturates():
    spec = SignalQuantSpec("linear", 4, (-3.0, 3.0))
    assert quantize_signal(3.5, spec) == 3.0
    assert quantize_signal(-99.0, spec) == -3.0


def test_fixed_ranges_per_kind():
    assert SignalQuantSpec("sigmoid", 3).value_range == (0.0, 1.0)
    assert SignalQuantSpec("tanh", 3).value_range == (-1.0, 1.0)
    with pytest.raises(ArgumentError):
        SignalQuantSpec("linear", 3)  # needs an explicit range
    with pytest.raises(ArgumentError):
        SignalQuantSpec("linear", 3, (2.0, -2.0))


@given(
    y=st.floats(-50, 50, allow_nan=False),
    kind=st.sampled_from(["sigmoid", "tanh", "linear"]),
    bits=st.integers(2, 10),
)
def test_quantize_signal_output_in_codebook(y, kind, bits):
    spec = SignalQuantSpec(kind, bits, (-3.0, 3.0) if kind == "linear" else None)
    book = signal_codebook(spec)
    assert len(book) == spec.levels
    q = quantize_signal(y, spec)
    assert np.min(np.abs(book - q)) < 1e-12


@given(y=st.floats(-10, 10, allow_nan=False), bits=st.integers(2, 8))
def test_quantize_signal_picks_nearest_point(y, bits):
    spec = SignalQuantSpec("tanh", bits)
    book = signal_codebook(spec)
    q = quantize_signal(y, spec)
    best = float(np.min(np.abs(book - np.clip(y, -1, 1))))
    assert abs(abs(q - np.clip(y, -1, 1)) - best) < 1e-12


# ------------------------------------------------------------- estimators

def test_weight_quantizer_transformer_roundtrip():
    rng = seeded_rng(11)
    w = rng.normal(0, 0.5, (32, 8))
    q = UniformWeightQuantizer(bits=3).fit(w)
    out = q.transform(w)
    assert out.shape == w.shape
    assert len(np.unique(out)) <= q.levels_
    # fit learns the same step the functional API reports
    ref = optimize_step_size(w.ravel(), 7)
    assert q.step_ == ref.step and q.error_ == ref.error


def test_weight_quantizer_sklearn_clone():
    from sklearn.base import clone
    q = UniformWeightQuantizer(bits=4, rtol=1e-9)
    c = clone(q)
    assert c.get_params() == q.get_params()


def test_signal_quantizer_transformer():
    sq = SignalQuantizer(kind="sigmoid", bits=2).fit()
    y = np.linspace(-0.2, 1.2, 29)
    out = sq.transform(y)
    assert set(np.round(out, 12)) <= set(np.round(sq.codebook_, 12))
