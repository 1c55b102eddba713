import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantldp import quantizer
from quantldp.quantizer import QuantSchedule

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
steps = st.floats(1e-3, 1e2, allow_nan=False, allow_infinity=False)


def decompose_oracle(y, d):
    """Scan candidate levels around y/d with exact rational arithmetic."""
    fy, fd = Fraction(y), Fraction(d)
    guess = math.floor(fy / fd)
    for n in range(guess - 2, guess + 3):
        z = fy - n * fd
        if 0 < z <= fd:
            return n, float(z)
    raise AssertionError("no level found")


@pytest.mark.parametrize("y,d,n,z", [(0.7, 1.0, 0, 0.7), (3.0, 1.0, 2, 1.0), (-0.25, 0.5, -1, 0.25)])
def test_decompose_examples(y, d, n, z):
    got_n, got_z = quantizer.decompose(y, d)
    assert got_n == n
    assert got_z == pytest.approx(z, abs=1e-15)


@settings(max_examples=500, deadline=None)
@given(finite, steps)
def test_decompose_matches_rational_oracle(y, d):
    n, z = quantizer.decompose(y, d)
    assert 0.0 < z <= d
    n_ref, _ = decompose_oracle(y, d)
    # float rounding in y - n*d can move an input sitting on a level by one ulp
    assert abs(n - n_ref) <= 1
    assert abs(n * d + z - y) <= 1e-9 * max(1.0, abs(y))


@pytest.mark.parametrize("y,d", [(math.nan, 1.0), (math.inf, 1.0), (1.0, 0.0), (1.0, -1.0), (1.0, math.inf)])
def test_bad_inputs_raise(y, d):
    with pytest.raises(ValueError):
        quantizer.decompose(y, d)
    with pytest.raises(ValueError):
        quantizer.quantize(y, d, np.random.default_rng(0))


def test_outcome_distribution_examples():
    out = quantizer.outcome_distribution(0.7, 1.0)
    assert out.support == (0.0, 1.0)
    assert out.probabilities == pytest.approx((0.3, 0.7), abs=1e-15)
    out = quantizer.outcome_distribution(0.4, 0.4)
    assert out.support == (0.0, 0.4)
    assert out.probabilities == (0.0, 1.0)
    out = quantizer.outcome_distribution(-0.25, 0.5)
    assert out.support == (-0.5, 0.0)
    assert out.probabilities == pytest.approx((0.5, 0.5))


def test_exact_pmf_is_unbiased_with_bounded_variance():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        y = rng.uniform(-50, 50)
        d = rng.uniform(0.01, 5)
        out = quantizer.outcome_distribution(y, d)
        assert sum(out.probabilities) == pytest.approx(1.0, abs=1e-15)
        assert all(0.0 <= p <= 1.0 for p in out.probabilities)
        assert abs(out.mean - y) <= 1e-14 * max(1.0, abs(y)) / min(1.0, d) + 1e-14
        _, z = quantizer.decompose(y, d)
        assert out.variance == pytest.approx(z * (d - z), abs=1e-12 * d * d + 1e-12)
        assert out.variance <= d * d / 4 + 1e-12


def test_quantize_consumes_one_variate_and_lands_on_lattice():
    a = np.random.default_rng(3)
    b = np.random.default_rng(3)
    for y in (0.7, -2.2, 5.0, 1e-9):
        q = quantizer.quantize(y, 0.3, a)
        b.random()
        n, _ = quantizer.decompose(y, 0.3)
        assert q in (n * 0.3, (n + 1) * 0.3)
    assert a.random() == b.random()


def test_exact_multiple_maps_to_itself():
    rng = np.random.default_rng(0)
    assert all(quantizer.quantize(3.0, 1.0, rng) == 3.0 for _ in range(100))
    np.testing.assert_array_equal(quantizer.quantize_vector([1.0, 2.0], 1.0, rng), [1.0, 2.0])


def test_quantize_frequencies_match_pmf():
    rng = np.random.default_rng(11)
    N = 200_000
    for y, d, up in ((0.7, 1.0, 0.7), (-0.25, 0.5, 0.5)):
        out = quantizer.quantize_vector(np.full(N, y), d, rng)
        n, _ = quantizer.decompose(y, d)
        frac = np.mean(out == (n + 1) * d)
        assert np.all((out == n * d) | (out == (n + 1) * d))
        assert abs(frac - up) <= 4 * math.sqrt(up * (1 - up) / N)


def test_vector_coordinates_are_independent():
    rng = np.random.default_rng(5)
    N = 200_000
    samples = np.array([quantizer.quantize_vector([0.5, 0.5], 1.0, rng) for _ in range(N // 10)])
    joint = np.mean((samples[:, 0] == 0.0) & (samples[:, 1] == 1.0))
    assert abs(joint - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / len(samples))


def test_vector_matches_scalar_calls_in_coordinate_order():
    y = np.array([0.3, -1.7, 2.25, 0.0, 9.99])
    a = quantizer.quantize_vector(y, 0.5, np.random.default_rng(9))
    rng = np.random.default_rng(9)
    b = [quantizer.quantize(v, 0.5, rng) for v in y]
    np.testing.assert_array_equal(a, b)


def test_empty_vector_consumes_nothing():
    a = np.random.default_rng(1)
    assert quantizer.quantize_vector([], 1.0, a).size == 0
    assert a.random() == np.random.default_rng(1).random()


def test_vector_rejects_bad_input():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        quantizer.quantize_vector([1.0, math.nan], 1.0, rng)
    with pytest.raises(ValueError):
        quantizer.quantize_vector([[1.0]], 1.0, rng)
    with pytest.raises(ValueError):
        quantizer.quantize_vector([1.0], 0.0, rng)


def test_determinism():
    y = np.linspace(-3, 3, 101)
    a = quantizer.quantize_vector(y, 0.37, np.random.default_rng(42))
    b = quantizer.quantize_vector(y, 0.37, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)


def test_stepsize_examples():
    s = QuantSchedule(2.01, 0.61)
    assert quantizer.stepsize(0, s) == 2.01
    assert quantizer.stepsize(3, s) == pytest.approx(2.01 / 4 ** 0.61)
    # 4**0.61 = exp(0.61 * ln 4) = 2.32944..., so d_3 = 0.86286...
    assert quantizer.stepsize(3, s) == pytest.approx(math.exp(math.log(2.01) - 0.61 * math.log(4.0)), rel=1e-14)
    assert quantizer.stepsize(3, s) == pytest.approx(0.86286, abs=5e-6)
    with pytest.raises(ValueError):
        quantizer.stepsize(-1, s)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 100), st.floats(0.51, 0.99), st.integers(0, 10 ** 6))
def test_stepsize_strictly_decreasing_and_positive(d0, vs, t):
    s = QuantSchedule(d0, vs)
    assert 0 < quantizer.stepsize(t + 1, s) < quantizer.stepsize(t, s)


@pytest.mark.parametrize("d0,vs", [(0.0, 0.6), (-1.0, 0.6), (1.0, 0.5), (1.0, 1.0)])
def test_schedule_rejects_bad_parameters(d0, vs):
    with pytest.raises(ValueError):
        QuantSchedule(d0, vs)


def gap_oracle(y, yp, d):
    """Total-variation distance of the two pmfs, i.e. half the l1 distance."""
    pmfs = []
    for x in (y, yp):
        o = quantizer.outcome_distribution(x, d)
        pmfs.append({o.level: o.probabilities[0], o.level + 1: o.probabilities[1]})
    keys = set(pmfs[0]) | set(pmfs[1])
    return 0.5 * sum(abs(pmfs[0].get(k, 0.0) - pmfs[1].get(k, 0.0)) for k in keys)


def test_lemma6_examples():
    assert quantizer.lemma6_gap(0.2, 0.5, 1.0) == pytest.approx(0.3)
    assert quantizer.lemma6_gap(1.3, 1.3, 0.7) == 0.0
    assert quantizer.lemma6_gap(0.9, 1.1, 1.0) <= 0.2 + 1e-12
    # straddling level 1: {0: .1, 1: .9} against {1: .9, 2: .1}
    assert quantizer.lemma6_gap(0.9, 1.1, 1.0) == pytest.approx(0.1)


def test_lemma6_rejects_far_inputs():
    with pytest.raises(ValueError):
        quantizer.lemma6_gap(0.0, 1.0, 1.0)


@settings(max_examples=500, deadline=None)
@given(st.floats(-20, 20), st.floats(-0.999, 0.999), st.floats(0.05, 5))
def test_lemma6_gap_equals_total_variation_and_obeys_bound(y, frac, d):
    yp = y + frac * d
    if not abs(y - yp) < d:
        return
    gap = quantizer.lemma6_gap(y, yp, d)
    assert gap == pytest.approx(gap_oracle(y, yp, d), abs=1e-12)
    assert gap <= abs(y - yp) / d + 1e-12
