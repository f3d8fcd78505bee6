import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calderon_misfit.errors import (InvalidExponentForZeroIter,
                                    NonPositiveInput, OutOfRange)
from calderon_misfit.smallness import (chain_parameters, h_bar, omega,
                                       omega_iter)

E2 = math.exp(-2.0)


def test_omega_at_break():
    for b in (0.25, 0.5, 1.0, 2.0):
        assert omega(b, E2) == pytest.approx(E2, rel=1e-15)
        below = omega(b, E2 * (1 - 1e-12))
        assert below == pytest.approx(E2, rel=1e-11)


def test_omega_flat_branch():
    assert omega(0.7, 1.0) == E2
    assert omega(3.0, 12.5) == E2


def test_omega_first_branch_value():
    assert omega(1.0, math.exp(-4.0)) == pytest.approx(E2 / 2, rel=1e-14)


def test_omega_rejects_nonpositive():
    with pytest.raises(NonPositiveInput):
        omega(1.0, 0.0)
    with pytest.raises(NonPositiveInput):
        omega(-1.0, 0.5)


def test_omega_deep_underflow_safe():
    v = omega(0.5, 1e-300)
    assert 0.0 < v < E2
    v2 = omega(0.5, float(np.nextafter(0, 1)))
    assert 0.0 < v2 < v


def test_omega_iter_zero_is_power():
    assert omega_iter(0.5, 0, 0.25) == pytest.approx(0.5, rel=1e-15)
    with pytest.raises(InvalidExponentForZeroIter):
        omega_iter(1.5, 0, 0.25)


def test_omega_iter_composition():
    t = math.exp(-4.0)
    assert omega_iter(1.0, 1, t) == omega(1.0, t)
    assert omega_iter(1.0, 2, t) == pytest.approx(omega(1.0, omega(1.0, t)),
                                                  rel=1e-15)


def test_omega_iter_saturates():
    # deep compositions collapse to the fixed point e^-2
    assert omega_iter(0.5, 500, 1e-9) == pytest.approx(E2, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(-40.0, 40.0), st.floats(0.001, 5.0))
def test_property1_monotone(b, log_t, factor):
    # t -> t * omega_b(1/t) is non-decreasing (paper range b <= 2)
    t1 = math.exp(log_t)
    t2 = t1 * (1.0 + factor)
    v1 = t1 * omega(b, 1.0 / t1)
    v2 = t2 * omega(b, 1.0 / t2)
    assert v2 >= v1 * (1 - 1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-200.0, 2.0), st.floats(0.01, 0.99))
def test_property2_quotient(b, log_t, beta):
    t = math.exp(log_t)
    lhs = omega(b, t / beta)
    rhs = abs(math.log(math.e * beta ** -0.5)) ** b * omega(b, t)
    assert lhs <= rhs * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(-200.0, 2.0), st.floats(0.01, 0.99))
def test_property2_power(b, log_t, beta):
    t = math.exp(log_t)
    lhs = omega(b, t ** beta)
    rhs = (1.0 / beta) ** b * omega(b, t)
    assert lhs <= rhs * (1 + 1e-12)


def test_omega_bounded_and_monotone():
    b = 0.8
    ts = np.logspace(-12, 2, 500)
    vals = omega(b, ts)
    assert np.all(np.diff(vals) >= -1e-18)
    assert vals.max() <= E2 * (1 + 1e-15)


def test_chain_parameters_reference_values():
    cp = chain_parameters(1.0, 1.0)
    assert cp.beta == pytest.approx(math.pi / 4, rel=1e-15)
    sb = math.sin(cp.beta)
    assert cp.beta1 == pytest.approx(math.atan(sb / 4), rel=1e-15)
    # sin(arctan(t)) = t / sqrt(1 + t^2) with t = sin(pi/4)/4 = sqrt(2)/8
    t = math.sqrt(2.0) / 8.0
    a_closed = (math.sqrt(1 + t * t) - t) / (math.sqrt(1 + t * t) + t)
    assert cp.a == pytest.approx(a_closed, rel=1e-14)
    assert cp.a == pytest.approx(0.70346, abs=5e-5)
    assert 0.0 < cp.a < 1.0


def test_chain_recurrence_and_closed_form():
    cp = chain_parameters(1.3, 0.7)
    for m in range(2, 21):
        assert cp.d(m) / cp.d(m - 1) == pytest.approx(cp.a, rel=1e-14)
    for m in range(1, 61):
        assert cp.d(m) == pytest.approx(cp.r0 * cp.a ** m, rel=1e-12)


def test_h_bar_base_cases():
    cp = chain_parameters(1.0, 1.0)
    assert h_bar(cp.d(1), cp) == 1
    assert h_bar(cp.d(5), cp) == 5
    assert h_bar(cp.d(5) * (1 + 1e-9), cp) == 5
    with pytest.raises(OutOfRange):
        h_bar(cp.d(1) * 1.5, cp)
    with pytest.raises(OutOfRange):
        h_bar(0.0, cp)


def test_h_bar_sandwich_random():
    # the sandwich assertion runs inside h_bar on every call
    cp = chain_parameters(0.8, 1.3)
    rng = np.random.default_rng(0)
    d1 = cp.d(1)
    for r in d1 * rng.uniform(1e-12, 1.0, size=1000):
        l = h_bar(float(r), cp)
        assert cp.d(l) <= r
        assert l == 1 or cp.d(l - 1) > r
