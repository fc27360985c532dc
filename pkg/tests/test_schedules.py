import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierflow import convex as cx
from hierflow.schedules import (
    BETA, EPSILON, Constant, Custom, Exponential, Logarithmic, PowerLaw, QuadratureError,
    RescaledEpsilon, adaptive_simpson, h1_check, h1_integrand, h2_check, h2_eps_check,
    inverse_cumulative, parse_schedule, rescale_to_eps, t_eps, tail_exponent,
)

SQ = PowerLaw(1.0, 2.0)


def test_adaptive_simpson_exact_on_cubics():
    assert adaptive_simpson(lambda t: t ** 3 - t, 0.0, 2.0) == pytest.approx(2.0, abs=1e-12)


def test_adaptive_simpson_rejects_nonfinite():
    with pytest.raises(QuadratureError):
        adaptive_simpson(lambda t: 1.0 / (t - 0.5) if t != 0.5 else math.inf, 0.0, 1.0)


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 7.25, 40.0])
def test_cumulative_power_law(t):
    assert SQ.cumulative(t) == pytest.approx(((1 + t) ** 3 - 1) / 3, rel=1e-12)


def test_cumulative_exponential():
    s = Exponential(2.0, 0.5)
    assert s.cumulative(3.0) == pytest.approx(4.0 * (math.exp(1.5) - 1.0), rel=1e-12)


@pytest.mark.parametrize("t", [0.5, 3.0, 100.0, 1e4])
def test_rescale_matches_closed_form(t):
    tb, eps = rescale_to_eps(SQ, t)
    assert tb == pytest.approx((1 + 3 * t) ** (1 / 3) - 1, rel=1e-10)
    assert eps == pytest.approx((1 + 3 * t) ** (-2 / 3), rel=1e-10)
    assert eps * SQ.value(tb) == pytest.approx(1.0, rel=1e-14)


def test_rescaled_epsilon_vectorised_agrees_with_scalar():
    e = RescaledEpsilon(SQ)
    ts = np.array([5.0, 0.0, 1.0, 20.0, 5.0])
    many = e.values(ts)
    assert np.allclose(many, [e.value(float(t)) for t in ts], rtol=1e-12)
    assert np.allclose(e.derivative(ts), -2.0 * (1 + 3 * ts) ** (-5 / 3), rtol=1e-9)


def test_t_eps_inverts_the_clock():
    e = RescaledEpsilon(SQ)
    # int_0^T eps = t_beta(T) for the matched pair
    assert t_eps(e, 3.0) == pytest.approx(((1 + 3.0) ** 3 - 1) / 3, rel=1e-8)


def test_inverse_cumulative_unreachable():
    bounded = Custom(lambda t: math.exp(-t), lambda t: -math.exp(-t))
    with pytest.raises(ValueError):
        inverse_cumulative(bounded, 2.0, max_doublings=10)


@pytest.mark.parametrize("s", [SQ, Exponential(1.5, -0.25), Constant(3.0), Logarithmic(2.0),
                               PowerLaw(0.5, 1.5, direction=EPSILON)])
def test_describe_round_trip(s):
    back = parse_schedule(s.describe(), s.direction)
    ts = np.linspace(0, 10, 7)
    assert np.allclose(back.values(ts), s.values(ts), rtol=0, atol=0)
    assert back.direction == s.direction


def test_parse_dual():
    e = parse_schedule("dual power 1 2")
    assert isinstance(e, RescaledEpsilon)
    assert e.describe() == "dual power 1 2"


@pytest.mark.parametrize("text", ["", "power 1", "cubic 1 2", "const x", "const nan", "const -1"])
def test_parse_errors(text):
    with pytest.raises(ValueError):
        parse_schedule(text)


def test_custom_has_no_spelling():
    with pytest.raises(ValueError):
        Custom(lambda t: 1.0, lambda t: 0.0).describe()


# Integrability audit on the real line with C = {0}: psi = x^2/2 gives integrand p^2 / (2 beta)
SQDIST = cx.SqDistToAffine(np.ones((1, 1)), np.zeros(1))
INDICATOR = cx.IndicatorAffine(np.ones((1, 1)), np.zeros(1))


@pytest.mark.parametrize("t", [0.0, 2.0, 50.0])
def test_h1_integrand_closed_form(t):
    assert h1_integrand(SQDIST, [3.0], SQ, t) == pytest.approx(4.5 / (1 + t) ** 2, rel=1e-12)
    assert h1_integrand(INDICATOR, [3.0], SQ, t) == 0.0


def test_h1_verdicts():
    fin = h1_check(SQDIST, [np.array([1.0]), np.array([-2.0])], SQ)
    assert [v.status for v in fin] == ["Finite", "Finite"]
    assert fin[0].partial_integral == pytest.approx(0.5 * (1 - 1 / 1001), rel=1e-9)
    assert fin[0].tail_exponent_estimate == pytest.approx(-2.0, abs=1e-6)
    assert h1_check(SQDIST, [np.array([1.0])], PowerLaw(1.0, 1.0))[0].status == "Divergent"
    assert h1_check(INDICATOR, [np.array([1.0])], PowerLaw(1.0, 1.0))[0].status == "Finite"


def test_h1_rejects_uncertified_direction():
    box = cx.SqDistToBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    # the centre of the box is an interior point, so only p = 0 is normal there
    with pytest.raises(ValueError):
        h1_check(box, [np.array([1.0, 0.0])], SQ, base_point=np.zeros(2))


def test_h1_window_validation():
    with pytest.raises(ValueError):
        h1_check(SQDIST, [np.array([1.0])], SQ, horizon=100.0, tail_window=50.0)


def test_tail_exponent_of_power():
    slope, resid = tail_exponent(lambda t: 3.0 * (1 + t) ** -1.5, 100.0, 200.0)
    assert slope == pytest.approx(-1.5, abs=1e-10)
    assert resid < 1e-10


def test_h2():
    assert h2_check(SQ, 2.0, 0.0, 100.0)
    assert not h2_check(SQ, 1.0, 0.0, 100.0)
    assert h2_check(SQ, 1.0, 1.0, 100.0)
    assert h2_check(Exponential(1.0, 1.0), 1.0, 0.0, 50.0)
    assert not h2_check(Exponential(1.0, -1.0), 1.0, 0.0, 50.0)


def test_h2_eps():
    e = RescaledEpsilon(SQ)
    assert h2_eps_check(e, 2.0, 100.0)
    assert not h2_eps_check(e, 1.0, 100.0)
    # summable controls are rejected
    fast = PowerLaw(1.0, -2.0, direction=EPSILON)
    assert not h2_eps_check(fast, 10.0, 100.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.0, 3.0), st.floats(0.0, 30.0))
def test_cumulative_inverse_round_trip(a, p, t):
    s = PowerLaw(a, p)
    assert s.cumulative(inverse_cumulative(s, t)) == pytest.approx(t, rel=1e-9, abs=1e-12)


def test_exponential_rescale_closed_form():
    tb, eps = rescale_to_eps(Exponential(1.0, 1.0), 4.0)
    assert tb == pytest.approx(math.log(5.0), rel=1e-10)
    assert eps == pytest.approx(0.2, rel=1e-10)
    assert rescale_to_eps(Constant(1.0), 3.0) == pytest.approx((3.0, 1.0))


def test_round_trip_through_both_clocks():
    tb, _ = rescale_to_eps(SQ, 5.0)
    assert abs(t_eps(RescaledEpsilon(SQ), tb) - 5.0) <= 5e-8


def test_superexponential_growth_fails_h2():
    fast = Custom(lambda t: math.exp(t * t), lambda t: 2 * t * math.exp(t * t))
    assert not h2_check(fast, 4.0, 0.0, 5.0)


def test_h2_eps_examples():
    assert h2_eps_check(PowerLaw(1.0, -1.0, direction=EPSILON), 1.0, 100.0)
    assert not h2_eps_check(Constant(0.5, direction=EPSILON), 1.0, 100.0)


def test_h1_change_of_variables():
    from hierflow.schedules import h1_eps_integrand, integrate
    T = 3.0
    p = np.array([1.5])
    lhs = integrate(lambda t: h1_integrand(SQDIST, p, SQ, t), 0.0, T)
    rhs = integrate(lambda s: h1_eps_integrand(SQDIST, p, RescaledEpsilon(SQ), s), 0.0, SQ.cumulative(T))
    assert rhs == pytest.approx(lhs, rel=1e-6)


def test_derivatives_match_finite_differences():
    for s in (SQ, Exponential(2.0, 0.3), Logarithmic(1.5), Constant(2.0)):
        for t in (0.5, 3.0, 20.0):
            d = 1e-5 * (1 + t)
            fd = (s.value(t + d) - s.value(t - d)) / (2 * d)
            assert s.derivative(t) == pytest.approx(fd, rel=1e-6, abs=1e-12)
