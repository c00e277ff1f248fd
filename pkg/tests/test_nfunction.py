import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doublephase.nfunction import (
    Bounds,
    Coupling,
    ExponentModel,
    Mode,
    SamplerConfig,
    conjugate,
    eval_H,
    eval_h,
    inverse_H,
    ratio,
    sobolev_conjugate,
    validate_hypotheses,
)

X0 = np.array([[0.3]])


def model(p, q, mu="0", **kw):
    return ExponentModel(p, q, mu, **kw)


def one(v):
    return float(np.asarray(v).ravel()[0])


# ---------------------------------------------------------------------------
# h and H


@pytest.mark.parametrize("p,q,mu,t,expected", [("2", "3", "1", 2.0, 6.0), ("2", "3", "0", 5.0, 5.0),
                                               ("2.5", "3", "x", 0.0, 0.0)])
def test_density_examples(p, q, mu, t, expected):
    assert one(eval_h(model(p, q, mu), X0, np.array([t]))) == expected


def test_H_examples():
    m = model("2", "3", "1")
    assert one(eval_H(m, Mode.INTEGRAL, X0, np.array([2.0]))) == pytest.approx(14 / 3, rel=1e-15)
    assert one(eval_H(m, Mode.DIRECT, X0, np.array([2.0]))) == 12.0
    assert one(eval_H(m, Mode.INTEGRAL, X0, np.array([0.0]))) == 0.0
    assert one(eval_H(model("2 + 1/(1+t^2)", "3"), Mode.INTEGRAL, X0, np.array([0.0]))) == 0.0


def test_negative_t_rejected():
    with pytest.raises(ValueError):
        eval_H(model("2", "3"), Mode.INTEGRAL, X0, np.array([-1.0]))


T_DEP = [
    ("2 + 1/(1+t^2)", "3 + 1/(1+t^2)", "1 + x"),
    ("2 + x/2 + max(0, t - 1)^2/(2*(1 + max(0, t - 1)^2))", "2.5 + x/2 + max(0, t - 1)^2/(2*(1 + max(0, t - 1)^2))", "1"),
    ("2 + min(1, max(0, t-1))/10", "2.1 + min(1, max(0, t-1))/10", "x"),
]


@pytest.mark.parametrize("p,q,mu", T_DEP)
@pytest.mark.parametrize("t", [1e-5, 0.37, 1.0, 2.5, 40.0, 900.0])
def test_integral_form_against_mpmath(p, q, mu, t):
    m = model(p, q, mu)
    x = 0.41
    pe, qe, me = (m.p, m.q, m.mu)
    mpmath.mp.dps = 30

    def h(s):
        s = mpmath.mpf(s)
        return s ** (pe.eval(x=x, t=float(s)) - 1) + me.eval(x=x) * s ** (qe.eval(x=x, t=float(s)) - 1)

    # kinks of the exponents at t = 1 and t = 2 are passed to mpmath as breakpoints
    pts = [0] + [b for b in (1.0, 2.0) if b < t] + [t]
    ref = float(mpmath.quad(h, pts))
    got = one(eval_H(m, Mode.INTEGRAL, np.array([[x]]), np.array([t])))
    assert got == pytest.approx(ref, rel=1e-12)


def test_direct_form_density_is_derivative():
    m = model("2 + x", "3 + x", "x")
    x = np.array([[0.6]])
    for t in (0.3, 1.7, 6.0):
        h = 1e-6 * t
        fd = (one(eval_H(m, Mode.DIRECT, x, np.array([t + h]))) - one(eval_H(m, Mode.DIRECT, x, np.array([t - h])))) / (2 * h)
        assert one(eval_h(m, x, np.array([t]), Mode.DIRECT)) == pytest.approx(fd, rel=1e-7)


def test_frozen_equals_closed_form_at_frozen_exponents():
    m = model("2 + 1/(1+t^2)", "3", "1")
    x = np.array([[0.2]])
    w = 0.8
    p = 2 + 1 / (1 + w * w)
    t = 1.9
    expect = t ** p / p + t ** 3 / 3
    assert one(eval_H(m, Mode.INTEGRAL, x, np.array([t]), frozen_t=np.array([w]))) == pytest.approx(expect, rel=1e-14)


# ---------------------------------------------------------------------------
# conjugate


def test_conjugate_quadratic():
    m = model("2", "2")
    assert one(conjugate(m, Mode.INTEGRAL, X0, np.array([3.0]))) == pytest.approx(4.5, rel=1e-14)
    assert one(conjugate(m, Mode.INTEGRAL, X0, np.array([0.0]))) == 0.0


def test_conjugate_against_grid_maximization():
    m = model("2", "3", "1")
    got = one(conjugate(m, Mode.INTEGRAL, X0, np.array([6.0])))
    assert got == pytest.approx(22 / 3, rel=1e-14)
    tau = np.linspace(0.0, 10.0, 10**6 + 1)
    grid = float(np.max(6.0 * tau - (tau**2 / 2 + tau**3 / 3)))
    # grid spacing 1e-5 limits the oracle to about (1e-5)^2 * H''/2
    assert got == pytest.approx(grid, abs=1e-8)
    assert got >= grid - 1e-12


@pytest.mark.parametrize("p,q,mu", T_DEP[:2])
def test_conjugate_t_dependent_against_grid(p, q, mu):
    m = model(p, q, mu)
    x = np.array([[0.5]])
    for s in (0.5, 3.0):
        got = one(conjugate(m, Mode.INTEGRAL, x, np.array([s])))
        tau = np.linspace(0.0, 6.0, 4001)
        H = eval_H(m, Mode.INTEGRAL, np.broadcast_to(x, (tau.size, 1)), tau)
        grid = float(np.max(s * tau - H))
        assert grid - 1e-12 <= got <= grid + 1e-5


@given(st.floats(0.0, 1.0), st.floats(1e-4, 1e3))
def test_conjugate_identity_property(x, s):
    m = model("2 + x/2", "3 + x/2", "1 + x")
    xx = np.array([[x]])
    hs = eval_h(m, xx, np.array([s]))
    lhs = one(conjugate(m, Mode.INTEGRAL, xx, hs))
    rhs = one(hs) * s - one(eval_H(m, Mode.INTEGRAL, xx, np.array([s])))
    assert abs(lhs - rhs) <= 1e-8 * (1 + one(eval_H(m, Mode.INTEGRAL, xx, np.array([s]))))


# ---------------------------------------------------------------------------
# ratio, scaling, monotonicity


def test_ratio_examples():
    assert one(ratio(model("2", "2"), Mode.INTEGRAL, X0, np.array([0.7]))) == 2.0
    assert one(ratio(model("2", "3", "1"), Mode.INTEGRAL, X0, np.array([2.0]))) == pytest.approx(18 / 7, rel=1e-14)
    assert one(ratio(model("2", "3", "1"), Mode.DIRECT, X0, np.array([2.0]))) == pytest.approx(32 / 12, rel=1e-14)
    with pytest.raises(ValueError):
        ratio(model("2", "3"), Mode.INTEGRAL, X0, np.array([0.0]))


@given(st.floats(0.0, 1.0), st.floats(1e-6, 1e3))
def test_ratio_bounds_property(x, t):
    m = model(*T_DEP[1])
    b = m.bounds
    r = one(ratio(m, Mode.INTEGRAL, np.array([[x]]), np.array([t])))
    assert b.p_minus - 1e-9 <= r <= b.q_plus + 1e-9


@given(st.floats(0.0, 1.0), st.floats(1e-6, 1e3), st.floats(1e-3, 1e3))
def test_scaling_property(x, t, lam):
    m = model("2 + x/2", "3 + x/2", "1 + x")
    b = m.bounds
    xx = np.array([[x]])
    H = one(eval_H(m, Mode.INTEGRAL, xx, np.array([t])))
    Hl = one(eval_H(m, Mode.INTEGRAL, xx, np.array([lam * t])))
    lo = min(lam**b.p_minus, lam**b.q_plus) * H
    hi = max(lam**b.p_minus, lam**b.q_plus) * H
    assert lo * (1 - 1e-9) <= Hl <= hi * (1 + 1e-9)


@given(st.floats(0.0, 1.0), st.floats(1e-6, 1e3), st.floats(1e-6, 1e3))
def test_h_monotone_property(x, t1, t2):
    m = model(*T_DEP[1])
    lo, hi = sorted((t1, t2))
    h = eval_h(m, np.array([[x], [x]]), np.array([lo, hi]))
    assert h[1] >= h[0]


@given(st.floats(0.0, 1.0), st.floats(-50, 50), st.floats(-50, 50))
def test_simon_property(x, a, b):
    m = model("2 + x/2", "3 + x/2", "1 + x")
    xx = np.array([[x], [x], [x]])
    ha, hb = eval_h(m, xx[:2], np.abs([a, b]))
    lhs = (math.copysign(ha, a) - math.copysign(hb, b)) * (a - b)
    rhs = 4 * one(eval_H(m, Mode.INTEGRAL, xx[:1], np.array([abs(a - b) / 2])))
    assert lhs >= rhs - 1e-9 * (1 + rhs)


def test_simon_quadratic_is_exact_halving():
    m = model("2", "2")
    a, b = 1.75, -0.5
    ha, hb = eval_h(m, np.array([[0.1], [0.1]]), np.abs([a, b]))
    lhs = (math.copysign(ha, a) - math.copysign(hb, b)) * (a - b)
    rhs = 4 * one(eval_H(m, Mode.INTEGRAL, X0, np.array([abs(a - b) / 2])))
    assert lhs == (a - b) ** 2
    assert rhs == (a - b) ** 2 / 2


def test_inverse_H():
    m = model("2", "3", "1")
    for v in (1e-3, 1.0, 50.0):
        tau = one(inverse_H(m, Mode.INTEGRAL, X0, np.array([v])))
        assert one(eval_H(m, Mode.INTEGRAL, X0, np.array([tau]))) == pytest.approx(v, rel=1e-13)


# ---------------------------------------------------------------------------
# Sobolev conjugate


def test_sobolev_conjugate_small_t_closed_form():
    m = model("2", "2.5", "1", dim=2)
    x = np.array([0.5, 0.5])
    d = 2
    dprime = d / (d - 1)
    t = np.array([0.0, 0.1, 0.5, 0.9])
    got = sobolev_conjugate(m, Mode.INTEGRAL, x, t)
    assert got[0] == 0.0
    # N(s) = s^(1/d') on [0, 1], so H_*(t) = t^(d') there
    np.testing.assert_allclose(got[1:], t[1:] ** dprime, rtol=1e-10)


def test_sobolev_conjugate_monotone(rng):
    m = model("2", "2.5", "1", dim=2)
    pairs = np.sort(rng.uniform(0, 3, size=(100, 2)), axis=1)
    vals = sobolev_conjugate(m, Mode.INTEGRAL, np.array([0.3, 0.7]), pairs.ravel()).reshape(100, 2)
    assert np.all(vals[:, 0] <= vals[:, 1])


def test_sobolev_conjugate_needs_dim_two():
    with pytest.raises(ValueError):
        sobolev_conjugate(model("2", "3"), Mode.INTEGRAL, np.array([0.5]), np.array([0.5]))


# ---------------------------------------------------------------------------
# hypotheses and bounds


def _by_name(reports):
    return {r.check: r for r in reports}


def test_hypotheses_constant_2d():
    reps = _by_name(validate_hypotheses(model("2", "3", "1", dim=2)))
    assert reps["H1"].passed
    assert reps["H2'"].passed
    assert not reps["H4"].passed  # 3/2 is not < 1 + 1/2


def test_hypotheses_h4_passes_in_4d():
    assert _by_name(validate_hypotheses(model("2", "2.2", "0", dim=4)))["H4"].passed


def test_hypotheses_h2_prime_piecewise():
    m = model("2 + min(1, max(0, t-1))/10", "2.1 + min(1, max(0, t-1))/10", "1",
              sampler=SamplerConfig(n_x=40, n_t=250))
    assert _by_name(validate_hypotheses(m))["H2'"].passed


def test_hypotheses_record_failures():
    reps = _by_name(validate_hypotheses(model("2", "1.5", "-1")))
    assert not reps["H1"].passed
    assert not reps["H3"].passed


def test_bounds_estimation_inflates():
    m = model("2 + x", "3 + x")
    b = m.bounds
    assert not b.declared
    assert b.p_minus == pytest.approx(2 - 0.01, abs=1e-12)
    assert b.q_plus == pytest.approx(4 + 0.01, abs=1e-12)
    const = model("2", "3").bounds
    assert (const.p_minus, const.p_plus, const.q_minus, const.q_plus) == (2, 2, 3, 3)


def test_declared_bounds_are_used():
    b = Bounds(2, 2, 3, 3.5, declared=True)
    assert model("2", "3", bounds=b).bounds is b


def test_solution_coupling_samples_negative_t():
    m = model("2 + 1/(1+t^2)", "3", coupling=Coupling.SOLUTION)
    assert m.t_grid().min() < 0
