import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from viroctl.model import (ModelParams, ParameterError, aggregate_rates, compute_r0,
                           equilibria, r0_oracle_ngm, rhs_controlled, rhs_uncontrolled,
                           cleared_params, endemic_params, treatment_params)

from conftest import model_params


def test_aggregate_rates_cleared():
    agg = aggregate_rates(cleared_params())
    assert agg.x == pytest.approx(0.56, abs=1e-15)
    assert agg.y == pytest.approx(0.795, abs=1e-15)


def test_aggregate_rates_trivial():
    p = ModelParams(omega=1, beta=1, mu=1, mu1=1, b=1)
    assert tuple(aggregate_rates(p)) == (0.0, 0.0)
    assert tuple(aggregate_rates(p.with_(b1=1.0))) == (1.0, 0.0)


@pytest.mark.parametrize("field,value", [("beta", -0.1), ("omega", float("nan")),
                                         ("mu", float("inf")), ("alpha", 1.5), ("tau", -1.0)])
def test_invalid_params_name_the_field(field, value):
    with pytest.raises(ParameterError) as err:
        cleared_params().with_(**{field: value})
    assert err.value.field == field


def test_from_dict_rejects_unknown_and_missing():
    d = cleared_params().to_dict()
    with pytest.raises(ParameterError) as err:
        ModelParams.from_dict({**d, "betta": 1.0})
    assert err.value.field == "betta"
    d.pop("beta")
    with pytest.raises(ParameterError) as err:
        ModelParams.from_dict(d)
    assert err.value.field == "beta"


def test_bool_is_not_a_number():
    with pytest.raises(ParameterError):
        ModelParams(omega=True, beta=1, mu=1, mu1=1, b=1)


def test_rhs_uncontrolled_at_e0_is_zero():
    p = cleared_params()
    e0 = equilibria(p).e0
    assert np.all(rhs_uncontrolled(e0, e0, p) == 0.0)


def test_rhs_uncontrolled_s_zero_has_recruitment():
    p = cleared_params()
    d = rhs_uncontrolled((0.0, 1.0, 3.0), (5.0, 1.0, 3.0), p)
    assert d[0] == p.omega


def test_rhs_uncontrolled_hand_substitution():
    p = cleared_params()
    # omega - beta S V - mu S ; beta S V - (x + mu) I ; b I - (y + mu1) V at (20, 1, 1)
    expected = [10 - 0.05 * 20 - 0.5 * 20, 0.05 * 20 - (0.56 + 0.5), 0.49 - (0.795 + 0.1)]
    np.testing.assert_allclose(rhs_uncontrolled((20, 1, 1), (20, 1, 1), p), expected, rtol=1e-14)


def test_rhs_controlled_zero_controls_matches_uncontrolled():
    p = treatment_params()
    s, sd, sd1 = (20.0, 5.0, 5.0), (18.0, 4.0, 6.0), (15.0, 3.0, 2.0)
    np.testing.assert_array_equal(rhs_controlled(s, sd, sd1, np.zeros(4), np.zeros(4), p),
                                  rhs_uncontrolled(s, sd, p))


def test_rhs_controlled_alpha_zero_drops_second_line():
    p = treatment_params().with_(alpha=0.0)
    s = (20.0, 5.0, 5.0)
    a = rhs_controlled(s, s, s, (0.3, 0.0, 0.2, 0.0), (0.3, 0.0, 0.2, 0.0), p)
    b = rhs_controlled(s, s, s, (0.3, 7.0, 0.2, 9.0), (0.3, 7.0, 0.2, 9.0), p)
    np.testing.assert_array_equal(a, b)


def test_rhs_controlled_hand_substitution():
    p = treatment_params()
    x, y = 0.56, 0.795
    # eps1 = 0.4, alpha = 0.6, all controls 1, state (20, 5, 5) everywhere
    expected = [10 - 0.05 * 100 - 0.5 * 20,
                0.05 * 100 - (x + 0.5) * 5 - 0.4 * 5 - 0.6 * 5,
                0.5 * 5 - 0.4 * 5 - 0.6 * 5 - (y + 1.1) * 5]
    s = (20.0, 5.0, 5.0)
    np.testing.assert_allclose(rhs_controlled(s, s, s, np.ones(4), np.ones(4), p), expected,
                               rtol=1e-14)


def test_r0_table_values():
    assert compute_r0(cleared_params()) == pytest.approx(0.516496, abs=1e-6)
    assert compute_r0(treatment_params()) == pytest.approx(0.2490, abs=1e-4)
    assert compute_r0(endemic_params()) == pytest.approx(2.5825, abs=1e-4)


def test_r0_beta_zero():
    p = cleared_params().with_(beta=0.0)
    assert compute_r0(p) == 0.0
    assert r0_oracle_ngm(p) == 0.0


def test_r0_guard():
    with pytest.raises(ParameterError):
        compute_r0(cleared_params().with_(mu=0.0))


@pytest.mark.parametrize("factory", [cleared_params, treatment_params])
def test_r0_matches_ngm_tables(factory):
    p = factory()
    assert r0_oracle_ngm(p) == pytest.approx(compute_r0(p), rel=1e-10)


@given(model_params())
def test_r0_matches_ngm_random(p):
    assert r0_oracle_ngm(p) == pytest.approx(compute_r0(p), rel=1e-10)


@given(model_params(), st.floats(1.01, 3.0))
def test_r0_monotone(p, f):
    r = compute_r0(p)
    assert compute_r0(p.with_(beta=p.beta * f)) > r
    assert compute_r0(p.with_(omega=p.omega * f)) > r
    assert compute_r0(p.with_(mu1=p.mu1 * f)) < r


@given(model_params(r0_range=(0.2, 5.0)))
def test_e1_exists_iff_r0_above_one(p):
    eq = equilibria(p)
    assert (eq.e1 is not None) == (compute_r0(p) > 1)
    assert eq.e0 == (p.omega / p.mu, 0.0, 0.0)


@given(model_params(r0_range=(1.05, 8.0)))
def test_equilibrium_residual(p):
    eq = equilibria(p)
    for e in (eq.e0, eq.e1):
        assert np.all(np.array(e) >= 0)
        scale = max(1.0, p.omega, max(abs(v) for v in e))
        assert np.max(np.abs(rhs_uncontrolled(e, e, p))) <= 1e-10 * scale
    assert min(eq.e1) > 0


def test_endemic_e1_values():
    e1 = equilibria(endemic_params()).e1
    np.testing.assert_allclose(e1, (3.8722, 2.8905, 1.5825), atol=1e-4)


def test_r0_equal_one_degenerates():
    p = cleared_params()
    p = p.with_(beta=p.beta / compute_r0(p))
    assert compute_r0(p) == pytest.approx(1.0, abs=1e-14)
    eq = equilibria(p)
    assert eq.e1 is None or max(abs(eq.e1.I), abs(eq.e1.V)) < 1e-12


@given(model_params(), st.floats(0.1, 10.0))
def test_time_rescaling_keeps_r0(p, c):
    assert compute_r0(p.scaled_time(c)) == pytest.approx(compute_r0(p), rel=1e-12)
