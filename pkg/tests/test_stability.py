import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from viroctl.model import compute_r0, equilibria, cleared_params, endemic_params
from viroctl.stability import (PreconditionError, char_coeffs, e0_omega_poly, e0_report,
                               e0_tau0_eigs, e1_delay_independent, e1_tau0_eigs,
                               poly_residual_ok, positive_real_omegas, sextic_verdict,
                               stability_cross_check)

from conftest import model_params


def with_r0(p, r0):
    return p.with_(beta=p.beta * r0 / compute_r0(p))


def test_e0_tau0_cleared_stable():
    eigs = e0_tau0_eigs(cleared_params())
    assert max(e.real for e in eigs) < 0
    assert eigs[0] == -0.5


def test_e0_tau0_r0_one_zero_eigenvalue():
    eigs = e0_tau0_eigs(with_r0(cleared_params(), 1.0))
    assert min(abs(e) for e in eigs) < 1e-12


def test_e0_tau0_endemic_one_positive_root():
    p = endemic_params()
    eigs = e0_tau0_eigs(p)
    pos = [e for e in eigs if e.real > 0]
    assert len(pos) == 1 and abs(pos[0].imag) == 0
    cc = char_coeffs(p)
    # quadratic formula oracle
    disc = cc.s ** 2 + 4 * (compute_r0(p) - 1) * cc.m
    assert pos[0].real == pytest.approx((-cc.s + math.sqrt(disc)) / 2, rel=1e-12)


def test_e0_omega_poly_cleared():
    p = cleared_params()
    poly = e0_omega_poly(p)
    assert poly.coeffs[1] == pytest.approx(1.9246, abs=1e-4)
    assert abs(poly.coeffs[1] - 1.9336) < 0.01
    assert poly.positive_omegas == ()
    rep = e0_report(p)
    assert rep.delay_independent
    assert rep.conditions["s2_minus_2m_positive"]


def test_e0_omega_poly_r0_one():
    poly = e0_omega_poly(with_r0(cleared_params(), 1.0))
    assert poly.positive_omegas == ()
    assert min(abs(z) for z in poly.z_roots) < 1e-12


def test_e0_omega_poly_r0_two_one_crossing():
    p = with_r0(cleared_params(), 2.0)
    poly = e0_omega_poly(p)
    assert len(poly.positive_omegas) == 1
    _, bq, c = poly.coeffs
    z = (-bq + math.sqrt(bq * bq - 4 * c)) / 2
    assert poly.positive_omegas[0] == pytest.approx(math.sqrt(z), rel=1e-10)
    assert not e0_report(p).delay_independent


def test_e1_endemic():
    p = endemic_params()
    assert max(e.real for e in e1_tau0_eigs(p)) < 0
    rep = e1_delay_independent(p)
    assert rep.conditions["A_positive"] and rep.conditions["B_positive"]
    assert rep.conditions["constant_positive"] and rep.delay_independent
    assert rep.omega_poly_positive_roots == []


def test_e1_requires_r0_above_one():
    with pytest.raises(PreconditionError):
        e1_tau0_eigs(cleared_params())
    with pytest.raises(PreconditionError):
        e1_delay_independent(cleared_params())


def test_e1_r0_near_one_root_vanishes():
    p = with_r0(endemic_params(), 1.0 + 1e-9)
    assert min(abs(e) for e in e1_tau0_eigs(p)) < 1e-8


def test_sextic_boundary_verdict():
    assert not sextic_verdict(1.0, 1.0, 0.0)
    assert sextic_verdict(1.0, 1.0, 1e-300)


@given(model_params(r0_range=(1.05, 10.0)))
def test_e1_cubic_residual(p):
    cc = char_coeffs(p)
    r0 = compute_r0(p)
    cubic = [1.0, cc.s + p.mu * r0, cc.s * p.mu * r0, cc.m * p.mu * (r0 - 1)]
    for root in e1_tau0_eigs(p):
        assert poly_residual_ok(cubic, root)


@given(model_params(r0_range=(1.05, 10.0)))
def test_e1_sextic_closed_forms(p):
    # at E1 the virus-production gain E equals m, which collapses the coefficients
    rep = e1_delay_independent(p)
    v = rep.values
    r0 = compute_r0(p)
    assert v["E"] == pytest.approx(v["m"], rel=1e-10)
    assert v["A"] == pytest.approx(v["s"] ** 2 + v["C"] ** 2 - 2 * v["m"], rel=1e-9, abs=1e-12)
    assert v["B"] == pytest.approx(v["C"] ** 2 * (v["s"] ** 2 - 2 * v["m"]), rel=1e-8, abs=1e-12)
    assert v["constant"] == pytest.approx(v["m"] ** 2 * p.mu ** 2 * (r0 ** 2 - 1), rel=1e-8)


@given(model_params(r0_range=(1.05, 10.0)))
def test_e1_verdict_matches_sextic_roots(p):
    rep = e1_delay_independent(p)
    v = rep.values
    coeffs = [1.0, v["A"], v["B"], v["constant"]]
    for z in np.roots(coeffs):
        assert poly_residual_ok(coeffs, z)
    assert rep.delay_independent == (not rep.omega_poly_positive_roots)


@given(model_params(r0_range=(0.05, 0.98)))
def test_e0_consistency(p):
    rep = e0_report(p)
    assert rep.delay_independent
    assert e0_omega_poly(p).positive_omegas == ()
    for z in e0_omega_poly(p).z_roots:
        assert poly_residual_ok(e0_omega_poly(p).coeffs, z)


@given(model_params(r0_range=(0.2, 5.0)), st.floats(0.1, 10.0))
def test_time_rescaling_keeps_verdicts(p, c):
    q = p.scaled_time(c)
    assert e0_report(q).delay_independent == e0_report(p).delay_independent
    if compute_r0(p) > 1 and compute_r0(q) > 1:
        assert (e1_delay_independent(q).delay_independent
                == e1_delay_independent(p).delay_independent)


def test_positive_real_omegas_tolerance():
    assert positive_real_omegas([4.0 + 1e-12j, -1.0, 1e-12, 9.0 + 1e-3j]) == [2.0]


def test_report_json():
    rep = e1_delay_independent(endemic_params()).to_dict()
    text = json.dumps(rep)
    assert all(len(z) == 2 for z in json.loads(text)["tau_zero_eigs"])


def test_cross_check_cleared():
    cc = stability_cross_check(cleared_params(), [5, 15], 100.0)
    assert cc.point == "E0" and cc.analytic_stable and cc.agree


def test_cross_check_endemic():
    cc = stability_cross_check(endemic_params(), [5, 20], 100.0)
    assert cc.point == "E1" and cc.analytic_stable and cc.agree
    np.testing.assert_allclose(cc.equilibrium, equilibria(endemic_params()).e1)


def test_cross_check_equilibrium_start():
    p = endemic_params()
    e1 = equilibria(p).e1
    cc = stability_cross_check(p, [0, 5, 20], 30.0, start=e1)
    assert max(r.max_rel_dev for r in cc.runs) <= 1e-10


def test_cross_check_random_agreement(rng):
    count = 0
    while count < 20:
        p = cleared_params().with_(
            omega=float(rng.uniform(2, 20)), mu=float(rng.uniform(0.3, 1.0)),
            mu1=float(rng.uniform(0.3, 1.5)), b=float(rng.uniform(0.2, 1.0)),
            tau=float(rng.integers(0, 301)) / 100)
        p = with_r0(p, float(rng.choice([rng.uniform(0.2, 0.8), rng.uniform(1.3, 3.0)])))
        cc = stability_cross_check(p, [p.tau], 200.0, h=0.01)
        assert cc.agree, (p, cc.runs)
        count += 1
