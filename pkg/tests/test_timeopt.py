import dataclasses

import numpy as np
import pytest

from viroctl.dde import ConfigurationError, ControlSchedule, Grid, simulate
from viroctl.model import rhs_controlled, endemic_params, treatment_params
from viroctl.timeopt import (TimeOptConfig, bang_bang_controls, detect_switches, forward_shoot,
                             hamiltonian, lambda0_grid_from_directions, normalized_lambda0,
                             shoot_search, sphere_directions, terminal_condition_check,
                             terminal_residuals)

X0 = (1000.0, 80.0, 60.0)


def make_cfg(p=None, bound=2.0, **kw):
    p = p or treatment_params()
    return TimeOptConfig(p, bounds=(bound,) * 4, initial=X0, t_max=kw.pop("t_max", 30.0), **kw)


def with_grid(cfg, n):
    return dataclasses.replace(cfg, lambda0_grid=lambda0_grid_from_directions(
        cfg, sphere_directions(n)))


def test_bang_bang_all_max():
    u = bang_bang_controls((10, 2, 3), (10, 1, 1), (0.0, 1.0, 1.0), 2.0)
    assert np.all(u == 2.0)


def test_bang_bang_all_zero():
    u = bang_bang_controls((10, 2, 3), (10, 1, 1), (5.0, -1.0, -1.0), 2.0)
    assert np.all(u == 0.0)


def test_bang_bang_tie_holds_previous():
    u = bang_bang_controls((10, 2, 3), (10, 0.0, 1), (0.0, 1.0, -1.0), 2.0, prev=(2.0, 0, 0, 0))
    assert u[0] == 2.0 and u[1] == 2.0 and u[2] == 0.0


def test_bang_bang_advanced_pairing():
    u = bang_bang_controls((10, 2, 3), (10, 0.0, 0.0), (0.0, 1.0, 1.0), 1.0, pairing="advanced")
    assert np.all(u == 1.0)


def test_hamiltonian_trivial():
    p = treatment_params()
    e0 = (20.0, 0.0, 0.0)
    assert hamiltonian(X0, X0, X0, np.ones(4), np.ones(4), np.zeros(3), p) == 1.0
    assert hamiltonian(e0, e0, e0, np.zeros(4), np.zeros(4), (3.0, 1.0, 2.0), p) == 1.0


def test_detect_switches_examples():
    t = np.arange(6) * 0.5
    assert detect_switches([1, 2, 3, 4, 5, 6], t).times == []
    rep = detect_switches([3, 2, 1, -1, -2, -3], t)
    assert rep.times == [pytest.approx(1.25)]
    assert not rep.suspected_singular


def test_detect_switches_zero_runs():
    t = np.arange(8.0)
    rep = detect_switches([1, 0, 0, 0, 0, -1, -1, -1], t)
    assert rep.suspected_singular and rep.longest_zero_run == 4
    # a sign change across a zero run is placed at the middle of the run
    assert rep.times == [pytest.approx(2.5)]
    rep = detect_switches([1, 0, 0, 0, 0, 1, 1, 1], t, mask=[1, 0, 0, 0, 0, 1, 1, 1])
    assert rep.times == [] and not rep.suspected_singular


def test_initial_equals_target():
    cfg = TimeOptConfig(treatment_params(), bounds=(2,) * 4, initial=(20.0, 0.0, 0.0))
    sol = forward_shoot(cfg, (1.0, 1.0, 1.0))
    assert sol.reached and sol.T == 0.0


def test_config_validation():
    p = treatment_params()
    with pytest.raises(ConfigurationError):
        TimeOptConfig(p, bounds=2, initial=X0, target_radius=(0, 1, 1))
    with pytest.raises(ConfigurationError):
        TimeOptConfig(p, bounds=2, initial=X0, switching_pairing="other")
    with pytest.raises(ConfigurationError):
        TimeOptConfig(p, bounds=2, initial=X0, h=0.007)
    with pytest.raises(ConfigurationError):
        shoot_search(make_cfg())


def test_normalization_gives_zero_hamiltonian():
    cfg = make_cfg()
    for d in sphere_directions(40):
        lam = normalized_lambda0(cfg, d)
        if lam is None:
            continue
        sol = forward_shoot(dataclasses.replace(cfg, t_max=0.01), lam)
        assert sol.hamiltonian_trace[0] == pytest.approx(0.0, abs=1e-12)


@pytest.fixture(scope="module")
def delay_free_search():
    cfg = with_grid(make_cfg(treatment_params().with_(tau=0.0, tau1=0.0)), 60)
    return cfg, shoot_search(cfg)


def test_delay_free_hamiltonian_conserved(delay_free_search):
    cfg, res = delay_free_search
    sol = res.solution
    assert sol.reached and not sol.degraded
    assert sol.mean_abs_H <= cfg.h_tol
    # pointwise bound relative to the size of lambda . f
    W = sol.trajectory.window
    lam = sol.adjoint.window
    lf = np.array([lam[k] @ rhs_controlled(W[k], W[k], W[k], sol.controls.controls[k],
                                           sol.controls.controls[k], cfg.params)
                   for k in range(len(W))])
    assert np.all(np.abs(sol.hamiltonian_trace) <= 0.05 * (1 + np.abs(lf).max()))


def test_delay_free_terminal_diagnostic(delay_free_search):
    cfg, res = delay_free_search
    rep = terminal_condition_check(res.solution, cfg.params, cfg.h_tol)
    assert rep.within_h_tol == (abs(rep.H_T) <= cfg.h_tol)
    assert abs(rep.H_T) <= cfg.h_tol


def test_solution_invariants(delay_free_search):
    cfg, res = delay_free_search
    sol = res.solution
    b = np.asarray(cfg.bounds)
    U = sol.controls.controls
    assert np.all((U == 0) | (U == b))
    assert not any(sol.singular_flags.values())
    final = sol.trajectory.final
    # last node is inside the box; T lies within the final step
    assert np.all(np.abs(final - np.asarray(cfg.target)) <= np.asarray(cfg.target_radius))
    g = sol.trajectory.grid
    assert g.tf - g.h <= sol.T <= g.tf
    for i, name in enumerate(("mu11", "mu12", "mu21", "mu22")):
        assert len(sol.switch_times[name]) == np.count_nonzero(np.diff(U[:, i]))


def test_shooting_matches_direct_simulation():
    cfg = with_grid(make_cfg(), 20)
    sol = forward_shoot(cfg, cfg.lambda0_grid[3])
    g = sol.trajectory.grid
    u = ControlSchedule(g, sol.controls.controls)
    tr = simulate(cfg.params, X0, g, u, positivity="clamp", control_interp="hold")
    np.testing.assert_allclose(tr.states, sol.trajectory.states, rtol=1e-12, atol=1e-9)


def test_search_with_known_good_seed():
    cfg = with_grid(make_cfg(), 12)
    good = next(lam for lam in cfg.lambda0_grid if forward_shoot(cfg, lam).reached)
    cfg2 = dataclasses.replace(cfg, lambda0_grid=((0.0, -1.0, -1.0), good))
    res = shoot_search(cfg2)
    assert res.reached and res.solution.lambda0 == good
    assert len(res.candidates) == 2


def test_search_failure_path():
    # infected equilibrium is attracting; zero controls never reach the infection-free box
    p = endemic_params().with_(tau1=1.0, alpha=0.5)
    cfg = TimeOptConfig(p, bounds=(0.0,) * 4, initial=(10.0, 5.0, 5.0), t_max=5.0,
                        lambda0_grid=((0.0, -1.0, -1.0), (1.0, 1.0, 1.0)))
    res = shoot_search(cfg)
    assert not res.reached and res.solution is None
    assert res.near_miss is not None and res.near_miss["min_scaled_distance"] > 1
    assert res.summary()["reached"] is False


def test_determinism():
    cfg = with_grid(make_cfg(), 6)
    a, b = shoot_search(cfg), shoot_search(cfg)
    assert a.candidates == b.candidates
    assert np.array_equal(a.solution.trajectory.states, b.solution.trajectory.states)


def test_parallel_search_matches_serial():
    cfg = with_grid(make_cfg(), 6)
    assert shoot_search(cfg, workers=2).candidates == shoot_search(cfg).candidates


def test_terminal_residuals_constructed():
    f = np.array([0.3, -2.0, -4.0])
    lam = np.array([0.0, 0.1, 0.2])
    lam = -lam / (lam @ f)
    H, res = terminal_residuals(lam, f)
    assert H == pytest.approx(0.0, abs=1e-15) and res == pytest.approx(0.0, abs=1e-15)


def test_terminal_check_negative_lambda3():
    cfg = make_cfg(t_max=5.0)
    sol = forward_shoot(cfg, (1e-3, 1e-3, -1e-3))
    rep = terminal_condition_check(sol, cfg.params)
    assert rep.lambda3_T < 0
    assert not rep.terminal_sign_ok
