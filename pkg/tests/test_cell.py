import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myosim.cell import (CellParams, CellState, HodgkinHuxleyModel, StimulusProtocol, cell_rhs, euler_step,
                         force_length, gamma, heun_step, ionic_current, resting_state)
from myosim.errors import (DegenerateActivationError, IntegrationDivergedError, NonFiniteStateError)
from myosim.studies import loglog_slope, ode_convergence

PARAMS = CellParams()
REST = resting_state(PARAMS)


def test_rest_is_near_minus_75():
    assert -76.0 < REST.v_m < -74.0
    assert np.all((REST.gates > 0) & (REST.gates < 1))


def test_resting_fixed_point_by_long_integration():
    # integrate 500 ms unstimulated with dt = 1e-4 and check it stays put
    model = HodgkinHuxleyModel(PARAMS)
    y = model.initial_state(1)
    model.advance(y, 0.0, 1e-4, 5_000_000, "euler")
    assert np.max(np.abs(y[:, 0] - REST.as_array())) < 1e-6
    assert abs(ionic_current(REST, PARAMS)) < 1e-6
    assert np.max(np.abs(cell_rhs(REST, PARAMS).as_array())) < 1e-6


def test_rest_unchanged_over_1000_euler_steps():
    s = REST
    for _ in range(1000):
        s = euler_step(s, 1e-4, PARAMS)
    assert np.max(np.abs(s.as_array() - REST.as_array())) < 1e-6


def test_no_channels_no_current():
    p = dataclasses.replace(PARAMS, g_na=0.0, g_k=0.0, g_l=0.0)
    assert ionic_current(CellState(-30.0, np.array([0.3, 0.4, 0.5]), 0.1), p) == 0.0


def test_stimulus_shifts_current_by_minus_amplitude():
    assert ionic_current(REST, PARAMS, 1200.0) - ionic_current(REST, PARAMS) == pytest.approx(-1200.0, abs=1e-9)
    dv = cell_rhs(REST, PARAMS, 1200.0).v_m - cell_rhs(REST, PARAMS).v_m
    assert dv == pytest.approx(1200.0 / PARAMS.c_m, abs=1e-9)


def test_a2_relaxation_fixed_point():
    p = dataclasses.replace(PARAMS, tau_a2=1.0)
    v = -52.0
    a_inf = 1.0 / (1.0 + np.exp(-(v - p.v_half) / p.k_a2))
    d = cell_rhs(CellState(v, np.array([0.1, 0.5, 0.3]), a_inf), p)
    assert abs(d.a2) < 1e-15


def test_non_finite_state_rejected():
    bad = CellState(np.nan, np.array([0.1, 0.5, 0.3]), 0.0)
    with pytest.raises(NonFiniteStateError):
        ionic_current(bad, PARAMS)
    with pytest.raises(NonFiniteStateError):
        cell_rhs(bad, PARAMS)


def test_scalar_hook_euler_and_heun():
    decay = lambda y: -y
    assert euler_step(np.array([1.0]), 0.1, rhs=decay)[0] == pytest.approx(0.9, abs=1e-15)
    assert heun_step(np.array([1.0]), 0.1, rhs=decay)[0] == pytest.approx(0.905, abs=1e-15)


def test_fixed_point_unchanged_by_both_steps():
    zero = lambda y: np.zeros_like(y)
    y = np.array([3.0, -1.0])
    assert np.array_equal(euler_step(y, 0.5, rhs=zero), y)
    assert np.array_equal(heun_step(y, 0.5, rhs=zero), y)


def test_heun_with_frozen_rhs_is_euler(rng):
    y = rng.normal(size=4)
    f = rng.normal(size=4)
    frozen = lambda _: f
    np.testing.assert_array_equal(heun_step(y, 0.01, rhs=frozen), euler_step(y, 0.01, rhs=frozen))


def test_divergence_is_reported():
    with np.errstate(over="ignore"), pytest.raises(IntegrationDivergedError):
        euler_step(np.array([1e308]), 10.0, rhs=lambda y: y * 1e10)


def test_step_rejects_non_positive_dt():
    with pytest.raises(ValueError):
        euler_step(REST, 0.0, PARAMS)


def test_convergence_orders():
    t = ode_convergence()
    assert abs(t.meta["euler_slope"] - 1.0) <= 0.2
    assert abs(t.meta["heun_slope"] - 2.0) <= 0.2


def test_gamma_examples():
    p = dataclasses.replace(PARAMS, a2_min=0.0, a2_max=1.0)
    lo = CellState(-75.0, np.zeros(3), 0.0)
    hi = CellState(-75.0, np.zeros(3), 1.0)
    mid = CellState(-75.0, np.zeros(3), 0.5)
    assert gamma(lo, 1.3, p) == 0.0
    assert gamma(hi, p.l_opt, p) == 1.0
    assert gamma(mid, p.l_opt * (1 + p.fl_width), p) == 0.0


def test_default_a2_min_gives_zero_activation_at_rest():
    assert gamma(REST, PARAMS.l_opt, PARAMS) == 0.0


def test_gamma_degenerate_bounds():
    p = dataclasses.replace(PARAMS, a2_min=0.5, a2_max=0.5)
    with pytest.raises(DegenerateActivationError):
        gamma(REST, 1.1, p)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 3.0))
def test_gamma_monotone_in_a2(a, b, l_hs):
    p = dataclasses.replace(PARAMS, a2_min=0.0)
    lo, hi = sorted((a, b))
    g_lo = gamma(CellState(-75.0, np.zeros(3), lo), l_hs, p)
    g_hi = gamma(CellState(-75.0, np.zeros(3), hi), l_hs, p)
    assert 0.0 <= g_lo <= g_hi <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0))
def test_gamma_zero_outside_tent(a2):
    p = PARAMS
    s = CellState(-75.0, np.zeros(3), a2)
    edge = p.fl_width * p.l_opt
    assert gamma(s, p.l_opt + edge * 1.01, p) == 0.0
    assert gamma(s, p.l_opt - edge * 1.01, p) == 0.0
    assert force_length(p.l_opt, p) == 1.0


@pytest.mark.parametrize("bad", [dict(c_m=0.0), dict(tau_a2=0.0), dict(l_opt=-1.0), dict(fl_width=1.0)])
def test_param_invariants(bad):
    with pytest.raises(ValueError):
        CellParams(**bad)


def test_stimulus_window():
    s = StimulusProtocol(1200.0, 0.0, 0.1)
    assert s.current(0.0) == 1200.0 and s.current(0.0999) == 1200.0 and s.current(0.1) == 0.0
    with pytest.raises(ValueError):
        StimulusProtocol(1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        StimulusProtocol(-1.0)


def test_loglog_slope_needs_two_points():
    with pytest.raises(ValueError):
        loglog_slope([1, 2], [1e-15, 1e-16])
