import numpy as np
import pytest

from myosim.cell import CellParams, HodgkinHuxleyModel, StimulusProtocol
from myosim.fiber import FiberMesh
from myosim.mechanics import MaterialParams, MuscleMesh
from myosim.splitting import (CoupledProblem, SplittingSchedule, coupled_step, initial_world,
                              midpoint_mask, resting_fibers, run_1d, step_1d)
from myosim.transfer import FiberLayout

STIM = StimulusProtocol(1200.0, 0.0, 0.1)


def test_schedule_ratios():
    s = SplittingSchedule()
    assert (s.n, s.k, s.theta) == (2000, 5, 1.0)
    assert s.ode_method == "euler" and s.diffusion_method == "implicit_euler"
    st = SplittingSchedule.strang()
    assert (st.ode_method, st.diffusion_method, st.theta, st.k) == ("heun", "crank_nicolson", 0.5, 2)
    assert s.ticks(0.1) == 1000 and s.time(1000) == pytest.approx(0.1)


@pytest.mark.parametrize("kw", [dict(dt_1d=3e-4, dt_0d=2e-4), dict(dt_3d=1.0, dt_1d=0.3),
                                dict(scheme="strang", dt_1d=3e-4, dt_0d=1e-4), dict(scheme="lie"),
                                dict(dt_0d=0.0), dict(ode_method="rk4")])
def test_schedule_rejects(kw):
    with pytest.raises(ValueError):
        SplittingSchedule(**kw)


def _isolated(n=7):
    return FiberMesh.uniform(n, 1.0, sigma_eff=0.0)


def test_godunov_single_substep_without_diffusion_is_euler():
    mesh = _isolated()
    model = HodgkinHuxleyModel()
    sch = SplittingSchedule.godunov(dt_1d=1e-4, k=1)
    state = resting_fibers(model, mesh)
    mask = midpoint_mask(mesh)
    y = state.y.copy()
    for _ in range(20):
        model.advance(y, 1200.0 * mask, sch.dt_0d, 1, "euler")
        step_1d(state, sch, mesh, STIM, model=model)
    np.testing.assert_allclose(state.y, y, rtol=1e-12, atol=1e-12)


def test_strang_without_diffusion_is_k_heun_steps():
    mesh = _isolated()
    model = HodgkinHuxleyModel()
    sch = SplittingSchedule.strang(dt_1d=4e-4, k=4)
    state = resting_fibers(model, mesh)
    mask = midpoint_mask(mesh)
    y = state.y.copy()
    model.advance(y, 1200.0 * mask, sch.dt_0d, 4 * 10, "heun")
    run_1d(state, sch, mesh, STIM, 10 * sch.dt_1d, model=model)
    np.testing.assert_allclose(state.y, y, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("scheme", ["godunov", "strang"])
def test_rest_without_stimulus(scheme):
    mesh = FiberMesh.uniform(15)
    sch = SplittingSchedule(dt_1d=1e-3, dt_0d=2.5e-4, scheme=scheme)
    state = resting_fibers(HodgkinHuxleyModel(), mesh, 2)
    v0 = state.v.copy()
    run_1d(state, sch, mesh, None, 1.0)
    assert np.max(np.abs(state.v - v0)) < 1e-6


def test_schemes_agree_at_fine_step():
    mesh = FiberMesh.uniform(31)
    model = HodgkinHuxleyModel()
    t = 0.1
    out = {}
    for scheme in ("godunov", "strang"):
        sch = SplittingSchedule.godunov(dt_1d=2.5e-4, k=5) if scheme == "godunov" \
            else SplittingSchedule.strang(dt_1d=2.5e-4, k=2)
        state = resting_fibers(model, mesh)
        out[scheme] = run_1d(state, sch, mesh, STIM, t, model=model).v.copy()
    rel = np.max(np.abs(out["godunov"] - out["strang"])) / np.max(np.abs(out["strang"]))
    assert rel < 1e-3


def test_stimulus_raises_midpoint_only_at_first():
    mesh = FiberMesh.uniform(31)
    state = resting_fibers(HodgkinHuxleyModel(), mesh)
    step_1d(state, SplittingSchedule(), mesh, STIM)
    v = state.v[0]
    assert v[15] == v.max() and v[15] > v[0]
    np.testing.assert_allclose(v, v[::-1], rtol=0, atol=1e-9)


def _problem(scheme="godunov", amplitude=1200.0):
    sch = SplittingSchedule(dt_3d=0.05, dt_1d=5e-4, dt_0d=1e-4) if scheme == "godunov" \
        else SplittingSchedule.strang(dt_1d=1e-3, dt_3d=0.05)
    return CoupledProblem(MuscleMesh(2, 2, 2), FiberLayout(2, 2, 11), sch, StimulusProtocol(amplitude, 0, 0.1),
                          CellParams(), MaterialParams())


@pytest.mark.parametrize("scheme", ["godunov", "strang"])
def test_coupled_step_is_deterministic(scheme):
    p = _problem(scheme)
    a, b = initial_world(p), initial_world(p)
    for _ in range(3):
        coupled_step(a, p)
        coupled_step(b, p)
    np.testing.assert_array_equal(a.fibers.y, b.fibers.y)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.l_hs, b.l_hs)


def test_no_activation_leaves_mechanics_at_rest():
    p = _problem(amplitude=0.0)
    w = initial_world(p)
    l0 = w.l_hs.copy()
    seen = []
    coupled_step(w, p, on_1d=lambda t, v: seen.append(t))
    assert len(seen) == p.schedule.n and seen[-1] == pytest.approx(0.05)
    assert np.all(w.u == 0.0)
    np.testing.assert_allclose(w.l_hs, l0, rtol=0, atol=1e-12)
    assert w.newton_iterations == [0] and w.step == 1
