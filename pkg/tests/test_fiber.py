import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myosim.errors import MeshError, SingularSystemError, SolverStalledError
from myosim.fiber import (SOLVERS, FiberMesh, TridiagonalSystem, assemble_diffusion, crank_nicolson_step,
                          implicit_euler_step, linear_solve, lumped_mass)
from myosim.studies import fiber_system

SIGMA = 3.828


def dense(system):
    return system.to_sparse().toarray()


def test_four_node_hand_assembly():
    mesh = FiberMesh.uniform(4, 1.0)
    h = 1.0 / 3.0
    k = dense(assemble_diffusion(mesh))
    np.testing.assert_allclose(k[1, :3], [-SIGMA / h, 2 * SIGMA / h, -SIGMA / h], rtol=1e-14)
    np.testing.assert_allclose(k[0, :2], [SIGMA / h, -SIGMA / h], rtol=1e-14)
    np.testing.assert_allclose(lumped_mass(mesh), [h / 2, h, h, h / 2], rtol=1e-14)


def test_two_node_matrix():
    mesh = FiberMesh.uniform(2, 0.5)
    np.testing.assert_allclose(dense(assemble_diffusion(mesh)), SIGMA / 0.5 * np.array([[1, -1], [-1, 1]]))


def test_operator_properties(rng):
    mesh = FiberMesh(np.cumsum(rng.uniform(0.01, 0.1, 20)))
    k = dense(assemble_diffusion(mesh))
    np.testing.assert_allclose(k, k.T)
    np.testing.assert_allclose(k.sum(axis=1), 0, atol=1e-12)
    assert np.linalg.eigvalsh(k).min() > -1e-9


@pytest.mark.parametrize("bad", [[0.0], [0.0, 0.0], [0.0, 1.0, 0.5]])
def test_mesh_validation(bad):
    with pytest.raises(MeshError):
        FiberMesh(np.array(bad))


@pytest.mark.parametrize("step", [implicit_euler_step, crank_nicolson_step])
def test_constant_field_unchanged(step):
    mesh = FiberMesh.uniform(11)
    v = np.full(11, -75.0)
    np.testing.assert_allclose(step(v, 0.01, mesh), v, rtol=0, atol=1e-12)


@pytest.mark.parametrize("step", [implicit_euler_step, crank_nicolson_step])
def test_spike_spreads_and_conserves(step):
    mesh = FiberMesh.uniform(21)
    v = np.zeros(21)
    v[10] = 1.0
    m = lumped_mass(mesh)
    w = step(v, 0.05, mesh)
    assert w.max() < 1.0
    assert abs(m @ w - m @ v) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 50), min_size=3, max_size=40), st.floats(1e-4, 1.0))
def test_implicit_euler_maximum_principle(values, dt):
    v = np.array(values)
    mesh = FiberMesh.uniform(v.size)
    w = implicit_euler_step(v, dt, mesh)
    tol = 1e-9 * (1 + np.abs(v).max())
    assert np.all(w >= v.min() - tol) and np.all(w <= v.max() + tol)
    m = lumped_mass(mesh)
    assert abs(m @ w - m @ v) <= 1e-10 * max(1.0, np.abs(m @ v))


def _mode_error(step, dt, n=41, t_end=0.2):
    # cos(pi x) is an exact eigenvector of the lumped Neumann operator
    mesh = FiberMesh.uniform(n, 1.0, a_m=1.0, c_m=1.0, sigma_eff=0.5)
    h = 1.0 / (n - 1)
    lam = 4 * mesh.diffusivity / h ** 2 * np.sin(np.pi * h / 2) ** 2
    v = np.cos(np.pi * mesh.node_x)
    for _ in range(int(round(t_end / dt))):
        v = step(v, dt, mesh)
    return np.max(np.abs(v - np.exp(-lam * t_end) * np.cos(np.pi * mesh.node_x)))


@pytest.mark.parametrize("step,order", [(implicit_euler_step, 1.0), (crank_nicolson_step, 2.0)])
def test_time_order_against_cosine_mode(step, order):
    dts = np.array([0.02, 0.01, 0.005, 0.0025])
    errs = [_mode_error(step, dt) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - order) < 0.15


def test_batched_step_matches_rows(rng):
    mesh = FiberMesh.uniform(9)
    v = rng.normal(size=(3, 9))
    w = crank_nicolson_step(v, 0.01, mesh)
    for i in range(3):
        np.testing.assert_allclose(w[i], crank_nicolson_step(v[i], 0.01, mesh), rtol=0, atol=1e-14)


@pytest.mark.parametrize("method", SOLVERS)
def test_identity_system(method, rng):
    b = rng.normal(size=6)
    s = TridiagonalSystem(np.zeros(6), np.ones(6), np.zeros(6), b)
    np.testing.assert_allclose(linear_solve(s, method), b, rtol=1e-10)


@pytest.mark.parametrize("method", SOLVERS)
def test_three_by_three(method):
    s = TridiagonalSystem(np.array([0.0, -1, -1]), np.full(3, 2.0), np.array([-1.0, -1, 0]), np.array([1.0, 0, 1]))
    np.testing.assert_allclose(linear_solve(s, method, rel_tol=1e-12), [1, 1, 1], atol=1e-10)


def test_solvers_agree_on_thousand_nodes():
    s, v = fiber_system(1000)
    ref = linear_solve(s, "thomas")
    for m in ("cg", "gmres"):
        assert np.max(np.abs(linear_solve(s, m, 1e-11, x0=v) - ref)) < 1e-8


def test_cg_and_gmres_within_ten_rel_tol():
    s, v = fiber_system(2000)
    a = linear_solve(s, "cg", 1e-5)
    b = linear_solve(s, "gmres", 1e-5)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 10 * 1e-5
    for x in (a, b):
        assert np.linalg.norm(s.matvec(x) - s.rhs) <= 1e-5 * np.linalg.norm(s.rhs)


def test_stall_and_singular():
    s, _ = fiber_system(500)
    with pytest.raises(SolverStalledError):
        linear_solve(s, "gmres", 1e-14, maxiter=1)
    with pytest.raises(SingularSystemError):
        linear_solve(TridiagonalSystem(np.zeros(2), np.zeros(2), np.zeros(2), np.ones(2)), "thomas")
    with pytest.raises(ValueError):
        linear_solve(s, "lu")


def test_inconsistent_lengths():
    with pytest.raises(ValueError):
        TridiagonalSystem(np.zeros(2), np.zeros(3), np.zeros(3))
