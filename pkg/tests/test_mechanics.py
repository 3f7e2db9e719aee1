import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from myosim.errors import ElementInversionError, MechanicsSolveError, MeshError
from myosim.mechanics import (MaterialParams, MuscleMesh, deformation_gradient, fiber_stretch, newton_solve,
                              pk1_stress, residual, strain_energy, tangent)

P0 = MaterialParams()
A0 = np.array([1.0, 0.0, 0.0])


def _affine(mesh, grad):
    return mesh.nodes @ np.asarray(grad).T


def test_deformation_gradient_examples():
    m = MuscleMesh(2, 2, 2)
    np.testing.assert_allclose(deformation_gradient(m.zero_displacement(), m), np.broadcast_to(np.eye(3), (8, 8, 3, 3)))
    np.testing.assert_allclose(deformation_gradient(_affine(m, 0.1 * np.eye(3)), m, 3, 5), 1.1 * np.eye(3),
                               atol=1e-14)
    shear = np.zeros((3, 3))
    shear[0, 1] = 0.2
    f = deformation_gradient(_affine(m, shear), m)
    np.testing.assert_allclose(f, np.broadcast_to(np.eye(3) + shear, f.shape), atol=1e-14)


def test_inversion_detected():
    m = MuscleMesh(1, 1, 1)
    with pytest.raises(ElementInversionError):
        deformation_gradient(_affine(m, -2.0 * np.eye(3)), m)
    with pytest.raises(ElementInversionError):
        pk1_stress(np.diag([1.0, 1.0, -1.0]), 0.0, P0)


def test_mesh_validation():
    with pytest.raises(MeshError):
        MuscleMesh(0, 1, 1)
    with pytest.raises(MeshError):
        MuscleMesh(1, 1, 1, a0=(1.0, 1.0, 0.0))
    with pytest.raises(MeshError):
        MuscleMesh(1, 1, 1, fixed_faces=("w+",))


def test_reference_state_is_stress_free():
    np.testing.assert_allclose(pk1_stress(np.eye(3), 0.0, P0), 0.0, atol=1e-12)
    np.testing.assert_allclose(pk1_stress(np.eye(3), 1.0, P0), P0.sigma_max * np.outer(A0, A0), atol=1e-12)


def _rotations(n=10):
    return Rotation.random(n, random_state=7).as_matrix()


def test_objectivity(rng):
    f = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    p = pk1_stress(f, 0.3, P0)
    w = strain_energy(f, 0.3, P0)
    for q in _rotations():
        pq = pk1_stress(q @ f, 0.3, P0)
        assert np.linalg.norm(pq - q @ p) / np.linalg.norm(p) < 1e-10
        assert abs(strain_energy(q @ f, 0.3, P0) - w) < 1e-10 * abs(w)


def test_stress_is_energy_gradient(rng):
    f = np.eye(3) + 0.1 * rng.normal(size=(3, 3))
    p = pk1_stress(f, 0.4, P0)
    eps = 1e-6
    fd = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] = eps
            fd[i, j] = (strain_energy(f + d, 0.4, P0) - strain_energy(f - d, 0.4, P0)) / (2 * eps)
    assert np.linalg.norm(fd - p) / np.linalg.norm(p) < 1e-6


def _slab(mesh, value=0.5):
    ix = mesh.element_coords(np.arange(mesh.n_elements))[0]
    return np.where(ix == 1, value, 0.0)


def test_residual_at_reference():
    m = MuscleMesh(3, 3, 3)
    assert np.max(np.abs(residual(m.zero_displacement(), 0.0, m))) < 1e-12
    r = np.zeros(m.n_dofs)
    r[m.free_dofs()] = residual(m.zero_displacement(), _slab(m), m)
    r = r.reshape(-1, 3)
    assert np.max(np.abs(r[:, 0])) > 1e-3
    assert np.max(np.abs(r[:, 1:])) < 1e-12


BRANCHES = {
    "passive": (MaterialParams(kappa=0.0, sigma_max=0.0), 0.0),
    "active": (MaterialParams(c1=0.0, c2=0.0, b=0.0, kappa=0.0), 0.5),
    "penalty": (MaterialParams(c1=0.0, c2=0.0, b=0.0, sigma_max=0.0), 0.0),
    "full": (P0, 0.5),
}


@pytest.mark.parametrize("branch", BRANCHES)
def test_tangent_matches_finite_differences(branch, rng):
    params, g = BRANCHES[branch]
    m = MuscleMesh(2, 2, 2, fixed_faces=("x-",))
    free = m.free_dofs()
    u = np.zeros(m.n_dofs)
    u[free] = 0.02 * rng.normal(size=free.size)
    # stretch along the fiber so the anisotropic term is active
    u += _affine(m, np.diag([0.05, 0.0, 0.0])).ravel() * np.isin(np.arange(m.n_dofs), free)
    k = tangent(u, g, m, params).toarray()
    eps = 1e-6
    fd = np.empty_like(k)
    for c, dof in enumerate(free):
        up, um = u.copy(), u.copy()
        up[dof] += eps
        um[dof] -= eps
        fd[:, c] = (residual(up, g, m, params) - residual(um, g, m, params)) / (2 * eps)
    assert np.linalg.norm(fd - k) / np.linalg.norm(k) < 1e-5
    np.testing.assert_allclose(k, k.T, atol=1e-10 * np.abs(k).max())


def test_zero_activation_newton():
    m = MuscleMesh(2, 2, 2)
    res = newton_solve(m.zero_displacement(), 0.0, m)
    assert res.iterations <= 1
    assert np.all(res.u == 0.0)


@pytest.fixture(scope="module")
def slab_solution():
    m = MuscleMesh(3, 3, 3)
    g = _slab(m)
    return m, g, newton_solve(m.zero_displacement(), g, m)


def test_active_slab_shortens(slab_solution):
    m, g, res = slab_solution
    strain = fiber_stretch(res.u, m) - 1.0
    assert np.all(strain[g > 0] < 0)
    assert np.all(strain[g == 0] > 0)


def test_residual_tolerance_and_quadratic_rate(slab_solution):
    m, g, res = slab_solution
    h = res.history
    assert h[-1] <= max(1e-8, 1e-8 * h[0])
    assert np.linalg.norm(residual(res.u, g, m)) == pytest.approx(h[-1], rel=1e-6, abs=1e-12)
    ratios = [h[i + 1] / h[i] ** 2 for i in range(len(h) - 1)]
    assert len(ratios) >= 2 and max(ratios) < 1.0
    assert res.line_search_halvings == [0] * res.iterations


def test_penalty_keeps_volume(slab_solution):
    m, _, res = slab_solution
    j = np.linalg.det(deformation_gradient(res.u, m))
    assert np.max(np.abs(j - 1.0)) < 10 * P0.c1 / P0.kappa


def test_iteration_budget_exhausted():
    m = MuscleMesh(3, 3, 3)
    with pytest.raises(MechanicsSolveError) as info:
        newton_solve(m.zero_displacement(), _slab(m), m, max_iter=1)
    assert len(info.value.history) >= 1
