"""Quasi-static active hyperelasticity on a structured hexahedral mesh.

Trilinear displacement elements with 2x2x2 Gauss quadrature. The material is
compressible Mooney-Rivlin (isochoric invariants) plus a tension-only fiber
term, an active fiber stress and a volumetric penalty. Every stress term
derives from a strain energy, so the tangent is symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ElementInversionError, MechanicsSolveError, MeshError

# local node order: bottom face counter-clockwise, then top face
_CORNERS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]])
_SIGNS = 2 * _CORNERS - 1
_G = 1.0 / np.sqrt(3.0)
GAUSS_XI = np.array([[sx * _G, sy * _G, sz * _G] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
FACES = ("x-", "x+", "y-", "y+", "z-", "z+")
DEFAULT_FIXED = ("x-", "x+", "y-", "z-")


def shape_functions(xi) -> np.ndarray:
    """Trilinear shape values at reference points ``xi`` of shape ``(..., 3)``."""
    xi = np.asarray(xi, dtype=float)
    return np.prod(0.5 * (1.0 + _SIGNS * xi[..., None, :]), axis=-1)


def shape_gradients_ref(xi) -> np.ndarray:
    """``dN_a/dxi_j`` at ``xi``, shape ``(..., 8, 3)``."""
    xi = np.asarray(xi, dtype=float)
    f = 0.5 * (1.0 + _SIGNS * xi[..., None, :])
    out = np.empty(xi.shape[:-1] + (8, 3))
    for j in range(3):
        others = [m for m in range(3) if m != j]
        out[..., j] = 0.5 * _SIGNS[:, j] * f[..., others[0]] * f[..., others[1]]
    return out


@dataclass(frozen=True)
class MaterialParams:
    """Stiffnesses in kPa."""

    c1: float = 3.56
    c2: float = 3.86
    b: float = 30.0
    kappa: float = 1000.0
    sigma_max: float = 30.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MuscleMesh:
    """Structured box of ``ex * ey * ez`` hexahedra.

    Elements are numbered ``ix + ex*(iy + ey*iz)`` and nodes
    ``i + (ex+1)*(j + (ey+1)*k)``. Dirichlet nodes have all three
    displacement components fixed at zero.
    """

    ex: int
    ey: int
    ez: int
    size: tuple = (1.0, 1.0, 1.0)  # cm
    a0: tuple = (1.0, 0.0, 0.0)
    fixed_faces: tuple = DEFAULT_FIXED
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    elements: np.ndarray = field(init=False, repr=False, compare=False)
    grads: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    dirichlet: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if min(self.ex, self.ey, self.ez) < 1:
            raise MeshError("element counts must be >= 1")
        if min(self.size) <= 0:
            raise MeshError("box dimensions must be positive")
        a0 = np.asarray(self.a0, dtype=float)
        if abs(np.linalg.norm(a0) - 1.0) > 1e-12:
            raise MeshError("fiber direction a0 must be a unit vector")
        bad = set(self.fixed_faces) - set(FACES)
        if bad:
            raise MeshError(f"unknown faces {sorted(bad)}")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "a0", tuple(a0))
        object.__setattr__(self, "fixed_faces", tuple(self.fixed_faces))
        nx, ny, nz = self.ex + 1, self.ey + 1, self.ez + 1
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        h = self.spacing
        nodes = np.stack([i.ravel() * h[0], j.ravel() * h[1], k.ravel() * h[2]], axis=1)
        ez_, ey_, ex_ = np.meshgrid(np.arange(self.ez), np.arange(self.ey), np.arange(self.ex), indexing="ij")
        base = np.stack([ex_.ravel(), ey_.ravel(), ez_.ravel()], axis=1)
        corner = base[:, None, :] + _CORNERS[None, :, :]
        elements = corner[..., 0] + nx * (corner[..., 1] + ny * corner[..., 2])
        # dN/dX is identical in every element of a uniform box
        grads = shape_gradients_ref(GAUSS_XI) * (2.0 / np.asarray(h))
        weights = np.full(8, h[0] * h[1] * h[2] / 8.0)
        idx = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        dims = (self.ex, self.ey, self.ez)
        fixed = np.zeros(len(nodes), dtype=bool)
        for face in self.fixed_faces:
            ax = "xyz".index(face[0])
            fixed |= idx[:, ax] == (0 if face[1] == "-" else dims[ax])
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "dirichlet", np.flatnonzero(fixed))

    @property
    def dims(self) -> tuple:
        return (self.ex, self.ey, self.ez)

    @property
    def spacing(self) -> tuple:
        return tuple(s / e for s, e in zip(self.size, self.dims))

    @property
    def n_elements(self) -> int:
        return self.ex * self.ey * self.ez

    @property
    def n_nodes(self) -> int:
        return (self.ex + 1) * (self.ey + 1) * (self.ez + 1)

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    def element_index(self, ix, iy, iz):
        return ix + self.ex * (iy + self.ey * iz)

    def element_coords(self, e):
        e = np.asarray(e)
        return e % self.ex, (e // self.ex) % self.ey, e // (self.ex * self.ey)

    def free_dofs(self) -> np.ndarray:
        fixed = np.zeros(self.n_dofs, dtype=bool)
        fixed[(3 * self.dirichlet[:, None] + np.arange(3)).ravel()] = True
        return np.flatnonzero(~fixed)

    def gauss_points(self) -> np.ndarray:
        """Reference Gauss-point positions, shape ``(n_elements, 8, 3)``."""
        n = shape_functions(GAUSS_XI)
        return np.einsum("ga,eai->egi", n, self.nodes[self.elements])

    def zero_displacement(self) -> np.ndarray:
        return np.zeros((self.n_nodes, 3))


def _inv_t(f):
    return np.swapaxes(np.linalg.inv(f), -1, -2)


def deformation_gradient(u, mesh: MuscleMesh, element=None, gauss_point=None):
    """``F = I + du/dX``; shape ``(E, 8, 3, 3)`` or a single tensor if indices are given."""
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    elems = mesh.elements if element is None else mesh.elements[np.atleast_1d(element)]
    f = np.eye(3) + np.einsum("eai,gaj->egij", u[elems], mesh.grads)
    if np.any(np.linalg.det(f) <= 0):
        raise ElementInversionError()
    if element is not None and np.ndim(element) == 0:
        f = f[0]
        if gauss_point is not None:
            f = f[gauss_point]
    return f


def _fiber_parts(f, gamma, params, a0):
    g = f @ a0
    lam = np.linalg.norm(g, axis=-1)
    ext = lam > 1.0
    dphi = 2.0 * params.b * (lam - 1.0) * ext + params.sigma_max * gamma
    ddphi = 2.0 * params.b * ext
    return g, lam, dphi, ddphi


def strain_energy(f, gamma, params: MaterialParams, a0=(1.0, 0.0, 0.0)):
    """Energy density, including the active potential ``sigma_max * gamma * lambda``."""
    f = np.asarray(f, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    j = np.linalg.det(f)
    if np.any(j <= 0):
        raise ElementInversionError()
    c = np.swapaxes(f, -1, -2) @ f
    i1 = np.trace(c, axis1=-2, axis2=-1)
    i2 = 0.5 * (i1 ** 2 - np.einsum("...ij,...ji->...", c, c))
    lam = np.linalg.norm(f @ a0, axis=-1)
    w = params.c1 * (j ** (-2 / 3) * i1 - 3) + params.c2 * (j ** (-4 / 3) * i2 - 3)
    w = w + params.b * np.where(lam > 1, (lam - 1) ** 2, 0.0) + params.sigma_max * gamma * lam
    return w + 0.5 * params.kappa * (j - 1) ** 2


def pk1_stress(f, gamma_bar, params: MaterialParams, a0=(1.0, 0.0, 0.0), tangent=False):
    """First Piola-Kirchhoff stress ``P = dW/dF`` for one or a batch of tensors.

    With ``tangent=True`` also returns ``A[..., i, J, k, L] = dP_iJ / dF_kL``.
    """
    f = np.asarray(f, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    j = np.linalg.det(f)
    if np.any(j <= 0):
        raise ElementInversionError()
    t = _inv_t(f)
    c = np.swapaxes(f, -1, -2) @ f
    fc = f @ c
    i1 = np.trace(c, axis1=-2, axis2=-1)
    i2 = 0.5 * (i1 ** 2 - np.einsum("...ij,...ji->...", c, c))
    j23 = j ** (-2 / 3)
    j43 = j ** (-4 / 3)
    ex = lambda s: s[..., None, None]  # noqa: E731
    d1 = 2.0 * f - (2 / 3) * ex(i1) * t
    di2 = 2.0 * (ex(i1) * f - fc)
    d2 = di2 - (4 / 3) * ex(i2) * t
    g, lam, dphi, ddphi = _fiber_parts(f, gamma_bar, params, a0)
    n = g[..., :, None] * a0 / ex(lam)
    vol = params.kappa * (j - 1.0) * j
    p = params.c1 * ex(j23) * d1 + params.c2 * ex(j43) * d2 + ex(dphi) * n + ex(vol) * t
    if not tangent:
        return p

    eye = np.eye(3)
    dd = np.einsum("ik,JL->iJkL", eye, eye)
    tt = np.einsum("...iJ,...kL->...iJkL", t, t)  # T_iJ T_kL
    tx = np.einsum("...iL,...kJ->...iJkL", t, t)  # T_iL T_kJ
    e4 = lambda s: s[..., None, None, None, None]  # noqa: E731

    a1 = (-(2 / 3) * np.einsum("...iJ,...kL->...iJkL", d1, t)
          + 2.0 * dd - (4 / 3) * np.einsum("...kL,...iJ->...iJkL", f, t) + (2 / 3) * e4(i1) * tx)
    b_ = f @ np.swapaxes(f, -1, -2)
    dfc = (np.einsum("ik,...LJ->...iJkL", eye, c) + np.einsum("...iL,...kJ->...iJkL", f, f)
           + np.einsum("...ik,JL->...iJkL", b_, eye))
    dd2 = (2.0 * (2.0 * np.einsum("...kL,...iJ->...iJkL", f, f) + e4(i1) * dd - dfc)
           - (4 / 3) * (np.einsum("...kL,...iJ->...iJkL", di2, t) - e4(i2) * tx))
    a2 = -(4 / 3) * np.einsum("...iJ,...kL->...iJkL", d2, t) + dd2
    gi = g / ex(lam)[..., 0]
    dn = (np.einsum("ik,L,J->iJkL", eye, a0, a0) - np.einsum("...i,...k,J,L->...iJkL", gi, gi, a0, a0)) / e4(lam)
    af = e4(ddphi) * np.einsum("...iJ,...kL->...iJkL", n, n) + e4(dphi) * dn
    av = params.kappa * (e4(2 * j * j - j) * tt - e4(j * j - j) * tx)
    a = params.c1 * e4(j23) * a1 + params.c2 * e4(j43) * a2 + af + av
    return p, a


def _gamma_gp(gamma, n_el):
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        return np.full((n_el, 8), float(g))
    if g.shape == (n_el,):
        return np.repeat(g[:, None], 8, axis=1)
    if g.shape == (n_el, 8):
        return g
    raise ValueError(f"gamma must be scalar, ({n_el},) or ({n_el}, 8)")


def element_forces(u_elem, gamma_gp, mesh: MuscleMesh, params: MaterialParams, tangent=True):
    """Element internal forces ``(E, 24)`` and optionally stiffness blocks ``(E, 24, 24)``.

    ``u_elem`` holds the 8 corner displacements of each element, ``(E, 8, 3)``.
    """
    f = np.eye(3) + np.einsum("eai,gaj->egij", u_elem, mesh.grads)
    if np.any(np.linalg.det(f) <= 0):
        raise ElementInversionError()
    res = pk1_stress(f, gamma_gp, params, np.asarray(mesh.a0), tangent=tangent)
    p, a = res if tangent else (res, None)
    w = mesh.weights
    r = np.einsum("g,egiJ,gaJ->eai", w, p, mesh.grads).reshape(len(u_elem), 24)
    if not tangent:
        return r, None
    k = np.einsum("g,gaJ,egiJkL,gbL->eaibk", w, mesh.grads, a, mesh.grads).reshape(len(u_elem), 24, 24)
    return r, k


def element_dofs(mesh: MuscleMesh, elems=None) -> np.ndarray:
    el = mesh.elements if elems is None else mesh.elements[elems]
    return (3 * el[:, :, None] + np.arange(3)).reshape(len(el), 24)


def assemble(mesh: MuscleMesh, elems, r_e, k_e=None):
    """Scatter element blocks (in the given element order) into global arrays."""
    dofs = element_dofs(mesh, elems)
    r = np.zeros(mesh.n_dofs)
    np.add.at(r, dofs.ravel(), r_e.ravel())
    if k_e is None:
        return r, None
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    k = sp.coo_matrix((k_e.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    return r, k


def _full_residual(u, gamma, mesh, params, tangent):
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    g = _gamma_gp(gamma, mesh.n_elements)
    r_e, k_e = element_forces(u[mesh.elements], g, mesh, params, tangent)
    return assemble(mesh, np.arange(mesh.n_elements), r_e, k_e)


def residual(u, gamma, mesh: MuscleMesh, params: MaterialParams | None = None) -> np.ndarray:
    """Internal force vector restricted to the free degrees of freedom."""
    r, _ = _full_residual(u, gamma, mesh, params or MaterialParams(), False)
    return r[mesh.free_dofs()]


def tangent(u, gamma, mesh: MuscleMesh, params: MaterialParams | None = None) -> sp.csr_matrix:
    """Consistent tangent on the free degrees of freedom."""
    _, k = _full_residual(u, gamma, mesh, params or MaterialParams(), True)
    free = mesh.free_dofs()
    return k[free][:, free]


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    history: list
    line_search_halvings: list


class Assembler:
    """Produces the global residual and tangent; the runtime swaps in a distributed one."""

    def __init__(self, mesh, params):
        self.mesh = mesh
        self.params = params

    def __call__(self, u, gamma, with_tangent):
        return _full_residual(u, gamma, self.mesh, self.params, with_tangent)


def newton_solve(u0, gamma, mesh: MuscleMesh, params: MaterialParams | None = None,
                 rel_tol=1e-8, abs_tol=1e-8, max_line_search=40, max_iter=50,
                 assembler=None) -> NewtonResult:
    """Newton's method with a halving backtracking line search.

    Stops when ``||R|| <= max(abs_tol, rel_tol * ||R(u0)||)``. A trial step that
    inverts an element counts as a failed line-search trial.
    """
    params = params or MaterialParams()
    assembler = assembler or Assembler(mesh, params)
    free = mesh.free_dofs()
    u = np.array(u0, dtype=float).reshape(-1, 3)
    ub = u.ravel()
    r_full, k_full = assembler(u, gamma, True)
    r = r_full[free]
    norm = float(np.linalg.norm(r))
    target = max(abs_tol, rel_tol * norm)
    history = [norm]
    halvings = []
    it = 0
    while norm > target:
        if it >= max_iter:
            raise MechanicsSolveError(history=history, iterations=it)
        kf = k_full[free][:, free].tocsc()
        try:
            du = spla.spsolve(kf, -r)
        except RuntimeError as exc:
            raise MechanicsSolveError(history=history, iterations=it) from exc
        if not np.all(np.isfinite(du)):
            raise MechanicsSolveError(history=history, iterations=it)
        alpha = 1.0
        for h in range(max_line_search + 1):
            trial = ub.copy()
            trial[free] += alpha * du
            try:
                rt, kt = assembler(trial.reshape(-1, 3), gamma, True)
            except ElementInversionError:
                rt = None
            if rt is not None:
                nt = float(np.linalg.norm(rt[free]))
                if nt < norm:
                    break
            alpha *= 0.5
        else:
            raise MechanicsSolveError(history=history, iterations=it + 1)
        halvings.append(h)
        ub, r_full, k_full = trial, rt, kt
        r = r_full[free]
        norm = nt
        history.append(norm)
        it += 1
    return NewtonResult(ub.reshape(-1, 3), it, history, halvings)


def fiber_stretch(u, mesh: MuscleMesh) -> np.ndarray:
    """Fiber stretch ``|F a0|`` at every Gauss point, ``(E, 8)``."""
    f = deformation_gradient(u, mesh)
    return np.linalg.norm(f @ np.asarray(mesh.a0), axis=-1)
