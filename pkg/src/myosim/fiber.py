"""1D monodomain diffusion along a fiber.

Linear finite elements with a lumped mass matrix, so every implicit step is a
strictly tridiagonal solve. Rows are produced by :func:`diffusion_rows`, which
works on any contiguous node range; the distributed runtime assembles fiber
segments with it and gets the same numbers as a serial assembly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import MeshError, SolverStalledError

SOLVERS = ("thomas", "cg", "gmres")


@dataclass(frozen=True)
class FiberMesh:
    """Node positions (cm) and the electrical constants of the monodomain equation."""

    node_x: np.ndarray
    sigma_eff: float = 3.828  # mS/cm
    a_m: float = 500.0  # 1/cm
    c_m: float = 1.0  # uF/cm^2

    def __post_init__(self):
        x = np.asarray(self.node_x, dtype=float)
        object.__setattr__(self, "node_x", x)
        if x.ndim != 1 or x.size < 2:
            raise MeshError("a fiber needs at least 2 nodes")
        if np.any(np.diff(x) <= 0):
            raise MeshError("fiber node positions must be strictly increasing")
        if self.sigma_eff < 0 or not self.a_m > 0 or not self.c_m > 0:
            raise MeshError("sigma_eff must be >= 0; a_m and c_m must be positive")

    @classmethod
    def uniform(cls, n_nodes: int, length: float = 1.0, **kw) -> "FiberMesh":
        return cls(np.linspace(0.0, length, n_nodes), **kw)

    @property
    def n_nodes(self) -> int:
        return self.node_x.size

    @property
    def diffusivity(self) -> float:
        """sigma_eff / (A_m C_m) in cm^2/ms."""
        return self.sigma_eff / (self.a_m * self.c_m)

    def midpoint_nodes(self) -> np.ndarray:
        n = self.n_nodes
        return np.array([n // 2]) if n % 2 else np.array([n // 2 - 1, n // 2])


@dataclass
class TridiagonalSystem:
    """``sub[i]`` couples row i to i-1, ``sup[i]`` couples row i to i+1."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.diag)
        if len(self.sub) != n or len(self.sup) != n or (self.rhs is not None and len(self.rhs) != n):
            raise ValueError("inconsistent tridiagonal lengths")

    @property
    def n(self) -> int:
        return len(self.diag)

    def to_sparse(self) -> sp.csr_matrix:
        n = self.n
        return sp.diags([self.sub[1:], self.diag, self.sup[:-1]], [-1, 0, 1], shape=(n, n), format="csr")

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[1:] += self.sub[1:] * v[:-1]
        out[:-1] += self.sup[:-1] * v[1:]
        return out


def node_coefficients(mesh: FiberMesh):
    """Per-node lumped mass and left/right conductances ``sigma/h``."""
    h = np.diff(mesh.node_x)
    a_l = np.zeros(mesh.n_nodes)
    a_r = np.zeros(mesh.n_nodes)
    a_l[1:] = mesh.sigma_eff / h
    a_r[:-1] = mesh.sigma_eff / h
    mass = np.zeros(mesh.n_nodes)
    mass[1:] += 0.5 * h
    mass[:-1] += 0.5 * h
    return mass, a_l, a_r


def lumped_mass(mesh: FiberMesh) -> np.ndarray:
    return node_coefficients(mesh)[0]


def assemble_diffusion(mesh: FiberMesh) -> TridiagonalSystem:
    """Stiffness operator of ``-d/dx(sigma d/dx)`` with zero-flux ends."""
    _, a_l, a_r = node_coefficients(mesh)
    return TridiagonalSystem(-a_l, a_l + a_r, -a_r)


def diffusion_rows(coeffs, v, dt, scale, theta, v_left=None, v_right=None):
    """Rows of ``(M + theta dt c K) v_new = (M - (1-theta) dt c K) v``.

    ``coeffs`` is ``(mass, a_l, a_r)`` restricted to the node range held in the
    last axis of ``v``. ``v_left``/``v_right`` are ghost values of the nodes just
    outside the range; they only matter when the range is a cut segment.
    """
    mass, a_l, a_r = coeffs
    w = theta * dt * scale
    diag = mass + w * (a_l + a_r)
    sub = -w * a_l
    sup = -w * a_r
    shape = np.shape(v)
    diag = np.broadcast_to(diag, shape)
    sub = np.broadcast_to(sub, shape)
    sup = np.broadcast_to(sup, shape)
    rhs = mass * v
    if theta != 1.0:
        w2 = (1.0 - theta) * dt * scale
        left = np.empty_like(v)
        right = np.empty_like(v)
        left[..., 1:] = v[..., :-1]
        right[..., :-1] = v[..., 1:]
        left[..., 0] = v[..., 0] if v_left is None else v_left
        right[..., -1] = v[..., -1] if v_right is None else v_right
        rhs = rhs - w2 * (a_l * (v - left) + a_r * (v - right))
    return sub, diag, sup, rhs


def _step(v, dt, mesh, theta, method, rel_tol):
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=float)
    scale = 1.0 / (mesh.a_m * mesh.c_m)
    sub, diag, sup, rhs = diffusion_rows(node_coefficients(mesh), v, dt, scale, theta)
    if v.ndim == 2:
        if method == "thomas":
            return kernels.thomas_batch(sub, diag, sup, rhs)
        return np.stack([linear_solve(TridiagonalSystem(sub[i], diag[i], sup[i], rhs[i]), method, rel_tol, x0=v[i])
                         for i in range(v.shape[0])])
    return linear_solve(TridiagonalSystem(sub, diag, sup, rhs), method, rel_tol, x0=v)


def implicit_euler_step(v, dt, mesh: FiberMesh, method="thomas", rel_tol=1e-5):
    """Backward Euler diffusion step; ``v`` may be ``(n,)`` or a ``(fibers, n)`` batch."""
    return _step(v, dt, mesh, 1.0, method, rel_tol)


def crank_nicolson_step(v, dt, mesh: FiberMesh, method="thomas", rel_tol=1e-5):
    """Trapezoidal diffusion step."""
    return _step(v, dt, mesh, 0.5, method, rel_tol)


def linear_solve(system: TridiagonalSystem, method="thomas", rel_tol=1e-5, x0=None,
                 restart=30, maxiter=None):
    """Solve a tridiagonal system with Thomas, plain CG or restarted GMRES.

    Iterative methods stop at ``||Ax - b|| <= rel_tol ||b||``; no preconditioner.
    """
    if system.rhs is None:
        raise ValueError("system has no right-hand side")
    if method == "thomas":
        return kernels.thomas(system.sub, system.diag, system.sup, system.rhs)
    a = system.to_sparse()
    b = np.asarray(system.rhs, dtype=float)
    if method == "cg":
        x, info = spla.cg(a, b, x0=x0, rtol=rel_tol, atol=0.0,
                          maxiter=maxiter or 10 * system.n)
    elif method == "gmres":
        # scipy counts restart cycles in maxiter
        cycles = maxiter or max(1, 20 * system.n // restart)
        x, info = spla.gmres(a, b, x0=x0, rtol=rel_tol, atol=0.0, restart=restart, maxiter=cycles)
    else:
        raise ValueError(f"unknown solver {method!r}; choose from {SOLVERS}")
    if info != 0:
        raise SolverStalledError()
    return x
