"""Data exchange between the embedded 1D fibers and the 3D mesh.

Fibers run along x. In every element column they sit at the Gauss-Legendre
points of the (y, z) cross-section, and all fibers share the same node
positions ``x_j = j * Lx / (s - 1)``. That regularity lets
:func:`build_embedding` find each node's element with integer arithmetic.
The naive search functions exist only as test oracles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSegmentError, OutsideMeshError
from .mechanics import MuscleMesh, shape_functions


@dataclass(frozen=True)
class FiberLayout:
    """``ny * nz`` fibers per element cross-section, ``nodes_per_fiber`` nodes each."""

    ny: int = 3
    nz: int = 3
    nodes_per_fiber: int = 31

    def __post_init__(self):
        if self.ny < 1 or self.nz < 1:
            raise ValueError("need at least one fiber per element in y and z")
        if self.nodes_per_fiber < 2:
            raise ValueError("a fiber needs at least 2 nodes")

    def n_fibers(self, mesh: MuscleMesh) -> int:
        return mesh.ey * self.ny * mesh.ez * self.nz

    def cross_section(self, mesh: MuscleMesh):
        """Per fiber: ``(iy, iz, xi_y, xi_z)``; fibers are numbered y-fastest."""
        gy = np.polynomial.legendre.leggauss(self.ny)[0]
        gz = np.polynomial.legendre.leggauss(self.nz)[0]
        fy = np.arange(mesh.ey * self.ny)
        fz = np.arange(mesh.ez * self.nz)
        fz_, fy_ = np.meshgrid(fz, fy, indexing="ij")
        fy_, fz_ = fy_.ravel(), fz_.ravel()
        return fy_ // self.ny, fz_ // self.nz, gy[fy_ % self.ny], gz[fz_ % self.nz]

    def reference_positions(self, mesh: MuscleMesh) -> np.ndarray:
        """Undeformed node positions, ``(n_fibers, nodes_per_fiber, 3)``."""
        iy, iz, xy, xz = self.cross_section(mesh)
        hx, hy, hz = mesh.spacing
        s = self.nodes_per_fiber
        x = np.arange(s) * (mesh.size[0] / (s - 1))
        y = (iy + 0.5 * (xy + 1.0)) * hy
        z = (iz + 0.5 * (xz + 1.0)) * hz
        out = np.empty((len(iy), s, 3))
        out[..., 0] = x
        out[..., 1] = y[:, None]
        out[..., 2] = z[:, None]
        return out

    def node_spacing(self, mesh: MuscleMesh) -> float:
        return mesh.size[0] / (self.nodes_per_fiber - 1)


@dataclass
class EmbeddingMap:
    """Owner element and reference coordinates of every fiber node (flattened fiber-major)."""

    element: np.ndarray
    xi: np.ndarray
    n_fibers: int
    nodes_per_fiber: int
    n_elements: int

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.element, minlength=self.n_elements)

    def element_nodes(self, e: int) -> np.ndarray:
        return np.flatnonzero(self.element == e)

    def node_lists(self):
        """``(offsets, ids)`` so ``ids[offsets[e]:offsets[e+1]]`` are the nodes of element ``e``."""
        order = np.argsort(self.element, kind="stable")
        offsets = np.concatenate([[0], np.cumsum(self.counts)])
        return offsets, order

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMap):
            return NotImplemented
        return (np.array_equal(self.element, other.element) and np.array_equal(self.xi, other.xi)
                and (self.n_fibers, self.nodes_per_fiber, self.n_elements)
                == (other.n_fibers, other.nodes_per_fiber, other.n_elements))


def x_owner(j, n_elem_x: int, nodes_per_fiber: int):
    """Element column and ``xi_x`` of fiber node ``j``; shared faces go to the lower element."""
    j = np.asarray(j)
    s1 = nodes_per_fiber - 1
    num = j * n_elem_x
    ix = np.maximum(0, -(-num // s1) - 1)
    return ix, 2.0 * (num - ix * s1) / s1 - 1.0


def build_embedding(mesh: MuscleMesh, layout: FiberLayout) -> EmbeddingMap:
    """Index-arithmetic embedding, linear in the number of fiber nodes."""
    s = layout.nodes_per_fiber
    iy, iz, xy, xz = layout.cross_section(mesh)
    ix, xx = x_owner(np.arange(s), mesh.ex, s)
    nf = len(iy)
    element = (ix[None, :] + mesh.ex * (iy[:, None] + mesh.ey * iz[:, None])).ravel()
    xi = np.empty((nf, s, 3))
    xi[..., 0] = xx
    xi[..., 1] = xy[:, None]
    xi[..., 2] = xz[:, None]
    return EmbeddingMap(element.astype(np.int64), xi.reshape(-1, 3), nf, s, mesh.n_elements)


def _naive_owner(p, mesh, tol):
    h = np.asarray(mesh.spacing)
    for e in range(mesh.n_elements):
        lo = np.array(mesh.element_coords(e)) * h
        if np.all(p >= lo - tol) and np.all(p <= lo + h + tol):
            return e, np.clip(2.0 * (p - lo) / h - 1.0, -1.0, 1.0)
    raise OutsideMeshError()


def naive_embedding(mesh: MuscleMesh, positions: np.ndarray, tol=1e-12) -> EmbeddingMap:
    """Test oracle: scan all elements in ascending order for every node."""
    nf, s, _ = positions.shape
    pts = positions.reshape(-1, 3)
    element = np.empty(len(pts), dtype=np.int64)
    xi = np.empty_like(pts)
    for n, p in enumerate(pts):
        element[n], xi[n] = _naive_owner(p, mesh, tol)
    return EmbeddingMap(element, xi, nf, s, mesh.n_elements)


def interpolate_positions(u, emap: EmbeddingMap, mesh: MuscleMesh) -> np.ndarray:
    """Deformed fiber node positions ``(n_fibers, nodes_per_fiber, 3)``."""
    x = mesh.nodes + np.asarray(u, dtype=float).reshape(-1, 3)
    n = shape_functions(emap.xi)
    pts = np.einsum("na,nai->ni", n, x[mesh.elements[emap.element]])
    return pts.reshape(emap.n_fibers, emap.nodes_per_fiber, 3)


def half_sarcomere_lengths(positions, h_ref: float, l_ref: float = 1.1) -> np.ndarray:
    """``l_ref`` times the local fiber stretch, central differences inside, one-sided at the ends."""
    x = np.asarray(positions, dtype=float)
    if x.shape[-2] < 2:
        raise ValueError("need at least 2 nodes per fiber")
    seg = np.linalg.norm(np.diff(x, axis=-2), axis=-1)
    if np.any(seg <= 1e-12 * h_ref):
        raise DegenerateSegmentError()
    d = np.empty(x.shape)
    d[..., 1:-1, :] = (x[..., 2:, :] - x[..., :-2, :]) / (2.0 * h_ref)
    d[..., 0, :] = (x[..., 1, :] - x[..., 0, :]) / h_ref
    d[..., -1, :] = (x[..., -1, :] - x[..., -2, :]) / h_ref
    return l_ref * np.linalg.norm(d, axis=-1)


def homogenize_gamma(gamma_nodes, emap: EmbeddingMap) -> np.ndarray:
    """Per-element mean of nodal gamma; elements without fiber nodes get 0."""
    g = np.asarray(gamma_nodes, dtype=float).ravel()
    sums = np.bincount(emap.element, weights=g, minlength=emap.n_elements)
    counts = emap.counts
    out = np.zeros(emap.n_elements)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def naive_homogenize(gamma_nodes, positions, mesh: MuscleMesh, tol=1e-12) -> np.ndarray:
    """Test oracle: for each element, search every fiber node for ones it owns."""
    g = np.asarray(gamma_nodes, dtype=float).ravel()
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    h = np.asarray(mesh.spacing)
    claimed = np.zeros(len(pts), dtype=bool)
    out = np.zeros(mesh.n_elements)
    for e in range(mesh.n_elements):
        lo = np.array(mesh.element_coords(e)) * h
        inside = np.all((pts >= lo - tol) & (pts <= lo + h + tol), axis=1) & ~claimed
        claimed |= inside
        if inside.any():
            # left-to-right sum, same order as the bincount accumulation
            out[e] = sum(g[inside].tolist()) / int(inside.sum())
    return out


def gauss_point_values(per_element) -> np.ndarray:
    """Broadcast per-element values to the 8 Gauss points, ``(E, 8)``."""
    return np.repeat(np.asarray(per_element, dtype=float)[:, None], 8, axis=1)
