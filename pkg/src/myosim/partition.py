"""Axis-aligned cuboid domain decomposition.

Partitions are numbered ``ix + px*(iy + py*iz)``. Along each axis the first
partitions get ``E // p`` elements and the last ``E % p`` get one more.
Interface areas are counted in unit element faces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
import numpy as np

from .errors import InfeasibleLayoutError

STRATEGIES = ("pillar", "cubic", "general")
# layouts whose largest block exceeds the mean block volume by more than this
# are only chosen when nothing better balanced exists
IMBALANCE_LIMIT = 1.5


def axis_ranges(n_elem: int, parts: int) -> list[tuple[int, int]]:
    base, rem = divmod(n_elem, parts)
    sizes = [base] * (parts - rem) + [base + 1] * rem
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(edges[i]), int(edges[i + 1])) for i in range(parts)]


def interface_area(dims, p) -> int:
    ex, ey, ez = dims
    px, py, pz = p
    return (px - 1) * ey * ez + (py - 1) * ex * ez + (pz - 1) * ex * ey


def imbalance(dims, p) -> float:
    largest = math.prod(-(-e // q) for e, q in zip(dims, p))
    return largest / (math.prod(dims) / math.prod(p))


@dataclass(frozen=True)
class PartitionLayout:
    dims: tuple
    p: tuple
    strategy: str = "general"
    atomic: tuple = (1, 1, 1)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "p", tuple(int(d) for d in self.p))
        object.__setattr__(self, "atomic", tuple(int(d) for d in self.atomic))
        if any(q < 1 or q > e for q, e in zip(self.p, self.dims)):
            raise InfeasibleLayoutError(f"infeasible layout: {self.p} on {self.dims}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == "pillar" and self.p[0] != 1:
            raise InfeasibleLayoutError("infeasible layout: pillar layouts need p_x = 1")

    @property
    def n_partitions(self) -> int:
        return math.prod(self.p)

    @property
    def block_size(self) -> tuple:
        """Largest partition extent per axis."""
        return tuple(-(-e // q) for e, q in zip(self.dims, self.p))

    def ranges(self, axis: int) -> list[tuple[int, int]]:
        return axis_ranges(self.dims[axis], self.p[axis])

    def coords(self, rank: int) -> tuple:
        px, py, _ = self.p
        return rank % px, (rank // px) % py, rank // (px * py)

    def rank(self, ix, iy, iz) -> int:
        px, py, _ = self.p
        return ix + px * (iy + py * iz)

    def box(self, rank: int) -> tuple:
        """``((x0, x1), (y0, y1), (z0, z1))`` element ranges of a partition."""
        c = self.coords(rank)
        return tuple(self.ranges(a)[c[a]] for a in range(3))

    def elements(self, rank: int) -> np.ndarray:
        """Global element ids of a partition, ascending."""
        (x0, x1), (y0, y1), (z0, z1) = self.box(rank)
        ex, ey, _ = self.dims
        z, y, x = np.meshgrid(np.arange(z0, z1), np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
        return (x + ex * (y + ey * z)).ravel()

    def owner_of_elements(self) -> np.ndarray:
        """Partition rank of every element."""
        out = np.empty(math.prod(self.dims), dtype=np.int64)
        for r in range(self.n_partitions):
            out[self.elements(r)] = r
        return out

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "p": list(self.p), "strategy": self.strategy,
                "atomic": list(self.atomic)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "PartitionLayout":
        return cls(tuple(d["dims"]), tuple(d["p"]), d.get("strategy", "general"),
                   tuple(d.get("atomic", (1, 1, 1))))


def factorizations(n: int):
    """All ordered triples ``(a, b, c)`` with ``a * b * c == n``."""
    for a in range(1, n + 1):
        if n % a:
            continue
        m = n // a
        for b in range(1, m + 1):
            if m % b == 0:
                yield (a, b, m // b)


def _admissible(dims, p, strategy, atomic):
    if strategy == "pillar" and p[0] != 1:
        return False
    return all(q <= e and e // q >= at for q, e, at in zip(p, dims, atomic))


def _key(dims, p, strategy):
    if strategy == "general":
        return (interface_area(dims, p), p)
    return (imbalance(dims, p) > IMBALANCE_LIMIT, interface_area(dims, p), max(p[1:]) / min(p[1:]), p)


def factorize(n_proc: int, dims, strategy="cubic", atomic=(1, 1, 1)) -> PartitionLayout:
    """Best layout using exactly ``n_proc`` partitions.

    ``general`` minimizes the internal interface area with lexicographic ties.
    ``cubic`` and ``pillar`` first discard layouts whose largest block is more
    than 1.5x the mean block volume (when a balanced one exists), then minimize
    interface area, then prefer balanced y/z subdivisions. ``pillar`` also
    forces ``p_x = 1``.
    """
    if n_proc < 1:
        raise ValueError("process count must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    dims = tuple(int(d) for d in dims)
    cands = [p for p in factorizations(n_proc) if _admissible(dims, p, strategy, atomic)]
    if not cands:
        raise InfeasibleLayoutError()
    best = min(cands, key=lambda p: _key(dims, p, strategy))
    return PartitionLayout(dims, best, strategy, tuple(atomic))


def optimize_layout(n_proc: int, dims, strategy="cubic", weight=None, atomic=(1, 1, 1),
                    min_fraction=0.9) -> PartitionLayout:
    """Trade interface area against idle processes over ``P' in [0.9 P, P]``.

    Score is ``interface_area + weight * (P - P')``. The default weight is twice
    the mean number of elements per process.
    """
    dims = tuple(int(d) for d in dims)
    if weight is None:
        weight = 2.0 * math.prod(dims) / max(n_proc, 1)
    best = None
    for used in range(n_proc, max(1, math.ceil(min_fraction * n_proc)) - 1, -1):
        try:
            lay = factorize(used, dims, strategy, atomic)
        except InfeasibleLayoutError:
            continue
        score = interface_area(dims, lay.p) + weight * (n_proc - used)
        if best is None or score < best[0]:
            best = (score, lay)
    if best is None:
        return PartitionLayout(dims, (1, 1, 1), strategy, tuple(atomic))
    return best[1]


@dataclass
class CommModel:
    neighbors: list
    shared_face_area: dict
    ghost_elements: list
    total_area: int
    n_fibers: int = 0
    fiber_cuts: int = 0

    @property
    def average_area(self) -> float:
        return 2.0 * self.total_area / len(self.ghost_elements)

    @property
    def ghost_elements_avg(self) -> float:
        return float(np.mean(self.ghost_elements))


def _overlap(a, b):
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


def _touch(a, b):
    return a[0] <= b[1] and b[0] <= a[1]


def boundary_metrics(layout: PartitionLayout, n_fibers: int = 0) -> CommModel:
    """Neighbors, face areas, one-layer ghost counts and fiber cuts of a layout."""
    n = layout.n_partitions
    boxes = [layout.box(r) for r in range(n)]
    neighbors = [[] for _ in range(n)]
    shared = {}
    for a in range(n):
        for b in range(a + 1, n):
            ba, bb = boxes[a], boxes[b]
            if not all(_touch(ba[k], bb[k]) for k in range(3)):
                continue
            neighbors[a].append(b)
            neighbors[b].append(a)
            for k in range(3):
                if ba[k][1] == bb[k][0] or bb[k][1] == ba[k][0]:
                    o = [m for m in range(3) if m != k]
                    area = _overlap(ba[o[0]], bb[o[0]]) * _overlap(ba[o[1]], bb[o[1]])
                    if area:
                        shared[(a, b)] = shared[(b, a)] = area
    ghosts = [sum(v for (a, _), v in shared.items() if a == r) for r in range(n)]
    total = interface_area(layout.dims, layout.p)
    return CommModel(neighbors, shared, ghosts, total, n_fibers, (layout.p[0] - 1) * n_fibers)


def brute_force_area(layout: PartitionLayout) -> int:
    """Count element-face adjacencies whose two elements lie in different partitions."""
    own = layout.owner_of_elements().reshape(layout.dims[::-1])  # (z, y, x)
    return int(sum(np.count_nonzero(np.diff(own, axis=ax)) for ax in range(3)))


def sweep(n_proc: int, dims, atomic=(1, 1, 1)) -> list[PartitionLayout]:
    """Every admissible exact factorization, sorted by average boundary area."""
    dims = tuple(int(d) for d in dims)
    lays = [PartitionLayout(dims, p, "general", tuple(atomic))
            for p in factorizations(n_proc) if _admissible(dims, p, "general", atomic)]
    return sorted(lays, key=lambda l: (interface_area(dims, l.p), l.p))


def all_layouts(n_proc_max: int, dims):
    """Helper for property tests: every layout with at most ``n_proc_max`` partitions."""
    for n in range(1, n_proc_max + 1):
        for p in factorizations(n):
            if all(q <= e for q, e in zip(p, dims)):
                yield PartitionLayout(tuple(dims), p)

