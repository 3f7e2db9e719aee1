"""Partitioned execution with explicit message passing.

Each :class:`Worker` owns one cuboid partition: its 3D elements, the fiber
segments inside them and the cell states on those segments. Workers share no
mutable simulation state; everything crosses partitions through a
:class:`Mailbox` that copies payloads and counts bytes. A coordinator drives
the phases in a fixed order (0D, 1D, homogenization, 3D, interpolation), which
also fixes every reduction order, so results match the serial solver bit for
bit.

Cut fibers are solved by gathering the tridiagonal rows to the partition with
``ix = 0`` in the same row, solving there and scattering the pieces back. The
3D Newton iteration runs on rank 0; workers compute element blocks for their
own elements from the displacement rank 0 scatters to them.
"""
from __future__ import annotations

import time
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cell import gamma_array
from .errors import HaloProtocolError, MeshError
from .fiber import diffusion_rows, node_coefficients
from .mechanics import _gamma_gp, assemble, element_forces, newton_solve, shape_functions
from .partition import PartitionLayout, boundary_metrics
from .splitting import CoupledProblem, FiberState, WorldState, advance_cells
from .timing import COMPONENTS, MemoryTracker, Timer
from .transfer import half_sarcomere_lengths, x_owner

KINDS = ("displacement", "v_m-interface", "mechanics", "timing")
ROOT = 0
GHOST_BYTES = 8 * 3 * 8  # one ghost element: 8 nodes x 3 components x float64


def _nbytes(payload) -> int:
    if isinstance(payload, np.ndarray):
        return payload.nbytes
    if isinstance(payload, dict):
        return sum(_nbytes(v) for v in payload.values())
    if isinstance(payload, (tuple, list)):
        return sum(_nbytes(v) for v in payload)
    return 8


def _copy(payload):
    if isinstance(payload, np.ndarray):
        return payload.copy()
    if isinstance(payload, dict):
        return {k: _copy(v) for k, v in payload.items()}
    if isinstance(payload, (tuple, list)):
        return type(payload)(_copy(v) for v in payload)
    return payload


class Mailbox:
    """Point-to-point FIFO channels keyed by ``(src, dst, kind)``.

    Messages a rank sends to itself are delivered but not counted as traffic.
    """

    def __init__(self):
        self._queues = defaultdict(deque)
        self.bytes = defaultdict(int)
        self.messages = defaultdict(int)
        self.sent_by = defaultdict(int)

    def send(self, src, dst, kind, payload):
        if kind not in KINDS:
            raise HaloProtocolError(f"halo protocol violation: unknown payload kind {kind!r}")
        if src != dst:
            n = _nbytes(payload)
            self.bytes[kind] += n
            self.messages[kind] += 1
            self.sent_by[src] += n
        self._queues[(src, dst, kind)].append(_copy(payload))

    def recv(self, dst, src, kind):
        q = self._queues.get((src, dst, kind))
        if not q:
            raise HaloProtocolError(f"halo protocol violation: no {kind} message {src}->{dst}")
        return q.popleft()

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def barrier(self):
        if self.pending():
            raise HaloProtocolError("halo protocol violation: undelivered messages at barrier")


@dataclass
class HaloPlan:
    """``send[a][b][kind]`` lists what rank ``a`` sends to ``b``; ``recv[b][a][kind]`` what ``b`` expects.

    Displacement entries are global element ids; v_m-interface entries are
    global fiber ids whose segments meet at the shared x face.
    """

    n_ranks: int
    send: list = field(default_factory=list)
    recv: list = field(default_factory=list)

    def validate(self):
        for a in range(self.n_ranks):
            for b, kinds in self.send[a].items():
                for kind, ids in kinds.items():
                    other = self.recv[b].get(a, {}).get(kind)
                    if other is None or not np.array_equal(ids, other):
                        raise HaloProtocolError()
            for b, kinds in self.recv[a].items():
                for kind in kinds:
                    if kind not in self.send[b].get(a, {}):
                        raise HaloProtocolError()

    def entries(self, kind) -> int:
        return sum(len(k.get(kind, ())) for s in self.send for k in s.values())

    def volume(self, kind, bytes_per_entry) -> int:
        return self.entries(kind) * bytes_per_entry


def _box_elements(box, dims):
    (x0, x1), (y0, y1), (z0, z1) = box
    ex, ey, _ = dims
    z, y, x = np.meshgrid(np.arange(z0, z1), np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    return (x + ex * (y + ey * z)).ravel()


def _box_fibers(box, muscle, flayout):
    (_, _), (y0, y1), (z0, z1) = box
    fz, fy = np.meshgrid(np.arange(z0 * flayout.nz, z1 * flayout.nz),
                         np.arange(y0 * flayout.ny, y1 * flayout.ny), indexing="ij")
    return (fy + muscle.ey * flayout.ny * fz).ravel()


def build_halo_plan(layout: PartitionLayout, muscle, flayout) -> HaloPlan:
    """One ghost layer of elements across every shared face, plus x-face fiber interfaces."""
    n = layout.n_partitions
    plan = HaloPlan(n, [dict() for _ in range(n)], [dict() for _ in range(n)])
    comm = boundary_metrics(layout)
    for (a, b) in comm.shared_face_area:
        ba, bb = layout.box(a), layout.box(b)
        axis = next(k for k in range(3) if ba[k][1] == bb[k][0] or bb[k][1] == ba[k][0])
        layer = list(ba)
        layer[axis] = (ba[axis][1] - 1, ba[axis][1]) if ba[axis][1] == bb[axis][0] else (ba[axis][0], ba[axis][0] + 1)
        ghost = _box_elements(layer, layout.dims)
        plan.send[a].setdefault(b, {})["displacement"] = ghost
        plan.recv[b].setdefault(a, {})["displacement"] = ghost
        if axis == 0:
            fibers = _box_fibers(ba, muscle, flayout)
            plan.send[a][b]["v_m-interface"] = fibers
            plan.recv[b][a]["v_m-interface"] = fibers
    plan.validate()
    return plan


class Worker:
    """State and compute for one partition."""

    def __init__(self, rank, layout: PartitionLayout, problem: CoupledProblem, mailbox: Mailbox):
        self.rank = rank
        self.layout = layout
        self.problem = problem
        self.mail = mailbox
        self.timer = Timer()
        self.memory = MemoryTracker()
        self.comm_seconds = 0.0
        self.coords = layout.coords(rank)
        self.box = layout.box(rank)
        muscle, flayout = problem.muscle, problem.layout
        s = flayout.nodes_per_fiber
        self.elements = layout.elements(rank)
        self.fibers = _box_fibers(self.box, muscle, flayout)
        owner_col, _ = x_owner(np.arange(s), muscle.ex, s)
        seg = np.flatnonzero((owner_col >= self.box[0][0]) & (owner_col < self.box[0][1]))
        if seg.size == 0:
            raise MeshError("every partition needs at least one fiber node per fiber")
        self.j0, self.j1 = int(seg[0]), int(seg[-1]) + 1
        self.seg_len = self.j1 - self.j0
        nf = len(self.fibers)
        self.n_fibers = nf
        # cell states of the local segments, fiber-major like the serial layout
        rest = problem.model.initial_state(1)[:, 0]
        self.y = np.ascontiguousarray(np.repeat(rest[:, None], nf * self.seg_len, axis=1))
        full_mask = problem.mask.reshape(-1, s)
        self.mask = np.ascontiguousarray(full_mask[self.fibers, self.j0:self.j1]).ravel()
        mass, a_l, a_r = node_coefficients(problem.fiber_mesh)
        self.coeffs = (mass[self.j0:self.j1], a_l[self.j0:self.j1], a_r[self.j0:self.j1])
        node_ids = (self.fibers[:, None] * s + np.arange(self.j0, self.j1)).ravel()
        emap = problem.emap
        self.node_elem = emap.element[node_ids]
        self.node_xi = emap.xi[node_ids]
        self.local_elem = np.searchsorted(self.elements, self.node_elem)
        self.gamma_bar = np.zeros(len(self.elements))
        self.l_hs = np.full((nf, self.seg_len), problem.cell.l_opt)
        # nodes of the closed partition box and the local connectivity
        self.closed_nodes = np.unique(muscle.elements[self.elements])
        self.conn = np.searchsorted(self.closed_nodes, muscle.elements[self.elements])
        self.u_closed = np.zeros((len(self.closed_nodes), 3))
        self.ghosts = {}
        self.halo_nodes = {}
        for side, j in (("left", self.j0 - 1), ("right", self.j1)):
            if 0 <= j < s and self.layout.p[0] > 1:
                ids = self.fibers * s + j
                self.halo_nodes[side] = (emap.element[ids], emap.xi[ids])
        self.xi_shape = shape_functions(self.node_xi)
        self.memory.track("cells", self.y, self.mask)
        self.memory.track("fiber", *self.coeffs, self.l_hs, self.node_elem, self.node_xi, self.xi_shape)
        self.memory.track("mesh", self.elements, self.closed_nodes, self.conn, self.u_closed, self.gamma_bar)

    # helpers -------------------------------------------------------------
    def send(self, dst, kind, payload):
        t0 = time.perf_counter()
        self.mail.send(self.rank, dst, kind, payload)
        self.comm_seconds += time.perf_counter() - t0

    def recv(self, src, kind):
        t0 = time.perf_counter()
        out = self.mail.recv(self.rank, src, kind)
        self.comm_seconds += time.perf_counter() - t0
        return out

    @property
    def v(self):
        return self.y[0].reshape(self.n_fibers, self.seg_len)

    def x_neighbor(self, d):
        ix, iy, iz = self.coords
        j = ix + d
        if 0 <= j < self.layout.p[0]:
            return self.layout.rank(j, iy, iz)
        return None

    @property
    def row_root(self):
        _, iy, iz = self.coords
        return self.layout.rank(0, iy, iz)

    def row_ranks(self):
        _, iy, iz = self.coords
        return [self.layout.rank(i, iy, iz) for i in range(self.layout.p[0])]

    # phases ---------------------------------------------------------------
    def cells(self, tick, nsub):
        p = self.problem
        with self.timer.section("solver_0d"):
            advance_cells(p.model, self.y, tick, nsub, p.schedule, p.stimulus, self.mask, p.schedule.ode_method)

    def send_interface(self):
        v = self.v
        left, right = self.x_neighbor(-1), self.x_neighbor(1)
        if right is not None:
            self.send(right, "v_m-interface", v[:, -1])
        if left is not None:
            self.send(left, "v_m-interface", v[:, 0])

    def assemble_rows(self, dt, theta):
        """Local tridiagonal rows; cut segments use the neighbors' interface values."""
        v_left = v_right = None
        if theta != 1.0:
            left, right = self.x_neighbor(-1), self.x_neighbor(1)
            if left is not None:
                v_left = self.recv(left, "v_m-interface")
            if right is not None:
                v_right = self.recv(right, "v_m-interface")
        p = self.problem
        scale = 1.0 / (p.fiber_mesh.a_m * p.fiber_mesh.c_m)
        with self.timer.section("solver_1d"):
            return diffusion_rows(self.coeffs, self.v, dt, scale, theta, v_left, v_right)

    def solve_local(self, rows):
        with self.timer.section("solver_1d"):
            self.v[...] = kernels.thomas_batch(*rows)

    def send_rows(self, rows):
        self.send(self.row_root, "v_m-interface", tuple(np.ascontiguousarray(r) for r in rows))

    def solve_row(self):
        """Row root: gather every piece of the cut fibers, solve, scatter."""
        ranks = self.row_ranks()
        pieces = [self.recv(r, "v_m-interface") for r in ranks]
        with self.timer.section("solver_1d"):
            full = [np.concatenate([pc[i] for pc in pieces], axis=1) for i in range(4)]
            x = kernels.thomas_batch(*full)
        start = 0
        for r, pc in zip(ranks, pieces):
            n = pc[0].shape[1]
            self.send(r, "v_m-interface", x[:, start:start + n])
            start += n

    def receive_solution(self):
        sol = self.recv(self.row_root, "v_m-interface")
        with self.timer.section("solver_1d"):
            self.v[...] = sol

    def homogenize(self):
        with self.timer.section("homogenization"):
            g = gamma_array(self.y[4], self.l_hs.ravel(), self.problem.cell)
            n = len(self.elements)
            sums = np.bincount(self.local_elem, weights=g, minlength=n)
            counts = np.bincount(self.local_elem, minlength=n)
            self.gamma_bar = np.zeros(n)
            np.divide(sums, counts, out=self.gamma_bar, where=counts > 0)

    def receive_displacement(self):
        self.u_closed = self.recv(ROOT, "mechanics")

    def element_blocks(self, with_tangent):
        p = self.problem
        with self.timer.section("solver_3d"):
            g = _gamma_gp(self.gamma_bar, len(self.elements))
            r_e, k_e = element_forces(self.u_closed[self.conn], g, p.muscle, p.material, with_tangent)
        self.send(ROOT, "mechanics", (r_e, k_e) if with_tangent else (r_e,))

    def send_ghosts(self, plan: HaloPlan):
        muscle = self.problem.muscle
        for dst, kinds in plan.send[self.rank].items():
            ids = kinds["displacement"]
            local = np.searchsorted(self.elements, ids)
            self.send(dst, "displacement", self.u_closed[self.conn[local]])

    def receive_ghosts(self, plan: HaloPlan):
        self.ghosts = {}
        for src, kinds in plan.recv[self.rank].items():
            ids = kinds["displacement"]
            block = self.recv(src, "displacement")
            if block.shape != (len(ids), 8, 3):
                raise HaloProtocolError()
            for e, b in zip(ids, block):
                self.ghosts[int(e)] = b
        self.memory.track("ghosts", *self.ghosts.values())

    def interpolate(self):
        muscle = self.problem.muscle
        with self.timer.section("interpolation"):
            x_closed = muscle.nodes[self.closed_nodes] + self.u_closed
            corners = x_closed[self.conn[self.local_elem]]
            pos = np.einsum("na,nai->ni", self.xi_shape, corners).reshape(self.n_fibers, self.seg_len, 3)
            parts = []
            for side in ("left", "right"):
                if side in self.halo_nodes:
                    elems, xi = self.halo_nodes[side]
                    corners = np.stack([muscle.nodes[muscle.elements[e]] + self.ghosts[int(e)] for e in elems])
                    hp = np.einsum("na,nai->ni", shape_functions(xi), corners)[:, None, :]
                    parts.append((side, hp))
            ext = [pos]
            for side, hp in parts:
                ext = [hp] + ext if side == "left" else ext + [hp]
            full = np.concatenate(ext, axis=1)
            l_hs = half_sarcomere_lengths(full, self.problem.h_ref, self.problem.cell.l_opt)
            lo = 1 if "left" in self.halo_nodes else 0
            self.l_hs = l_hs[:, lo:lo + self.seg_len]
            self.positions = pos


@dataclass
class TimingReport:
    """Per-worker component times, memory high-water marks and ghost counts."""

    layout: PartitionLayout
    seconds: list
    bytes_peak: list
    ghost_elements: list
    comm_seconds: list
    comm_bytes: dict

    @property
    def workers(self) -> int:
        return len(self.seconds)

    def component(self, name, how=max) -> float:
        return how(s.get(name, 0.0) for s in self.seconds)

    @property
    def ghost_elements_avg(self) -> float:
        return float(np.mean(self.ghost_elements))

    def rows(self, experiment: str) -> list:
        """CSV rows: one per component, slowest worker's time, largest memory mark."""
        px, py, pz = self.layout.p
        return [[experiment, self.workers, px, py, pz, c, self.component(c), max(self.bytes_peak),
                 self.ghost_elements_avg] for c in COMPONENTS]


class ParallelSimulation:
    """Coupled simulation distributed over ``layout.n_partitions`` in-process workers."""

    def __init__(self, problem: CoupledProblem, layout: PartitionLayout):
        if tuple(layout.dims) != problem.muscle.dims:
            raise ValueError("layout dims must match the muscle mesh")
        self.problem = problem
        self.layout = layout
        self.mail = Mailbox()
        self.workers = [Worker(r, layout, problem, self.mail) for r in range(layout.n_partitions)]
        self.plan = build_halo_plan(layout, problem.muscle, problem.layout)
        self.comm = boundary_metrics(layout, problem.n_fibers)
        self.u = problem.muscle.zero_displacement()
        self.tick = 0
        self.step_count = 0
        self.newton_iterations = []
        self.root_timer = Timer()

    # 1D ------------------------------------------------------------------
    def _diffuse(self, dt, theta):
        ws = self.workers
        if theta != 1.0 and self.layout.p[0] > 1:
            for w in ws:
                w.send_interface()
        rows = [w.assemble_rows(dt, theta) for w in ws]
        if self.layout.p[0] == 1:
            for w, r in zip(ws, rows):
                w.solve_local(r)
        else:
            for w, r in zip(ws, rows):
                w.send_rows(r)
            for w in ws:
                if w.rank == w.row_root:
                    w.solve_row()
            for w in ws:
                w.receive_solution()
        self.mail.barrier()

    def step_1d(self):
        sch = self.problem.schedule
        k = sch.k
        if sch.scheme == "godunov":
            for w in self.workers:
                w.cells(self.tick, k)
            self._diffuse(sch.dt_1d, sch.theta)
        else:
            half = k // 2
            for w in self.workers:
                w.cells(self.tick, half)
            self._diffuse(sch.dt_1d, sch.theta)
            for w in self.workers:
                w.cells(self.tick + half, half)
        self.tick += k

    # 3D ------------------------------------------------------------------
    def _scatter_u(self, u):
        root = self.workers[ROOT]
        for w in self.workers:
            root.send(w.rank, "mechanics", u[w.closed_nodes])
        for w in self.workers:
            w.receive_displacement()

    def _assembler(self, u, gamma, with_tangent):
        # gamma is ignored: every worker uses its own homogenized values
        t0 = time.perf_counter()
        try:
            return self._assemble(u, with_tangent)
        finally:
            self._assembly_seconds += time.perf_counter() - t0

    def _assemble(self, u, with_tangent):
        muscle = self.problem.muscle
        self._scatter_u(u)
        for w in self.workers:
            w.element_blocks(with_tangent)
        root = self.workers[ROOT]
        r_all = np.empty((muscle.n_elements, 24))
        k_all = np.empty((muscle.n_elements, 24, 24)) if with_tangent else None
        for w in self.workers:
            msg = root.recv(w.rank, "mechanics")
            r_all[w.elements] = msg[0]
            if with_tangent:
                k_all[w.elements] = msg[1]
        self.mail.barrier()
        with root.timer.section("solver_3d"):
            return assemble(muscle, np.arange(muscle.n_elements), r_all, k_all)

    def gamma_bar(self) -> np.ndarray:
        out = np.zeros(self.problem.muscle.n_elements)
        for w in self.workers:
            out[w.elements] = w.gamma_bar
        return out

    def gather_v(self) -> np.ndarray:
        """``(F, s)`` potentials collected from all workers (observation only)."""
        p = self.problem
        v = np.empty((p.n_fibers, p.layout.nodes_per_fiber))
        for w in self.workers:
            v[w.fibers, w.j0:w.j1] = w.v
        return v

    def coupled_step(self, on_1d=None):
        p = self.problem
        for _ in range(p.schedule.n):
            self.step_1d()
            if on_1d is not None:
                on_1d(p.schedule.time(self.tick), self.gather_v())
        for w in self.workers:
            w.homogenize()
        root = self.workers[ROOT]
        self._assembly_seconds = 0.0
        t0 = time.perf_counter()
        res = newton_solve(self.u, None, p.muscle, p.material, assembler=self._assembler, **p.newton)
        # the linear solves and line-search bookkeeping happen on the root
        root.timer.add("solver_3d", time.perf_counter() - t0 - self._assembly_seconds)
        self.u = res.u
        self.newton_iterations.append(res.iterations)
        self._scatter_u(self.u)
        for w in self.workers:
            w.send_ghosts(self.plan)
        for w in self.workers:
            w.receive_ghosts(self.plan)
        for w in self.workers:
            w.interpolate()
        self.mail.barrier()
        self.step_count += 1

    def run(self, t_end, on_step=None, on_1d=None):
        sch = self.problem.schedule
        steps = int(round(t_end / sch.dt_3d))
        if on_step:
            on_step(self)
        for _ in range(steps):
            self.coupled_step(on_1d)
            if on_step:
                on_step(self)
        return self

    # results ---------------------------------------------------------------
    def world(self) -> WorldState:
        """Assemble a serial-layout snapshot (for comparison and output only)."""
        p = self.problem
        s = p.layout.nodes_per_fiber
        nf = p.n_fibers
        y = np.empty((5, nf, s))
        l_hs = np.empty((nf, s))
        for w in self.workers:
            y[:, w.fibers, w.j0:w.j1] = w.y.reshape(5, w.n_fibers, w.seg_len)
            l_hs[w.fibers, w.j0:w.j1] = w.l_hs
        fs = FiberState(np.ascontiguousarray(y.reshape(5, -1)), nf, self.tick)
        return WorldState(fs, self.u.copy(), l_hs, self.gamma_bar(), self.step_count,
                          list(self.newton_iterations))

    def report(self) -> TimingReport:
        secs = []
        for w in self.workers:
            d = {c: w.timer.get(c) for c in COMPONENTS if c != "total"}
            d["total"] = sum(d.values()) + w.comm_seconds
            secs.append(d)
        return TimingReport(self.layout, secs, [w.memory.peak for w in self.workers],
                            list(self.comm.ghost_elements), [w.comm_seconds for w in self.workers],
                            dict(self.mail.bytes))
