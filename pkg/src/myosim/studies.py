"""Experiment drivers producing one table row per configuration.

Every study returns a :class:`Table`; tables are written as CSV and, for
archival, as single-timestep datasets of their numeric columns.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import CellParams, HodgkinHuxleyModel, StimulusProtocol
from .errors import InfeasibleLayoutError
from .fiber import SOLVERS, FiberMesh, TridiagonalSystem, diffusion_rows, linear_solve, node_coefficients
from .io import write_table
from .mechanics import MaterialParams, MuscleMesh
from .partition import boundary_metrics, factorize, sweep
from .runtime import GHOST_BYTES, ParallelSimulation, build_halo_plan
from .splitting import CoupledProblem, SplittingSchedule, resting_fibers, run_1d
from .transfer import FiberLayout

KINDS = ("ode_convergence", "splitting_convergence", "solver_comparison", "partition_sweep", "weak_scaling")
TIMING_COLUMNS = ("experiment", "workers", "p_x", "p_y", "p_z", "component", "seconds", "bytes_peak",
                  "ghost_elements_avg")


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            self.write_csv(fh)

    def to_dataset(self, path):
        numeric = {}
        for i, c in enumerate(self.columns):
            vals = [r[i] for r in self.rows]
            if vals and all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
                            for v in vals):
                numeric[c] = np.asarray(vals, dtype=float)
        return write_table(path, numeric)


def loglog_slope(h, err, floor=1e-12) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)``, ignoring errors at round-off level."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = err > floor
    if keep.sum() < 2:
        raise ValueError("need at least two errors above the floor to fit a slope")
    return float(np.polyfit(np.log(h[keep]), np.log(err[keep]), 1)[0])


def best_time(fn, repeats=5) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


# 0D ---------------------------------------------------------------------------
def _cell_run(model, k, method, t_end, amplitude, n_cells=1):
    y = model.initial_state(n_cells)
    model.advance(y, amplitude, t_end / k, k, method)
    return y


def ode_convergence(ks=tuple(2 ** i for i in range(12)), t_end=5e-4, ref_k=4096, amplitude=1200.0,
                    params=None) -> Table:
    """Stimulated single cell on ``[0, t_end]``: relative error of ``V_m`` against Heun with ``ref_k`` steps."""
    model = HodgkinHuxleyModel(params)
    ref = _cell_run(model, ref_k, "heun", t_end, amplitude)[0, 0]
    t = Table("ode_convergence", ["k", "dt_0d", "euler_error", "heun_error"])
    for k in ks:
        e = abs(_cell_run(model, k, "euler", t_end, amplitude)[0, 0] - ref) / abs(ref)
        h = abs(_cell_run(model, k, "heun", t_end, amplitude)[0, 0] - ref) / abs(ref)
        t.rows.append([int(k), t_end / k, float(e), float(h)])
    dt = t.column("dt_0d")
    t.meta = {"euler_slope": loglog_slope(dt, t.column("euler_error")),
              "heun_slope": loglog_slope(dt, t.column("heun_error")), "reference_v": float(ref)}
    return t


def ode_matched_cost(euler_k=50, heun_k=2, t_end=5e-4, amplitude=1200.0, n_cells=20000, repeats=7) -> dict:
    """Errors and best-of wall times of two 0D configurations on a batch of cells."""
    model = HodgkinHuxleyModel()
    ref = _cell_run(model, 4096, "heun", t_end, amplitude)[0, 0]
    err = lambda k, m: float(abs(_cell_run(model, k, m, t_end, amplitude)[0, 0] - ref) / abs(ref))
    te = best_time(lambda: _cell_run(model, euler_k, "euler", t_end, amplitude, n_cells), repeats)
    th = best_time(lambda: _cell_run(model, heun_k, "heun", t_end, amplitude, n_cells), repeats)
    return {"euler_error": err(euler_k, "euler"), "heun_error": err(heun_k, "heun"),
            "euler_seconds": te, "heun_seconds": th, "speedup": te / th}


# 1D ---------------------------------------------------------------------------
def _fiber_run(schedule, mesh, t_end, n_fibers=1, stimulus=None):
    model = HodgkinHuxleyModel()
    state = resting_fibers(model, mesh, n_fibers)
    run_1d(state, schedule, mesh, stimulus or StimulusProtocol(), t_end, model=model)
    return state


def _schedules(dt_1d, t_end):
    return (SplittingSchedule.godunov(dt_1d, 5, dt_3d=t_end), SplittingSchedule.strang(dt_1d, 2, dt_3d=t_end))


def splitting_convergence(dt_1ds=(5e-4, 1e-3, 2e-3, 4e-3), t_end=0.1, ref_dt_1d=2.5e-4, nodes=31) -> Table:
    """One stimulated fiber: relative midpoint ``V_m`` error at ``t_end`` for both schemes.

    Godunov sub-steps the cells five times per 1D step with Euler, Strang
    twice with Heun; the reference is Strang with ``ref_dt_1d``.
    """
    mesh = FiberMesh.uniform(nodes)
    mid = mesh.midpoint_nodes()[0]
    ref = _fiber_run(SplittingSchedule.strang(ref_dt_1d, 2, dt_3d=t_end), mesh, t_end).v[0, mid]
    t = Table("splitting_convergence", ["dt_1d", "godunov_error", "strang_error"])
    for d in dt_1ds:
        g, s = (_fiber_run(sch, mesh, t_end).v[0, mid] for sch in _schedules(d, t_end))
        t.rows.append([d, float(abs(g - ref) / abs(ref)), float(abs(s - ref) / abs(ref))])
    dt = t.column("dt_1d")
    t.meta = {"godunov_slope": loglog_slope(dt, t.column("godunov_error")),
              "strang_slope": loglog_slope(dt, t.column("strang_error")), "reference_v": float(ref)}
    return t


def splitting_matched_cost(godunov_dt=5e-4, strang_dt=2e-3, t_end=0.1, nodes=31, n_fibers=36, repeats=3,
                           ref_dt_1d=2.5e-4) -> dict:
    """Midpoint errors and best-of wall time of the whole 1D pipeline on a fiber bundle."""
    mesh = FiberMesh.uniform(nodes)
    mid = mesh.midpoint_nodes()[0]
    ref = _fiber_run(SplittingSchedule.strang(ref_dt_1d, 2, dt_3d=t_end), mesh, t_end).v[0, mid]
    g_sch = SplittingSchedule.godunov(godunov_dt, 5, dt_3d=t_end)
    s_sch = SplittingSchedule.strang(strang_dt, 2, dt_3d=t_end)
    g = _fiber_run(g_sch, mesh, t_end, n_fibers).v[:, mid]
    s = _fiber_run(s_sch, mesh, t_end, n_fibers).v[:, mid]
    tg = best_time(lambda: _fiber_run(g_sch, mesh, t_end, n_fibers), repeats)
    ts = best_time(lambda: _fiber_run(s_sch, mesh, t_end, n_fibers), repeats)
    return {"godunov_error": float(np.max(np.abs(g - ref))), "strang_error": float(np.max(np.abs(s - ref))),
            "godunov_seconds": tg, "strang_seconds": ts, "speedup": tg / ts}


def fiber_system(n, dt=5e-4, length=1.0):
    """Implicit-Euler system of an ``n``-node fiber carrying a Gaussian depolarization."""
    mesh = FiberMesh.uniform(n, length)
    x = mesh.node_x / length
    v = -75.0 + 80.0 * np.exp(-((x - 0.5) / 0.05) ** 2)
    sub, diag, sup, rhs = diffusion_rows(node_coefficients(mesh), v, dt, 1.0 / (mesh.a_m * mesh.c_m), 1.0)
    return TridiagonalSystem(sub, diag, sup, rhs), v


def solver_comparison(sizes=(100, 1000, 10000, 100000), rel_tol=1e-5, repeats=5, agree_tol=1e-11,
                      check_agreement=True) -> Table:
    """Best-of wall times at ``rel_tol`` (warm start from the previous potential).

    ``*_diff`` columns are max-abs differences to the direct solution after
    solving again at ``agree_tol``; NaN when the check is skipped.
    """
    t = Table("solver_comparison", ["n", "thomas_seconds", "cg_seconds", "gmres_seconds", "cg_diff",
                                    "gmres_diff"])
    for n in sizes:
        sys_, v = fiber_system(int(n))
        secs = {m: best_time(lambda m=m: linear_solve(sys_, m, rel_tol, x0=v), repeats) for m in SOLVERS}
        diffs = {}
        ref = linear_solve(sys_, "thomas")
        for m in ("cg", "gmres"):
            diffs[m] = (float(np.max(np.abs(linear_solve(sys_, m, agree_tol, x0=v) - ref)))
                        if check_agreement else float("nan"))
        t.rows.append([int(n), secs["thomas"], secs["cg"], secs["gmres"], diffs["cg"], diffs["gmres"]])
    return t


def affine_fit(n, seconds) -> dict:
    """Least-squares ``seconds ~ a + b n`` weighted by relative error; returns worst relative deviation."""
    n = np.asarray(n, dtype=float)
    s = np.asarray(seconds, dtype=float)
    a_mat = np.stack([np.ones_like(n), n], axis=1) / s[:, None]
    (a, b), *_ = np.linalg.lstsq(a_mat, np.ones_like(s), rcond=None)
    pred = a + b * n
    return {"intercept": float(a), "slope": float(b), "max_rel_dev": float(np.max(np.abs(pred - s) / s))}


# partitioning -----------------------------------------------------------------
def partition_sweep(n_proc=36, dims=(36, 6, 6), fibers=(1, 1), atomic=(1, 1, 1)) -> Table:
    """Every exact factorization of ``n_proc`` on ``dims``, sorted by average boundary area.

    Ties are ordered like the cubic planner: balanced y/z subdivisions first.
    ``atomic`` is the smallest admissible block per axis.
    """
    muscle = MuscleMesh(*dims, size=tuple(float(d) for d in dims))
    flayout = FiberLayout(*fibers, nodes_per_fiber=2 * dims[0] + 1)
    nf = flayout.n_fibers(muscle)
    t = Table("partition_sweep", ["p_x", "p_y", "p_z", "block_x", "block_y", "block_z", "total_area",
                                  "average_area", "ghost_elements_avg", "halo_bytes", "interface_bytes",
                                  "fiber_cuts"])
    for lay in sweep(n_proc, dims, tuple(atomic)):
        cm = boundary_metrics(lay, nf)
        plan = build_halo_plan(lay, muscle, flayout)
        t.rows.append([*lay.p, *lay.block_size, cm.total_area, cm.average_area, cm.ghost_elements_avg,
                       plan.volume("displacement", GHOST_BYTES), plan.volume("v_m-interface", 8),
                       cm.fiber_cuts])
    t.rows.sort(key=lambda r: (r[7], max(r[1:3]) / min(r[1:3]), r[:3]))
    return t


# scaling -----------------------------------------------------------------------
DEFAULT_LADDER = ((1, (2, 2, 2)), (2, (4, 2, 2)), (4, (4, 4, 2)), (8, (4, 4, 4)))


def scaled_problem(dims, t_end=0.1, element_size=0.5, per_element=(3, 3), nodes_per_element=15):
    muscle = MuscleMesh(*dims, size=tuple(element_size * d for d in dims))
    flayout = FiberLayout(*per_element, nodes_per_fiber=nodes_per_element * dims[0] + 1)
    return CoupledProblem(muscle, flayout, SplittingSchedule(dt_3d=t_end), StimulusProtocol(), CellParams(),
                          MaterialParams())


def run_scaling_experiment(ladder=DEFAULT_LADDER, strategy="cubic", t_end=0.1, experiment="weak_scaling"):
    """Run each ``(workers, dims)`` row; returns the timing table and the skipped rows."""
    t = Table(experiment, list(TIMING_COLUMNS))
    reports, skipped = [], []
    for workers, dims in ladder:
        try:
            layout = factorize(int(workers), dims, strategy)
        except InfeasibleLayoutError as exc:
            skipped.append({"workers": workers, "dims": list(dims), "reason": str(exc)})
            continue
        sim = ParallelSimulation(scaled_problem(dims, t_end), layout)
        sim.run(t_end)
        rep = sim.report()
        reports.append(rep)
        t.rows.extend(rep.rows(experiment))
    t.meta = {"skipped": skipped, "reports": reports}
    return t


def weak_scaling(**kw) -> Table:
    return run_scaling_experiment(**kw)


def run_study(kind: str, **kw) -> Table:
    if kind not in KINDS:
        raise ValueError(f"unknown study {kind!r}; choose from {KINDS}")
    return globals()[kind](**kw)
