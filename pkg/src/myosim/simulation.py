"""Run a scenario end to end, optionally recording a dataset."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleLayoutError, MyosimError
from .io import AttributeSpec, Dataset, DdMetadata, Quantized, RawF64
from .partition import PartitionLayout, factorize
from .runtime import ParallelSimulation, TimingReport
from .scenario import Scenario
from .splitting import WorldState, coupled_step, initial_world
from .timing import COMPONENTS, MemoryTracker, Timer

AP_THRESHOLD = -20.0  # mV


class ActivationClock:
    """First time each fiber node reaches the AP threshold, at 1D resolution."""

    def __init__(self, shape, threshold=AP_THRESHOLD):
        self.threshold = threshold
        self.times = np.full(shape, np.inf)

    def __call__(self, t, v):
        hit = (v >= self.threshold) & np.isinf(self.times)
        self.times[hit] = t

    def summary(self, mid_nodes, end_nodes=(0, -1)) -> dict:
        mid = self.times[:, list(mid_nodes)].min(axis=1)
        ends = self.times[:, list(end_nodes)].min(axis=1)
        finite = lambda x: None if not np.isfinite(x) else float(x)
        return {"threshold_mv": self.threshold,
                "midpoint_first_ms": finite(mid.min()), "midpoint_last_ms": finite(mid.max()),
                "ends_first_ms": finite(ends.min()), "ends_last_ms": finite(ends.max()),
                "outward": bool(np.all(np.isfinite(mid)) and np.all(mid < ends))}


def _runs(index: np.ndarray):
    """Split sorted indices into ``(start, stop, offset)`` runs of consecutive values."""
    if index.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(index) != 1) + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [index.size]])
    return [(int(index[a]), int(index[b - 1]) + 1, int(a)) for a, b in zip(starts, stops)]


def _codec(name, attr, ranges):
    if name == "raw":
        return RawF64()
    lo, hi = ranges.get(attr, (-1.0, 1.0))
    return Quantized(int(name[1:]), lo, hi)


class Recorder:
    """Writes the recorded attributes of every ``every``-th mechanics step."""

    SEMANTICS = {"v_m": "nodal_fiber", "l_hs": "nodal_fiber", "gamma_bar": "element",
                 "displacement": "nodal_vector"}

    def __init__(self, path, scenario: Scenario, problem, n_steps: int, codec: str):
        out = scenario["output"]
        self.every = int(out["every"])
        self.names = list(out["attributes"])
        n_fn = problem.n_fibers * problem.layout.nodes_per_fiber
        counts = {"v_m": n_fn, "l_hs": n_fn, "gamma_bar": problem.muscle.n_elements,
                  "displacement": problem.muscle.n_dofs}
        attrs = [AttributeSpec(a, counts[a], _codec(codec, a, out["ranges"]), self.SEMANTICS[a])
                 for a in self.names]
        self.n_records = n_steps // self.every + 1
        self.ds = Dataset.create(path, attrs, self.n_records, problem.schedule.dt_3d * self.every,
                                 overwrite=True)
        muscle = problem.muscle
        self.ds.write_tid("fiber_reference_positions", problem.layout.reference_positions(muscle))
        self.ds.write_tid("gauss_point_positions", muscle.gauss_points())
        s = problem.layout.nodes_per_fiber
        self.ds.write_type_header({
            "v_m": {"unit": "mV", "shape": [problem.n_fibers, s]},
            "l_hs": {"unit": "um", "shape": [problem.n_fibers, s]},
            "gamma_bar": {"unit": "1", "shape": [muscle.n_elements]},
            "displacement": {"unit": "cm", "shape": [muscle.n_nodes, 3]},
            "mesh": {"elements": list(muscle.dims), "size": list(muscle.size)},
            "fibers": {"count": problem.n_fibers, "nodes_per_fiber": s},
            "scenario": scenario.config,
        })
        self.loads = []

    def due(self, step: int) -> bool:
        return step % self.every == 0

    def record_serial(self, step: int, world: WorldState, seconds: dict):
        idx = step // self.every
        fields = {"v_m": world.fibers.v, "l_hs": world.l_hs, "gamma_bar": world.gamma_bar,
                  "displacement": world.u}
        for a in self.names:
            self.ds.write_timestep(idx, a, np.ravel(fields[a]))
        self.loads.append({"step": step, "rank": 0, "seconds": seconds})

    def record_parallel(self, step: int, sim: ParallelSimulation):
        idx = step // self.every
        s = sim.problem.layout.nodes_per_fiber
        for w in sim.workers:
            for a in ("v_m", "l_hs"):
                if a in self.names:
                    data = w.v if a == "v_m" else w.l_hs
                    for i, f in enumerate(w.fibers):
                        base = int(f) * s
                        self.ds.write_timestep(idx, a, data[i], (base + w.j0, base + w.j1))
            if "gamma_bar" in self.names:
                for a, b, off in _runs(w.elements):
                    self.ds.write_timestep(idx, "gamma_bar", w.gamma_bar[off:off + b - a], (a, b))
            self.loads.append({"step": step, "rank": w.rank, "elements": int(len(w.elements)),
                               "seconds": {c: w.timer.get(c) for c in COMPONENTS if c != "total"}})
        # the Newton iteration and hence the displacement live on rank 0
        if "displacement" in self.names:
            self.ds.write_timestep(idx, "displacement", sim.u.ravel())

    def finish(self, layout: PartitionLayout, workers: list, seed):
        self.ds.write_dd(DdMetadata(layout.to_dict(), workers, self.loads, seed))
        self.ds.close()
        return self.ds


@dataclass
class RunResult:
    summary: dict
    world: WorldState
    report: TimingReport
    dataset: Dataset | None = None
    activation: ActivationClock | None = field(default=None, repr=False)


def choose_layout(scenario: Scenario) -> PartitionLayout:
    dims = scenario.muscle().dims
    if scenario.workers == 1:
        return PartitionLayout(dims, (1, 1, 1), scenario.strategy)
    try:
        return factorize(scenario.workers, dims, scenario.strategy)
    except InfeasibleLayoutError as exc:
        raise ConfigError(f"no {scenario.strategy} layout with {scenario.workers} workers on {dims}") from exc


def _with_phase(exc: MyosimError, phase: str) -> MyosimError:
    try:
        new = type(exc)(f"{phase}: {exc}")
    except TypeError:
        return exc
    new.__dict__.update(exc.__dict__)
    return new


def run_scenario(scenario: Scenario, out=None, workers=None, codec=None, scheme=None) -> RunResult:
    """Simulate ``scenario``; ``out``/``workers``/``codec``/``scheme`` override the config."""
    if workers is not None:
        scenario = scenario.override(**{"layout.workers": int(workers)})
    if scheme is not None:
        scenario = scenario.override(**{"schedule.scheme": scheme, "schedule.ode_method": None,
                                        "schedule.diffusion_method": None})
    out = out if out is not None else scenario["output"]["path"]
    codec = codec or scenario["output"]["codec"]
    problem = scenario.problem()
    sch = problem.schedule
    n_steps = int(round(scenario.t_end / sch.dt_3d))
    layout = choose_layout(scenario)
    s = problem.layout.nodes_per_fiber
    clock = ActivationClock((problem.n_fibers, s))
    rec = Recorder(out, scenario, problem, n_steps, codec) if out else None
    peak_v = np.zeros(1)
    peak_g = np.zeros(1)

    def observe(v, g):
        peak_v[0] = max(peak_v[0], float(np.max(np.abs(v))))
        peak_g[0] = max(peak_g[0], float(np.max(g)))

    t0 = time.perf_counter()
    phase = "setup"
    try:
        if layout.n_partitions == 1:
            world = initial_world(problem)
            timer = Timer()
            mem = MemoryTracker()
            mem.track("state", world.fibers.y, world.u, world.l_hs, world.gamma_bar)
            observe(world.fibers.v, world.gamma_bar)
            if rec:
                rec.record_serial(0, world, {})
            for step in range(1, n_steps + 1):
                phase = f"step {step} (t = {step * sch.dt_3d:g} ms)"
                coupled_step(world, problem, timer, on_1d=clock)
                observe(world.fibers.v, world.gamma_bar)
                if rec and rec.due(step):
                    rec.record_serial(step, world, timer.as_dict())
            secs = {c: timer.get(c) for c in COMPONENTS if c != "total"}
            secs["total"] = sum(secs.values())
            report = TimingReport(layout, [secs], [mem.peak], [0], [0.0], {})
            dd_workers = [{"rank": 0, "elements": list(range(problem.muscle.n_elements)),
                           "fibers": list(range(problem.n_fibers)), "segment": [0, s]}]
        else:
            sim = ParallelSimulation(problem, layout)
            observe(sim.gather_v(), sim.gamma_bar())
            if rec:
                rec.record_parallel(0, sim)
            for step in range(1, n_steps + 1):
                phase = f"step {step} (t = {step * sch.dt_3d:g} ms)"
                sim.coupled_step(on_1d=clock)
                observe(sim.gather_v(), sim.gamma_bar())
                if rec and rec.due(step):
                    rec.record_parallel(step, sim)
            world = sim.world()
            report = sim.report()
            dd_workers = [{"rank": w.rank, "elements": w.elements.tolist(), "fibers": w.fibers.tolist(),
                           "segment": [w.j0, w.j1]} for w in sim.workers]
    except MyosimError as exc:
        raise _with_phase(exc, phase) from exc
    wall = time.perf_counter() - t0
    ds = rec.finish(layout, dd_workers, scenario["seed"]) if rec else None
    its = world.newton_iterations or [0]
    summary = {
        "scenario": scenario["name"], "t_end_ms": scenario.t_end, "steps": n_steps,
        "scheme": sch.scheme, "workers": layout.n_partitions, "layout": list(layout.p),
        "peak_abs_v_m": peak_v[0], "peak_gamma_bar": peak_g[0],
        "newton": {"total": int(sum(its)), "max": int(max(its)), "mean": float(np.mean(its))},
        "activation": clock.summary(problem.fiber_mesh.midpoint_nodes()),
        "timing": {c: report.component(c) for c in COMPONENTS}, "wall_seconds": wall,
        "bytes_peak": int(max(report.bytes_peak)), "comm_bytes": dict(report.comm_bytes),
        "dataset": str(ds.path) if ds else None,
    }
    return RunResult(summary, world, report, ds, clock)

