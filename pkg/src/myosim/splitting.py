"""Operator splitting of the monodomain equation.

Simulation time is counted in integer ticks of ``dt_0d`` so that hand-off
times between the 0D, 1D and 3D levels are exact.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import fiber as fib
from .cell import CellParams, HodgkinHuxleyModel, StimulusProtocol, gamma_array
from .mechanics import MaterialParams, MuscleMesh, newton_solve
from .timing import NullTimer, Timer
from .transfer import (FiberLayout, build_embedding, half_sarcomere_lengths, homogenize_gamma,
                       interpolate_positions)

SCHEMES = ("godunov", "strang")
ODE_METHODS = ("euler", "heun")
DIFFUSION_METHODS = ("implicit_euler", "crank_nicolson")
_NULL = NullTimer()
_DEFAULTS = {"godunov": ("euler", "implicit_euler"), "strang": ("heun", "crank_nicolson")}


def _ratio(big, small, what):
    r = big / small
    n = int(round(r))
    if n < 1 or abs(n - r) > 1e-9 * max(1.0, r):
        raise ValueError(f"{what} must be a positive integer, got {r!r}")
    return n


@dataclass(frozen=True)
class SplittingSchedule:
    """``dt_3d = n * dt_1d`` and ``dt_1d = k * dt_0d`` (all in ms)."""

    dt_3d: float = 1.0
    dt_1d: float = 5e-4
    dt_0d: float = 1e-4
    scheme: str = "godunov"
    ode_method: str | None = None
    diffusion_method: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not (self.dt_0d > 0 and self.dt_1d > 0 and self.dt_3d > 0):
            raise ValueError("time steps must be positive")
        ode, diff = _DEFAULTS[self.scheme]
        if self.ode_method is None:
            object.__setattr__(self, "ode_method", ode)
        if self.diffusion_method is None:
            object.__setattr__(self, "diffusion_method", diff)
        if self.ode_method not in ODE_METHODS:
            raise ValueError(f"ode_method must be one of {ODE_METHODS}")
        if self.diffusion_method not in DIFFUSION_METHODS:
            raise ValueError(f"diffusion_method must be one of {DIFFUSION_METHODS}")
        _ratio(self.dt_3d, self.dt_1d, "dt_3d / dt_1d")
        k = _ratio(self.dt_1d, self.dt_0d, "dt_1d / dt_0d")
        if self.scheme == "strang" and k % 2:
            raise ValueError("strang splitting needs an even number of 0D sub-steps")

    @classmethod
    def godunov(cls, dt_1d=5e-4, k=5, dt_3d=1.0, **kw) -> "SplittingSchedule":
        return cls(dt_3d=dt_3d, dt_1d=dt_1d, dt_0d=dt_1d / k, scheme="godunov", **kw)

    @classmethod
    def strang(cls, dt_1d=2e-3, k=2, dt_3d=1.0, **kw) -> "SplittingSchedule":
        return cls(dt_3d=dt_3d, dt_1d=dt_1d, dt_0d=dt_1d / k, scheme="strang", **kw)

    @property
    def n(self) -> int:
        return _ratio(self.dt_3d, self.dt_1d, "dt_3d / dt_1d")

    @property
    def k(self) -> int:
        return _ratio(self.dt_1d, self.dt_0d, "dt_1d / dt_0d")

    @property
    def theta(self) -> float:
        return 1.0 if self.diffusion_method == "implicit_euler" else 0.5

    def ticks(self, t_ms: float) -> int:
        """Convert a time to 0D ticks; it must be a whole number of ticks."""
        return _ratio(t_ms, self.dt_0d, "t / dt_0d") if t_ms else 0

    def time(self, tick: int) -> float:
        return tick * self.dt_0d

    def with_(self, **kw) -> "SplittingSchedule":
        return replace(self, **kw)


@dataclass
class FiberState:
    """Cell states of a bundle of equally discretized fibers.

    ``y`` is ``(5, n_fibers * n_nodes)``; row 0 is V_m. ``tick`` counts 0D steps.
    """

    y: np.ndarray
    n_fibers: int = 1
    tick: int = 0

    @property
    def n_nodes(self) -> int:
        return self.y.shape[1] // self.n_fibers

    @property
    def v(self) -> np.ndarray:
        """V_m as an ``(n_fibers, n_nodes)`` view into ``y``."""
        return self.y[0].reshape(self.n_fibers, -1)

    def copy(self) -> "FiberState":
        return FiberState(self.y.copy(), self.n_fibers, self.tick)


def resting_fibers(model: HodgkinHuxleyModel, mesh: fib.FiberMesh, n_fibers=1) -> FiberState:
    return FiberState(model.initial_state(n_fibers * mesh.n_nodes), n_fibers)


def midpoint_mask(mesh: fib.FiberMesh, n_fibers=1) -> np.ndarray:
    """Boolean mask over the flattened nodes selecting every fiber's midpoint."""
    mask = np.zeros((n_fibers, mesh.n_nodes), dtype=bool)
    mask[:, mesh.midpoint_nodes()] = True
    return mask.ravel()


def advance_cells(model, y, tick, nsub, schedule, stimulus, mask, method):
    """``nsub`` 0D sub-steps from ``tick``, one kernel call per stimulus-constant run."""
    done = 0
    dt = schedule.dt_0d
    while done < nsub:
        on = stimulus is not None and stimulus.active(schedule.time(tick + done))
        run = 1
        while done + run < nsub and (stimulus is not None
                                     and stimulus.active(schedule.time(tick + done + run))) == on:
            run += 1
        i_stim = stimulus.amplitude * mask if on else 0.0
        model.advance(y, i_stim, dt, run, method)
        done += run


Diffuser = Callable[[np.ndarray, float, float], np.ndarray]


def serial_diffuser(mesh: fib.FiberMesh, solver="thomas", rel_tol=1e-5) -> Diffuser:
    """Return ``diffuse(v, dt, theta)`` that solves all fibers of ``v`` independently."""
    coeffs = fib.node_coefficients(mesh)
    scale = 1.0 / (mesh.a_m * mesh.c_m)

    def diffuse(v, dt, theta):
        sub, diag, sup, rhs = fib.diffusion_rows(coeffs, v, dt, scale, theta)
        if solver == "thomas":
            return fib.kernels.thomas_batch(sub, diag, sup, rhs)
        return np.stack([fib.linear_solve(fib.TridiagonalSystem(sub[i], diag[i], sup[i], rhs[i]),
                                          solver, rel_tol, x0=v[i]) for i in range(v.shape[0])])

    return diffuse


def _diffuse_into(state, diffuse, dt, theta, timer):
    with timer.section("solver_1d"):
        v = state.v
        v[...] = diffuse(v, dt, theta)


def _cells(model, state, tick, nsub, schedule, stimulus, mask, timer):
    with timer.section("solver_0d"):
        advance_cells(model, state.y, tick, nsub, schedule, stimulus, mask, schedule.ode_method)


def _check(schedule, scheme):
    if schedule.scheme != scheme:
        raise ValueError(f"schedule is {schedule.scheme!r}, expected {scheme!r}")


def godunov_1d_step(state: FiberState, schedule: SplittingSchedule, mesh: fib.FiberMesh,
                    stimulus: StimulusProtocol | None, model: HodgkinHuxleyModel | None = None,
                    mask: np.ndarray | None = None, diffuse: Diffuser | None = None,
                    timer: Timer | None = None) -> FiberState:
    """K explicit 0D sub-steps on every node, then one diffusion step of ``dt_1d``.

    Updates ``state`` in place and returns it.
    """
    _check(schedule, "godunov")
    model = model or HodgkinHuxleyModel()
    mask = midpoint_mask(mesh, state.n_fibers) if mask is None else mask
    diffuse = diffuse or serial_diffuser(mesh)
    timer = timer or _NULL
    k = schedule.k
    _cells(model, state, state.tick, k, schedule, stimulus, mask, timer)
    _diffuse_into(state, diffuse, schedule.dt_1d, schedule.theta, timer)
    state.tick += k
    return state


def strang_1d_step(state: FiberState, schedule: SplittingSchedule, mesh: fib.FiberMesh,
                   stimulus: StimulusProtocol | None, model: HodgkinHuxleyModel | None = None,
                   mask: np.ndarray | None = None, diffuse: Diffuser | None = None,
                   timer: Timer | None = None) -> FiberState:
    """K/2 0D sub-steps, a full ``dt_1d`` diffusion step, then K/2 more sub-steps."""
    _check(schedule, "strang")
    model = model or HodgkinHuxleyModel()
    mask = midpoint_mask(mesh, state.n_fibers) if mask is None else mask
    diffuse = diffuse or serial_diffuser(mesh)
    timer = timer or _NULL
    half = schedule.k // 2
    _cells(model, state, state.tick, half, schedule, stimulus, mask, timer)
    _diffuse_into(state, diffuse, schedule.dt_1d, schedule.theta, timer)
    _cells(model, state, state.tick + half, half, schedule, stimulus, mask, timer)
    state.tick += schedule.k
    return state


def step_1d(state, schedule, mesh, stimulus, **kw) -> FiberState:
    fn = godunov_1d_step if schedule.scheme == "godunov" else strang_1d_step
    return fn(state, schedule, mesh, stimulus, **kw)


def run_1d(state, schedule, mesh, stimulus, t_end, **kw) -> FiberState:
    """Advance the fiber bundle to ``t_end`` (a multiple of ``dt_1d``)."""
    kw.setdefault("model", HodgkinHuxleyModel())
    kw.setdefault("mask", midpoint_mask(mesh, state.n_fibers))
    kw.setdefault("diffuse", serial_diffuser(mesh))
    steps = _ratio(t_end - schedule.time(state.tick), schedule.dt_1d, "remaining time / dt_1d") \
        if t_end > schedule.time(state.tick) else 0
    for _ in range(steps):
        step_1d(state, schedule, mesh, stimulus, **kw)
    return state


@dataclass
class CoupledProblem:
    """Everything a coupled step needs besides the evolving state.

    Built once per scenario; the derived fields are filled in on construction.
    """

    muscle: MuscleMesh
    layout: FiberLayout
    schedule: SplittingSchedule
    stimulus: StimulusProtocol | None
    cell: CellParams
    material: MaterialParams
    sigma_eff: float = 3.828
    a_m: float = 500.0
    solver: str = "thomas"
    newton: dict | None = None

    def __post_init__(self):
        self.fiber_mesh = fib.FiberMesh(
            np.linspace(0.0, self.muscle.size[0], self.layout.nodes_per_fiber),
            sigma_eff=self.sigma_eff, a_m=self.a_m, c_m=self.cell.c_m)
        self.n_fibers = self.layout.n_fibers(self.muscle)
        self.model = HodgkinHuxleyModel(self.cell)
        self.mask = midpoint_mask(self.fiber_mesh, self.n_fibers)
        self.diffuse = serial_diffuser(self.fiber_mesh, self.solver)
        self.emap = build_embedding(self.muscle, self.layout)
        self.h_ref = self.layout.node_spacing(self.muscle)
        self.newton = dict(self.newton or {})


@dataclass
class WorldState:
    fibers: FiberState
    u: np.ndarray
    l_hs: np.ndarray
    gamma_bar: np.ndarray
    step: int = 0
    newton_iterations: list | None = None

    def copy(self) -> "WorldState":
        return WorldState(self.fibers.copy(), self.u.copy(), self.l_hs.copy(), self.gamma_bar.copy(),
                          self.step, list(self.newton_iterations or []))


def initial_world(problem: CoupledProblem) -> WorldState:
    """Resting cells, reference configuration, ``l_hs = l_opt``, zero activation."""
    fibers = resting_fibers(problem.model, problem.fiber_mesh, problem.n_fibers)
    l_hs = np.full((problem.n_fibers, problem.layout.nodes_per_fiber), problem.cell.l_opt)
    return WorldState(fibers, problem.muscle.zero_displacement(), l_hs,
                      np.zeros(problem.muscle.n_elements), 0, [])


def coupled_step(world: WorldState, problem: CoupledProblem, timer: Timer | None = None,
                 on_1d: Callable | None = None) -> WorldState:
    """One ``dt_3d`` step: N 1D steps, activation, homogenization, Newton solve, new ``l_hs``.

    The activation uses the ``l_hs`` from the previous mechanics step. Updates
    ``world`` in place and returns it. ``on_1d(t, v)`` sees the ``(F, s)``
    potentials after every 1D step.
    """
    timer = timer or _NULL
    sch = problem.schedule
    kw = dict(model=problem.model, mask=problem.mask, diffuse=problem.diffuse, timer=timer)
    for _ in range(sch.n):
        step_1d(world.fibers, sch, problem.fiber_mesh, problem.stimulus, **kw)
        if on_1d is not None:
            on_1d(sch.time(world.fibers.tick), world.fibers.v)
    with timer.section("homogenization"):
        g = gamma_array(world.fibers.y[4], world.l_hs.ravel(), problem.cell)
        world.gamma_bar = homogenize_gamma(g, problem.emap)
    with timer.section("solver_3d"):
        res = newton_solve(world.u, world.gamma_bar, problem.muscle, problem.material, **problem.newton)
    world.u = res.u
    world.newton_iterations.append(res.iterations)
    with timer.section("interpolation"):
        pos = interpolate_positions(world.u, problem.emap, problem.muscle)
        world.l_hs = half_sarcomere_lengths(pos, problem.h_ref, problem.cell.l_opt)
    world.step += 1
    return world
