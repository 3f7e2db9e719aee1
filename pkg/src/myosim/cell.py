"""0D membrane and activation dynamics.

The membrane is a Hodgkin-Huxley squid-axon model with the rate functions
written around a -75 mV resting potential. A first-order relaxation supplies
the post power-stroke cross-bridge fraction ``a2`` that drives activation.

Batched states are ``(5, n)`` float arrays with rows ``v, m, h, n, a2``
(see :data:`STATE_NAMES`); the single-cell API wraps them in
:class:`CellState`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import kernels
from ._kernels_py import hh_ionic, hh_rates
from ._kernels_py import hh_rhs as _hh_rhs_np
from .errors import DegenerateActivationError, IntegrationDivergedError, NonFiniteStateError

STATE_NAMES = ("v", "m", "h", "n", "a2")
N_STATES = len(STATE_NAMES)


@dataclass(frozen=True)
class CellParams:
    """Membrane, cross-bridge and force-length constants.

    ``a2_min=None`` resolves to the resting-state value of ``a2``, so the
    activation of a cell at rest is exactly zero.
    """

    c_m: float = 1.0  # uF/cm^2
    g_na: float = 120.0  # mS/cm^2
    g_k: float = 36.0
    g_l: float = 0.3
    e_na: float = 40.0  # mV
    e_k: float = -87.0
    e_l: float = -64.387
    v_half: float = -40.0
    k_a2: float = 5.0
    tau_a2: float = 20.0  # ms
    a2_min: float | None = None
    a2_max: float = 1.0
    l_opt: float = 1.1  # um
    fl_width: float = 0.5

    def __post_init__(self):
        if not self.c_m > 0:
            raise ValueError("c_m must be positive")
        if min(self.g_na, self.g_k, self.g_l) < 0:
            raise ValueError("conductances must be non-negative")
        if not self.k_a2 > 0:
            raise ValueError("k_a2 must be positive")
        if not self.tau_a2 > 0:
            raise ValueError("tau_a2 must be positive")
        if not self.l_opt > 0:
            raise ValueError("l_opt must be positive")
        if not 0 < self.fl_width < 1:
            raise ValueError("fl_width must lie in (0, 1)")
        if self.a2_min is None:
            object.__setattr__(self, "a2_min", float(_resting_vector(self)[4]))

    def vector(self) -> np.ndarray:
        """Parameters in kernel order."""
        return np.array([getattr(self, k) for k in kernels._kernels_py.PARAM_ORDER], dtype=np.float64)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class CellState:
    v_m: float
    gates: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.v_m, *np.asarray(self.gates, dtype=float), self.a2])

    @classmethod
    def from_array(cls, y) -> "CellState":
        y = np.asarray(y, dtype=float).reshape(N_STATES)
        return cls(float(y[0]), y[1:4].copy(), float(y[4]))

    def __eq__(self, other):
        if not isinstance(other, CellState):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())


@dataclass(frozen=True)
class StimulusProtocol:
    """Rectangular current pulse applied to fiber midpoints."""

    amplitude: float = 1200.0  # uA/cm^2
    t_on: float = 0.0  # ms
    t_off: float = 0.1
    target: str = "midpoint"

    def __post_init__(self):
        if self.t_off < self.t_on:
            raise ValueError("stimulus window must satisfy t_off >= t_on")
        if self.amplitude < 0:
            raise ValueError("stimulus amplitude must be non-negative")

    def active(self, t: float, eps: float = 1e-12) -> bool:
        return self.t_on - eps <= t < self.t_off - eps

    def current(self, t: float) -> float:
        return self.amplitude if self.active(t) else 0.0


def _gate_inf(v):
    am, bm, ah, bh, an, bn = hh_rates(np.asarray(v, dtype=float))
    return am / (am + bm), ah / (ah + bh), an / (an + bn)


def _a2_inf(v, params):
    return 1.0 / (1.0 + np.exp(-(v - params.v_half) / params.k_a2))


def _resting_vector(params) -> np.ndarray:
    p = np.array([getattr(params, k) for k in kernels._kernels_py.PARAM_ORDER])

    def current(v):
        m, h, n = _gate_inf(v)
        return float(hh_ionic(np.array([v, m, h, n]), 0.0, p))

    v = brentq(current, -100.0, -50.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    m, h, n = _gate_inf(v)
    return np.array([v, m, h, n, _a2_inf(v, params)], dtype=float)


def resting_state(params: CellParams | None = None) -> CellState:
    """Fixed point of the unstimulated model (gates at steady state, zero net current)."""
    return CellState.from_array(_resting_vector(params or CellParams()))


def _check_finite(y):
    if not np.all(np.isfinite(y)):
        raise NonFiniteStateError()


def ionic_current(state: CellState, params: CellParams, i_stim: float = 0.0) -> float:
    """Total transmembrane ionic current; the stimulus enters with a minus sign."""
    y = state.as_array()
    _check_finite(y)
    return float(hh_ionic(y, i_stim, params.vector()))


def cell_rhs(state: CellState, params: CellParams, i_stim: float = 0.0) -> CellState:
    """Time derivative of every state component, packed as a CellState."""
    y = state.as_array()
    _check_finite(y)
    return CellState.from_array(_hh_rhs_np(y.reshape(N_STATES, 1), i_stim, params.vector())[:, 0])


RhsHook = Callable[[np.ndarray], np.ndarray]


def _rhs_array(y, params, i_stim, rhs):
    if rhs is not None:
        return np.asarray(rhs(y), dtype=float)
    return _hh_rhs_np(y.reshape(N_STATES, 1), i_stim, params.vector())[:, 0]


def _as_vector(state):
    return state.as_array() if isinstance(state, CellState) else np.asarray(state, dtype=float)


def _wrap(like, y):
    if not np.all(np.isfinite(y)):
        raise IntegrationDivergedError()
    return CellState.from_array(y) if isinstance(like, CellState) else y


def euler_step(state, dt: float, params: CellParams | None = None, i_stim: float = 0.0,
               rhs: RhsHook | None = None):
    """One explicit Euler step. ``rhs`` replaces the cell model (test hook)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = _as_vector(state)
    _check_finite(y)
    return _wrap(state, y + dt * _rhs_array(y, params, i_stim, rhs))


def heun_step(state, dt: float, params: CellParams | None = None, i_stim: float = 0.0,
              rhs: RhsHook | None = None):
    """One Heun step: Euler predictor, trapezoidal corrector."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = _as_vector(state)
    _check_finite(y)
    f0 = _rhs_array(y, params, i_stim, rhs)
    pre = y + dt * f0
    f1 = _rhs_array(pre, params, i_stim, rhs)
    return _wrap(state, y + 0.5 * dt * (f0 + f1))


def force_length(l_hs, params: CellParams):
    """Piecewise-linear tent peaking at ``l_opt``."""
    l_hs = np.asarray(l_hs, dtype=float)
    return np.maximum(0.0, 1.0 - np.abs(l_hs - params.l_opt) / (params.fl_width * params.l_opt))


def gamma_array(a2, l_hs, params: CellParams) -> np.ndarray:
    """Vectorised activation for arrays of ``a2`` and ``l_hs``."""
    span = params.a2_max - params.a2_min
    if span == 0:
        raise DegenerateActivationError()
    frac = (np.asarray(a2, dtype=float) - params.a2_min) / span
    return np.clip(force_length(l_hs, params) * frac, 0.0, 1.0)


def gamma(state: CellState, l_hs: float, params: CellParams) -> float:
    if not l_hs > 0:
        raise ValueError("l_hs must be positive")
    return float(gamma_array(state.a2, l_hs, params))


class HodgkinHuxleyModel:
    """Batched cell model used by the fiber solvers.

    Any replacement model needs the same surface: ``state_names``,
    ``initial_state(n)``, ``rhs``, ``ionic_current`` and ``advance``.
    """

    state_names = STATE_NAMES

    def __init__(self, params: CellParams | None = None):
        self.params = params or CellParams()
        self._p = self.params.vector()
        self._rest = _resting_vector(self.params)

    def initial_state(self, n: int) -> np.ndarray:
        return np.ascontiguousarray(np.repeat(self._rest[:, None], n, axis=1))

    def rhs(self, y, i_stim=0.0):
        return _hh_rhs_np(y, i_stim, self._p)

    def ionic_current(self, y, i_stim=0.0):
        return hh_ionic(y, i_stim, self._p)

    def advance(self, y, i_stim, dt, nsteps, method="euler"):
        """In-place sub-stepping of every column of ``y``."""
        if nsteps <= 0:
            return y
        if method not in ("euler", "heun"):
            raise ValueError(f"unknown ODE method {method!r}")
        kernels.hh_advance(y, i_stim, float(dt), int(nsteps), method == "heun", self._p)
        if not np.all(np.isfinite(y)):
            raise IntegrationDivergedError()
        return y

    def with_params(self, **kw) -> "HodgkinHuxleyModel":
        return HodgkinHuxleyModel(replace(self.params, **kw))
