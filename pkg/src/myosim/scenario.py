"""Scenario configuration: a nested YAML document with every default built in.

An empty document describes the isometric single twitch of a 1 cm cube with
2x2x2 elements and 6x6 fibers. Unknown keys are rejected so typos surface as
configuration errors instead of silently using defaults.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .cell import CellParams, StimulusProtocol
from .errors import ConfigError
from .mechanics import DEFAULT_FIXED, MaterialParams, MuscleMesh
from .partition import STRATEGIES
from .splitting import CoupledProblem, SplittingSchedule
from .transfer import FiberLayout

ATTRIBUTES = ("v_m", "gamma_bar", "displacement", "l_hs")
CODECS = ("raw", "q8", "q16")
# quantizer ranges per attribute; values outside raise a quantization error
DEFAULT_RANGES = {"v_m": [-100.0, 50.0], "gamma_bar": [0.0, 1.0], "displacement": [-0.05, 0.05],
                  "l_hs": [0.5, 2.0]}

DEFAULTS = {
    "name": "isometric_twitch",
    "t_end": 10.0,
    "seed": None,
    "domain": {"size": [1.0, 1.0, 1.0], "elements": [2, 2, 2], "fixed_faces": list(DEFAULT_FIXED),
               "fiber_direction": [1.0, 0.0, 0.0]},
    "fibers": {"per_element": [3, 3], "nodes_per_fiber": 31, "sigma_eff": 3.828, "a_m": 500.0,
               "solver": "thomas"},
    "schedule": {"scheme": "godunov", "dt_3d": 1.0, "dt_1d": 5e-4, "dt_0d": 1e-4,
                 "ode_method": None, "diffusion_method": None},
    "stimulus": {"amplitude": 1200.0, "t_on": 0.0, "t_off": 0.1},
    "material": {},
    "cell": {},
    "newton": {"rel_tol": 1e-8, "abs_tol": 1e-8, "max_iter": 50},
    "layout": {"strategy": "cubic", "workers": 1},
    "output": {"path": None, "codec": "raw", "attributes": list(ATTRIBUTES), "every": 1,
               "ranges": copy.deepcopy(DEFAULT_RANGES)},
}


def _merge(base: dict, override: dict, where="") -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and k not in ("material", "cell", "ranges"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        elif k in ("material", "cell", "ranges"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a mapping")
            out[k].update(v)
        else:
            out[k] = v
    return out


@dataclass
class Scenario:
    config: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.config = _merge(DEFAULTS, self.config)
        try:
            self._check()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    # construction ------------------------------------------------------------
    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping at the top level")
        return cls(data)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_yaml(text)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.config, sort_keys=True)

    def override(self, **changes) -> "Scenario":
        """Copy with dotted-path overrides, e.g. ``override(**{"layout.workers": 8})``."""
        cfg = copy.deepcopy(self.config)
        for path, value in changes.items():
            node = cfg
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return Scenario(cfg)

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.config == other.config

    # typed views -------------------------------------------------------------
    def __getitem__(self, key):
        return self.config[key]

    @property
    def workers(self) -> int:
        return int(self.config["layout"]["workers"])

    @property
    def strategy(self) -> str:
        return self.config["layout"]["strategy"]

    @property
    def t_end(self) -> float:
        return float(self.config["t_end"])

    def schedule(self) -> SplittingSchedule:
        s = self.config["schedule"]
        return SplittingSchedule(float(s["dt_3d"]), float(s["dt_1d"]), float(s["dt_0d"]), s["scheme"],
                                 s["ode_method"], s["diffusion_method"])

    def muscle(self) -> MuscleMesh:
        d = self.config["domain"]
        return MuscleMesh(*(int(e) for e in d["elements"]), size=tuple(float(x) for x in d["size"]),
                          a0=tuple(float(x) for x in d["fiber_direction"]),
                          fixed_faces=tuple(d["fixed_faces"]))

    def fiber_layout(self) -> FiberLayout:
        f = self.config["fibers"]
        ny, nz = (int(x) for x in f["per_element"])
        return FiberLayout(ny, nz, int(f["nodes_per_fiber"]))

    def stimulus(self) -> StimulusProtocol:
        s = self.config["stimulus"]
        return StimulusProtocol(float(s["amplitude"]), float(s["t_on"]), float(s["t_off"]))

    def cell(self) -> CellParams:
        return CellParams(**self.config["cell"])

    def material(self) -> MaterialParams:
        return MaterialParams(**self.config["material"])

    def problem(self) -> CoupledProblem:
        f = self.config["fibers"]
        return CoupledProblem(self.muscle(), self.fiber_layout(), self.schedule(), self.stimulus(), self.cell(),
                              self.material(), float(f["sigma_eff"]), float(f["a_m"]), f["solver"],
                              dict(self.config["newton"]))

    def _check(self):
        cfg = self.config
        if cfg["t_end"] <= 0:
            raise ConfigError("t_end must be positive")
        sch = self.schedule()
        steps = cfg["t_end"] / sch.dt_3d
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("t_end must be a whole number of dt_3d steps")
        if len(cfg["domain"]["size"]) != 3 or len(cfg["domain"]["elements"]) != 3:
            raise ConfigError("domain size and elements need three entries")
        if len(cfg["fibers"]["per_element"]) != 2:
            raise ConfigError("fibers.per_element needs two entries (y, z)")
        self.muscle()
        self.fiber_layout()
        self.stimulus()
        self.cell()
        self.material()
        if cfg["fibers"]["solver"] not in ("thomas", "cg", "gmres"):
            raise ConfigError(f"unknown fiber solver {cfg['fibers']['solver']!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"layout.strategy must be one of {STRATEGIES}")
        if self.workers < 1:
            raise ConfigError("layout.workers must be >= 1")
        out = cfg["output"]
        if out["codec"] not in CODECS:
            raise ConfigError(f"output.codec must be one of {CODECS}")
        bad = set(out["attributes"]) - set(ATTRIBUTES)
        if bad:
            raise ConfigError(f"unknown output attributes {sorted(bad)}")
        if int(out["every"]) < 1:
            raise ConfigError("output.every must be >= 1")
        for k, r in out["ranges"].items():
            if len(r) != 2 or not r[0] < r[1]:
                raise ConfigError(f"output.ranges.{k} needs [min, max] with min < max")
