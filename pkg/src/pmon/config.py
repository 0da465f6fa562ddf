"""Experiment configuration: JSON layout, validation, overrides, round-trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .descent import DescentSettings
from .errors import ConfigurationError
from .model import MissionConfig, lattice_grid
from .search import CscSettings, StochasticGrowthSpec
from .simulator import IntegratorOptions
from .tpbvp import TpbvpSettings
from .trajectory import B_MIN, EllipseParams

MODES = ("simulate", "optimize", "csc", "tpbvp", "compare-lin-ellipse", "grad-check")
SEED_ENV = "PMON_SEED"


class ConfigParseError(ConfigurationError):
    """The configuration text is not valid JSON (or an override is malformed)."""


def default_agents(config: MissionConfig) -> list[EllipseParams]:
    """Thin near-linear ellipses, one centred in each vertical strip of the space."""
    N = config.N
    if N == 0:
        return []
    w = config.L1 / N
    a = min(0.4 * w, 0.4 * config.L2)
    b = min(0.2, a)
    return [
        EllipseParams(X=(n + 0.5) * w, Y=config.L2 / 2, a=a, b=b, phi=0.0, rho0=float(np.pi * (n % 2)))
        for n in range(N)
    ]


# -- blocks ---------------------------------------------------------------------

MISSION_KEYS = ("L1", "L2", "A", "B", "R0", "r", "T", "N", "C", "grid_points")


def mission_from_dict(d: dict) -> MissionConfig:
    _check_keys(d, MISSION_KEYS, "mission")
    kw = dict(d)
    if "r" in kw and isinstance(kw["r"], list):
        kw["r"] = tuple(kw["r"])
    return MissionConfig(**kw)


def _compact(a: np.ndarray):
    a = np.asarray(a, dtype=float)
    if a.size and np.all(a == a.flat[0]):
        return float(a.flat[0])
    return a.tolist()


def mission_to_dict(m: MissionConfig) -> dict:
    d = {"L1": m.L1, "L2": m.L2, "A": _compact(m.A), "B": m.B, "R0": _compact(m.R0),
         "r": list(m.r) if isinstance(m.r, tuple) else m.r, "T": m.T, "N": m.N, "C": m.C}
    default = lattice_grid(m.L1, m.L2)
    if default.shape != m.grid_points.shape or not np.array_equal(default, m.grid_points):
        d["grid_points"] = m.grid_points.tolist()
    return d


def _check_keys(d: Any, allowed, block: str) -> None:
    if not isinstance(d, dict):
        raise ConfigurationError(f"block '{block}' must be an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigurationError(f"unknown field(s) in '{block}': {', '.join(extra)}")


def _dataclass_from(cls, d: dict | None, block: str):
    if d is None:
        return cls()
    _check_keys(d, [f.name for f in fields(cls)], block)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"block '{block}': {exc}") from exc


@dataclass(frozen=True)
class CscBlock:
    Q: int = 50
    mode: str = "deterministic"
    crn: bool = True
    sampling: str = "centers"
    shape: tuple = (5.0, 2.0, float(np.pi / 4), 0.0)   # a, b, phi, rho0 for centre-only sampling
    n_report_seeds: int = 5
    inner: DescentSettings = field(default_factory=lambda: CscSettings().descent)
    stochastic: StochasticGrowthSpec = field(default_factory=StochasticGrowthSpec)

    def __post_init__(self):
        if self.sampling not in ("centers", "full"):
            raise ConfigurationError(f"unknown sampling mode {self.sampling!r}")
        if len(self.shape) != 4:
            raise ConfigurationError("csc.shape must be [a, b, phi, rho0]")
        object.__setattr__(self, "shape", tuple(float(v) for v in self.shape))

    def settings(self) -> CscSettings:
        return CscSettings(Q=self.Q, mode=self.mode, crn=self.crn, descent=self.inner,
                           growth=self.stochastic, n_report_seeds=self.n_report_seeds)


@dataclass(frozen=True)
class TpbvpBlock:
    init: str = "ellipses"          # headings of the agents block, or a schedule CSV path
    settings: TpbvpSettings = field(default_factory=TpbvpSettings)


@dataclass(frozen=True)
class CompareBlock:
    a: float = 5.0
    b_values: tuple = (0.25, 0.5, 1.0, 1.5, 2.0)

    def __post_init__(self):
        b = tuple(float(v) for v in self.b_values)
        if not b or min(b) <= B_MIN or any(v > self.a for v in b):
            raise ConfigurationError("compare.b_values must lie in (b_min, a]")
        object.__setattr__(self, "b_values", tuple(sorted(b)))


@dataclass(frozen=True)
class GradCheckBlock:
    h: float = 1e-4
    rtol: float = 0.01
    atol: float = 1e-4
    random_agents: bool = True   # draw a feasible configuration from the seed


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"
    trace: bool = True
    stride: int = 10

    def __post_init__(self):
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigurationError("output.stride must be an integer >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    mission: MissionConfig
    mode: str = "simulate"
    agents: Any = None              # list[EllipseParams], "sample" or None (defaults)
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    optimizer: DescentSettings = field(default_factory=DescentSettings)
    csc: CscBlock = field(default_factory=CscBlock)
    tpbvp: TpbvpBlock = field(default_factory=TpbvpBlock)
    compare: CompareBlock = field(default_factory=CompareBlock)
    grad_check: GradCheckBlock = field(default_factory=GradCheckBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if isinstance(self.agents, list) and len(self.agents) != self.mission.N:
            raise ConfigurationError(
                f"agents block lists {len(self.agents)} ellipses but mission.N = {self.mission.N}"
            )
        if isinstance(self.agents, str) and self.agents != "sample":
            raise ConfigurationError("agents must be a list of ellipses or \"sample\"")

    def resolved_agents(self, rng: np.random.Generator | None = None) -> list[EllipseParams]:
        from .descent import project_feasible
        from .search import sample_feasible

        if self.agents is None:
            return default_agents(self.mission)
        if self.agents == "sample":
            if rng is None:
                raise ConfigurationError("sampled agents need a random generator")
            return sample_feasible(rng, self.mission)
        return project_feasible(self.agents, self.mission)

    def to_dict(self) -> dict:
        agents = self.agents
        if isinstance(agents, list):
            agents = [asdict(p) for p in agents]
        csc = asdict(self.csc)
        csc["shape"] = list(self.csc.shape)
        compare = asdict(self.compare)
        compare["b_values"] = list(self.compare.b_values)
        return {
            "mode": self.mode,
            "seed": self.seed,
            "mission": mission_to_dict(self.mission),
            "agents": agents,
            "integrator": asdict(self.integrator),
            "optimizer": asdict(self.optimizer),
            "csc": csc,
            "tpbvp": {"init": self.tpbvp.init, "settings": asdict(self.tpbvp.settings)},
            "compare": compare,
            "grad_check": asdict(self.grad_check),
            "output": asdict(self.output),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


TOP_KEYS = ("mode", "seed", "mission", "agents", "integrator", "optimizer", "csc", "tpbvp",
            "compare", "grad_check", "output")


def from_dict(d: dict) -> ExperimentConfig:
    _check_keys(d, TOP_KEYS, "config")
    if "mission" not in d or d["mission"] is None:
        raise ConfigurationError("missing required block 'mission'")
    mission = mission_from_dict(d["mission"])
    agents = d.get("agents")
    if isinstance(agents, list):
        parsed = []
        for k, a in enumerate(agents):
            _check_keys(a, ("X", "Y", "a", "b", "phi", "rho0"), f"agents[{k}]")
            parsed.append(EllipseParams(**a))
        agents = parsed
    elif agents not in (None, "sample"):
        raise ConfigurationError("agents must be a list of ellipses, \"sample\" or null")

    csc_d = dict(d.get("csc") or {})
    _check_keys(csc_d, [f.name for f in fields(CscBlock)], "csc")
    if "inner" in csc_d:
        csc_d["inner"] = _dataclass_from(DescentSettings, csc_d["inner"], "csc.inner")
    if "stochastic" in csc_d:
        csc_d["stochastic"] = _dataclass_from(StochasticGrowthSpec, csc_d["stochastic"], "csc.stochastic")
    if "shape" in csc_d:
        csc_d["shape"] = tuple(csc_d["shape"])
    tp_d = dict(d.get("tpbvp") or {})
    _check_keys(tp_d, ("init", "settings"), "tpbvp")
    if "settings" in tp_d:
        tp_d["settings"] = _dataclass_from(TpbvpSettings, tp_d["settings"], "tpbvp.settings")
    cmp_d = dict(d.get("compare") or {})
    if "b_values" in cmp_d:
        cmp_d["b_values"] = tuple(cmp_d["b_values"])
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigurationError("seed must be a non-negative integer")
    return ExperimentConfig(
        mission=mission,
        mode=d.get("mode", "simulate"),
        agents=agents,
        integrator=_dataclass_from(IntegratorOptions, d.get("integrator"), "integrator"),
        optimizer=_dataclass_from(DescentSettings, d.get("optimizer"), "optimizer"),
        csc=_dataclass_from(CscBlock, csc_d, "csc"),
        tpbvp=_dataclass_from(TpbvpBlock, tp_d, "tpbvp"),
        compare=_dataclass_from(CompareBlock, cmp_d, "compare"),
        grad_check=_dataclass_from(GradCheckBlock, d.get("grad_check"), "grad_check"),
        output=_dataclass_from(OutputBlock, d.get("output"), "output"),
        seed=seed,
    )


def parse_text(text: str) -> dict:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise ConfigParseError("configuration must be a JSON object")
    return d


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are read as JSON when possible."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigParseError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise ConfigParseError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return d


def load(path, overrides=()) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    return from_dict(apply_overrides(parse_text(text), overrides))
