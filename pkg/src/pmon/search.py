"""Global search over ellipse parameters by continuous stochastic comparison.

Each trial samples a candidate uniformly from a box, refines it (and, once,
the starting incumbent) with projected gradient descent, then keeps it only
if it beats the incumbent: once in the deterministic setting, in all ``L_k``
paired repetitions when the growth rates are random.
"""

from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .descent import DescentSettings, a_upper, b_upper, optimize, project_vector
from .errors import ConfigurationError, PmonError
from .model import MissionConfig
from .simulator import IntegratorOptions, simulate
from .trajectory import B_MIN, EllipseParams, stack_params, unstack_params

log = logging.getLogger(__name__)

MODES = ("deterministic", "stochastic")


# -- seeding --------------------------------------------------------------------

def substream(master_seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named stage (and optional integer sub-keys)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(zlib.crc32(name.encode()), *keys))
    return np.random.default_rng(ss)


# -- random growth rates ----------------------------------------------------------

@dataclass(frozen=True)
class StochasticGrowthSpec:
    value_low: float = 0.195
    value_high: float = 0.205
    mean_holding: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.value_low <= self.value_high:
            raise ConfigurationError("growth bounds must satisfy 0 < value_low <= value_high")
        if not self.mean_holding > 0:
            raise ConfigurationError("mean_holding must be positive")

    def check(self, config: MissionConfig) -> None:
        if not self.value_high < config.B:
            raise ConfigurationError(f"value_high={self.value_high} must be below B={config.B}")

    def with_seed(self, seed: int) -> "StochasticGrowthSpec":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class GrowthProcess:
    """Piecewise-constant rate: ``values[j]`` holds on ``[switch_times[j], switch_times[j+1])``."""

    switch_times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        j = np.searchsorted(self.switch_times, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(j, 0, len(self.values) - 1)]

    @property
    def n_switches(self) -> int:
        return len(self.switch_times) - 1


def make_growth_process(spec: StochasticGrowthSpec, i: int, T: float) -> GrowthProcess:
    """Rate process of grid point ``i`` on ``[0, T]``; independent across points."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(spec.seed), spawn_key=(int(i),)))
    lo, hi = spec.value_low, spec.value_high
    times, values = [0.0], [lo + (hi - lo) * rng.random()]
    t = rng.exponential(spec.mean_holding)
    while t < T:
        times.append(t)
        values.append(lo + (hi - lo) * rng.random())
        t += rng.exponential(spec.mean_holding)
    return GrowthProcess(np.array(times), np.array(values))


@dataclass
class GrowthField:
    processes: list[GrowthProcess]

    def csr(self):
        """``(offsets, switch_times, values)`` as consumed by the simulator."""
        counts = [len(p.values) for p in self.processes]
        off = np.zeros(len(counts) + 1, dtype=np.int64)
        off[1:] = np.cumsum(counts)
        if not self.processes:
            return off, np.zeros(0), np.zeros(0)
        return (off, np.concatenate([p.switch_times for p in self.processes]),
                np.concatenate([p.values for p in self.processes]))

    def at(self, t) -> np.ndarray:
        return np.array([p(t) for p in self.processes])


def make_growth_field(spec: StochasticGrowthSpec, config: MissionConfig) -> GrowthField:
    spec.check(config)
    return GrowthField([make_growth_process(spec, i, config.T) for i in range(config.M)])


# -- sampling -------------------------------------------------------------------

def L_schedule(k: int) -> int:
    """Number of paired comparisons at trial ``k`` (natural log)."""
    if k < 1:
        raise ValueError("trial index starts at 1")
    return 1 if k == 1 else int(math.ceil(10.0 * math.log(k)))


@dataclass(frozen=True)
class SamplingBox:
    """Independent uniform ranges for the stacked ``[X, Y, a, b, phi]*N`` vector.

    Draws are passed through the feasibility projection, which leaves draws
    inside the feasible set untouched.
    """

    lower: np.ndarray
    upper: np.ndarray
    rho0s: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.size != 5 * len(self.rho0s):
            raise ConfigurationError("sampling box bounds must have 5 entries per agent")
        if np.any(hi < lo):
            raise ConfigurationError("sampling box has upper < lower")

    @classmethod
    def point(cls, params: Sequence[EllipseParams]) -> "SamplingBox":
        v = stack_params(params)
        return cls(v, v.copy(), tuple(p.rho0 for p in params))

    @classmethod
    def centers(cls, config: MissionConfig, a=5.0, b=2.0, phi=np.pi / 4, rho0=0.0) -> "SamplingBox":
        """Centres only; every agent keeps the shape ``(a, b, phi, rho0)``."""
        wx, wy = EllipseParams(0.0, 0.0, a, b, phi).half_widths
        if 2 * wx > config.L1 or 2 * wy > config.L2:
            raise ConfigurationError("fixed sampling shape does not fit in the mission space")
        lo = np.tile([wx, wy, a, b, phi], config.N)
        hi = np.tile([config.L1 - wx, config.L2 - wy, a, b, phi], config.N)
        return cls(lo, hi, (float(rho0),) * config.N)

    @classmethod
    def full(cls, config: MissionConfig, rho0=0.0) -> "SamplingBox":
        """All five parameters over their widest feasible ranges."""
        bu = b_upper(config)
        au = max(a_upper(B_MIN, 0.0, config), a_upper(B_MIN, np.pi / 2, config))
        lo = np.tile([0.0, 0.0, B_MIN, B_MIN, 0.0], config.N)
        hi = np.tile([config.L1, config.L2, au, bu, np.pi], config.N)
        return cls(lo, hi, (float(rho0),) * config.N)


def sample_candidate(rng: np.random.Generator, box: SamplingBox, config: MissionConfig) -> list[EllipseParams]:
    v = rng.uniform(box.lower, box.upper)
    return unstack_params(project_vector(v, config), box.rho0s)


def sample_feasible(rng: np.random.Generator, config: MissionConfig, b_low: float = 0.2) -> list[EllipseParams]:
    """Random feasible ellipses drawn hierarchically: phi, then b, then a, then the centre."""
    out = []
    b_hi = b_upper(config)
    for _ in range(config.N):
        phi = rng.uniform(0.0, np.pi)
        b = rng.uniform(min(b_low, b_hi), b_hi)
        a = rng.uniform(b, a_upper(b, phi, config))
        wx, wy = EllipseParams(0.0, 0.0, a, b, phi).half_widths
        X = rng.uniform(min(wx, config.L1 / 2), max(config.L1 - wx, config.L1 / 2))
        Y = rng.uniform(min(wy, config.L2 / 2), max(config.L2 - wy, config.L2 / 2))
        out.append(EllipseParams(X, Y, a, b, phi, rng.uniform(0.0, 2 * np.pi)))
    vec = project_vector(stack_params(out), config)
    return unstack_params(vec, [p.rho0 for p in out])


# -- comparison -------------------------------------------------------------------

Evaluator = Callable[[list, "int | None"], float]


@dataclass
class CscState:
    incumbent: list
    incumbent_cost: float
    k: int = 1
    Q: int = 0
    candidate: list | None = None
    candidate_cost: float = float("nan")
    accepted: bool = False
    n_wins: int = 0
    n_reps: int = 0


def csc_step(state: CscState, evaluator: Evaluator, mode: str = "deterministic",
             rng: np.random.Generator | None = None, crn: bool = True,
             schedule: Callable[[int], int] = L_schedule) -> CscState:
    """Compare ``state.candidate`` against the incumbent and advance ``k``.

    ``evaluator(params, env_seed)`` returns a cost; ``env_seed`` is ``None``
    in deterministic mode.  In stochastic mode the candidate must win all
    ``schedule(k)`` repetitions; with ``crn`` both sides of a repetition
    share the environment seed.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown comparison mode {mode!r}")
    nxt = replace(state, k=state.k + 1, accepted=False, n_wins=0, n_reps=0)
    cand = state.candidate
    if cand is None:
        raise ValueError("state has no candidate")
    try:
        if mode == "deterministic":
            c = float(evaluator(cand, None))
            nxt.candidate_cost, nxt.n_reps = c, 1
            if c < state.incumbent_cost:
                nxt.accepted, nxt.n_wins = True, 1
        else:
            if rng is None:
                raise ValueError("stochastic comparison needs a generator")
            L = schedule(state.k)
            seeds = rng.integers(0, 2**63 - 1, size=(L, 2))
            nxt.n_reps = L
            costs = []
            for s_c, s_i in seeds:
                c = float(evaluator(cand, int(s_c)))
                costs.append(c)
                if not c < float(evaluator(state.incumbent, int(s_c if crn else s_i))):
                    break
                nxt.n_wins += 1
            nxt.candidate_cost = float(np.mean(costs))
            nxt.accepted = nxt.n_wins == L
    except PmonError as exc:
        log.warning("trial %d: candidate evaluation failed (%s); skipped", state.k, exc)
        nxt.candidate_cost, nxt.accepted = float("nan"), False
    if nxt.accepted:
        nxt.incumbent = cand
    return nxt


# -- combined algorithm -------------------------------------------------------------

@dataclass(frozen=True)
class CscSettings:
    Q: int = 50
    mode: str = "deterministic"
    crn: bool = True
    descent: DescentSettings = field(default_factory=lambda: DescentSettings(max_iters=150, ftol=5e-4))
    growth: StochasticGrowthSpec = field(default_factory=StochasticGrowthSpec)
    n_report_seeds: int = 5

    def __post_init__(self):
        if int(self.Q) != self.Q or self.Q < 0:
            raise ConfigurationError("Q must be a non-negative integer")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.n_report_seeds < 1:
            raise ConfigurationError("n_report_seeds must be >= 1")


@dataclass
class TrialRecord:
    trial: int
    accepted: bool
    candidate_cost: float
    incumbent_cost: float


@dataclass
class CscResult:
    best_params: list
    best_cost: float
    history: list[TrialRecord]
    initial_cost: float

    @property
    def best_so_far(self) -> np.ndarray:
        costs = [self.initial_cost] + [r.incumbent_cost for r in self.history]
        return np.minimum.accumulate(np.array(costs))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "accepted", "candidate_cost", "incumbent_cost"])
            for r in self.history:
                w.writerow([r.trial, int(r.accepted), repr(r.candidate_cost), repr(r.incumbent_cost)])


class SearchError(PmonError):
    def __init__(self, message, trial):
        super().__init__(message)
        self.trial = trial


def run_algorithm2(config: MissionConfig, box: SamplingBox, settings: CscSettings | None = None,
                   init_params: Sequence[EllipseParams] | None = None, seed: int = 0,
                   options: IntegratorOptions | None = None,
                   callback: Callable[[TrialRecord], None] | None = None) -> CscResult:
    """IPA-refined stochastic comparison search over ``settings.Q`` trials.

    The starting incumbent is ``init_params`` or a draw from ``box``.  In
    stochastic mode every refinement runs on its own growth realization and
    reported costs are means over ``n_report_seeds`` fixed environment seeds.
    """
    settings = settings or CscSettings()
    options = options or IntegratorOptions()
    stochastic = settings.mode == "stochastic"
    if stochastic:
        settings.growth.check(config)
    sampler = substream(seed, "sampler")
    comparisons = substream(seed, "comparisons")
    report_seeds = substream(seed, "report").integers(0, 2**63 - 1, size=settings.n_report_seeds)

    def growth_for(env_seed):
        if env_seed is None:
            return None
        return make_growth_field(settings.growth.with_seed(env_seed), config)

    def cost(params, env_seed):
        return simulate(config, params, options, ipa=False, growth=growth_for(env_seed)).J

    def reported(params):
        if not stochastic:
            return cost(params, None)
        return float(np.mean([cost(params, int(s)) for s in report_seeds]))

    def refine(params, trial):
        env = int(substream(seed, "environment", trial).integers(0, 2**63 - 1)) if stochastic else None
        best, trace = optimize(config, params, settings.descent, options, growth=growth_for(env))
        if trace.status == "error":
            raise SearchError(f"refinement failed at trial {trial}: {trace.message}", trial)
        return best, trace.best_J

    start = list(init_params) if init_params is not None else sample_candidate(sampler, box, config)
    incumbent, J_inc = refine(start, 0)
    if stochastic:
        J_inc = reported(incumbent)
    initial = J_inc
    state = CscState(incumbent=incumbent, incumbent_cost=J_inc, Q=settings.Q)
    history = []
    best = (J_inc, incumbent)

    for trial in range(1, settings.Q + 1):
        raw = sample_candidate(sampler, box, config)
        try:
            cand, J_cand = refine(raw, trial)
        except (SearchError, PmonError) as exc:
            log.warning("trial %d: refinement failed (%s); candidate skipped", trial, exc)
            # keep the comparison stream aligned with successful trials
            if stochastic:
                comparisons.integers(0, 2**63 - 1, size=(L_schedule(state.k), 2))
            state = replace(state, k=state.k + 1, accepted=False, candidate=None)
            rec = TrialRecord(trial, False, float("nan"), state.incumbent_cost)
            history.append(rec)
            if callback:
                callback(rec)
            continue
        state.candidate = cand
        if stochastic:
            state = csc_step(state, cost, "stochastic", comparisons, settings.crn)
            if state.accepted:
                state.incumbent_cost = reported(state.incumbent)
        else:
            # refined candidate cost is already known exactly
            state = csc_step(state, lambda p, s: J_cand, "deterministic")
            if state.accepted:
                state.incumbent_cost = J_cand
        if state.incumbent_cost < best[0]:
            best = (state.incumbent_cost, state.incumbent)
        rec = TrialRecord(trial, state.accepted, float(state.candidate_cost), float(state.incumbent_cost))
        history.append(rec)
        if callback:
            callback(rec)
    return CscResult(best_params=list(best[1]), best_cost=float(best[0]), history=history,
                     initial_cost=float(initial))
