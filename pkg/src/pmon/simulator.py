"""Fixed-step simulation of the agent/uncertainty hybrid system."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .errors import ConfigurationError, DegenerateCoverageError, NumericalFailure
from .model import MissionConfig
from .trajectory import EllipseParams, sample_path

EVENT_KINDS = {_kernel.HIT: "hit-zero", _kernel.LEAVE: "leave-zero"}


@dataclass(frozen=True)
class IntegratorOptions:
    dt: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("integrator step dt must be positive")

    @property
    def event_tol(self) -> float:
        return self.dt * 1e-3


@dataclass(frozen=True)
class EventRecord:
    time: float
    point_index: int
    kind: str


@dataclass
class SimOutcome:
    J: float
    grad_J: np.ndarray | None
    times: np.ndarray
    sum_R: np.ndarray
    J_point: np.ndarray
    R_final: np.ndarray
    event_times: np.ndarray
    event_points: np.ndarray
    event_kinds: np.ndarray
    event_steps: np.ndarray
    event_rates: np.ndarray | None = None
    n_grazing: int = 0
    event_grads: np.ndarray | None = None
    positions: np.ndarray | None = None
    R_trace: np.ndarray | None = None
    dR_final: np.ndarray | None = None

    @property
    def events(self) -> list[EventRecord]:
        return [
            EventRecord(float(t), int(i), EVENT_KINDS[int(k)])
            for t, i, k in zip(self.event_times, self.event_points, self.event_kinds)
        ]

    @property
    def n_events(self) -> int:
        return len(self.event_times)


def time_grid(T: float, dt: float) -> np.ndarray:
    """Step times ``0, dt, 2 dt, ..., T``; the last step is shortened if needed."""
    if not T > 0:
        raise ConfigurationError("horizon T must be positive")
    if not dt > 0:
        raise ConfigurationError("integrator step dt must be positive")
    K = int(np.ceil(T / dt - 1e-9))
    times = np.arange(K + 1, dtype=float) * dt
    times[-1] = T
    return times


def growth_arrays(config: MissionConfig, growth=None):
    """CSR layout ``(offsets, switch_times, values)`` of the growth rates."""
    if growth is None:
        M = config.M
        return np.arange(M + 1, dtype=np.int64), np.zeros(M), np.array(config.A, dtype=float)
    return growth.csr()


def agent_paths(params: Sequence[EllipseParams], times, with_jacobian: bool):
    N = len(params)
    K1 = len(times)
    pos = np.zeros((K1, N, 2))
    dpos = np.zeros((K1, N, 2, 5)) if with_jacobian else np.zeros((1, max(N, 1), 2, 5))
    for n, p in enumerate(params):
        path = sample_path(p, times, with_jacobian)
        pos[:, n] = path.pos
        if with_jacobian:
            dpos[:, n] = path.dpos
    return pos, dpos


def run_positions(config: MissionConfig, times, pos, dpos=None, growth=None, *,
                  record_R=False, record_event_grads=False) -> SimOutcome:
    """Run the hybrid system for prescribed agent positions on ``times``."""
    ipa = dpos is not None
    if dpos is None:
        dpos = np.zeros((1, max(pos.shape[1], 1), 2, 5))
    A_off, A_t, A_v = growth_arrays(config, growth)
    ranges = config.sensing_ranges if config.N else np.zeros(0)
    if pos.shape[1] != len(ranges):
        ranges = np.full(pos.shape[1], float(np.atleast_1d(config.r)[0]))
    args = (
        np.ascontiguousarray(times, dtype=float), np.ascontiguousarray(pos),
        np.ascontiguousarray(dpos), ipa, np.ascontiguousarray(config.grid_points),
        A_off, A_t, A_v, float(config.B), float(config.C), ranges,
        np.array(config.R0, dtype=float), record_R, record_event_grads,
    )
    cap = 4 * config.M + 4096
    while True:
        out = _kernel.run_hybrid(*args, cap)
        if out[12] <= cap:
            break
        cap = 2 * out[12]
    (J, grad, J_point, sumR, R, dR, ev_t, ev_i, ev_kind, ev_step, ev_rate, ev_grad,
     _, n_grazing, R_trace, err, err_t, err_i) = out
    if err != _kernel.ERR_OK:
        raise NumericalFailure(
            f"non-finite uncertainty at t={err_t:.6g}, point {err_i}", time=err_t, point_index=err_i
        )
    if ipa and not np.all(np.isfinite(grad)):
        raise NumericalFailure("non-finite cost gradient")
    # within a step events are found point by point; report them chronologically
    order = np.argsort(ev_t, kind="stable")
    ev_t, ev_i, ev_kind, ev_step, ev_rate = ev_t[order], ev_i[order], ev_kind[order], ev_step[order], ev_rate[order]
    if record_event_grads and len(ev_grad) == len(order):
        ev_grad = ev_grad[order]
    return SimOutcome(
        J=float(J), grad_J=grad if ipa else None, times=np.asarray(times), sum_R=sumR,
        J_point=J_point, R_final=R, event_times=ev_t, event_points=ev_i, event_kinds=ev_kind,
        event_steps=ev_step, event_rates=ev_rate, n_grazing=int(n_grazing),
        event_grads=ev_grad if record_event_grads else None,
        R_trace=R_trace if record_R else None, dR_final=dR if ipa else None,
    )


def simulate(config: MissionConfig, params: Sequence[EllipseParams],
             options: IntegratorOptions | None = None, ipa: bool = True, *,
             growth=None, trace: bool = False, record_event_grads: bool = False) -> SimOutcome:
    """Simulate N agents on their ellipses over ``[0, T]``.

    With ``ipa`` the outcome carries ``grad_J``, the derivative of J with
    respect to the stacked ``[X, Y, a, b, phi]`` of every agent.
    """
    options = options or IntegratorOptions()
    params = list(params)
    if len(params) != config.N:
        raise ConfigurationError(f"expected {config.N} ellipses, got {len(params)}")
    times = time_grid(config.T, options.dt)
    pos, dpos = agent_paths(params, times, ipa)
    out = run_positions(config, times, pos, dpos if ipa else None, growth,
                        record_event_grads=record_event_grads)
    if trace:
        out.positions = pos
    return out


def zero_agent_cost(config: MissionConfig) -> float:
    """Closed-form cost when no point is ever sensed."""
    T = config.T
    return float(np.sum(config.R0 * T + config.A * T * T / 2.0))


# -- normalized (per unit area) cost -----------------------------------------

@dataclass
class NormalizedCost:
    value: float
    psi: float                 # effective coverage area
    J_xi: float                # cost accumulated over the coverage region
    xi_mask: np.ndarray = field(repr=False)


def coverage_mask(config: MissionConfig, positions: np.ndarray) -> np.ndarray:
    """Grid points where ``B p > A`` at some sampled time, for one agent."""
    pts = config.grid_points
    best = np.full(config.M, np.inf)
    for start in range(0, len(positions), 2048):
        chunk = positions[start:start + 2048]
        d = np.hypot(pts[None, :, 0] - chunk[:, None, 0], pts[None, :, 1] - chunk[:, None, 1])
        best = np.minimum(best, d.min(axis=0))
    p_max = config.sensing_model(0).prob(best)
    return config.B * p_max > config.A


def normalized_cost(config: MissionConfig, params: EllipseParams,
                    options: IntegratorOptions | None = None) -> NormalizedCost:
    """Cost over the effective coverage region divided by its area."""
    options = options or IntegratorOptions()
    cfg = config if config.N == 1 else config.replace(N=1, r=config.sensing_model(0).r)
    out = simulate(cfg, [params], options, ipa=False, trace=True)
    mask = coverage_mask(cfg, out.positions[:, 0])
    if not mask.any():
        raise DegenerateCoverageError("effective coverage region contains no grid point")
    psi = mask.sum() * cfg.cell_area
    J_xi = float(out.J_point[mask].sum() * cfg.cell_area)
    return NormalizedCost(value=J_xi / psi, psi=float(psi), J_xi=J_xi, xi_mask=mask)


# -- CSV output ---------------------------------------------------------------

def write_trajectory_csv(path, outcome: SimOutcome, stride: int = 1) -> None:
    if outcome.positions is None:
        raise ValueError("outcome has no trajectory trace; simulate with trace=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "agent_index", "x", "y"])
        for k in range(0, len(outcome.times), stride):
            for n in range(outcome.positions.shape[1]):
                x, y = outcome.positions[k, n]
                w.writerow([repr(float(outcome.times[k])), n, repr(float(x)), repr(float(y))])


def write_cost_csv(path, outcome: SimOutcome, stride: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sum_R"])
        for k in range(0, len(outcome.times), stride):
            w.writerow([repr(float(outcome.times[k])), repr(float(outcome.sum_R[k]))])


def write_events_csv(path, outcome: SimOutcome) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_k", "point_index", "kind"])
        for ev in outcome.events:
            w.writerow([repr(ev.time), ev.point_index, ev.kind])
