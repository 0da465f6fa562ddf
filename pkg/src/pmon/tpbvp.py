"""Heading-schedule optimal control by forward/backward sweeps.

Agents move at unit speed with a piecewise-constant heading per step,
clamped coordinate-wise to the mission rectangle.  The forward sweep runs the
same uncertainty integrator as the ellipse simulator; the backward sweep is
its exact adjoint, so ``dJ/dtheta_k = h * dH/dtheta`` with the position
costate taken at the end of the step.
"""

from __future__ import annotations

import csv
import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import _kernel
from .errors import ConfigurationError, PmonError
from .model import MissionConfig
from .simulator import IntegratorOptions, SimOutcome, growth_arrays, run_positions, time_grid
from .trajectory import EllipseParams, sample_path

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass
class ControlSchedule:
    times: np.ndarray      # (K + 1,)
    headings: np.ndarray   # (K, N)
    start: np.ndarray      # (N, 2)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.headings = np.atleast_2d(np.asarray(self.headings, dtype=float))
        self.start = np.asarray(self.start, dtype=float).reshape(-1, 2)
        K = len(self.times) - 1
        if K < 1 or np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("schedule time grid must be increasing with at least one step")
        if self.headings.shape != (K, len(self.start)):
            raise ConfigurationError(
                f"headings shape {self.headings.shape} does not match {K} steps x {len(self.start)} agents"
            )
        if not (np.all(np.isfinite(self.headings)) and np.all(np.isfinite(self.start))):
            raise ConfigurationError("schedule values must be finite")

    @property
    def n_agents(self) -> int:
        return self.start.shape[0]

    def with_headings(self, headings) -> "ControlSchedule":
        return ControlSchedule(self.times, np.mod(headings, TWO_PI), self.start)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "agent", "theta"])
            for k in range(self.headings.shape[0]):
                for n in range(self.n_agents):
                    w.writerow([k, n, repr(float(self.headings[k, n]))])

    @classmethod
    def read_csv(cls, path, times, start) -> "ControlSchedule":
        start = np.asarray(start, dtype=float).reshape(-1, 2)
        K = len(times) - 1
        headings = np.full((K, len(start)), np.nan)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                headings[int(row["step"]), int(row["agent"])] = float(row["theta"])
        if np.isnan(headings).any():
            raise ConfigurationError("schedule file does not cover every step and agent")
        return cls(times, headings, start)


def constant_schedule(config: MissionConfig, start, headings, options: IntegratorOptions | None = None):
    options = options or IntegratorOptions()
    times = time_grid(config.T, options.dt)
    start = np.asarray(start, dtype=float).reshape(-1, 2)
    h = np.broadcast_to(np.asarray(headings, dtype=float), (len(times) - 1, len(start)))
    return ControlSchedule(times, np.array(h), start)


def headings_from_ellipses(config: MissionConfig, params: Sequence[EllipseParams],
                           options: IntegratorOptions | None = None) -> ControlSchedule:
    """Chord headings of unit-speed ellipse motion sampled on the simulator grid."""
    options = options or IntegratorOptions()
    times = time_grid(config.T, options.dt)
    pos = np.stack([sample_path(p, times, with_jacobian=False).pos for p in params], axis=1)
    step = np.diff(pos, axis=0)
    headings = np.mod(np.arctan2(step[..., 1], step[..., 0]), TWO_PI)
    return ControlSchedule(times, headings, pos[0])


# -- forward / backward ---------------------------------------------------------

def integrate_positions(schedule: ControlSchedule, L1: float, L2: float):
    """Unit-speed Euler positions and the per-coordinate clamp mask.

    ``clip_mask[k, n, c]`` is 0 where coordinate c of the move ``k -> k+1``
    was clamped at the boundary, 1 otherwise.
    """
    times, th = schedule.times, schedule.headings
    h = np.diff(times)
    K, N = th.shape
    vel = np.stack([np.cos(th), np.sin(th)], axis=-1) * h[:, None, None]
    hi = np.array([L1, L2])
    pos = np.empty((K + 1, N, 2))
    mask = np.ones((K, N, 2))
    pos[0] = np.clip(schedule.start, 0.0, hi)
    for k in range(K):
        raw = pos[k] + vel[k]
        pos[k + 1] = np.clip(raw, 0.0, hi)
        mask[k] = raw == pos[k + 1]
    return pos, mask


@dataclass
class ForwardTrace:
    schedule: ControlSchedule
    positions: np.ndarray      # (K + 1, N, 2)
    clip_mask: np.ndarray      # (K, N, 2)
    outcome: SimOutcome

    @property
    def J(self) -> float:
        return self.outcome.J

    @property
    def R(self) -> np.ndarray:
        return self.outcome.R_trace

    @property
    def boundary_arcs(self) -> np.ndarray:
        """``(K, M)`` flags of steps on which R_i dwells at zero."""
        R = self.outcome.R_trace
        return (R[:-1] == 0.0) & (R[1:] == 0.0)


def forward_pass(config: MissionConfig, schedule: ControlSchedule, growth=None) -> ForwardTrace:
    if schedule.n_agents != config.N:
        raise ConfigurationError(f"schedule has {schedule.n_agents} agents, config has {config.N}")
    pos, mask = integrate_positions(schedule, config.L1, config.L2)
    out = run_positions(config, schedule.times, pos, None, growth, record_R=True)
    out.positions = pos
    return ForwardTrace(schedule, pos, mask, out)


@dataclass
class CostateField:
    """Costates of the cost accrued after each grid time (zero at T).

    ``nu[k]`` is the position costate entering the move ``k-1 -> k``; it
    differs from ``mu[k]`` by the sensitivity of that last step's own cost.
    """

    lam: np.ndarray   # (K + 1, M)
    mu: np.ndarray    # (K + 1, N, 2)
    nu: np.ndarray    # (K + 1, N, 2)


def backward_pass(config: MissionConfig, trace: ForwardTrace, growth=None) -> CostateField:
    pos, R = trace.positions, trace.outcome.R_trace
    if R is None or len(R) != len(pos) or len(trace.schedule.times) != len(pos):
        raise ValueError("forward trace and schedule lengths do not match")
    A_off, A_t, A_v = growth_arrays(config, growth)
    ranges = config.sensing_ranges if config.N else np.zeros(0)
    lam, mu, nu = _kernel.costate_sweep(
        np.ascontiguousarray(trace.schedule.times), np.ascontiguousarray(pos),
        np.ascontiguousarray(config.grid_points), A_off, A_t, A_v, float(config.B), float(config.C),
        ranges, np.ascontiguousarray(R), np.ascontiguousarray(trace.clip_mask),
    )
    return CostateField(lam, mu, nu)


def heading_gradient(trace: ForwardTrace, costate: CostateField) -> np.ndarray:
    """``dH/dtheta = -mu_x sin(theta) + mu_y cos(theta)`` per step and agent.

    The costate is the one entering the end of each step, and coordinates clamped
    at the boundary do not respond to the heading.  ``J`` changes by ``h``
    times this value per unit change of the step heading.
    """
    th = trace.schedule.headings
    nu = costate.nu[1:] * trace.clip_mask
    return -nu[..., 0] * np.sin(th) + nu[..., 1] * np.cos(th)


def psi(mu) -> np.ndarray:
    """Phase with ``tan(psi) = mu_x / mu_y``; ``+-pi/2`` when ``mu_y = 0``."""
    mu = np.asarray(mu, dtype=float)
    mx, my = mu[..., 0], mu[..., 1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.arctan(mx / my)
    return np.where(my == 0.0, np.sign(mx) * np.pi / 2, out)


def minimizing_heading(mu) -> np.ndarray:
    """Heading that minimizes ``mu . (cos, sin)``: ``pi/2 - psi`` or ``3 pi/2 - psi``."""
    mu = np.asarray(mu, dtype=float)
    p = psi(mu)
    return np.mod(np.where(mu[..., 1] < 0, np.pi / 2 - p, 1.5 * np.pi - p), TWO_PI)


@dataclass
class HeadingDiagnostic:
    fraction_descending: float   # steps where the heading lowers the Hamiltonian
    median_angle_error: float    # to the minimizing heading, over non-singular steps
    n_singular: int              # steps with mu = 0


def heading_diagnostic(trace: ForwardTrace, costate: CostateField, tol: float = 1e-12) -> HeadingDiagnostic:
    th = trace.schedule.headings
    mu = costate.nu[1:]
    singular = np.hypot(mu[..., 0], mu[..., 1]) <= tol
    n_sing = int(singular.sum())
    if n_sing:
        log.info("%d steps with a vanishing position costate", n_sing)
    ok = ~singular
    if not ok.any():
        return HeadingDiagnostic(float("nan"), float("nan"), n_sing)
    dot = mu[..., 0] * np.cos(th) + mu[..., 1] * np.sin(th)
    err = np.abs(np.angle(np.exp(1j * (th - minimizing_heading(mu)))))
    return HeadingDiagnostic(float(np.mean(dot[ok] < 0)), float(np.median(err[ok])), n_sing)


# -- descent on the schedule ------------------------------------------------------

@dataclass(frozen=True)
class TpbvpSettings:
    """``eta0`` is the largest heading change (rad) of the first trial step.

    ``direction`` and ``smoothing`` (Gaussian width in seconds) select the
    search direction, see ``search_direction``.
    """

    eta0: float = 0.1
    epsilon: float = 1e-6
    max_iters: int = 200
    shrink: float = 0.5
    expand: float = 2.0
    max_halvings: int = 30
    ftol: float = 1e-6
    stall_window: int = 10
    smoothing: float = 0.1
    direction: str = "position"
    time_budget: float | None = None   # seconds

    def __post_init__(self):
        if self.direction not in ("position", "heading"):
            raise ConfigurationError(f"unknown search direction {self.direction!r}")
        if not self.smoothing >= 0:
            raise ConfigurationError("smoothing must be non-negative")
        if not self.eta0 > 0 or not self.epsilon > 0:
            raise ConfigurationError("eta0 and epsilon must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigurationError("max_iters must be an integer >= 1")
        if not 0 < self.shrink < 1 or not self.expand >= 1:
            raise ConfigurationError("need 0 < shrink < 1 and expand >= 1")


@dataclass
class TpbvpResult:
    schedule: ControlSchedule
    J_history: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    status: str = "iteration-cap"
    message: str = ""

    @property
    def J(self) -> float:
        return self.J_history[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "J", "grad_norm"])
            for k, (J, g) in enumerate(zip(self.J_history, self.grad_norms)):
                w.writerow([k, repr(J), repr(g)])


def _sweep(config, schedule, growth):
    tr = forward_pass(config, schedule, growth)
    co = backward_pass(config, tr, growth)
    G = heading_gradient(tr, co) * np.diff(schedule.times)[:, None]
    return tr, co, G


def local_position_gradient(trace: ForwardTrace, costate: CostateField) -> np.ndarray:
    """``dJ/ds_k`` through the sensing at time k only (K + 1, N, 2); zero at k = 0."""
    nu = costate.nu
    g = nu.copy()
    g[:-1] -= trace.clip_mask * nu[1:]
    g[0] = 0.0
    return g


def search_direction(trace: ForwardTrace, costate: CostateField, G, settings: "TpbvpSettings") -> np.ndarray:
    """Unit-max-norm heading direction (K, N) along which J decreases to first order.

    ``direction="position"`` smooths the local position gradient in time and
    turns the desired displacement into heading changes through the part of
    its time-difference normal to the path; a heading change at one step
    shifts every later position, so raw heading gradients are badly scaled.
    ``direction="heading"`` filters ``G`` itself.  Either falls back to the
    raw gradient when the result is not a descent direction.
    """
    times = trace.schedule.times
    dt = float(np.mean(np.diff(times)))
    sigma = settings.smoothing / dt
    if settings.direction == "position":
        g = local_position_gradient(trace, costate)
        if sigma > 0:
            g = gaussian_filter1d(g, sigma, axis=0, mode="nearest")
        g[0] = 0.0
        th = trace.schedule.headings
        normal = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        d = np.sum(normal * (g[1:] - g[:-1]), axis=-1) / np.diff(times)[:, None]
    else:
        d = gaussian_filter1d(G, sigma, axis=0, mode="reflect") if sigma > 0 else G
    if not np.vdot(d, G) > 0:
        d = G
    scale = float(np.max(np.abs(d))) if d.size else 0.0
    return d / scale if scale > 0 else d


def solve_tpbvp(config: MissionConfig, init: ControlSchedule, settings: TpbvpSettings | None = None,
                growth=None, callback: Callable[[int, float, float], None] | None = None) -> TpbvpResult:
    """Backtracking gradient descent on the headings using the exact adjoint gradient.

    Stops when the largest per-step gradient ``|dJ/dtheta_k|`` drops below
    ``epsilon``, when J stalls, or on the iteration / time budget; returns
    the best schedule with its nonincreasing J history.
    """
    settings = settings or TpbvpSettings()
    t_start = _time.monotonic()
    schedule = init
    tr, co, G = _sweep(config, schedule, growth)
    J = tr.J
    res = TpbvpResult(schedule)
    eta = settings.eta0
    for it in range(settings.max_iters):
        gnorm = float(np.max(np.abs(G))) if G.size else 0.0
        res.J_history.append(J)
        res.grad_norms.append(gnorm)
        res.schedule = schedule
        if callback is not None:
            callback(it, J, gnorm)
        if gnorm < settings.epsilon:
            res.status = "converged"
            break
        w = settings.stall_window
        if settings.ftol > 0 and it >= w and res.J_history[it - w] - J <= settings.ftol * abs(res.J_history[it - w]):
            res.status, res.message = "converged", f"relative decrease below {settings.ftol:g} over {w} iterations"
            break
        if it == settings.max_iters - 1:
            break
        if settings.time_budget is not None and _time.monotonic() - t_start > settings.time_budget:
            res.status, res.message = "time-budget", f"stopped after {it} iterations"
            break
        try:
            d = search_direction(tr, co, G, settings)
            for _ in range(settings.max_halvings + 1):
                trial = schedule.with_headings(schedule.headings - eta * d)
                tr_t, co_t, G_t = _sweep(config, trial, growth)
                if tr_t.J < J:
                    break
                eta *= settings.shrink
            else:
                res.status, res.message = "converged", "line search found no decrease"
                break
        except PmonError as exc:
            res.status, res.message = "error", f"iteration {it}: {exc}"
            break
        schedule, tr, co, G = trial, tr_t, co_t, G_t
        J = tr.J
        eta *= settings.expand
    return res
