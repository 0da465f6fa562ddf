"""Projected gradient descent over stacked ellipse parameters."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InfeasibleConfigurationError, PmonError
from .model import MissionConfig
from .simulator import IntegratorOptions, simulate
from .trajectory import B_MIN, EllipseParams, stack_params, unstack_params

log = logging.getLogger(__name__)

STATUSES = ("converged", "iteration-cap", "error")


@dataclass(frozen=True)
class DescentSettings:
    step_rule: str = "backtracking"
    eta0: float = 1e-3
    epsilon: float = 1e-3
    max_iters: int = 500
    shrink: float = 0.5
    expand: float = 2.0
    max_halvings: int = 30
    ftol: float = 1e-6          # relative J decrease over ``stall_window`` iterations
    stall_window: int = 10

    def __post_init__(self):
        if self.step_rule not in ("constant", "backtracking"):
            raise ConfigurationError(f"unknown step rule {self.step_rule!r}")
        if not self.eta0 > 0:
            raise ConfigurationError("eta0 must be positive")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigurationError("max_iters must be an integer >= 1")
        if not 0 < self.shrink < 1:
            raise ConfigurationError("shrink must lie in (0, 1)")
        if not self.expand >= 1:
            raise ConfigurationError("expand must be >= 1")
        if not self.ftol >= 0:
            raise ConfigurationError("ftol must be non-negative")
        if int(self.stall_window) != self.stall_window or self.stall_window < 1:
            raise ConfigurationError("stall_window must be an integer >= 1")


# -- feasible set ---------------------------------------------------------------

def _half_widths(a, b, phi):
    c2, s2 = np.cos(phi) ** 2, np.sin(phi) ** 2
    return np.sqrt(a * a * c2 + b * b * s2), np.sqrt(a * a * s2 + b * b * c2)


def b_upper(config: MissionConfig) -> float:
    return min(config.L1, config.L2) / 2.0


def a_upper(b: float, phi: float, config: MissionConfig) -> float:
    """Largest semi-major axis whose bounding box fits in the mission space."""
    c2, s2 = np.cos(phi) ** 2, np.sin(phi) ** 2
    hx, hy = config.L1 / 2.0, config.L2 / 2.0
    bound = np.inf
    if c2 > 1e-15:
        bound = min(bound, np.sqrt(max(hx * hx - b * b * s2, 0.0) / c2))
    if s2 > 1e-15:
        bound = min(bound, np.sqrt(max(hy * hy - b * b * c2, 0.0) / s2))
    return float(max(bound, b))


def _check_space(config: MissionConfig) -> None:
    if b_upper(config) < B_MIN:
        raise InfeasibleConfigurationError(
            f"mission space {config.L1} x {config.L2} cannot hold an ellipse with b >= {B_MIN:g}"
        )


def project_vector(vec, config: MissionConfig) -> np.ndarray:
    """Projection of a raw stacked ``[X, Y, a, b, phi]*N`` vector (see ``project_feasible``)."""
    _check_space(config)
    out = np.array(vec, dtype=float).reshape(-1, 5)
    for row in out:
        X, Y, a, b, phi = row
        b = float(np.clip(b, B_MIN, b_upper(config)))
        a = float(np.clip(a, b, a_upper(b, phi, config)))
        b = min(b, a)
        wx, wy = _half_widths(a, b, phi)
        # roundoff can leave w slightly above L/2; the centre then pins to the middle
        X = float(np.clip(X, min(wx, config.L1 / 2), max(config.L1 - wx, config.L1 / 2)))
        Y = float(np.clip(Y, min(wy, config.L2 / 2), max(config.L2 - wy, config.L2 / 2)))
        row[:] = (X, Y, a, b, phi)
    return out.ravel()


def project_feasible(params: Sequence[EllipseParams], config: MissionConfig) -> list[EllipseParams]:
    """Clamp every ellipse so that its whole trajectory lies in the mission space.

    Order: b into ``[b_min, min(L1, L2)/2]``, a into ``[b, a_max(b, phi)]``,
    then the centre into ``[w, L - w]`` per axis with ``w`` the rotated
    bounding half-width.
    """
    params = list(params)
    vec = project_vector(stack_params(params), config)
    return unstack_params(vec, [p.rho0 for p in params])


def is_feasible(params: Sequence[EllipseParams], config: MissionConfig, tol: float = 1e-9) -> bool:
    for p in params:
        wx, wy = _half_widths(p.a, p.b, p.phi)
        if not (p.b >= B_MIN * (1 - 1e-9) and p.a >= p.b * (1 - 1e-12)):
            return False
        if p.X - wx < -tol or p.X + wx > config.L1 + tol:
            return False
        if p.Y - wy < -tol or p.Y + wy > config.L2 + tol:
            return False
    return True


def projected_gradient(params: Sequence[EllipseParams], grad, config: MissionConfig,
                       tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Gradient with components zeroed where a bound is active and descent would exit.

    Returns ``(projected_gradient, active_flags)``.
    """
    g = np.array(grad, dtype=float)
    active = np.zeros(g.shape, dtype=bool)
    for n, p in enumerate(params):
        wx, wy = _half_widths(p.a, p.b, p.phi)
        base = 5 * n
        # a descent step moves the parameter by -g
        bounds = (
            (0, p.X - wx, config.L1 - wx - p.X),
            (1, p.Y - wy, config.L2 - wy - p.Y),
            (2, p.a - p.b, a_upper(p.b, p.phi, config) - p.a),
            (3, p.b - B_MIN, min(p.a, b_upper(config)) - p.b),
        )
        for k, room_lo, room_hi in bounds:
            j = base + k
            if (room_lo <= tol and g[j] > 0) or (room_hi <= tol and g[j] < 0):
                active[j] = True
                g[j] = 0.0
    return g, active


# -- optimizer ------------------------------------------------------------------

@dataclass
class DescentRecord:
    iteration: int
    params: np.ndarray
    J: float
    grad_norm: float
    step: float
    active: np.ndarray


@dataclass
class DescentTrace:
    records: list[DescentRecord] = field(default_factory=list)
    status: str = "iteration-cap"
    message: str = ""
    n_evals: int = 0
    best_J: float = float("inf")

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "J", "grad_norm", "step"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.J), repr(r.grad_norm), repr(r.step)])


class DescentError(PmonError):
    """A simulation failed inside the optimizer."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


def optimize(config: MissionConfig, init_params: Sequence[EllipseParams],
             settings: DescentSettings | None = None, options: IntegratorOptions | None = None,
             growth=None, callback: Callable[[DescentRecord], None] | None = None,
             ) -> tuple[list[EllipseParams], DescentTrace]:
    """Minimize J over the ellipse parameters; returns the best iterate and its trace."""
    settings = settings or DescentSettings()
    options = options or IntegratorOptions()
    params = project_feasible(init_params, config)
    rho0s = [p.rho0 for p in params]
    trace = DescentTrace()

    def evaluate(ps, it):
        trace.n_evals += 1
        try:
            out = simulate(config, ps, options, ipa=True, growth=growth)
        except PmonError as exc:
            raise DescentError(f"simulation failed at iteration {it}: {exc}", it) from exc
        return out.J, out.grad_J

    try:
        J, g = evaluate(params, 0)
    except DescentError as exc:
        trace.status, trace.message = "error", str(exc)
        trace.best_J = float("nan")
        return params, trace

    eta = settings.eta0
    best = (J, params)
    for it in range(settings.max_iters):
        gp, active = projected_gradient(params, g, config)
        gnorm = float(np.max(np.abs(gp))) if gp.size else 0.0
        rec = DescentRecord(it, stack_params(params), J, gnorm, eta, active)
        trace.records.append(rec)
        if callback is not None:
            callback(rec)
        if gnorm < settings.epsilon:
            trace.status = "converged"
            break
        w = settings.stall_window
        if settings.ftol > 0 and it >= w:
            old = trace.records[it - w].J
            if old - J <= settings.ftol * abs(old):
                # J is only piecewise smooth; near a kink the gradient stays large
                trace.status = "converged"
                trace.message = f"relative decrease below {settings.ftol:g} over {w} iterations"
                break
        if it == settings.max_iters - 1:
            trace.status = "iteration-cap"
            break

        x = stack_params(params)
        try:
            if settings.step_rule == "constant":
                params = unstack_params(project_vector(x - eta * gp, config), rho0s)
                J, g = evaluate(params, it + 1)
            else:
                for _ in range(settings.max_halvings + 1):
                    trial = unstack_params(project_vector(x - eta * gp, config), rho0s)
                    Jt, gt = evaluate(trial, it + 1)
                    if Jt < J:
                        break
                    eta *= settings.shrink
                else:
                    trace.status = "converged"
                    trace.message = "line search found no decrease"
                    break
                params, J, g = trial, Jt, gt
                eta *= settings.expand
        except DescentError as exc:
            trace.status, trace.message = "error", str(exc)
            break
        if J < best[0]:
            best = (J, params)
    trace.best_J = float(best[0])
    return list(best[1]), trace
