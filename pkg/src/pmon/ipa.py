"""Infinitesimal perturbation analysis of the uncertainty cost.

The simulator computes ``grad_J`` inside its compiled loop as the exact
derivative of its own discretization (see ``_kernel``).  This module exposes
the continuous-time building blocks of that calculus (interval rate, event
time derivative, reset rule, time integral) and a finite-difference harness
that validates the full gradient against re-simulation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .errors import GrazingEventError
from .model import MissionConfig
from .simulator import IntegratorOptions, simulate
from .trajectory import PARAM_NAMES, EllipseParams, position_param_jacobian, stack_params, unstack_params

log = logging.getLogger(__name__)

GRAZING_TOL = _kernel.GRAZING_TOL
D_TOL = _kernel.D_TOL


def gradient_rate(config: MissionConfig, i: int, n: int, positions, params: Sequence[EllipseParams],
                  rho=None, dpos=None) -> np.ndarray:
    """Time derivative of dR_i/d(params of agent n) while R_i > 0.

    ``positions`` holds every agent's position (N, 2).  The position Jacobian
    of agent n is ``dpos`` (2, 5) when given, else the explicit partials at
    anomaly ``rho[n]``.  No growth rate enters: the rate of the gradient only
    depends on the sensing geometry.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    point = config.grid_points[i]
    if dpos is None:
        dpos = position_param_jacobian(params[n], rho[n])
    dpos = np.asarray(dpos, dtype=float)
    offsets = positions - point
    D = np.hypot(offsets[:, 0], offsets[:, 1])
    ranges = config.sensing_ranges
    p = np.where(D <= ranges, (1.0 - D / ranges) / config.C, 0.0)
    if D[n] > ranges[n] or D[n] < D_TOL:
        return np.zeros(5)
    others = np.prod(np.delete(1.0 - p, n))
    dp_dD = -1.0 / (config.C * ranges[n])
    dD_ds = offsets[n] / D[n]
    return -config.B * others * dp_dD * (dD_ds @ dpos)


def event_time_gradient(grad_row, rate_before: float, tol: float = GRAZING_TOL) -> np.ndarray:
    """Derivative of a hit-zero event time, ``-grad R_i(tau-) / rate``."""
    if abs(rate_before) < tol:
        raise GrazingEventError(
            f"event with crossing rate {rate_before:.3g} below singularity tolerance {tol:g}"
        )
    return -np.asarray(grad_row, dtype=float) / rate_before


def apply_event_reset(kind: str, grad_row) -> np.ndarray:
    """Gradient row just after an event of the given kind."""
    grad_row = np.asarray(grad_row, dtype=float)
    if kind == "hit-zero":
        return np.zeros_like(grad_row)
    if kind == "leave-zero":
        return grad_row.copy()
    raise ValueError(f"unknown event kind {kind!r}")


def accumulate_grad_J(times, values) -> np.ndarray:
    """Trapezoidal time integral of a gradient trace ``values`` (K, P).

    Event breakpoints enter as repeated times carrying the left and right
    limits of a jump.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 2:
        return np.zeros(values.shape[1:])
    w = np.diff(times)
    return np.einsum("k,k...->...", 0.5 * w, values[1:] + values[:-1])


# -- finite-difference validation ----------------------------------------------

@dataclass
class GradCheckRow:
    index: int
    agent: int
    param: str
    ipa: float
    fd: float
    rel_err: float
    grazing: bool
    passed: bool


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow] = field(default_factory=list)
    h: float = 1e-4
    rtol: float = 0.01
    atol: float = 1e-4

    @property
    def n_excluded(self) -> int:
        return sum(r.grazing for r in self.rows)

    @property
    def ok(self) -> bool:
        return all(r.passed or r.grazing for r in self.rows)

    @property
    def max_rel_err(self) -> float:
        errs = [r.rel_err for r in self.rows if not r.grazing]
        return max(errs) if errs else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component_index", "agent", "param_name", "ipa", "fd", "rel_err", "grazing", "passed"])
            for r in self.rows:
                w.writerow([r.index, r.agent, r.param, repr(r.ipa), repr(r.fd), repr(r.rel_err),
                            int(r.grazing), int(r.passed)])


def grad_check(config: MissionConfig, params: Sequence[EllipseParams],
               options: IntegratorOptions | None = None, h: float = 1e-4,
               rtol: float = 0.01, atol: float = 1e-4, growth=None) -> GradCheckReport:
    """Compare IPA ``grad_J`` with central differences of ``J``.

    A component is flagged as grazing when the event structure differs
    between the base run and either perturbed run, or when the base run has a
    near-zero-rate hit; flagged components are reported but not judged.
    """
    options = options or IntegratorOptions()
    params = list(params)
    base = simulate(config, params, options, ipa=True, growth=growth)
    vec = stack_params(params)
    rho0s = [p.rho0 for p in params]
    report = GradCheckReport(h=h, rtol=rtol, atol=atol)
    for idx in range(len(vec)):
        runs = []
        for sgn in (1.0, -1.0):
            v = vec.copy()
            v[idx] += sgn * h
            runs.append(simulate(config, unstack_params(v, rho0s), options, ipa=False, growth=growth))
        fd = (runs[0].J - runs[1].J) / (2 * h)
        g = float(base.grad_J[idx])
        grazing = base.n_grazing > 0 or any(
            r.n_events != base.n_events or r.n_grazing > 0 for r in runs
        )
        err = abs(g - fd)
        rel = err / max(abs(fd), abs(g), 1e-300)
        passed = err <= atol or rel <= rtol
        agent, k = divmod(idx, 5)
        if grazing:
            log.warning("component %d (agent %d, %s) crosses an event change; excluded",
                        idx, agent, PARAM_NAMES[k])
        report.rows.append(GradCheckRow(idx, agent, PARAM_NAMES[k], g, float(fd), float(rel),
                                        bool(grazing), bool(passed)))
    return report


def write_gradient_csv(path, grad, n_agents: int | None = None) -> None:
    """Gradient dump with rows ``(component_index, agent, param_name, value)``."""
    grad = np.asarray(grad, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component_index", "agent", "param_name", "value"])
        for idx, g in enumerate(grad):
            agent, k = divmod(idx, 5)
            w.writerow([idx, agent, PARAM_NAMES[k], repr(float(g))])
