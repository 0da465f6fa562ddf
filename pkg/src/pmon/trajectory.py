"""Elliptical agent trajectories traversed at unit speed.

The eccentric anomaly is advanced through the arc-length map rather than by
integrating its rate: the rate blows up like ``1/b`` at the ends of a thin
ellipse, while arc length stays well behaved.  With

    w(rho) = sqrt(a^2 sin^2 rho + b^2 cos^2 rho)      (= |ds/drho|)
    S(rho) = int_0^rho w(u) du = a [E(rho - pi/2 | m) + E(pi/2 | m)],  m = 1 - b^2/a^2

an agent that starts at ``rho0`` satisfies ``S(rho(t)) = S(rho0) + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, astuple
from typing import Sequence

import numpy as np
from scipy.special import ellipeinc, ellipkinc

from .errors import ConfigurationError

B_MIN = 1e-6
PARAM_NAMES = ("X", "Y", "a", "b", "phi")


@dataclass(frozen=True)
class EllipseParams:
    X: float
    Y: float
    a: float
    b: float
    phi: float = 0.0
    rho0: float = 0.0

    def __post_init__(self):
        for name in ("X", "Y", "a", "b", "phi", "rho0"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"ellipse parameter {name} must be finite")
        # relative slack so that projected parameters with a == b round-trip
        if self.b < B_MIN * (1 - 1e-9) or self.a < self.b * (1 - 1e-12):
            raise ConfigurationError(
                f"ellipse axes must satisfy a >= b >= {B_MIN:g} (got a={self.a}, b={self.b})"
            )

    def as_vector(self) -> np.ndarray:
        """The five differentiated parameters ``[X, Y, a, b, phi]``."""
        return np.array([self.X, self.Y, self.a, self.b, self.phi])

    def replace(self, **kw) -> "EllipseParams":
        d = dict(zip(("X", "Y", "a", "b", "phi", "rho0"), astuple(self)))
        d.update(kw)
        return EllipseParams(**d)

    def canonical(self) -> "EllipseParams":
        """Same trajectory with ``phi`` in [0, pi) and ``rho0`` in [0, 2 pi)."""
        phi, rho0 = self.phi, self.rho0
        k = np.floor(phi / np.pi)
        phi -= k * np.pi
        rho0 += k * np.pi  # rotating by pi is a half-period phase shift
        if phi >= np.pi:
            phi = 0.0
        return self.replace(phi=float(phi), rho0=float(np.mod(rho0, 2 * np.pi)))

    @property
    def half_widths(self) -> tuple[float, float]:
        """Half-extents of the axis-aligned bounding box."""
        c, s = np.cos(self.phi), np.sin(self.phi)
        wx = np.sqrt(self.a**2 * c**2 + self.b**2 * s**2)
        wy = np.sqrt(self.a**2 * s**2 + self.b**2 * c**2)
        return float(wx), float(wy)


def stack_params(params: Sequence[EllipseParams]) -> np.ndarray:
    """Agent-major stacked vector ``[X1, Y1, a1, b1, phi1, X2, ...]``."""
    if not params:
        return np.zeros(0)
    return np.concatenate([p.as_vector() for p in params])


def unstack_params(vec, rho0s: Sequence[float]) -> list[EllipseParams]:
    vec = np.asarray(vec, dtype=float).reshape(-1, 5)
    return [EllipseParams(*map(float, v), rho0=float(r)) for v, r in zip(vec, rho0s)]


def position(params: EllipseParams, rho):
    """Agent position on the ellipse at eccentric anomaly ``rho``."""
    rho = np.asarray(rho, dtype=float)
    cr, sr = np.cos(rho), np.sin(rho)
    cp, sp = np.cos(params.phi), np.sin(params.phi)
    sx = params.X + params.a * cr * cp - params.b * sr * sp
    sy = params.Y + params.a * cr * sp + params.b * sr * cp
    return np.stack([sx, sy], axis=-1)


def dposition_drho(params: EllipseParams, rho):
    rho = np.asarray(rho, dtype=float)
    cr, sr = np.cos(rho), np.sin(rho)
    cp, sp = np.cos(params.phi), np.sin(params.phi)
    dx = -params.a * sr * cp - params.b * cr * sp
    dy = -params.a * sr * sp + params.b * cr * cp
    return np.stack([dx, dy], axis=-1)


def arc_speed(params: EllipseParams, rho):
    """``|ds/drho|``; independent of orientation."""
    rho = np.asarray(rho, dtype=float)
    return np.sqrt((params.a * np.sin(rho)) ** 2 + (params.b * np.cos(rho)) ** 2)


def anomaly_rate(params: EllipseParams, rho):
    """``drho/dt`` giving unit Cartesian speed along the ellipse."""
    rho = np.asarray(rho, dtype=float)
    cr, sr = np.cos(rho), np.sin(rho)
    cp, sp = np.cos(params.phi), np.sin(params.phi)
    a, b = params.a, params.b
    return ((a * sr * cp + b * cr * sp) ** 2 + (a * sr * sp - b * cr * cp) ** 2) ** -0.5


def position_param_jacobian(params: EllipseParams, rho):
    """Explicit partials ``d(s_x, s_y)/d(X, Y, a, b, phi)`` at fixed ``rho``.

    Returns shape ``rho.shape + (2, 5)``.
    """
    rho = np.asarray(rho, dtype=float)
    cr, sr = np.cos(rho), np.sin(rho)
    cp, sp = np.cos(params.phi), np.sin(params.phi)
    a, b = params.a, params.b
    jac = np.zeros(rho.shape + (2, 5))
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    jac[..., 0, 2] = cr * cp
    jac[..., 1, 2] = cr * sp
    jac[..., 0, 3] = -sr * sp
    jac[..., 1, 3] = sr * cp
    jac[..., 0, 4] = -a * cr * sp - b * sr * cp
    jac[..., 1, 4] = a * cr * cp - b * sr * sp
    return jac


# -- arc length -------------------------------------------------------------

def _modulus(params: EllipseParams) -> float:
    return max(0.0, 1.0 - (params.b / params.a) ** 2)


def arc_length(params: EllipseParams, rho):
    """Arc length ``S(rho)`` from ``rho = 0``; ``rho`` may be unwrapped."""
    m = _modulus(params)
    theta = np.asarray(rho, dtype=float) - np.pi / 2
    return params.a * (ellipeinc(theta, m) - ellipeinc(-np.pi / 2, m))


def perimeter(params: EllipseParams) -> float:
    return float(arc_length(params, 2 * np.pi))


def _sin_power_integral(phi, n):
    """``int_0^phi sin^n u du`` for even ``n`` via the reduction formula."""
    s, c = np.sin(phi), np.cos(phi)
    out = np.asarray(phi, dtype=float)
    for k in range(2, n + 1, 2):
        out = -(s ** (k - 1)) * c / k + (k - 1) / k * out
    return out


def _dE_dm(phi, m):
    """Derivative of the incomplete elliptic integral E(phi | m) in m."""
    if m > 1e-3:
        return (ellipeinc(phi, m) - ellipkinc(phi, m)) / (2.0 * m)
    # series of sqrt(1 - m sin^2) in m; truncation error O(m^3)
    return (
        -0.5 * _sin_power_integral(phi, 2)
        - 0.25 * m * _sin_power_integral(phi, 4)
        - 0.1875 * m**2 * _sin_power_integral(phi, 6)
    )


def arc_length_partials(params: EllipseParams, rho):
    """``(dS/da, dS/db)`` at anomaly ``rho`` (unwrapped allowed)."""
    a, b = params.a, params.b
    m = _modulus(params)
    theta = np.asarray(rho, dtype=float) - np.pi / 2
    G = ellipeinc(theta, m) - ellipeinc(-np.pi / 2, m)
    Gm = _dE_dm(theta, m) - _dE_dm(-np.pi / 2, m)
    dS_da = G + 2.0 * b * b / (a * a) * Gm
    dS_db = -2.0 * b / a * Gm
    return dS_da, dS_db


def anomaly_at(params: EllipseParams, t, tol: float = 1e-13):
    """Unwrapped eccentric anomaly at times ``t`` for unit-speed travel."""
    t = np.asarray(t, dtype=float)
    P = perimeter(params)
    sigma = float(arc_length(params, params.rho0)) + t
    laps = np.floor(sigma / P)
    target = sigma - laps * P  # in [0, P)

    # bracket from a coarse table, then safeguarded Newton
    table_rho = np.linspace(0.0, 2 * np.pi, 1025)
    table_S = arc_length(params, table_rho)
    j = np.clip(np.searchsorted(table_S, target, side="right") - 1, 0, len(table_rho) - 2)
    lo, hi = table_rho[j], table_rho[j + 1]
    x = np.interp(target, table_S, table_rho)
    for _ in range(100):
        f = arc_length(params, x) - target
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        w = arc_speed(params, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(w > 0, f / w, 0.0)
        x_new = x - step
        bad = ~((x_new > lo) & (x_new < hi)) | (w <= 0)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        done = np.abs(x_new - x) <= tol
        x = x_new
        if np.all(done):
            break
    return x + 2 * np.pi * laps


@dataclass
class SampledPath:
    """Positions and their total parameter derivatives on a time grid."""

    times: np.ndarray
    rho: np.ndarray
    pos: np.ndarray    # (K, 2)
    dpos: np.ndarray   # (K, 2, 5), includes the dependence of rho(t) on (a, b)


def sample_path(params: EllipseParams, times, with_jacobian: bool = True) -> SampledPath:
    times = np.asarray(times, dtype=float)
    rho = anomaly_at(params, times)
    pos = position(params, rho)
    dpos = None
    if with_jacobian:
        dpos = position_param_jacobian(params, rho)
        # differentiate S(rho(t)) = S(rho0) + t at fixed t
        Sa0, Sb0 = arc_length_partials(params, params.rho0)
        Sa, Sb = arc_length_partials(params, rho)
        w = arc_speed(params, rho)
        tangent = dposition_drho(params, rho) / w[..., None]
        dpos[..., :, 2] += tangent * (Sa0 - Sa)[..., None]
        dpos[..., :, 3] += tangent * (Sb0 - Sb)[..., None]
    return SampledPath(times=times, rho=rho, pos=pos, dpos=dpos)
