"""Mission space, sampling grid, sensing model and uncertainty dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError


def lattice_grid(L1: float, L2: float, spacing: float = 1.0) -> np.ndarray:
    """Uniform lattice over [0, L1] x [0, L2], x-major, shape (M, 2)."""
    nx = int(round(L1 / spacing)) + 1
    ny = int(round(L2 / spacing)) + 1
    xs = np.linspace(0.0, L1, nx)
    ys = np.linspace(0.0, L2, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SensingModel:
    """Linear-decay detection probability ``p(D) = (1 - D/r)/C`` on ``D <= r``."""

    r: float
    C: float = 1.0
    kind: str = "linear-decay"

    def __post_init__(self):
        if self.kind != "linear-decay":
            raise ConfigurationError(f"unknown sensing model kind {self.kind!r}")
        if not self.r > 0:
            raise ConfigurationError("sensing range r must be positive")
        if not self.C >= 1.0:
            # p(0) = 1/C must remain a probability
            raise ConfigurationError("normalization constant C must be >= 1")

    def prob(self, D):
        D = np.asarray(D, dtype=float)
        return np.where(D <= self.r, (1.0 - D / self.r) / self.C, 0.0)

    def dprob_dD(self, D):
        """One-sided derivative; the kink at ``D == r`` takes the inside value."""
        D = np.asarray(D, dtype=float)
        return np.where(D <= self.r, -1.0 / (self.C * self.r), 0.0)


@dataclass(frozen=True, eq=False)
class MissionConfig:
    """Rectangular mission space with M sample points and N agents.

    ``A`` and ``R0`` may be given as scalars and are broadcast over the grid.
    ``r`` is a scalar or one range per agent.
    """

    L1: float = 20.0
    L2: float = 10.0
    grid_points: np.ndarray = None
    A: np.ndarray = 0.2
    B: float = 6.0
    R0: np.ndarray = 2.0
    r: float | tuple = 4.0
    T: float = 200.0
    N: int = 2
    C: float = 1.0

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0):
            raise ConfigurationError("mission space dimensions L1, L2 must be positive")
        grid = self.grid_points
        if grid is None:
            grid = lattice_grid(self.L1, self.L2)
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if grid.size == 0:
            grid = grid.reshape(0, 2)
        if grid.ndim != 2 or grid.shape[1] != 2:
            raise ConfigurationError("grid_points must have shape (M, 2)")
        tol = 1e-12
        if grid.size and (
            grid[:, 0].min() < -tol or grid[:, 0].max() > self.L1 + tol
            or grid[:, 1].min() < -tol or grid[:, 1].max() > self.L2 + tol
        ):
            raise ConfigurationError("grid_points must lie inside [0, L1] x [0, L2]")
        M = grid.shape[0]
        A = _per_point(self.A, M, "A")
        R0 = _per_point(self.R0, M, "R0")
        if M and not (np.all(A > 0) and np.all(A < self.B)):
            raise ConfigurationError("growth rates must satisfy B > A_i > 0")
        if np.any(R0 < 0):
            raise ConfigurationError("initial uncertainty R0 must be nonnegative")
        if not self.T > 0:
            raise ConfigurationError("horizon T must be positive")
        if int(self.N) != self.N or self.N < 0:
            raise ConfigurationError("agent count N must be a nonnegative integer")
        if not self.C >= 1.0:
            raise ConfigurationError("normalization constant C must be >= 1")
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if r.size not in (1, self.N) and not (self.N == 0):
            raise ConfigurationError("r must be a scalar or have one entry per agent")
        if np.any(r <= 0):
            raise ConfigurationError("sensing range r must be positive")
        object.__setattr__(self, "grid_points", _frozen(grid))
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "R0", _frozen(R0))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "r", float(r[0]) if r.size == 1 else tuple(float(v) for v in r))

    @property
    def M(self) -> int:
        return self.grid_points.shape[0]

    @property
    def sensing_ranges(self) -> np.ndarray:
        if isinstance(self.r, tuple):
            return np.array(self.r, dtype=float)
        return np.full(self.N, float(self.r))

    def sensing_model(self, n: int = 0) -> SensingModel:
        r = self.r[n] if isinstance(self.r, tuple) else self.r
        return SensingModel(r=float(r), C=self.C)

    @property
    def cell_area(self) -> float:
        return self.L1 * self.L2 / self.M

    def replace(self, **changes) -> "MissionConfig":
        kw = dict(
            L1=self.L1, L2=self.L2, grid_points=self.grid_points, A=self.A, B=self.B,
            R0=self.R0, r=self.r, T=self.T, N=self.N, C=self.C,
        )
        if ("L1" in changes or "L2" in changes) and "grid_points" not in changes:
            kw["grid_points"] = None
        if kw["grid_points"] is None or "grid_points" in changes:
            # uniform per-point fields follow the new grid
            for name in ("A", "R0"):
                v = kw[name]
                if name not in changes and v.size and np.all(v == v[0]):
                    kw[name] = float(v[0])
        kw.update(changes)
        return MissionConfig(**kw)

    def __eq__(self, other):
        if not isinstance(other, MissionConfig):
            return NotImplemented
        return (
            self.L1 == other.L1 and self.L2 == other.L2 and self.B == other.B
            and self.T == other.T and self.N == other.N and self.C == other.C
            and self.r == other.r
            and np.array_equal(self.grid_points, other.grid_points)
            and np.array_equal(self.A, other.A) and np.array_equal(self.R0, other.R0)
        )

    __hash__ = None


def _per_point(v, M: int, name: str) -> np.ndarray:
    try:
        return np.broadcast_to(np.asarray(v, dtype=float), (M,))
    except ValueError:
        raise ConfigurationError(f"{name} must be a scalar or have one entry per grid point") from None


def detection_prob(model: SensingModel, point, agent_pos) -> float:
    D = float(np.hypot(point[0] - agent_pos[0], point[1] - agent_pos[1]))
    return float(model.prob(D))


def joint_detection_prob(per_agent_probs: Sequence[float]) -> float:
    """Probability that at least one agent detects, ``1 - prod(1 - p_n)``.

    Accumulated as ``P += p_n (1 - P)`` so that a single nonzero entry is
    returned bit-exactly.
    """
    P = 0.0
    for p in per_agent_probs:
        P += p * (1.0 - P)
    return P


def uncertainty_rate(R_i: float, A_i: float, B: float, P_i: float) -> float:
    """Right-hand side of the uncertainty dynamics at a single point."""
    if R_i <= 0.0 and A_i <= B * P_i:
        return 0.0
    return A_i - B * P_i


def joint_detection_field(config: MissionConfig, positions: np.ndarray) -> np.ndarray:
    """Joint detection probability at every grid point for agent positions (N, 2)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    P = np.zeros(config.M)
    for n, s in enumerate(positions):
        D = np.hypot(config.grid_points[:, 0] - s[0], config.grid_points[:, 1] - s[1])
        P += config.sensing_model(n).prob(D) * (1.0 - P)
    return P
