import csv

import numpy as np
import pytest

from pmon.errors import ConfigurationError, DegenerateCoverageError, NumericalFailure
from pmon.model import MissionConfig
from pmon.search import sample_feasible
from pmon.simulator import (IntegratorOptions, agent_paths, normalized_cost, run_positions, simulate,
                            time_grid, write_cost_csv, write_events_csv, write_trajectory_csv,
                            zero_agent_cost)
from pmon.trajectory import B_MIN, EllipseParams


def small_config(**kw):
    d = dict(L1=10, L2=5, r=3.0, T=20.0, N=1)
    d.update(kw)
    return MissionConfig(**d)


def reference_cost(config, pos_fn, dt=1e-5):
    """Brute-force explicit Euler with a rectangle-rule cost, for one agent."""
    K = int(round(config.T / dt))
    R = np.array(config.R0, dtype=float)
    A = np.array(config.A, dtype=float)
    pts = config.grid_points
    r = config.sensing_model(0).r
    J = 0.0
    for k in range(K):
        s = pos_fn(k * dt)
        D = np.hypot(pts[:, 0] - s[0], pts[:, 1] - s[1])
        p = np.where(D <= r, (1 - D / r) / config.C, 0.0)
        rate = A - config.B * p
        rate = np.where((R <= 0) & (rate < 0), 0.0, rate)
        R_new = np.maximum(R + dt * rate, 0.0)
        J += 0.5 * dt * (R.sum() + R_new.sum())
        R = R_new
    return J


def test_zero_agents_closed_form():
    cfg = MissionConfig(N=0, T=50.0)
    out = simulate(cfg, [], ipa=False)
    assert out.J == pytest.approx(zero_agent_cost(cfg), rel=1e-12)
    assert out.n_events == 0


def test_stationary_agent_matches_reference_integrator():
    cfg = MissionConfig(L1=2, L2=2, N=1, T=1.0)
    assert cfg.M == 9
    p = EllipseParams(1.0, 1.0, B_MIN, B_MIN)
    J = simulate(cfg, [p], ipa=False).J
    J_ref = reference_cost(cfg, lambda t: (1.0, 1.0))
    assert J == pytest.approx(J_ref, rel=1e-4)


def test_moving_agent_matches_reference_integrator():
    cfg = MissionConfig(L1=4, L2=2, N=1, T=3.0, r=2.0)
    p = EllipseParams(2.0, 1.0, 1.5, 0.5, 0.3, 0.4)
    J = simulate(cfg, [p], IntegratorOptions(dt=1e-3), ipa=False).J
    times = time_grid(cfg.T, 1e-3)
    pos = agent_paths([p], times, False)[0][:, 0]
    J_ref = reference_cost(cfg, lambda t: pos[min(int(round(t / 1e-3)), len(pos) - 1)], dt=1e-4)
    assert J == pytest.approx(J_ref, rel=1e-3)


def test_time_grid():
    t = time_grid(1.0, 0.3)
    np.testing.assert_allclose(t, [0, 0.3, 0.6, 0.9, 1.0])
    with pytest.raises(ConfigurationError):
        time_grid(0.0, 0.1)
    with pytest.raises(ConfigurationError):
        IntegratorOptions(dt=0.0)


def test_wrong_agent_count():
    with pytest.raises(ConfigurationError):
        simulate(small_config(N=2), [EllipseParams(5, 2, 1, 1)])


def test_non_finite_state_raises_numerical_failure():
    cfg = small_config()
    times = time_grid(cfg.T, 0.01)
    pos = np.full((len(times), 1, 2), 5.0)
    pos[100:, 0, 0] = np.nan
    with pytest.raises(NumericalFailure) as info:
        run_positions(cfg, times, pos, record_R=True)
    assert info.value.time is not None


def test_ipa_toggle_does_not_change_cost():
    cfg = small_config(N=2)
    ps = [EllipseParams(3, 2, 2, 1, 0.3), EllipseParams(7, 3, 1.5, 0.5, 1.0, 2.0)]
    a = simulate(cfg, ps, ipa=True)
    b = simulate(cfg, ps, ipa=False)
    assert a.J == b.J
    assert b.grad_J is None and a.grad_J.shape == (10,)


# -- normalized cost --------------------------------------------------------------

def test_normalized_cost_direction_for_small_minor_axis():
    cfg = MissionConfig(N=1, T=400.0)
    line = normalized_cost(cfg, EllipseParams(10, 5, 5, B_MIN, 0, 0))
    thin = normalized_cost(cfg, EllipseParams(10, 5, 5, 0.1, 0, 0))
    assert thin.psi == line.psi
    assert thin.value < line.value


def test_coverage_area_grows_with_minor_axis():
    cfg = MissionConfig(N=1, T=20.0)
    psis = [normalized_cost(cfg, EllipseParams(10, 5, 5, b, 0, 0)).psi for b in (B_MIN, 0.5, 1, 2, 4)]
    assert all(x <= y for x, y in zip(psis, psis[1:]))
    assert psis[1] > psis[0]


def test_normalized_cost_vanishes_for_short_horizon():
    cfg = MissionConfig(N=1, T=1e-3)
    nc = normalized_cost(cfg, EllipseParams(10, 5, 5, 0.5))
    assert nc.value < 1e-2


def test_normalized_cost_no_coverage():
    cfg = MissionConfig(N=1, r=0.1, T=5.0)
    with pytest.raises(DegenerateCoverageError):
        normalized_cost(cfg, EllipseParams(10.5, 5.5, 0.2, 0.1))


# -- CSV output ---------------------------------------------------------------------

def test_csv_writers(tmp_path):
    cfg = small_config()
    out = simulate(cfg, [EllipseParams(5, 2.5, 3, 1)], ipa=False, trace=True)
    write_trajectory_csv(tmp_path / "traj.csv", out, stride=100)
    write_cost_csv(tmp_path / "cost.csv", out, stride=100)
    write_events_csv(tmp_path / "events.csv", out)
    with open(tmp_path / "traj.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "agent_index", "x", "y"]
    assert len(rows) == 1 + len(range(0, len(out.times), 100))
    with open(tmp_path / "cost.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "sum_R"] and float(rows[1][1]) == pytest.approx(cfg.R0.sum())
    with open(tmp_path / "events.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau_k", "point_index", "kind"]
    assert len(rows) - 1 == out.n_events
    assert {r[2] for r in rows[1:]} <= {"hit-zero", "leave-zero"}


def test_trajectory_csv_requires_trace(tmp_path):
    out = simulate(small_config(), [EllipseParams(5, 2.5, 3, 1)], ipa=False)
    with pytest.raises(ValueError):
        write_trajectory_csv(tmp_path / "t.csv", out)


# -- invariants -----------------------------------------------------------------------

def random_runs(n, seed=0, **kw):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        cfg = small_config(N=int(rng.integers(1, 3)), **kw)
        yield cfg, sample_feasible(rng, cfg)


@pytest.mark.invariant
def test_uncertainty_never_negative():
    for cfg, ps in random_runs(10):
        times = time_grid(cfg.T, 0.01)
        pos, _ = agent_paths(ps, times, False)
        out = run_positions(cfg, times, pos, record_R=True)
        assert out.R_trace.min() >= 0.0
        assert out.R_final.min() >= 0.0


@pytest.mark.invariant
def test_events_alternate_per_point():
    for cfg, ps in random_runs(10, seed=1):
        out = simulate(cfg, ps, ipa=False)
        for i in range(cfg.M):
            kinds = [e.kind for e in out.events if e.point_index == i]
            # every point starts with R0 > 0, so the first event is a hit
            expected = ["hit-zero", "leave-zero"] * len(kinds)
            assert kinds == expected[:len(kinds)]
        assert np.all(np.diff(out.event_times) >= 0)


@pytest.mark.invariant
def test_determinism_bit_identical():
    for cfg, ps in random_runs(5, seed=2):
        a = simulate(cfg, ps)
        b = simulate(cfg, ps)
        assert a.J == b.J
        assert np.array_equal(a.grad_J, b.grad_J)
        assert np.array_equal(a.event_times, b.event_times)
        assert np.array_equal(a.event_points, b.event_points)


@pytest.mark.invariant
def test_cost_additivity_across_restart():
    for cfg, ps in random_runs(5, seed=3):
        times = time_grid(cfg.T, 0.01)
        pos, _ = agent_paths(ps, times, False)
        full = run_positions(cfg, times, pos)
        h = len(times) // 2
        first = run_positions(cfg, times[:h + 1], pos[:h + 1])
        second = run_positions(cfg.replace(R0=first.R_final), times[h:], pos[h:])
        assert first.J + second.J == pytest.approx(full.J, rel=1e-9)


@pytest.mark.invariant
def test_step_refinement_is_second_order_without_events():
    # R0 large enough that no point reaches zero: the only error is the
    # piecewise-linear interpolation of agent positions
    ratios = []
    for cfg, ps in random_runs(10, seed=4, R0=200.0):
        J = [simulate(cfg, ps, IntegratorOptions(dt=dt), ipa=False) for dt in (0.1, 0.05, 0.025)]
        assert all(o.n_events == 0 for o in J)
        d1, d2 = J[0].J - J[1].J, J[1].J - J[2].J
        ratios.append(d1 / d2)
    assert np.all((np.array(ratios) > 3.0) & (np.array(ratios) < 5.0)), ratios
