import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pmon.descent as descent
from pmon.descent import (DescentSettings, a_upper, is_feasible, optimize, project_feasible,
                          project_vector, projected_gradient)
from pmon.errors import ConfigurationError, InfeasibleConfigurationError, NumericalFailure
from pmon.model import MissionConfig
from pmon.trajectory import B_MIN, EllipseParams, position, unstack_params

DEFAULT = MissionConfig()


def test_projection_identity_on_feasible():
    ps = [EllipseParams(5, 5, 4, 0.2, 0.0, 0.0), EllipseParams(14, 4, 3, 2, 1.0, 3.0)]
    assert is_feasible(ps, DEFAULT)
    assert project_feasible(ps, DEFAULT) == ps


def test_projection_clamps_center():
    # phi = 0: w_x = a = 3
    (p,) = project_feasible([EllipseParams(-1, 5, 3, 1, 0.0)], DEFAULT)
    assert p.X == 3.0 and p.Y == 5.0


def test_projection_clamps_axis_then_center():
    (p,) = project_feasible([EllipseParams(4, 5, 30, 1, 0.0)], DEFAULT)
    assert p.a == 10.0 and p.X == 10.0


def test_projection_keeps_rho0():
    (p,) = project_feasible([EllipseParams(-1, 5, 3, 1, 0.0, 2.5)], DEFAULT)
    assert p.rho0 == 2.5


def test_projection_rejects_tiny_space():
    cfg = MissionConfig(L1=1e-6, L2=1e-6, N=1)
    with pytest.raises(InfeasibleConfigurationError):
        project_feasible([EllipseParams(0, 0, 1, 1)], cfg)


def test_a_upper_for_rotated_ellipse():
    # phi = pi/2 turns the major axis vertical: limited by L2/2
    assert a_upper(1.0, np.pi / 2, DEFAULT) == pytest.approx(5.0)
    assert a_upper(1.0, 0.0, DEFAULT) == pytest.approx(10.0)


def test_projected_gradient_zeroes_outward_components():
    ps = [EllipseParams(3, 5, 3, 1, 0.0)]       # touching x = 0
    g, active = projected_gradient(ps, [1.0, 1.0, 1.0, 1.0, 1.0], DEFAULT)
    assert active[0] and g[0] == 0.0
    g, active = projected_gradient(ps, [-1.0, 1.0, 1.0, 1.0, 1.0], DEFAULT)
    assert not active[0] and g[0] == -1.0


def test_settings_validation():
    for kw in (dict(eta0=0), dict(epsilon=0), dict(max_iters=0), dict(step_rule="newton"), dict(shrink=1.0)):
        with pytest.raises(ConfigurationError):
            DescentSettings(**kw)


def test_zero_gradient_fixed_point():
    cfg = MissionConfig(L1=10, L2=10, N=1, r=0.3, T=5.0)
    init = [EllipseParams(5.5, 5.5, 0.1, 0.1)]
    best, trace = optimize(cfg, init, DescentSettings())
    assert trace.status == "converged"
    assert len(trace.records) == 1
    assert best == init


def test_descent_small_config(tmp_path):
    cfg = MissionConfig(L1=10, L2=6, N=1, r=3.0, T=30.0)
    seen = []
    best, trace = optimize(cfg, [EllipseParams(3, 3, 1, 0.2)], DescentSettings(max_iters=25),
                           callback=lambda rec: seen.append(rec.params))
    assert trace.status in ("converged", "iteration-cap")
    assert np.all(np.diff(trace.J) <= 0)
    assert trace.best_J == trace.J.min() < trace.J[0]
    assert len(seen) == len(trace.records)
    trace.write_csv(tmp_path / "d.csv")
    with open(tmp_path / "d.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "J", "grad_norm", "step"] and len(rows) == len(trace.records) + 1


def test_constant_step_rule_runs():
    cfg = MissionConfig(L1=10, L2=6, N=1, r=3.0, T=20.0)
    _, trace = optimize(cfg, [EllipseParams(3, 3, 1, 0.2)], DescentSettings(step_rule="constant", max_iters=3))
    assert len(trace.records) == 3 and trace.status == "iteration-cap"


def test_simulation_failure_reports_error(monkeypatch):
    cfg = MissionConfig(L1=10, L2=6, N=1, r=3.0, T=20.0)
    real = descent.simulate
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) > 1:
            raise NumericalFailure("boom", time=1.0, point_index=0)
        return real(*args, **kw)

    monkeypatch.setattr(descent, "simulate", flaky)
    best, trace = optimize(cfg, [EllipseParams(3, 3, 1, 0.2)])
    assert trace.status == "error"
    assert "iteration 1" in trace.message
    assert len(trace.records) == 1 and best == [EllipseParams(3, 3, 1, 0.2)]


# -- invariants -------------------------------------------------------------------

raw = st.lists(st.floats(-40, 40, allow_nan=False), min_size=5, max_size=5)


def inside(params, config, n=400):
    rho = np.linspace(0, 2 * np.pi, n)
    for p in params:
        pos = position(p, rho)
        if pos[:, 0].min() < -1e-9 or pos[:, 0].max() > config.L1 + 1e-9:
            return False
        if pos[:, 1].min() < -1e-9 or pos[:, 1].max() > config.L2 + 1e-9:
            return False
    return True


@pytest.mark.invariant
@settings(max_examples=200, deadline=None)
@given(raw)
def test_projection_is_feasible_and_idempotent(v):
    v = np.array(v)
    v[3] = max(abs(v[3]), 1e-9)
    v[2] = max(abs(v[2]), v[3])
    out = project_vector(v, DEFAULT)
    ps = unstack_params(out, [0.0])
    assert is_feasible(ps, DEFAULT)
    assert inside(ps, DEFAULT)
    np.testing.assert_allclose(project_vector(out, DEFAULT), out, atol=1e-12)
    assert ps[0].b >= B_MIN and ps[0].a >= ps[0].b


@pytest.mark.invariant
def test_iterates_feasible_and_monotone():
    cfg = MissionConfig(L1=10, L2=6, N=2, r=3.0, T=30.0)
    seen = []
    _, trace = optimize(cfg, [EllipseParams(2.5, 3, 2, 0.3), EllipseParams(7.5, 3, 2, 0.3, 0.0, np.pi)],
                        DescentSettings(max_iters=30, eta0=0.1), callback=lambda r: seen.append(r.params))
    assert np.all(np.diff(trace.J) <= 0)
    for vec in seen:
        ps = unstack_params(vec, [0.0, 0.0])
        assert inside(ps, cfg)
    assert trace.status in ("converged", "iteration-cap", "error")
