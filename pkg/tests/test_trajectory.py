import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pmon.errors import ConfigurationError
from pmon.trajectory import (B_MIN, EllipseParams, anomaly_at, anomaly_rate, arc_length,
                             arc_length_partials, arc_speed, perimeter, position,
                             position_param_jacobian, sample_path, stack_params, unstack_params)


def random_params(rng, **kw):
    b = rng.uniform(0.1, 3.0)
    d = dict(X=rng.uniform(-5, 5), Y=rng.uniform(-5, 5), a=b + rng.uniform(0, 3), b=b,
             phi=rng.uniform(0, np.pi), rho0=rng.uniform(0, 2 * np.pi))
    d.update(kw)
    return EllipseParams(**d)


@pytest.mark.parametrize("p, rho, expected", [
    (EllipseParams(0, 0, 2, 1, 0), 0.0, (2, 0)),
    (EllipseParams(0, 0, 2, 1, 0), np.pi / 2, (0, 1)),
    (EllipseParams(3, 4, 2, 1, np.pi / 2), 0.0, (3, 6)),
])
def test_position_examples(p, rho, expected):
    np.testing.assert_allclose(position(p, rho), expected, atol=1e-15)


def test_axes_invariant_enforced():
    with pytest.raises(ConfigurationError):
        EllipseParams(0, 0, 1, 2)
    with pytest.raises(ConfigurationError):
        EllipseParams(0, 0, 1, 0)
    with pytest.raises(ConfigurationError):
        EllipseParams(0, np.nan, 1, 1)


def test_anomaly_rate_circle():
    p = EllipseParams(1, 2, 3, 3, 0.4)
    rho = np.linspace(0, 2 * np.pi, 13)
    np.testing.assert_allclose(anomaly_rate(p, rho), 1 / 3, rtol=1e-14)


def test_anomaly_rate_unrotated():
    p = EllipseParams(0, 0, 2, 1, 0)
    rho = np.linspace(0, 6, 7)
    np.testing.assert_allclose(anomaly_rate(p, rho), 1 / np.sqrt(4 * np.sin(rho) ** 2 + np.cos(rho) ** 2))


def test_anomaly_rate_matches_numerical_arc_speed():
    p = EllipseParams(0, 0, 2, 1, np.pi / 3)
    rho, eps = 0.7, 1e-6
    speed = np.linalg.norm(position(p, rho + eps) - position(p, rho - eps)) / (2 * eps)
    assert anomaly_rate(p, rho) == pytest.approx(1 / speed, rel=1e-9)


def _sympy_jacobian():
    X, Y, a, b, phi, rho = sp.symbols("X Y a b phi rho", real=True)
    sx = X + a * sp.cos(rho) * sp.cos(phi) - b * sp.sin(rho) * sp.sin(phi)
    sy = Y + a * sp.cos(rho) * sp.sin(phi) + b * sp.sin(rho) * sp.cos(phi)
    J = sp.Matrix([sx, sy]).jacobian([X, Y, a, b, phi])
    return sp.lambdify((X, Y, a, b, phi, rho), J, "numpy")


def test_jacobian_matches_symbolic_derivative():
    f = _sympy_jacobian()
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = random_params(rng)
        rho = rng.uniform(-10, 10)
        ref = np.array(f(p.X, p.Y, p.a, p.b, p.phi, rho), dtype=float)
        np.testing.assert_allclose(position_param_jacobian(p, rho), ref, atol=1e-13)


def test_jacobian_special_columns():
    p = EllipseParams(1, 1, 2, 1, 0)
    J = position_param_jacobian(p, np.pi / 2)
    np.testing.assert_allclose(J[:, 0], [1, 0])
    np.testing.assert_allclose(J[:, 1], [0, 1])
    # phi = 0: s_y = Y + b sin(rho), so d s / d b = (0, 1) at rho = pi/2
    np.testing.assert_allclose(J[:, 3], [0, 1], atol=1e-15)


def test_arc_length_of_circle_and_perimeter():
    p = EllipseParams(0, 0, 2, 2)
    assert perimeter(p) == pytest.approx(4 * np.pi, rel=1e-14)
    assert arc_length(p, np.pi / 3) == pytest.approx(2 * np.pi / 3, rel=1e-14)
    # Ramanujan's approximation is accurate to ~1e-9 at this eccentricity
    q = EllipseParams(0, 0, 3, 2)
    h = ((3 - 2) / (3 + 2)) ** 2
    ram = np.pi * 5 * (1 + 3 * h / (10 + np.sqrt(4 - 3 * h)))
    assert perimeter(q) == pytest.approx(ram, rel=1e-8)


def test_arc_length_partials_match_fd():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = random_params(rng)
        rho = rng.uniform(-7, 7)
        eps = 1e-6
        fa = (arc_length(p.replace(a=p.a + eps), rho) - arc_length(p.replace(a=p.a - eps), rho)) / (2 * eps)
        fb = (arc_length(p.replace(b=p.b + eps), rho) - arc_length(p.replace(b=p.b - eps), rho)) / (2 * eps)
        da, db = arc_length_partials(p, rho)
        assert da == pytest.approx(fa, rel=1e-6, abs=1e-8)
        assert db == pytest.approx(fb, rel=1e-6, abs=1e-8)


def test_arc_length_partials_near_circle_series_branch():
    p = EllipseParams(0, 0, 2.0, 1.9995)   # modulus below the series threshold
    eps = 1e-7
    rho = 2.3
    fa = (arc_length(p.replace(a=p.a + eps), rho) - arc_length(p.replace(a=p.a - eps), rho)) / (2 * eps)
    assert arc_length_partials(p, rho)[0] == pytest.approx(fa, rel=1e-6)


def test_anomaly_at_inverts_arc_length():
    p = EllipseParams(0, 0, 4, 0.2, 0.3, rho0=1.0)
    t = np.linspace(0, 50, 101)
    rho = anomaly_at(p, t)
    np.testing.assert_allclose(arc_length(p, rho) - arc_length(p, p.rho0), t, atol=1e-10)
    assert anomaly_at(p, 0.0) == pytest.approx(p.rho0, abs=1e-12)


def test_sample_path_total_jacobian_matches_fd():
    rng = np.random.default_rng(7)
    times = np.linspace(0, 30, 61)
    for _ in range(5):
        p = random_params(rng)
        path = sample_path(p, times)
        v = p.as_vector()
        for j in range(5):
            eps = 1e-6
            hi = sample_path(EllipseParams(*(v + eps * np.eye(5)[j]), rho0=p.rho0), times, False).pos
            lo = sample_path(EllipseParams(*(v - eps * np.eye(5)[j]), rho0=p.rho0), times, False).pos
            np.testing.assert_allclose(path.dpos[:, :, j], (hi - lo) / (2 * eps), atol=2e-6)


def test_stack_unstack_roundtrip():
    ps = [EllipseParams(1, 2, 3, 1, 0.5, 0.1), EllipseParams(4, 5, 2, 2, 0.0, 3.0)]
    v = stack_params(ps)
    assert v.tolist() == [1, 2, 3, 1, 0.5, 4, 5, 2, 2, 0.0]
    assert unstack_params(v, [0.1, 3.0]) == ps


def test_canonical_is_same_trajectory():
    p = EllipseParams(1, 2, 3, 1, phi=-4.0, rho0=0.3)
    c = p.canonical()
    assert 0 <= c.phi < np.pi and 0 <= c.rho0 < 2 * np.pi
    t = np.linspace(0, 20, 41)
    np.testing.assert_allclose(sample_path(p, t, False).pos, sample_path(c, t, False).pos, atol=1e-9)


# -- invariants ------------------------------------------------------------------

params_st = st.builds(
    lambda X, Y, b, extra, phi, rho0: EllipseParams(X, Y, b + extra, b, phi, rho0),
    st.floats(-10, 10), st.floats(-10, 10), st.floats(0.05, 5), st.floats(0, 5),
    st.floats(0, np.pi), st.floats(0, 2 * np.pi),
)


@pytest.mark.invariant
@settings(max_examples=100, deadline=None)
@given(params_st, st.floats(-20, 20))
def test_unit_speed(p, rho):
    ds = np.linalg.norm(np.stack([
        -p.a * np.sin(rho) * np.cos(p.phi) - p.b * np.cos(rho) * np.sin(p.phi),
        -p.a * np.sin(rho) * np.sin(p.phi) + p.b * np.cos(rho) * np.cos(p.phi),
    ]))
    assert ds * anomaly_rate(p, rho) == pytest.approx(1.0, abs=1e-9)
    assert arc_speed(p, rho) * anomaly_rate(p, rho) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.invariant
def test_sampled_motion_has_unit_speed():
    p = EllipseParams(0, 0, 5, 0.5, 0.7, 0.2)
    t = np.linspace(0, 40, 400001)
    pos = sample_path(p, t, False).pos
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    assert seg.sum() == pytest.approx(40.0, rel=1e-8)


@pytest.mark.invariant
@settings(max_examples=100, deadline=None)
@given(params_st, st.floats(-20, 20))
def test_periodicity(p, rho):
    np.testing.assert_allclose(position(p, rho), position(p, rho + 2 * np.pi), rtol=0, atol=1e-12)


@pytest.mark.invariant
def test_jacobian_matches_fd_100_draws():
    rng = np.random.default_rng(11)
    eps = 1e-6
    for _ in range(100):
        p = random_params(rng)
        rho = rng.uniform(0, 2 * np.pi)
        v = p.as_vector()
        J = position_param_jacobian(p, rho)
        for j in range(5):
            hi = position(EllipseParams(*(v + eps * np.eye(5)[j])), rho)
            lo = position(EllipseParams(*(v - eps * np.eye(5)[j])), rho)
            np.testing.assert_allclose(J[:, j], (hi - lo) / (2 * eps), atol=1e-7)


@pytest.mark.invariant
def test_degenerate_limit_bounding_box():
    p = EllipseParams(10, 5, 5, B_MIN, 0.0)
    rho = np.linspace(0, 2 * np.pi, 10001)
    pos = position(p, rho)
    assert np.ptp(pos[:, 1]) == pytest.approx(2 * B_MIN, rel=1e-6)
    assert np.ptp(pos[:, 0]) == pytest.approx(10.0, rel=1e-12)
