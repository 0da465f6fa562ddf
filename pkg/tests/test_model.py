import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmon.errors import ConfigurationError
from pmon.model import (MissionConfig, SensingModel, detection_prob, joint_detection_field,
                        joint_detection_prob, lattice_grid, uncertainty_rate)

probs = st.floats(0.0, 1.0)


def test_default_grid_matches_lattice():
    cfg = MissionConfig()
    assert cfg.M == 231
    assert cfg.grid_points[0].tolist() == [0.0, 0.0]
    assert cfg.grid_points[-1].tolist() == [20.0, 10.0]
    assert cfg.cell_area == pytest.approx(200 / 231)


@pytest.mark.parametrize("D, expected", [(0.0, 1.0), (4.0, 0.0), (2.0, 0.5), (5.0, 0.0)])
def test_detection_prob_examples(D, expected):
    m = SensingModel(r=4.0)
    assert detection_prob(m, (0.0, 0.0), (D, 0.0)) == pytest.approx(expected, abs=1e-15)


def test_normalization_constant_scales_probability():
    assert SensingModel(r=4.0, C=2.0).prob(0.0) == 0.5


@pytest.mark.parametrize("ps, expected", [([0.5, 0.5], 0.75), ([0, 0, 0], 0.0), ([0.3], 0.3)])
def test_joint_detection_examples(ps, expected):
    assert joint_detection_prob(ps) == pytest.approx(expected)


@pytest.mark.parametrize("R, A, B, P, expected", [
    (0.0, 0.2, 6.0, 1.0, 0.0),
    (2.0, 0.2, 6.0, 0.0, 0.2),
    (0.0, 0.2, 6.0, 0.01, 0.14),
])
def test_uncertainty_rate_examples(R, A, B, P, expected):
    assert uncertainty_rate(R, A, B, P) == pytest.approx(expected)


@pytest.mark.parametrize("kw", [
    dict(L1=0), dict(A=7.0), dict(A=0.0), dict(R0=-1.0), dict(T=0), dict(N=-1), dict(r=0.0),
    dict(grid_points=[[30.0, 1.0]]), dict(C=0.5), dict(A=[0.2, 0.2]),
])
def test_mission_config_rejects_invalid(kw):
    with pytest.raises(ConfigurationError):
        MissionConfig(**kw)


def test_mission_config_equality_and_replace():
    a = MissionConfig()
    b = MissionConfig().replace(T=200.0)
    assert a == b
    c = a.replace(L1=10, L2=5)
    assert c.M == 66
    assert c != a


def test_mission_config_arrays_are_read_only():
    cfg = MissionConfig()
    with pytest.raises(ValueError):
        cfg.A[0] = 1.0


def test_joint_field_matches_pointwise():
    cfg = MissionConfig(L1=4, L2=2, N=2)
    pos = np.array([[1.0, 1.0], [3.0, 0.5]])
    P = joint_detection_field(cfg, pos)
    for i, w in enumerate(cfg.grid_points):
        p = [detection_prob(cfg.sensing_model(n), w, pos[n]) for n in range(2)]
        assert P[i] == pytest.approx(1 - (1 - p[0]) * (1 - p[1]))


@pytest.mark.invariant
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 5), st.floats(1, 3))
def test_detection_prob_nonincreasing_and_bounded(d1, d2, r, C):
    m = SensingModel(r=r, C=C)
    lo, hi = min(d1, d2), max(d1, d2)
    assert m.prob(lo) >= m.prob(hi)
    assert 0.0 <= m.prob(lo) <= 1.0 / C


@pytest.mark.invariant
@given(st.floats(0.1, 5))
def test_detection_prob_continuous_at_range(r):
    m = SensingModel(r=r)
    assert m.prob(r * (1 - 1e-12)) == pytest.approx(0.0, abs=1e-10)
    assert m.prob(r) == 0.0


@pytest.mark.invariant
@given(st.lists(probs, min_size=1, max_size=5), st.integers(0, 4), probs)
def test_joint_detection_monotone(ps, idx, bump):
    idx %= len(ps)
    raised = list(ps)
    raised[idx] = max(ps[idx], bump)
    assert joint_detection_prob(raised) >= joint_detection_prob(ps) - 1e-15


@pytest.mark.invariant
@given(probs, st.integers(0, 4))
def test_joint_detection_single_nonzero_exact(p, zeros):
    assert joint_detection_prob([p] + [0.0] * zeros) == p


@pytest.mark.invariant
@given(st.floats(0, 5), st.floats(0.01, 1), st.floats(0, 1))
def test_rate_never_drives_zero_negative(R, A, P):
    B = 6.0
    rate = uncertainty_rate(R, A, B, P)
    if R == 0.0:
        assert rate >= 0.0


def test_lattice_grid_spacing():
    g = lattice_grid(2, 1, 0.5)
    assert g.shape == (15, 2)
