import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhc_estim.numerics import (IntegrationError, SingularWeightError, TauGrid, check_spd,
                                rk4_step, solve_spd)


def test_rk4_zero_field_is_identity():
    y = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(rk4_step(lambda t, v: np.zeros(3), y, 0.01), y)


def test_rk4_exponential_decay_matches_taylor():
    out = rk4_step(lambda t, v: -v, np.array([1.0]), 0.1)
    h = 0.1
    assert out[0] == pytest.approx(1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24, abs=1e-15)
    assert out[0] == pytest.approx(0.90483750, abs=1e-8)


def test_rk4_uses_stage_times():
    # y' = t integrates exactly
    out = rk4_step(lambda t, v: np.array([t]), np.array([0.0]), 0.5, t=1.0)
    assert out[0] == pytest.approx(0.5 * (1.5**2 - 1.0), abs=1e-14)


def test_rk4_reports_blow_up():
    with pytest.raises(IntegrationError):
        rk4_step(lambda t, v: np.array([np.inf]), np.array([1.0]), 0.1)
    with pytest.raises(ValueError):
        rk4_step(lambda t, v: v, np.array([1.0]), 0.0)


def test_solve_spd_examples():
    np.testing.assert_allclose(solve_spd(np.eye(2), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_allclose(solve_spd(np.diag([0.5, 0.5]), [1.0, 2.0]), [2.0, 4.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_spd_residual(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(3, 3))
    M = B @ B.T + 0.5 * np.eye(3)
    b = rng.normal(size=3)
    v = solve_spd(M, b)
    assert np.linalg.norm(M @ v - b) <= 1e-12 * max(1.0, np.linalg.norm(b) * np.linalg.cond(M))


def test_check_spd_rejects_indefinite():
    with pytest.raises(SingularWeightError, match="weights.Q not positive definite"):
        check_spd(np.diag([1.0, -1.0]), "weights.Q")
    with pytest.raises(SingularWeightError):
        check_spd(np.array([[1.0, 2.0], [0.0, 1.0]]), "M")


@pytest.mark.parametrize("T,N", [(0.0, 1), (0.3160603, 63), (0.5, 100), (0.0049, 1)])
def test_tau_grid_sizes(T, N):
    g = TauGrid.from_horizon(T, 0.005)
    assert g.node_count == N
    assert g.nodes[-1] == pytest.approx(T)
    assert len(g.nodes) == N + 1


@given(st.floats(0.0, 5.0), st.floats(1e-3, 0.1))
def test_tau_grid_step_close_to_target(T, target):
    g = TauGrid.from_horizon(T, target)
    assert g.node_count >= 1
    if T >= target:
        assert abs(g.step - target) <= 0.5 * target
