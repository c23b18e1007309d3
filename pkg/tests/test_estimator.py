import dataclasses

import numpy as np
import pytest

from rhc_estim.estimator import (Estimator, EstimatorConfig, init, lyapunov, run_scenario,
                                 scenario_predictor)
from rhc_estim.model import LORENZ_THETA, ParameterProfile, RegressorMode, lorenz_model
from rhc_estim.ocp import PriorSpec, Weights
from rhc_estim.scenario import builtin_scenario
from rhc_estim.sweep import PredictorKind, ReferencePredictor

X0 = np.array([-3.0, -3.0, 15.0])


def test_lyapunov_examples():
    assert lyapunov(np.zeros(3)) == 0.0
    assert lyapunov(np.ones(3)) == 1.5
    assert lyapunov(np.array([-10.0, -10.0, 22.0]) - X0) == pytest.approx(73.5)


def test_init_starts_on_solution_manifold():
    cfg = builtin_scenario("lorenz-const").estimator
    for y0 in ((-10.0, -10.0, 22.0), (-6.0, -6.0, 22.0)):
        st = init(cfg, y0)
        assert np.max(np.abs(st.lam)) <= 1e-12  # y and x differ only by rounding
        assert not np.any(st.theta_applied)
        np.testing.assert_array_equal(st.y, y0)


def test_config_validation():
    w = Weights.scaled_identity(3, 2)
    with pytest.raises(ValueError):
        EstimatorConfig(w, dt=0.0)
    with pytest.raises(ValueError):
        EstimatorConfig(w, A_s=-np.eye(3))
    with pytest.raises(ValueError):
        EstimatorConfig(w, t_integrator="midpoint")
    assert np.array_equal(EstimatorConfig(w).A_s, 160 * np.eye(3))


def test_zero_length_run():
    tab = run_scenario(builtin_scenario("lorenz-const").with_overrides(t_end=0.0))
    assert len(tab) == 1
    np.testing.assert_array_equal(tab.e[0], (-7.0, -7.0, 7.0))
    assert tab.V[0] == pytest.approx(73.5)


def test_first_step_takes_degenerate_branch(lorenz):
    s = builtin_scenario("lorenz-const")
    cfg = s.estimator
    pred, etas, _ = scenario_predictor(s, 4)
    est = Estimator(lorenz, cfg, pred)
    st = est.init(s.y0)
    rate, F, tb, status, _ = est.evaluate(st, s.x0)
    assert status == 0 and not np.any(F) and not np.any(tb)
    assert not np.any(rate[3:6])  # costate held while T = 0
    np.testing.assert_allclose(rate[:3], lorenz.rhs(s.y0, np.zeros(2)))


def test_synchronized_fixed_point(lorenz):
    prof = ParameterProfile.constant(LORENZ_THETA)
    cfg = dataclasses.replace(builtin_scenario("lorenz-const").estimator,
                              mode=RegressorMode.OBSERVER,
                              prior=PriorSpec(np.array(LORENZ_THETA), 0.0))
    est = Estimator(lorenz, cfg, ReferencePredictor(PredictorKind.EXACT_LOOKAHEAD, prof))
    st = est.init(X0)
    x = X0.copy()
    for k in range(30):
        st = est.step(st, x, 0.0, None, 0.0, (k + 1) * cfg.dt)
        x = st.x_pred
        np.testing.assert_allclose(st.y, x, atol=1e-12)
        np.testing.assert_allclose(st.theta_applied, LORENZ_THETA, atol=1e-12)
        assert np.max(np.abs(st.lam)) <= 1e-12  # y and x differ only by rounding


def test_short_run_is_deterministic_and_shaped():
    s = builtin_scenario("lorenz-tv-noise").with_overrides(t_end=0.5)
    a = run_scenario(s)
    b = run_scenario(s)
    assert len(a) == 51
    assert a.failure is None
    for name in ("x", "y", "theta_est", "F_norm", "eta"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_allclose(a.V, 0.5 * np.sum((a.y - a.x) ** 2, axis=1))
    np.testing.assert_allclose(a.theta_true[:, 0], 10 * np.sin(a.t) / (a.t + 1))


def test_seed_changes_noise_only_when_present():
    s = builtin_scenario("lorenz-const-noise").with_overrides(t_end=0.05)
    a = run_scenario(s)
    b = run_scenario(s.with_overrides(seed=7))
    assert not np.array_equal(a.eta, b.eta)
    c = run_scenario(builtin_scenario("lorenz-const").with_overrides(t_end=0.05))
    assert c.eta is None


def test_snapshots_recorded():
    s = builtin_scenario("lorenz-const").with_overrides(t_end=0.2)
    tab = run_scenario(s, snapshots=(0.1,))
    state, x, eta = tab.snapshots[0.1]
    assert state.t == pytest.approx(0.1)
    np.testing.assert_array_equal(x, tab.x[10])
    np.testing.assert_array_equal(state.y, tab.y[10])


def test_euler_integrator_runs():
    s = builtin_scenario("lorenz-const").with_overrides(t_end=0.3)
    s = dataclasses.replace(s, estimator=dataclasses.replace(s.estimator, t_integrator="euler"))
    tab = run_scenario(s)
    assert tab.failure is None and len(tab) == 31
