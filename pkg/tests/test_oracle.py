import warnings

import numpy as np
import pytest

from rhc_estim.model import AffineParamModel, RegressorMode, lorenz_model
from rhc_estim.numerics import TauGrid
from rhc_estim.ocp import Weights
from rhc_estim.oracle import (FrozenInstance, OracleReport, direct_cost, direct_ocp, fd_check,
                              field_cost, frozen_from_field, lq_check, lq_riccati_curve,
                              lq_riccati_oracle, lq_sweep, scalar_lq_model, sweep_consistency)
from rhc_estim.sweep import HorizonContext, PredictorKind, ReferencePredictor, forward_el

W = Weights.scaled_identity(3, 2)


def test_report_pass_fail():
    rep = OracleReport().add("a", 1e-9, 1e-6).add("b", 2e-6, 1e-6)
    assert not rep.passed
    assert rep.max_error == 2e-6
    assert "FAIL  b" in rep.to_text()
    lines = rep.to_csv().splitlines()
    assert lines[0] == "check,error,tolerance,passed" and lines[2].endswith(",0")


def test_fd_check_lorenz_general(lorenz):
    rep = fd_check(lorenz, W, 100)
    assert rep.passed, rep.to_text()
    assert rep.max_error <= 1e-6


def test_fd_check_lorenz_observer(lorenz):
    assert fd_check(lorenz, W, 20, mode=RegressorMode.OBSERVER).passed


def _linear():
    B = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -0.5]])

    def f(y):
        return np.zeros(3)

    def fj(y):
        return np.zeros((3, 3))

    def D(y):
        return B.copy()

    def Djc(y, th):
        return np.zeros((3, 3))

    def hc(y, lam, th):
        return np.zeros((3, 3))

    return AffineParamModel(3, 2, A, f, D, fj, Djc, hc, name="linear")


def test_fd_check_linear_exact():
    rep = fd_check(_linear(), W, 10, tolerance=1e-10, step=1e-2)
    assert rep.passed, rep.to_text()


def test_fd_check_catches_corrupted_jacobian():
    def bad_jac(y):
        J = np.zeros((3, 3))
        J[1, 0] = 28.0 - y[2]
        J[1, 2] = -y[0]
        J[2, 0] = y[1]
        J[2, 1] = 0.5 * y[0]  # should be y[0]
        return J

    good = lorenz_model()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bad = AffineParamModel(3, 2, good.A - np.diag([0, 28, 0]) + np.diag([0, 0, 0]),
                               good.f, good.D, bad_jac, good.D_jac_contract, good.hess_contract)
    bad.A = good.A.copy()
    rep = fd_check(bad, W, 5)
    assert not rep.passed
    assert rep.max_error >= 1e-2


def test_lq_closed_form():
    S0, u0 = lq_riccati_oracle(1.0, 1.0, 1.0, 1.0)
    assert S0 == pytest.approx(1.5231884, abs=1e-7)
    assert u0 == pytest.approx(-0.7615942, abs=1e-7)
    assert lq_riccati_oracle(1.0, 1.0, 1e-12, 1.0)[0] == pytest.approx(0.0, abs=1e-11)
    assert lq_riccati_oracle(2.0, 0.3, 0.7, 0.0)[1] == 0.0


@pytest.mark.parametrize("q,r", [(1.0, 1.0), (2.0, 0.5), (0.3, 3.0)])
def test_lq_curve_satisfies_riccati_ode(q, r):
    tau = np.linspace(0.0, 1.0, 2001)
    S = lq_riccati_curve(q, r, 1.0, tau)
    # dS/dtau from the closed form
    b = np.sqrt(q / r)
    dS = -2 * np.sqrt(q * r) * b / np.cosh(b * (1.0 - tau)) ** 2
    assert np.max(np.abs(dS - (S**2 / (2 * r) - 2 * q))) <= 1e-10


def test_lq_check_passes():
    rep = lq_check()
    assert rep.passed, rep.to_text()


def test_sweep_consistency_lq():
    fld, sw, ctx = lq_sweep(1.0, 1.0, 1.0, 1e-3)
    rep = sweep_consistency(fld, sw, ctx, a0=np.array([1.0]), tolerance=1e-8)
    assert rep.passed, rep.to_text()


def test_sweep_consistency_null_case():
    m = scalar_lq_model()
    ctx = HorizonContext(m, Weights([[1e-300]], [[1.0]]))
    fld = forward_el([0.0], [0.0], [0.0], ReferencePredictor(PredictorKind.ZERO_ORDER_HOLD),
                     TauGrid.from_horizon(1.0, 0.01), ctx)
    from rhc_estim.sweep import backward_sweep
    sw = backward_sweep(fld, np.zeros((1, 1)), np.zeros(1), ctx)
    rep = sweep_consistency(fld, sw, ctx)
    assert rep.max_error == 0.0


def _lq_instance(T=1.0, N=200):
    m = scalar_lq_model()
    return FrozenInstance(m, Weights([[1.0]], [[1.0]]), np.zeros(1), RegressorMode.GENERAL,
                          np.zeros((N + 1, 1)), np.array([1.0]), T, N)


def test_direct_ocp_matches_lq_closed_form():
    inst = _lq_instance()
    U, J, info = direct_ocp(inst)
    S0, u0 = lq_riccati_oracle(1.0, 1.0, 1.0, 1.0)
    # optimal cost y0^T P y0 with P = S0 / 2 in the sweep's scaling
    assert J == pytest.approx(S0 / 2, abs=1e-4)
    # closed-form feedback u = -tanh(1 - tau) y with y' = u
    tau = np.linspace(0.0, 1.0, inst.N + 1)
    y = np.cosh(1.0 - tau) / np.cosh(1.0)
    u = -np.tanh(1.0 - tau) * y
    assert u[0] == pytest.approx(u0)
    # the quadrature end weights only pin the two end nodes to first order
    assert np.max(np.abs(U[1:-1, 0] - u[1:-1])) <= 1e-4
    assert abs(U[0, 0] - u0) <= 5e-3


def test_direct_ocp_zero_error_start(lorenz):
    N = 20
    ctx = HorizonContext(lorenz, W, np.array([10.0, 8 / 3]))
    from rhc_estim.model import ParameterProfile
    pred = ReferencePredictor(PredictorKind.EXACT_LOOKAHEAD, ParameterProfile.constant((10.0, 8 / 3)))
    x0 = np.array([-3.0, -3.0, 15.0])
    fld = forward_el(x0, np.zeros(3), x0, pred, TauGrid(0.1, N, 0.1 / N), ctx)
    inst = frozen_from_field(fld, ctx)
    U, J, info = direct_ocp(inst, iterations=50)
    assert J <= 1e-20
    assert np.max(np.abs(U)) <= 1e-10
    assert field_cost(fld, W) <= 1e-20


def test_direct_cost_gradient_matches_differences():
    from rhc_estim.oracle import _cost_grad
    inst = _lq_instance(N=10)
    U = np.random.default_rng(2).normal(size=(11, 1))
    _, g = _cost_grad(inst, U)
    h = 1e-6
    for i in (0, 4, 9):
        e = np.zeros_like(U)
        e[i] = h
        fd = (direct_cost(inst, U + e) - direct_cost(inst, U - e)) / (2 * h)
        assert g[i, 0] == pytest.approx(fd, rel=1e-6, abs=1e-10)
