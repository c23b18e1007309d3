"""Independent checks: finite differences, a closed-form Riccati case, brute-force
optimisation of a frozen horizon problem and the sweep's linear relation."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .model import AffineParamModel, RegressorMode, dynamics_jacobian, regressor
from .numerics import TauGrid
from .ocp import (Weights, horizon_at, assemble_glk, hamiltonian, hamiltonian_grad_y,
                  hamiltonian_hess_yy, htheta_y, stage_cost, stationary_theta_bar)
from .estimator import run_scenario, scenario_predictor
from .sweep import (HorizonContext, PredictorKind, ReferencePredictor, backward_sweep,
                    forward_el, terminal_conditions)


@dataclass
class Check:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error <= self.tolerance)


@dataclass
class OracleReport:
    checks: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, name, error, tolerance):
        self.checks.append(Check(name, float(error), float(tolerance)))
        return self

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def max_error(self):
        return max((c.error for c in self.checks), default=0.0)

    def to_text(self):
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: error {c.error:.3e} "
                 f"(tolerance {c.tolerance:.1e})" for c in self.checks]
        lines += [f"      {k}: {v}" for k, v in self.notes.items()]
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "error", "tolerance", "passed"])
        for c in self.checks:
            w.writerow([c.name, repr(c.error), repr(c.tolerance), int(c.passed)])
        return buf.getvalue()


def _rel(a, b):
    """Max-norm error scaled by the reference magnitude (absolute below 1)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def _fd(fun, v, h):
    """Central-difference Jacobian of ``fun`` with respect to vector ``v``."""
    v = np.asarray(v, dtype=float)
    cols = []
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = h
        cols.append((np.atleast_1d(fun(v + e)) - np.atleast_1d(fun(v - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _sample_state(rng, n):
    # covers the Lorenz attractor's range
    return rng.uniform(-20.0, 20.0, n) + np.where(np.arange(n) == n - 1, 25.0, 0.0)


def fd_check(model, weights, sample_count=100, mode=RegressorMode.GENERAL, seed=0,
             prior=None, tolerance=1e-6, step=1e-6):
    """Compare analytic derivatives with central differences at random states.

    ``step`` is the difference step relative to the state size; for models
    at most quadratic in the state a large step is exact and avoids rounding.
    Covers the response Jacobian, H_y, H_theta_y, H_yy and the sweep
    coefficients G, L, K, the latter checked against differences of the
    Euler-Lagrange field with the stationary estimate substituted.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    mode = RegressorMode(mode)
    rng = np.random.default_rng(seed)
    n, p = model.n, model.p
    prior = np.zeros(p) if prior is None else np.asarray(prior, dtype=float)
    Q2, Rinv2 = weights.Q2, weights.Rinv2
    worst = {k: 0.0 for k in ("jacobian", "H_y", "H_theta_y", "H_yy", "G", "L", "K")}
    for _ in range(sample_count):
        y = _sample_state(rng, n)
        x = y + rng.normal(0.0, 1.0, n)
        lam = rng.normal(0.0, 1.0, n)
        tb = rng.normal(0.0, 1.0, p)
        theta = prior + tb
        h = step * max(1.0, np.linalg.norm(y))

        J = dynamics_jacobian(model, y, x, theta, mode)
        Jfd = _fd(lambda v: model.rhs(v if mode is RegressorMode.GENERAL else x, theta), y, h)
        worst["jacobian"] = max(worst["jacobian"], _rel(J, Jfd))

        g = hamiltonian_grad_y(y, lam, tb, x, weights, model, prior, mode)
        gfd = _fd(lambda v: hamiltonian(v, lam, tb, x, weights, model, prior, mode), y, h)
        worst["H_y"] = max(worst["H_y"], _rel(g, gfd))

        Hty = htheta_y(model, y, lam, mode)
        Htyfd = _fd(lambda v: regressor(model, v, x, mode).T @ lam, y, h)
        worst["H_theta_y"] = max(worst["H_theta_y"], _rel(Hty, Htyfd))

        Hyy = hamiltonian_hess_yy(y, lam, tb, weights, model, prior, mode)
        Hyyfd = _fd(lambda v: hamiltonian_grad_y(v, lam, tb, x, weights, model, prior, mode), y, h)
        worst["H_yy"] = max(worst["H_yy"], _rel(Hyy, Hyyfd))

        # sweep coefficients from the compiled kernel vs the reduced field
        G, L, K = model.kernels.glk(y, x, lam, model.A, Q2, Rinv2, prior, mode.code)

        def star(v, l):
            at = v if mode is RegressorMode.GENERAL else x
            return stationary_theta_bar(at, l, weights, model, mode)

        def ydot(v, l):
            at = v if mode is RegressorMode.GENERAL else x
            return model.rhs(at, prior + star(v, l))

        def hy(v, l):
            return hamiltonian_grad_y(v, l, star(v, l), x, weights, model, prior, mode)

        worst["G"] = max(worst["G"], _rel(G, _fd(lambda v: ydot(v, lam), y, h)))
        worst["L"] = max(worst["L"], _rel(L, -_fd(lambda l: ydot(y, l), lam, step)))
        worst["K"] = max(worst["K"], _rel(K, _fd(lambda v: hy(v, lam), y, h)))
    report = OracleReport()
    for k, v in worst.items():
        report.add(f"fd {k}", v, tolerance)
    report.notes["samples"] = sample_count
    report.notes["mode"] = mode.value
    return report


# ----------------------------------------------------------------------------
# scalar LQ instance: y' = theta_bar, cost q y^2 + r theta_bar^2

@njit
def _lq_f(y):
    return np.zeros(1)


@njit
def _lq_f_jac(y):
    return np.zeros((1, 1))


@njit
def _lq_D(y):
    return np.ones((1, 1))


@njit
def _lq_D_jac(y, theta):
    return np.zeros((1, 1))


@njit
def _lq_hess(y, lam, theta):
    return np.zeros((1, 1))


def scalar_lq_model():
    return AffineParamModel(1, 1, np.zeros((1, 1)), _lq_f, _lq_D, _lq_f_jac, _lq_D_jac,
                            _lq_hess, name="scalar-lq")


def lq_riccati_oracle(q, r, T, y0):
    """Closed-form ``S(0)`` and first estimate for the scalar LQ instance.

    ``S' = S^2/(2r) - 2q`` backwards from ``S(T) = 0`` gives
    ``S(tau) = 2 sqrt(q r) tanh(sqrt(q/r) (T - tau))``.
    """
    if not (q > 0 and r > 0):
        raise ValueError("q and r must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    S0 = 2.0 * np.sqrt(q * r) * np.tanh(np.sqrt(q / r) * T)
    return S0, -S0 * y0 / (2.0 * r)


def lq_riccati_curve(q, r, T, tau):
    return 2.0 * np.sqrt(q * r) * np.tanh(np.sqrt(q / r) * (T - np.asarray(tau)))


def lq_sweep(q=1.0, r=1.0, T=1.0, h=1e-3):
    """Run the package's forward pass and backward sweep on the scalar LQ case.

    Returns ``(field, sweep, ctx)``.
    """
    model = scalar_lq_model()
    ctx = HorizonContext(model, Weights([[q]], [[r]]), np.zeros(1), RegressorMode.GENERAL)
    grid = TauGrid.from_horizon(T, h)
    pred = ReferencePredictor(PredictorKind.ZERO_ORDER_HOLD)
    fld = forward_el([1.0], [0.0], [0.0], pred, grid, ctx)
    sw = backward_sweep(fld, np.zeros((1, 1)), np.zeros(1), ctx)
    return fld, sw, ctx


def lq_check(q=1.0, r=1.0, T=1.0, h=1e-3, tolerance=1e-6):
    _, sw, _ = lq_sweep(q, r, T, h)
    S0, _ = lq_riccati_oracle(q, r, T, 1.0)
    rep = OracleReport().add("lq S(0) vs closed form", abs(sw.S[0, 0, 0] - S0), tolerance)
    rep.notes["S0"] = f"{sw.S[0, 0, 0]:.10f} (closed form {S0:.10f})"
    return rep


# ----------------------------------------------------------------------------
# frozen horizon problems

@dataclass(eq=False)
class FrozenInstance:
    """One horizon problem with the reference trajectory held fixed.

    ``x_mid`` (drive at interval midpoints) is only needed when the response
    is evaluated at the drive state.
    """

    model: object
    weights: Weights
    prior: np.ndarray
    mode: RegressorMode
    x_ref: np.ndarray
    y0: np.ndarray
    T: float
    N: int
    x_mid: np.ndarray = None

    def __post_init__(self):
        self.mode = RegressorMode(self.mode)
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        if self.x_ref.shape != (self.N + 1, self.model.n):
            raise ValueError("x_ref must hold N+1 nodes")
        if self.x_mid is None:
            self.x_mid = 0.5 * (self.x_ref[1:] + self.x_ref[:-1])

    @property
    def h(self):
        return self.T / self.N


def frozen_from_field(fld, ctx):
    """Freeze the drive prediction of a horizon solve into an instance."""
    return FrozenInstance(ctx.model, ctx.weights, ctx.prior.copy(), ctx.mode, fld.x_ref.copy(),
                          fld.y[0].copy(), fld.grid.horizon_T, fld.grid.node_count,
                          fld.x_mid.copy())


def _trap_weights(N, h):
    w = np.full(N + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def field_cost(fld, weights):
    """Trapezoid quadrature of the stage cost along a continuation horizon field."""
    e = fld.y - fld.x_ref
    L = np.array([stage_cost(e[i], fld.theta_bar[i], weights) for i in range(len(e))])
    return float(_trap_weights(len(e) - 1, fld.grid.step) @ L)


def _simulate(inst, U):
    """RK4 with the estimate linear between nodes; returns nodes and step Jacobians."""
    m, n, N, h = inst.model, inst.model.n, inst.N, inst.h
    general = inst.mode is RegressorMode.GENERAL
    Y = np.empty((N + 1, n))
    Phi_y = np.empty((N, n, n))
    Phi_0 = np.empty((N, n, m.p))
    Phi_1 = np.empty((N, n, m.p))
    Y[0] = inst.y0
    I = np.eye(n)
    zp = np.zeros((n, m.p))
    # stage weights on (U[i], U[i+1])
    mix = ((1.0, 0.0), (0.5, 0.5), (0.5, 0.5), (0.0, 1.0))
    for i in range(N):
        xs = (inst.x_ref[i], inst.x_mid[i], inst.x_mid[i], inst.x_ref[i + 1])
        y = Y[i]
        ks, dk_y, dk_0, dk_1 = [], [], [], []
        for j, c in enumerate((0.0, 0.5, 0.5, 1.0)):
            if j == 0:
                ys, dys, d0, d1 = y, I, zp, zp
            else:
                ys = y + c * h * ks[-1]
                dys = I + c * h * dk_y[-1]
                d0 = c * h * dk_0[-1]
                d1 = c * h * dk_1[-1]
            a0, a1 = mix[j]
            th = inst.prior + a0 * U[i] + a1 * U[i + 1]
            at = ys if general else xs[j]
            Dm = m.D(at)
            ks.append(m.A @ at + m.f(at) + Dm @ th)
            if general:
                Jy = m.A + m.f_jac(ys) + m.D_jac_contract(ys, th)
                dk_y.append(Jy @ dys)
                dk_0.append(Jy @ d0 + a0 * Dm)
                dk_1.append(Jy @ d1 + a1 * Dm)
            else:
                dk_y.append(np.zeros((n, n)))
                dk_0.append(a0 * Dm)
                dk_1.append(a1 * Dm)
        Y[i + 1] = y + (h / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
        Phi_y[i] = I + (h / 6.0) * (dk_y[0] + 2 * dk_y[1] + 2 * dk_y[2] + dk_y[3])
        Phi_0[i] = (h / 6.0) * (dk_0[0] + 2 * dk_0[1] + 2 * dk_0[2] + dk_0[3])
        Phi_1[i] = (h / 6.0) * (dk_1[0] + 2 * dk_1[1] + 2 * dk_1[2] + dk_1[3])
    return Y, Phi_y, Phi_0, Phi_1


def direct_cost(inst, U):
    """Trapezoid cost of a node-wise estimate trajectory ``U`` (shape N+1, p)."""
    Y = _simulate(inst, U)[0]
    w = _trap_weights(inst.N, inst.h)
    Q, R = inst.weights.Q, inst.weights.R
    e = Y - inst.x_ref
    return float(w @ (np.einsum("ij,jk,ik->i", e, Q, e) + np.einsum("ij,jk,ik->i", U, R, U)))


def _cost_grad(inst, U):
    Y, Py, P0, P1 = _simulate(inst, U)
    w = _trap_weights(inst.N, inst.h)
    Q, R = inst.weights.Q, inst.weights.R
    e = Y - inst.x_ref
    J = float(w @ (np.einsum("ij,jk,ik->i", e, Q, e) + np.einsum("ij,jk,ik->i", U, R, U)))
    grad = 2.0 * w[:, None] * (U @ R)
    mu = 2.0 * w[-1] * (Q @ e[-1])
    for i in range(inst.N - 1, -1, -1):
        grad[i] += P0[i].T @ mu
        grad[i + 1] += P1[i].T @ mu
        mu = Py[i].T @ mu + 2.0 * w[i] * (Q @ e[i])
    return J, grad


def direct_ocp(inst, iterations=2000, gtol=1e-10, U0=None):
    """Minimise the frozen horizon cost with L-BFGS over node-wise estimates.

    The estimate is linear between nodes, matching the trapezoid quadrature
    of its cost to second order.  The gradient comes from the discrete adjoint of
    the RK4 transcription; variables are scaled by the square root of the
    quadrature weights so the problem is mesh independent.
    Returns ``(U, cost, info)``.
    """
    p = inst.model.p
    shape = (inst.N + 1, p)
    U = np.zeros(shape) if U0 is None else np.array(U0, dtype=float).reshape(shape)
    sw = np.sqrt(_trap_weights(inst.N, inst.h))[:, None]

    def fun(v):
        J, g = _cost_grad(inst, v.reshape(shape) / sw)
        return J, (g / sw).ravel()

    res = minimize(fun, (U * sw).ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": iterations, "gtol": gtol, "ftol": 1e-15, "maxcor": 30})
    U = res.x.reshape(shape) / sw
    info = {"iterations": int(res.nit), "grad_norm": float(np.max(np.abs(res.jac))),
            "converged": bool(res.success), "message": str(res.message)}
    return U, float(res.fun), info


# ----------------------------------------------------------------------------
# sweep relation check

def sweep_consistency(fld, sw, ctx, a0=None, tolerance=1e-6):
    """Check ``b = S a + c`` along the horizon for the linearised system.

    ``(a, b)`` solve ``a' = G a - L b + D pdot``, ``b' = -K a - G^T b - fl``
    forward in tau with ``a(0) = a0`` (zero by default, the estimator's case)
    and ``b(0) = S(0) a0 + c(0)``; the check reports the worst violation
    relative to the largest ``|b|`` along the horizon.
    """
    model = ctx.model
    n = model.n
    h = fld.grid.step
    N = fld.grid.node_count
    Z = np.hstack([fld.y, fld.lam, fld.x_ref])
    dZ = fld.rates
    pdot = ctx.prior_rate

    def coeffs(z):
        y, lam, x = z[:n], z[n:2 * n], z[2 * n:]
        G, L, K = model.kernels.glk(y, x, lam, model.A, ctx.weights.Q2, ctx.weights.Rinv2,
                                    ctx.prior, ctx.mode.code)
        Dm = regressor(model, y, x, ctx.mode)
        fy = Dm @ pdot
        fl = (model.D_jac_contract(y, pdot).T @ lam if ctx.mode is RegressorMode.GENERAL
              else np.zeros(n))
        return G, L, K, fy, fl

    def rate(v, cf):
        G, L, K, fy, fl = cf
        a, b = v[:n], v[n:]
        return np.concatenate([G @ a - L @ b + fy, -K @ a - G.T @ b - fl])

    a = np.zeros(n) if a0 is None else np.asarray(a0, dtype=float)
    v = np.concatenate([a, sw.S[0] @ a + sw.c[0]])
    worst = 0.0
    scale = np.max(np.abs(v[n:]))
    lo = coeffs(Z[0])
    for i in range(N):
        zm = 0.5 * (Z[i] + Z[i + 1]) + (h / 8.0) * (dZ[i] - dZ[i + 1])
        zm[2 * n:] = fld.x_mid[i]
        mid = coeffs(zm)
        hi = coeffs(Z[i + 1])
        k1 = rate(v, lo)
        k2 = rate(v + 0.5 * h * k1, mid)
        k3 = rate(v + 0.5 * h * k2, mid)
        k4 = rate(v + h * k3, hi)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        a, b = v[:n], v[n:]
        pred = sw.S[i + 1] @ a + sw.c[i + 1]
        worst = max(worst, float(np.max(np.abs(b - pred))))
        scale = max(scale, np.max(np.abs(b)), np.max(np.abs(pred)))
        lo = hi
    # b vanishes at the far end, so a pointwise ratio is meaningless there
    worst = worst / scale if scale > 0 else 0.0
    return OracleReport().add("sweep relation b = S a + c", worst, tolerance)


# ----------------------------------------------------------------------------
# horizon problems taken from a running estimator

def snapshot_horizon(scenario, snapshot, refine=1):
    """Recompute the horizon solve behind a run snapshot ``(state, x, eta)``.

    ``refine`` divides the scenario's tau step.  Returns ``(field, sweep, ctx)``.
    """
    state, x, _ = snapshot
    cfg = scenario.estimator
    model = scenario.build_model()
    count = int(np.floor(max(scenario.t_end, state.t) / cfg.dt + 1e-9)) + 2
    pred, _, _ = scenario_predictor(scenario, count)
    T, dT = horizon_at(cfg.schedule, state.t)
    grid = TauGrid.from_horizon(T, cfg.dtau_target / refine)
    theta_bar = state.theta_applied - state.prior
    ctx = HorizonContext(model, cfg.weights, state.prior, cfg.mode,
                         cfg.prior.tracking_rate * theta_bar)
    fld = forward_el(state.y, state.lam, x, pred, grid, ctx, t=state.t)
    S_T, c_T = terminal_conditions(fld, cfg.A_s, dT)
    return fld, backward_sweep(fld, S_T, c_T, ctx), ctx


def frozen_scenario_horizon(scenario, t=10.0, refine=1):
    """Run ``scenario`` up to ``t`` and return the horizon solve there."""
    run = run_scenario(scenario.with_overrides(t_end=t), raise_on_failure=True,
                       snapshots=(t,))
    return snapshot_horizon(scenario, run.snapshots[t], refine)
