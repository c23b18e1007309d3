"""Cost, Hamiltonian, stationarity and the linearised blocks used by the sweep."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import RegressorMode, dynamics_jacobian, regressor, response_rhs
from .numerics import check_spd, solve_spd


@dataclass(eq=False)
class Weights:
    """State-error weight ``Q`` (n x n) and estimate weight ``R`` (p x p)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        check_spd(self.Q, "weights.Q")
        check_spd(self.R, "weights.R")
        self._fac2R = check_spd(2.0 * self.R)

    def solve_2R(self, b):
        """``(2R)^-1 b`` with one refinement step."""
        b = np.asarray(b, dtype=float)
        v = scipy.linalg.cho_solve(self._fac2R, b)
        return v + scipy.linalg.cho_solve(self._fac2R, b - 2.0 * self.R @ v)

    @classmethod
    def scaled_identity(cls, n, p, q=0.5, r=0.5):
        return cls(q * np.eye(n), r * np.eye(p))

    @property
    def Q2(self):
        return 2.0 * self.Q

    @property
    def Rinv2(self):
        """``(2R)^-1``, the inverse of the Hamiltonian's estimate Hessian."""
        p = self.R.shape[0]
        return solve_spd(2.0 * self.R, np.eye(p))


@dataclass(frozen=True)
class HorizonSchedule:
    """``T(t) = T_f (1 - exp(-alpha t))``: starts at zero, grows to ``T_f``."""

    T_f: float = 0.5
    alpha: float = 0.1

    def __post_init__(self):
        if not (self.T_f > 0 and self.alpha > 0):
            raise ValueError("horizon T_f and alpha must be positive")


def horizon_at(s, t):
    """Return ``(T, dT/dt)`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    T = s.T_f * -np.expm1(-s.alpha * t)
    return T, s.alpha * (s.T_f - T)


@dataclass(eq=False)
class PriorSpec:
    """Reference the estimate penalty is measured from.

    With ``tracking_rate = k > 0`` the reference follows the applied estimate,
    ``prior' = k * theta_bar``, which gives the estimator integral action.
    """

    theta_prior: np.ndarray = None
    tracking_rate: float = 0.0

    def __post_init__(self):
        if self.theta_prior is not None:
            self.theta_prior = np.asarray(self.theta_prior, dtype=float)
            if not np.all(np.isfinite(self.theta_prior)):
                raise ValueError("theta_prior must be finite")
        if self.tracking_rate < 0:
            raise ValueError("tracking_rate must be non-negative")

    def vector(self, p):
        if self.theta_prior is None:
            return np.zeros(p)
        if self.theta_prior.shape != (p,):
            raise ValueError(f"theta_prior has shape {self.theta_prior.shape}, expected ({p},)")
        return self.theta_prior.copy()


def _prior(prior, p):
    if isinstance(prior, PriorSpec):
        return prior.vector(p)
    if prior is None:
        return np.zeros(p)
    return np.asarray(prior, dtype=float)


def stage_cost(e, theta_bar, w):
    e = np.asarray(e, dtype=float)
    tb = np.asarray(theta_bar, dtype=float)
    return float(e @ w.Q @ e + tb @ w.R @ tb)


def hamiltonian(y, lam, theta_bar, x, w, model, prior, mode):
    y, x, lam = (np.asarray(v, dtype=float) for v in (y, x, lam))
    theta = _prior(prior, model.p) + np.asarray(theta_bar, dtype=float)
    return stage_cost(y - x, theta_bar, w) + float(lam @ response_rhs(model, y, x, theta, mode))


def stationary_theta_bar(y_or_x, lam, w, model, mode=None):
    """Minimiser of the Hamiltonian over the estimate, ``-(2R)^-1 D^T lam``.

    ``y_or_x`` is where ``D`` is evaluated: ``y`` in general mode, ``x`` in
    observer mode.
    """
    Dm = model.D(np.asarray(y_or_x, dtype=float))
    return -w.solve_2R(Dm.T @ np.asarray(lam, dtype=float))


def hamiltonian_grad_y(y, lam, theta_bar, x, w, model, prior, mode):
    y, x, lam = (np.asarray(v, dtype=float) for v in (y, x, lam))
    theta = _prior(prior, model.p) + np.asarray(theta_bar, dtype=float)
    return 2.0 * w.Q @ (y - x) + dynamics_jacobian(model, y, x, theta, mode).T @ lam


def htheta_y(model, y, lam, mode):
    """Mixed derivative ``d(D^T lam)/dy`` of shape (p, n), built columnwise."""
    out = np.zeros((model.p, model.n))
    if RegressorMode(mode) is RegressorMode.OBSERVER:
        return out
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    for j in range(model.p):
        ej = np.zeros(model.p)
        ej[j] = 1.0
        out[j] = model.D_jac_contract(y, ej).T @ lam
    return out


def hamiltonian_hess_yy(y, lam, theta_bar, w, model, prior, mode):
    if RegressorMode(mode) is RegressorMode.OBSERVER:
        return 2.0 * w.Q
    theta = _prior(prior, model.p) + np.asarray(theta_bar, dtype=float)
    return 2.0 * w.Q + model.hess_contract(np.asarray(y, dtype=float),
                                           np.asarray(lam, dtype=float), theta)


def assemble_glk(y, lam, theta_bar, x, w, model, prior, mode):
    """Coefficient blocks ``(G, L, K)`` of the linearised optimality system."""
    y, x, lam = (np.asarray(v, dtype=float) for v in (y, x, lam))
    theta = _prior(prior, model.p) + np.asarray(theta_bar, dtype=float)
    Dm = regressor(model, y, x, mode)
    Rinv2 = w.Rinv2
    L = Dm @ Rinv2 @ Dm.T
    Hty = htheta_y(model, y, lam, mode)
    G = dynamics_jacobian(model, y, x, theta, mode) - Dm @ Rinv2 @ Hty
    K = hamiltonian_hess_yy(y, lam, theta_bar, w, model, prior, mode) - Hty.T @ Rinv2 @ Hty
    return G, 0.5 * (L + L.T), 0.5 * (K + K.T)
