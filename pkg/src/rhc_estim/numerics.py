"""Small dense numerics shared by the rest of the package."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class IntegrationError(RuntimeError):
    """A field evaluated to a non-finite value.

    ``where`` is the time (or tau) at which it happened; ``node`` is the grid
    index when the failure happened inside a horizon solve.
    """

    def __init__(self, message, where=None, node=None):
        super().__init__(message)
        self.where = where
        self.node = node


class SingularWeightError(ValueError):
    """A weight matrix that must be symmetric positive definite is not."""


def rk4_step(field, y, h, t=0.0):
    """One classical Runge-Kutta step of ``y' = field(t, y)``."""
    if not h > 0:
        raise ValueError("step must be positive")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(field(t, y), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise IntegrationError(f"non-finite derivative at t={t!r}", where=t)
    k2 = field(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = field(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = field(t + h, y + h * k3)
    out = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step from t={t!r}", where=t)
    return out


def check_spd(M, name="matrix"):
    """Return the Cholesky factor of ``M`` or raise SingularWeightError."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise SingularWeightError(f"{name} not square: shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SingularWeightError(f"{name} has non-finite entries")
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-14):
        raise SingularWeightError(f"{name} not symmetric")
    try:
        return scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise SingularWeightError(f"{name} not positive definite") from None


def solve_spd(M, b):
    """Solve ``M v = b`` for symmetric positive definite ``M``.

    One step of iterative refinement keeps the residual at rounding level of
    ``b`` even when ``M`` is poorly conditioned.
    """
    fac = check_spd(M)
    b = np.asarray(b, dtype=float)
    v = scipy.linalg.cho_solve(fac, b)
    return v + scipy.linalg.cho_solve(fac, b - np.asarray(M, dtype=float) @ v)


@dataclass(frozen=True)
class TauGrid:
    """Uniform grid on the horizon ``[0, T]`` with ``N`` intervals."""

    horizon_T: float
    node_count: int
    step: float

    @classmethod
    def from_horizon(cls, T, dtau_target):
        if dtau_target <= 0:
            raise ValueError("dtau_target must be positive")
        # half-up rounding, matching the compiled kernels
        N = max(1, int(np.floor(T / dtau_target + 0.5)))
        return cls(float(T), N, T / N)

    @property
    def nodes(self):
        return np.linspace(0.0, self.horizon_T, self.node_count + 1)
