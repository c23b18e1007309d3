"""Per-sample horizon solve: forward Euler-Lagrange pass, backward sweep, costate rate."""

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import NoiseSpec, ParameterProfile, RegressorMode
from .numerics import IntegrationError, TauGrid
from .ocp import Weights, _prior


class PredictorKind(str, enum.Enum):
    EXACT_LOOKAHEAD = "exact_lookahead"
    ZERO_ORDER_HOLD = "zero_order_hold"


@dataclass(eq=False)
class ReferencePredictor:
    """How the drive trajectory over the horizon is obtained.

    Exact lookahead integrates the drive with its true parameters and the
    same held noise samples the drive will actually see; zero-order hold
    freezes ``x`` at its current value.
    """

    kind: PredictorKind = PredictorKind.EXACT_LOOKAHEAD
    profile: ParameterProfile = None
    noise: np.ndarray = None
    noise_dt: float = 0.01

    def __post_init__(self):
        self.kind = PredictorKind(self.kind)
        if self.kind is PredictorKind.EXACT_LOOKAHEAD and self.profile is None:
            raise ValueError("exact lookahead needs the true-parameter profile")
        self.noise = np.zeros(0) if self.noise is None else np.asarray(self.noise, dtype=float)
        self._tuple = None

    @classmethod
    def for_drive(cls, profile, noise_spec=None, count=0, kind=PredictorKind.EXACT_LOOKAHEAD):
        """Predictor sharing ``count`` held noise samples with the drive."""
        if noise_spec is None or noise_spec.power == 0:
            return cls(kind, profile)
        return cls(kind, profile, noise_spec.samples(count), noise_spec.sample_interval)

    def kernel_tuple(self, p):
        if self._tuple is None:
            kind = (_kernels.EXACT if self.kind is PredictorKind.EXACT_LOOKAHEAD
                    else _kernels.HOLD)
            profile = self.profile if self.profile is not None else ParameterProfile.constant([0.0] * p)
            pk, pv, tt, tv = profile.kernel_args()
            self._tuple = (kind, pk, pv, tt, tv, self.noise, float(self.noise_dt))
        return self._tuple


@dataclass(eq=False)
class HorizonContext:
    """Everything a horizon solve needs besides the state.

    ``prior_rate`` is the drift of the prior at this instant; it only enters
    the offset equation of the sweep.
    """

    model: object
    weights: Weights
    prior: np.ndarray = None
    mode: RegressorMode = RegressorMode.GENERAL
    prior_rate: np.ndarray = None

    def __post_init__(self):
        self.mode = RegressorMode(self.mode)
        self.prior = _prior(self.prior, self.model.p)
        self.prior_rate = (np.zeros(self.model.p) if self.prior_rate is None
                           else np.asarray(self.prior_rate, dtype=float))

    def prob(self):
        return (self.model.A, self.weights.Q2, self.weights.Rinv2,
                self.prior, self.prior_rate, self.mode.code)


@dataclass(eq=False)
class HorizonField:
    """Forward solution on the tau grid; arrays are indexed by node.

    ``x_mid`` holds the drive prediction at interval midpoints.
    """

    grid: TauGrid
    t: float
    y: np.ndarray
    lam: np.ndarray
    theta_bar: np.ndarray
    H_y: np.ndarray
    x_ref: np.ndarray
    rates: np.ndarray
    x_mid: np.ndarray = None

    @property
    def F(self):
        return self.lam[-1].copy()


@dataclass(eq=False)
class SweepResult:
    S: np.ndarray
    c: np.ndarray

    @property
    def c0(self):
        return self.c[0].copy()


def forward_el(y_t, lam_t, x_t, predictor, grid, ctx, t=0.0):
    """Integrate the Euler-Lagrange system across the horizon from the current state."""
    n = ctx.model.n
    y_t, lam_t, x_t = (np.asarray(v, dtype=float) for v in (y_t, lam_t, x_t))
    Z, dZ, HY, TB, XM, st = ctx.model.kernels.forward_el(
        y_t, lam_t, x_t, float(t), grid.step, grid.node_count, ctx.prob(),
        predictor.kernel_tuple(ctx.model.p))
    if st >= 0:
        raise IntegrationError(f"horizon solve diverged at node {st} (t={t})", where=t, node=int(st))
    return HorizonField(grid, float(t), Z[:, :n], Z[:, n:2 * n], TB, HY, Z[:, 2 * n:], dZ, XM)


def terminal_conditions(field, A_s, dT_dt):
    """``S_T = 0`` and ``c_T = H_y(T) (1 + dT/dt) - A_s F``."""
    n = field.y.shape[1]
    return np.zeros((n, n)), field.H_y[-1] * (1.0 + dT_dt) - np.asarray(A_s) @ field.F


def backward_sweep(field, S_T, c_T, ctx):
    Z = np.hstack([field.y, field.lam, field.x_ref])
    S, c, st = ctx.model.kernels.backward_sweep(
        Z, field.rates, field.x_mid, field.grid.step, np.asarray(S_T, dtype=float),
        np.asarray(c_T, dtype=float), ctx.prob())
    if st >= 0:
        raise IntegrationError(f"backward sweep diverged at node {st} (t={field.t})",
                               where=field.t, node=int(st))
    return SweepResult(S, c)


def costate_rate(field, sweep):
    return -field.H_y[0] + sweep.c0


def costate_step(lam_t, field, sweep, dt):
    """Explicit Euler step of the costate along the time axis."""
    return np.asarray(lam_t, dtype=float) + dt * costate_rate(field, sweep)
