"""Real-time estimation loop: drive simulation, horizon solves, costate and estimate updates.

The estimator state ``(y, lambda, prior)`` is advanced along the time axis by
integrating its rate, where the costate rate comes from one horizon solve per
rate evaluation.  Because the closed loop gets stiff as the horizon grows, a
step is split into ``substeps`` pieces, and a step whose continuation residual
jumps is redone with twice as many until it settles.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .model import NoiseSpec, ParameterProfile, RegressorMode
from .numerics import IntegrationError
from .ocp import HorizonSchedule, PriorSpec, Weights, horizon_at
from .sweep import PredictorKind, ReferencePredictor


@dataclass(eq=False)
class EstimatorConfig:
    """Gains, steps and numerical policy of the estimator.

    ``t_integrator`` is ``"rk4"`` or ``"euler"``.  A step is accepted when the
    next residual is below ``residual_floor``, or grows by at most
    ``residual_growth`` while staying under ``residual_target`` (above the
    target it must not grow at all).  Rejected steps are retried with doubled
    substeps up to ``max_substeps``, stopping early once refining stops
    paying off; the attempt with the smallest residual is kept.
    """

    weights: Weights
    schedule: HorizonSchedule = field(default_factory=HorizonSchedule)
    A_s: np.ndarray = None
    dt: float = 0.01
    dtau_target: float = 0.005
    mode: RegressorMode = RegressorMode.GENERAL
    prior: PriorSpec = field(default_factory=PriorSpec)
    t_integrator: str = "rk4"
    substeps: int = 2
    max_substeps: int = 32
    residual_floor: float = 1e-6
    residual_growth: float = 4.0
    residual_target: float = 1e-4

    def __post_init__(self):
        n = self.weights.Q.shape[0]
        self.A_s = 160.0 * np.eye(n) if self.A_s is None else np.atleast_2d(np.asarray(self.A_s, dtype=float))
        self.mode = RegressorMode(self.mode)
        if self.A_s.shape != (n, n):
            raise ValueError(f"A_s has shape {self.A_s.shape}, expected {(n, n)}")
        if not np.all(np.linalg.eigvals(self.A_s).real > 0):
            raise ValueError("A_s must have eigenvalues with positive real part")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.dtau_target > 0:
            raise ValueError("dtau_target must be positive")
        if self.t_integrator not in ("rk4", "euler"):
            raise ValueError("t_integrator must be 'rk4' or 'euler'")
        if not (1 <= self.substeps <= self.max_substeps):
            raise ValueError("need 1 <= substeps <= max_substeps")


@dataclass(eq=False)
class EstimatorState:
    t: float
    y: np.ndarray
    lam: np.ndarray
    theta_applied: np.ndarray
    prior: np.ndarray
    F: np.ndarray = None
    substeps_used: int = 0
    x_pred: np.ndarray = None


@dataclass
class Telemetry:
    t: float
    e: np.ndarray
    V: float
    F_norm: float
    T_horizon: float
    theta_true: np.ndarray


def lyapunov(e):
    """``V = 0.5 e^T e``."""
    e = np.asarray(e, dtype=float)
    return 0.5 * float(e @ e)


class Estimator:
    """Stateful wrapper binding a model, a configuration and a predictor."""

    def __init__(self, model, config, predictor):
        self.model = model
        self.config = config
        self.predictor = predictor
        self.kern = model.kernels
        w = config.weights
        if w.Q.shape != (model.n, model.n) or w.R.shape != (model.p, model.p):
            raise ValueError("weight shapes do not match the model")
        self._args = (model.n, model.p, config.schedule.T_f, config.schedule.alpha,
                      config.A_s, config.dtau_target, config.prior.tracking_rate,
                      model.A, w.Q2, w.Rinv2, config.mode.code,
                      predictor.kernel_tuple(model.p))
        self._cache = None

    # -- packing ----------------------------------------------------------
    def _pack(self, state, x):
        return np.concatenate([state.y, state.lam, state.prior, np.asarray(x, dtype=float)])

    def _rate(self, t, w, eta):
        out, F, tb, st, where = self.kern.joint_rate(float(t), w, float(eta), *self._args)
        return out, F, tb, st, where

    def init(self, y0):
        n, p = self.model.n, self.model.p
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (n,):
            raise ValueError(f"y0 has shape {y0.shape}, expected ({n},)")
        prior = self.config.prior.vector(p)
        self._cache = None
        return EstimatorState(0.0, y0.copy(), np.zeros(n), prior.copy(), prior, np.zeros(n))

    def evaluate(self, state, x_t, eta=0.0):
        """Rate, residual and estimate at the current state (cached per step)."""
        w = self._pack(state, x_t)
        key = (state.t, w.tobytes(), eta)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        r = self._rate(state.t, w, eta)
        self._cache = (key, r)
        return r

    def _advance(self, t, w, eta, nsub, first):
        """Integrate ``w`` over one dt with ``nsub`` substeps; None on horizon failure."""
        h = self.config.dt / nsub
        euler = self.config.t_integrator == "euler"
        for j in range(nsub):
            s = t + j * h
            r1 = first if j == 0 else self._rate(s, w, eta)
            if r1[3] != 0:
                return None
            k1 = r1[0]
            if euler:
                w = w + h * k1
            else:
                r2 = self._rate(s + 0.5 * h, w + 0.5 * h * k1, eta)
                r3 = self._rate(s + 0.5 * h, w + 0.5 * h * r2[0], eta)
                r4 = self._rate(s + h, w + h * r3[0], eta)
                if r2[3] or r3[3] or r4[3]:
                    return None
                w = w + (h / 6.0) * (k1 + 2.0 * r2[0] + 2.0 * r3[0] + r4[0])
            if not np.all(np.isfinite(w)):
                return None
        return w

    def _accept(self, F0, F1):
        cfg = self.config
        if F1 <= cfg.residual_floor:
            return True
        return F1 <= cfg.residual_growth * F0 and (F1 <= cfg.residual_target or F1 <= F0)

    def step(self, state, x_t, eta=0.0, x_next=None, eta_next=None, t_next=None):
        """Advance the estimator by one dt against the measured drive state ``x_t``.

        The drive is integrated alongside the estimator with the same substeps;
        the result is returned as ``x_pred``.  Passing the measured ``x_next``
        instead makes the residual check use it.  Feeding ``x_pred`` back as the
        next measurement keeps the drive and the horizon lookahead on one
        discretisation, which the continuation is sensitive to.
        """
        cfg = self.config
        n, p = self.model.n, self.model.p
        r0 = self.evaluate(state, x_t, eta)
        if r0[3] != 0:
            raise IntegrationError(f"horizon solve failed at t={state.t} (node {r0[4]})",
                                   where=state.t, node=int(r0[4]))
        F0 = float(np.linalg.norm(r0[1]))
        w0 = self._pack(state, x_t)
        t1 = state.t + cfg.dt if t_next is None else float(t_next)
        eta1 = eta if eta_next is None else eta_next
        nsub = cfg.substeps
        best = None
        last = np.inf
        while True:
            w = self._advance(state.t, w0, eta, nsub, r0)
            F1 = np.inf
            if w is not None:
                probe = w.copy()
                if x_next is not None:
                    probe[2 * n + p:] = x_next
                r1 = self._rate(t1, probe, eta1)
                if r1[3] == 0:
                    F1 = float(np.linalg.norm(r1[1]))
                    if best is None or F1 < best[4]:
                        best = (w, probe, r1, nsub, F1)
                    if self._accept(F0, F1):
                        break
                    # refinement no longer helps: keep the best attempt
                    if F1 > 0.5 * last:
                        break
            last = F1
            if nsub >= cfg.max_substeps:
                break
            nsub *= 2
        if best is None:
            raise IntegrationError(f"estimator step from t={state.t} failed at every refinement",
                                   where=state.t)
        w, probe, r1, nsub, _ = best
        self._cache = ((t1, probe.tobytes(), eta1), r1)
        y, lam, prior = w[:n].copy(), w[n:2 * n].copy(), w[2 * n:2 * n + p].copy()
        theta = prior + r1[2]
        return EstimatorState(t1, y, lam, theta, prior, r1[1].copy(), nsub, probe[2 * n + p:].copy())


def init(config, y0, model=None, predictor=None):
    """Initial state: ``lambda = 0`` so the applied estimate equals the prior."""
    from .model import lorenz_model
    model = model or lorenz_model()
    predictor = predictor or ReferencePredictor(PredictorKind.ZERO_ORDER_HOLD)
    return Estimator(model, config, predictor).init(y0)


# ----------------------------------------------------------------------------
# scenario runs

def scenario_predictor(scenario, count):
    """Predictor and per-step held noise samples shared by drive and lookahead."""
    dt = scenario.estimator.dt
    noise = scenario.noise
    if noise is not None and noise.power > 0:
        # drive and lookahead share one held sample per dt
        noise = NoiseSpec(noise.power, dt, noise.seed) if noise.sample_interval != dt else noise
        etas = noise.samples(count)
    else:
        noise = None
        etas = np.zeros(count)
    predictor = ReferencePredictor.for_drive(scenario.theta_true, noise, count, scenario.predictor)
    return predictor, etas, noise


@dataclass(eq=False)
class TrajectoryTable:
    """Sampled run history; one row per multiple of dt."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta_est: np.ndarray
    theta_true: np.ndarray
    F_norm: np.ndarray
    T_horizon: np.ndarray
    eta: np.ndarray = None
    substeps: np.ndarray = None
    clamped: np.ndarray = None
    failure: str = None
    snapshots: dict = field(default_factory=dict)

    @property
    def e(self):
        return self.y - self.x

    @property
    def e_norm(self):
        return np.linalg.norm(self.e, axis=1)

    @property
    def V(self):
        return 0.5 * np.sum(self.e ** 2, axis=1)

    def __len__(self):
        return len(self.t)

    def window(self, t0, t1=np.inf):
        return (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)

    def telemetry(self, k):
        return Telemetry(float(self.t[k]), self.e[k], float(self.V[k]), float(self.F_norm[k]),
                         float(self.T_horizon[k]), self.theta_true[k])


def run_scenario(scenario, raise_on_failure=False, snapshots=()):
    """Co-simulate drive and estimator over ``[0, t_end]``.

    On a numerical failure the rows computed so far are returned with
    ``table.failure`` set (or the error re-raised when asked).  For each time
    in ``snapshots`` the table keeps ``(state, x, eta)`` at the nearest row.
    """
    model = scenario.build_model()
    cfg = scenario.estimator
    dt = cfg.dt
    nsteps = int(math.floor(scenario.t_end / dt + 1e-9))
    predictor, etas, noise = scenario_predictor(scenario, nsteps + 2)
    est = Estimator(model, cfg, predictor)
    prof = scenario.theta_true

    n, p = model.n, model.p
    rows = nsteps + 1
    T = np.empty(rows)
    X = np.empty((rows, n))
    Y = np.empty((rows, n))
    TH = np.empty((rows, p))
    TR = np.empty((rows, p))
    FN = np.empty(rows)
    TH_ = np.empty(rows)
    SUB = np.zeros(rows, dtype=int)
    CL = np.zeros(rows, dtype=bool)

    x = np.asarray(scenario.x0, dtype=float).copy()
    state = est.init(scenario.y0)
    failure = None
    snap_rows = {int(math.floor(s / dt + 0.5)): s for s in snapshots}
    taken = {}
    k = 0
    for k in range(rows):
        t = k * dt
        r = est.evaluate(state, x, etas[k])
        T[k] = t
        X[k] = x
        Y[k] = state.y
        TH[k] = state.prior + r[2]
        TR[k] = prof(t)
        CL[k] = prof.clamped(t)
        FN[k] = np.linalg.norm(r[1])
        TH_[k] = horizon_at(cfg.schedule, t)[0]
        SUB[k] = state.substeps_used
        if k in snap_rows:
            taken[snap_rows[k]] = (state, x.copy(), float(etas[k]))
        if k == nsteps:
            break
        try:
            state = est.step(state, x, etas[k], None, etas[k + 1], (k + 1) * dt)
        except IntegrationError as err:
            failure = f"t={t:.6g}: {err}"
            if raise_on_failure:
                raise
            break
        x = state.x_pred
    last = k + 1
    return TrajectoryTable(T[:last], X[:last], Y[:last], TH[:last], TR[:last], FN[:last],
                           TH_[:last], etas[:last] if noise is not None else None,
                           SUB[:last], CL[:last], failure, taken)
