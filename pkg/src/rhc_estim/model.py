"""System structure ``x' = A x + f(x) + D(x) theta``, parameter profiles and noise."""

import csv
import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from . import _kernels


class RegressorMode(str, enum.Enum):
    """Where the response right-hand side is evaluated.

    ``GENERAL`` uses the response state ``y``; ``OBSERVER`` uses the measured
    drive state ``x`` so only the parameter term differs from the drive.
    """

    GENERAL = "general"
    OBSERVER = "observer"

    @property
    def code(self):
        return _kernels.GENERAL if self is RegressorMode.GENERAL else _kernels.OBSERVER


def _jit(fn):
    if fn is None or isinstance(fn, CPUDispatcher):
        return fn
    return njit(fn)


def _fd_f_jac(f, n):
    @njit
    def f_jac(y):
        J = np.zeros((n, n))
        scale = 1.0
        for v in y:
            scale = max(scale, abs(v))
        h = 1e-6 * scale
        for j in range(n):
            yp = y.copy()
            ym = y.copy()
            yp[j] += h
            ym[j] -= h
            J[:, j] = (f(yp) - f(ym)) / (2.0 * h)
        return J

    return f_jac


def _fd_D_jac(D, n):
    @njit
    def D_jac_contract(y, theta):
        J = np.zeros((n, n))
        scale = 1.0
        for v in y:
            scale = max(scale, abs(v))
        h = 1e-6 * scale
        for j in range(n):
            yp = y.copy()
            ym = y.copy()
            yp[j] += h
            ym[j] -= h
            J[:, j] = (D(yp) @ theta - D(ym) @ theta) / (2.0 * h)
        return J

    return D_jac_contract


def _fd_hess(f_jac, D_jac, n):
    @njit
    def hess_contract(y, lam, theta):
        H = np.zeros((n, n))
        scale = 1.0
        for v in y:
            scale = max(scale, abs(v))
        h = 1e-5 * scale
        for j in range(n):
            yp = y.copy()
            ym = y.copy()
            yp[j] += h
            ym[j] -= h
            gp = (f_jac(yp) + D_jac(yp, theta)).T @ lam
            gm = (f_jac(ym) + D_jac(ym, theta)).T @ lam
            H[:, j] = (gp - gm) / (2.0 * h)
        return 0.5 * (H + H.T)

    return hess_contract


@dataclass(eq=False)
class AffineParamModel:
    """Dynamics affine in the parameter vector.

    ``f(y) -> (n,)``, ``D(y) -> (n, p)``, ``f_jac(y) -> (n, n)``,
    ``D_jac_contract(y, theta) -> d(D(y) theta)/dy`` and
    ``hess_contract(y, lam, theta) -> sum_i lam_i d2[f + D theta]_i/dy2``.

    Callbacks must be numba-compilable; plain Python functions are jitted on
    construction.  Missing derivatives are filled in by central differences,
    with a warning.
    """

    n: int
    p: int
    A: np.ndarray
    f: object
    D: object
    f_jac: object = None
    D_jac_contract: object = None
    hess_contract: object = None
    name: str = "custom"
    fd_filled: tuple = field(default=(), init=False)

    def __post_init__(self):
        self.A = np.ascontiguousarray(self.A, dtype=float)
        if self.A.shape != (self.n, self.n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.n, self.n)}")
        self.f = _jit(self.f)
        self.D = _jit(self.D)
        self.f_jac = _jit(self.f_jac)
        self.D_jac_contract = _jit(self.D_jac_contract)
        self.hess_contract = _jit(self.hess_contract)
        filled = []
        if self.f_jac is None:
            self.f_jac = _fd_f_jac(self.f, self.n)
            filled.append("f_jac")
        if self.D_jac_contract is None:
            self.D_jac_contract = _fd_D_jac(self.D, self.n)
            filled.append("D_jac_contract")
        if self.hess_contract is None:
            self.hess_contract = _fd_hess(self.f_jac, self.D_jac_contract, self.n)
            filled.append("hess_contract")
        if filled:
            warnings.warn(f"model {self.name!r}: finite-difference fill for {', '.join(filled)}",
                          stacklevel=2)
        self.fd_filled = tuple(filled)
        self._kernels = None

    @property
    def kernels(self):
        if self._kernels is None:
            self._kernels = _kernels.build_kernels(
                self.f, self.f_jac, self.D, self.D_jac_contract, self.hess_contract)
        return self._kernels

    def rhs(self, y, theta):
        y = np.asarray(y, dtype=float)
        return self.A @ y + self.f(y) + self.D(y) @ np.asarray(theta, dtype=float)


# ----------------------------------------------------------------------------
# Lorenz system: only the two coefficients multiplying (x2 - x1) and -x3 unknown

@njit(cache=True)
def lorenz_f(y):
    return np.array([0.0, -y[0] * y[2], y[0] * y[1]])


@njit(cache=True)
def lorenz_f_jac(y):
    return np.array([[0.0, 0.0, 0.0],
                     [-y[2], 0.0, -y[0]],
                     [y[1], y[0], 0.0]])


@njit(cache=True)
def lorenz_D(y):
    out = np.zeros((3, 2))
    out[0, 0] = y[1] - y[0]
    out[2, 1] = -y[2]
    return out


@njit(cache=True)
def lorenz_D_jac(y, theta):
    return np.array([[-theta[0], theta[0], 0.0],
                     [0.0, 0.0, 0.0],
                     [0.0, 0.0, -theta[1]]])


@njit(cache=True)
def lorenz_hess(y, lam, theta):
    return np.array([[0.0, lam[2], -lam[1]],
                     [lam[2], 0.0, 0.0],
                     [-lam[1], 0.0, 0.0]])


LORENZ_RHO = 28.0
LORENZ_THETA = (10.0, 8.0 / 3.0)


def lorenz_model():
    A = np.array([[0.0, 0.0, 0.0],
                  [LORENZ_RHO, -1.0, 0.0],
                  [0.0, 0.0, 0.0]])
    return AffineParamModel(3, 2, A, lorenz_f, lorenz_D, lorenz_f_jac,
                            lorenz_D_jac, lorenz_hess, name="lorenz")


# ----------------------------------------------------------------------------
# true-parameter profiles

PROFILE_KINDS = {"constant": _kernels.PROFILE_CONSTANT,
                 "paper_tv": _kernels.PROFILE_PAPER_TV,
                 "table": _kernels.PROFILE_TABLE}


@dataclass(frozen=True, eq=False)
class ParameterProfile:
    """Known-to-the-harness parameter trajectory.

    ``paper_tv`` replaces the first component by ``values[0] * sin(t)/(t+1)``
    and keeps the rest constant.  ``table`` interpolates linearly between
    breakpoints and clamps outside them.
    """

    kind: str
    values: tuple = ()
    table_t: tuple = ()
    table_v: tuple = ()
    source: str = ""

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "table":
            tt = np.asarray(self.table_t, dtype=float)
            if tt.size < 1 or np.any(np.diff(tt) <= 0):
                raise ValueError("table breakpoints must be strictly increasing")
        elif not self.values:
            raise ValueError(f"{self.kind} profile needs values")

    @classmethod
    def constant(cls, values):
        return cls("constant", tuple(float(v) for v in values))

    @classmethod
    def paper_tv(cls, amplitude=10.0, rest=(8.0 / 3.0,)):
        return cls("paper_tv", (float(amplitude),) + tuple(float(v) for v in rest))

    @classmethod
    def table(cls, t, values, source=""):
        t = np.asarray(t, dtype=float)
        v = np.atleast_2d(np.asarray(values, dtype=float))
        if v.shape[0] != t.shape[0]:
            raise ValueError("table rows do not match breakpoint count")
        return cls("table", (), tuple(t), tuple(map(tuple, v)), source)

    @property
    def p(self):
        return len(self.table_v[0]) if self.kind == "table" else len(self.values)

    def kernel_args(self):
        """``(kind, values, table_t, table_v)`` arrays for the compiled code."""
        p = self.p
        if self.kind == "table":
            tt = np.asarray(self.table_t, dtype=float)
            tv = np.ascontiguousarray(self.table_v, dtype=float)
            vals = np.zeros(p)
        else:
            tt = np.zeros(1)
            tv = np.zeros((1, p))
            vals = np.asarray(self.values, dtype=float)
        return PROFILE_KINDS[self.kind], vals, tt, tv

    def clamped(self, t):
        return self.kind == "table" and not (self.table_t[0] <= t <= self.table_t[-1])

    def __call__(self, t):
        kind, vals, tt, tv = self.kernel_args()
        return _kernels.profile_value(float(t), kind, vals, tt, tv)


def profile_eval(profile, t):
    """True parameter vector at ``t`` (table profiles clamp at the ends)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return profile(t)


def load_parameter_table(path):
    """Read a ``t,theta_1,...,theta_p`` CSV into a table profile."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty parameter table")
    header = [h.strip() for h in rows[0]]
    want = ["t"] + [f"theta_{i}" for i in range(1, len(header))]
    if header != want or len(header) < 2:
        raise ValueError(f"{path}: header must be {','.join(want)}")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return ParameterProfile.table(data[:, 0], data[:, 1:], source=str(path))


# ----------------------------------------------------------------------------
# band-limited white noise

_NOISE_BLOCK = 4096


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian samples held over ``sample_interval``.

    Variance of each sample is ``power / sample_interval``.  Values depend
    only on ``(seed, index)``, so runs of different length share a prefix.
    """

    power: float
    sample_interval: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("noise power must be non-negative")
        if not self.sample_interval > 0:
            raise ValueError("noise sample_interval must be positive")

    @classmethod
    def from_std(cls, std, sample_interval=0.01, seed=42):
        return cls(std * std * sample_interval, sample_interval, seed)

    @property
    def std(self):
        return float(np.sqrt(self.power / self.sample_interval))

    def samples(self, count):
        """First ``count`` held values."""
        if self.power == 0 or count <= 0:
            return np.zeros(max(count, 0))
        nblocks = -(-count // _NOISE_BLOCK)
        blocks = [np.random.default_rng([self.seed, b]).standard_normal(_NOISE_BLOCK)
                  for b in range(nblocks)]
        return self.std * np.concatenate(blocks)[:count]


def noise_sample(spec, k):
    if k < 0:
        raise ValueError("sample index must be non-negative")
    if spec is None or spec.power == 0:
        return 0.0
    b, i = divmod(k, _NOISE_BLOCK)
    return spec.std * np.random.default_rng([spec.seed, b]).standard_normal(_NOISE_BLOCK)[i]


# ----------------------------------------------------------------------------
# right-hand sides

def _mode(mode):
    return RegressorMode(mode)


def drive_rhs(model, x, theta_true, eta=0.0):
    """Drive dynamics; the noise value is added to every component."""
    return model.rhs(x, theta_true) + eta


def response_rhs(model, y, x, theta, mode):
    if _mode(mode) is RegressorMode.GENERAL:
        return model.rhs(y, theta)
    return model.rhs(x, theta)


def dynamics_jacobian(model, y, x, theta, mode):
    """d(response_rhs)/dy; zero in observer mode."""
    if _mode(mode) is RegressorMode.OBSERVER:
        return np.zeros((model.n, model.n))
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return model.A + model.f_jac(y) + model.D_jac_contract(y, theta)


def regressor(model, y, x, mode):
    """``D`` evaluated where the mode says."""
    at = y if _mode(mode) is RegressorMode.GENERAL else x
    return model.D(np.asarray(at, dtype=float))
