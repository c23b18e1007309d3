"""Compiled inner loops for the horizon solve.

Module-level helpers are model independent and cached on disk.  Everything
that calls a model callback lives in ``_horizon_src.py`` and is instantiated
per model by :func:`build_kernels`, with the jitted callbacks
``(f, fj, D, Djc, hc)`` bound as globals so numba can inline them.
Numerical problem data travels in two tuples:

``prob = (A, Q2, Rinv2, prior, pdot, mode)``
    ``Q2 = 2Q``, ``Rinv2 = (2R)^-1``, ``mode`` 0 = general, 1 = observer.
``pred = (kind, pkind, pvals, tab_t, tab_v, noise, noise_dt)``
    reference predictor: ``kind`` 0 = exact lookahead, 1 = zero-order hold;
    the remaining fields describe the true-parameter profile and the held
    noise samples the drive will see.
"""

import numpy as np
import hashlib
import importlib
import importlib.util
import os
import sys
import tempfile
from pathlib import Path
from types import SimpleNamespace

import numba
from numba import njit

GENERAL = 0
OBSERVER = 1

EXACT = 0
HOLD = 1

PROFILE_CONSTANT = 0
PROFILE_PAPER_TV = 1
PROFILE_TABLE = 2


# ----------------------------------------------------------------------------
# tiny dense helpers (manual loops beat BLAS dispatch at n ~ 3)

@njit(cache=True)
def matvec(M, v):
    r, c = M.shape
    out = np.zeros(r)
    for i in range(r):
        acc = 0.0
        for j in range(c):
            acc += M[i, j] * v[j]
        out[i] = acc
    return out


@njit(cache=True)
def matTvec(M, v):
    r, c = M.shape
    out = np.zeros(c)
    for j in range(c):
        acc = 0.0
        for i in range(r):
            acc += M[i, j] * v[i]
        out[j] = acc
    return out


@njit(cache=True)
def matmul(A, B):
    r, k = A.shape
    c = B.shape[1]
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for m in range(k):
                acc += A[i, m] * B[m, j]
            out[i, j] = acc
    return out


@njit(cache=True)
def matTmat(A, B):
    """A^T B."""
    k, r = A.shape
    c = B.shape[1]
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for m in range(k):
                acc += A[m, i] * B[m, j]
            out[i, j] = acc
    return out


@njit(cache=True)
def matmatT(A, B):
    """A B^T."""
    r, k = A.shape
    c = B.shape[0]
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for m in range(k):
                acc += A[i, m] * B[j, m]
            out[i, j] = acc
    return out


@njit(cache=True)
def all_finite(a):
    for v in a.ravel():
        if not np.isfinite(v):
            return False
    return True


# ----------------------------------------------------------------------------
# drive side: true-parameter profile, held noise, drive right-hand side

@njit(cache=True)
def profile_value(s, pkind, pvals, tab_t, tab_v):
    if pkind == PROFILE_TABLE:
        m = tab_t.shape[0]
        if s <= tab_t[0]:
            return tab_v[0].copy()
        if s >= tab_t[m - 1]:
            return tab_v[m - 1].copy()
        j = np.searchsorted(tab_t, s, side="right") - 1
        w = (s - tab_t[j]) / (tab_t[j + 1] - tab_t[j])
        return (1.0 - w) * tab_v[j] + w * tab_v[j + 1]
    out = pvals.copy()
    if pkind == PROFILE_PAPER_TV:
        out[0] = pvals[0] * np.sin(s) / (s + 1.0)
    return out


@njit(cache=True)
def noise_index(s, noise_dt):
    # guard against 0.29/0.01 = 28.999...
    return int(np.floor(s / noise_dt + 1e-9))


@njit(cache=True)
def noise_value(s, noise, noise_dt):
    m = noise.shape[0]
    if m == 0:
        return 0.0
    k = noise_index(s, noise_dt)
    if k < 0:
        k = 0
    elif k >= m:
        k = m - 1
    return noise[k]


@njit(cache=True)
def sweep_rate(S, c, G, L, K, fy, fl):
    """tau-derivatives of S and c; fy, fl carry the prior-drift forcing."""
    SL = matmul(S, L)
    GtS = matTmat(G, S)
    Sd = -GtS - GtS.T + matmul(SL, S) - K
    cd = -matTvec(G, c) + matvec(SL, c) - matvec(S, fy) - fl
    return Sd, cd


@njit(cache=True)
def grid_size(T, dtau):
    N = int(np.floor(T / dtau + 0.5))
    return N if N > 1 else 1


# ----------------------------------------------------------------------------
# per-model instantiation

_TEMPLATE = Path(__file__).with_name("_horizon_src.py")
_CALLBACKS = ("f", "fj", "D", "Djc", "hc")
_built = {}


def _import_path(fn):
    """``(module, qualname)`` if ``fn`` can be re-imported by name, else None."""
    py = getattr(fn, "py_func", fn)
    mod, qual = getattr(py, "__module__", None), getattr(py, "__qualname__", "")
    if not mod or "<" in qual or "." in qual or mod == "__main__":
        return None
    try:
        if getattr(importlib.import_module(mod), qual) is not fn:
            return None
    except (ImportError, AttributeError):
        return None
    return mod, qual


def cache_dir():
    root = os.environ.get("RHC_ESTIM_KERNEL_CACHE")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "rhc_estim"


def _load_generated(paths):
    src = _TEMPLATE.read_text()
    header = "".join(f"from {m} import {q} as {name}\n"
                     for name, (m, q) in zip(_CALLBACKS, paths))
    text = "CACHE = True\n" + header + src
    key = hashlib.sha256((numba.__version__ + text).encode()).hexdigest()[:16]
    name = f"_rhc_kernels_{key}"
    if name in sys.modules:
        return sys.modules[name]
    folder = cache_dir()
    try:
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / f"{name}.py"
        if not path.exists() or path.read_text() != text:
            fd, tmp = tempfile.mkstemp(dir=folder, suffix=".py")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
    except OSError:
        return None
    spec = importlib.util.spec_from_file_location(name, path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[name] = module
    spec.loader.exec_module(module)
    return module


def build_kernels(f, fj, D, Djc, hc):
    """Instantiate the horizon kernels for one set of jitted model callbacks.

    Callbacks importable by name go through a generated module so numba can
    cache the compiled code on disk; anything else (closures, lambdas) is
    compiled in memory on every process start.
    """
    fns = (f, fj, D, Djc, hc)
    key = tuple(id(fn) for fn in fns)
    if key in _built:
        return _built[key][0]
    paths = [_import_path(fn) for fn in fns]
    module = _load_generated(paths) if all(paths) else None
    if module is not None:
        ns = vars(module)
    else:
        ns = {"__name__": "rhc_estim._horizon_dynamic", "CACHE": False}
        ns.update(zip(_CALLBACKS, fns))
        exec(compile(_TEMPLATE.read_text(), str(_TEMPLATE), "exec"), ns)
    out = SimpleNamespace(**{k: ns[k] for k in ns["KERNEL_NAMES"]})
    _built[key] = (out, fns)  # keep callbacks alive so ids stay unique
    return out
