"""Model-dependent horizon kernels.

This file is a template: the names ``f, fj, D, Djc, hc`` and ``CACHE`` are
injected by :func:`rhc_estim._kernels.build_kernels`, either through a
generated module that imports them or by executing this source in a prepared
namespace.  It is never imported directly.

The inner loops write into caller-owned buffers; at n ~ 3 allocation, not
arithmetic, is what costs time.
"""

import numpy as np
from numba import njit

from rhc_estim._kernels import (
    GENERAL, HOLD, all_finite, grid_size, noise_index, noise_value, profile_value,
)

KERNEL_NAMES = (
    "drive_rate", "response_rate", "el_rate", "glk", "forward_el",
    "backward_sweep", "horizon_solve", "joint_rate",
)


@njit(cache=CACHE)
def _drive_into(x, s, eta, A, pkind, pvals, tab_t, tab_v, out):
    theta = profile_value(s, pkind, pvals, tab_t, tab_v)
    fx = f(x)
    Dx = D(x)
    n = x.shape[0]
    p = theta.shape[0]
    for i in range(n):
        acc = fx[i] + eta
        for j in range(n):
            acc += A[i, j] * x[j]
        for j in range(p):
            acc += Dx[i, j] * theta[j]
        out[i] = acc


@njit(cache=CACHE)
def drive_rate(x, s, eta, A, pkind, pvals, tab_t, tab_v):
    out = np.empty(x.shape[0])
    _drive_into(x, s, eta, A, pkind, pvals, tab_t, tab_v, out)
    return out


@njit(cache=CACHE)
def response_rate(y, x, theta, A, mode):
    at = y if mode == GENERAL else x
    return A @ at + f(at) + D(at) @ theta


@njit(cache=CACHE)
def _theta_bar_into(Dm, lam, Rinv2, tb, tmp):
    """tb = -(2R)^-1 D^T lam."""
    n, p = Dm.shape
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += Dm[i, j] * lam[i]
        tmp[j] = acc
    for j in range(p):
        acc = 0.0
        for k in range(p):
            acc -= Rinv2[j, k] * tmp[k]
        tb[j] = acc


@njit(cache=CACHE)
def _el_into(z, s, n, A, Q2, Rinv2, prior, mode, pred, out, hy, tb, theta, tmp):
    """Euler-Lagrange rates at one horizon point; also fills H_y and theta_bar."""
    p = prior.shape[0]
    y = z[:n]
    lam = z[n:2 * n]
    x = z[2 * n:]
    at = y if mode == GENERAL else x
    Dm = D(at)
    _theta_bar_into(Dm, lam, Rinv2, tb, tmp)
    for j in range(p):
        theta[j] = prior[j] + tb[j]
    fa = f(at)
    for i in range(n):
        acc = fa[i]
        for j in range(n):
            acc += A[i, j] * at[j]
        for j in range(p):
            acc += Dm[i, j] * theta[j]
        out[i] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += Q2[i, j] * (y[j] - x[j])
        hy[i] = acc
    if mode == GENERAL:
        J = fj(y) + Djc(y, theta)
        for i in range(n):
            acc = 0.0
            for k in range(n):
                acc += (A[k, i] + J[k, i]) * lam[k]
            hy[i] += acc
    for i in range(n):
        out[n + i] = -hy[i]
    kind, pkind, pvals, tab_t, tab_v, noise, noise_dt = pred
    if kind == HOLD:
        for i in range(n):
            out[2 * n + i] = 0.0
    else:
        eta = noise_value(s, noise, noise_dt)
        _drive_into(x, s, eta, A, pkind, pvals, tab_t, tab_v, out[2 * n:])


@njit(cache=CACHE)
def el_rate(z, s, prob, pred):
    A, Q2, Rinv2, prior, pdot, mode = prob
    n = A.shape[0]
    p = prior.shape[0]
    out = np.empty(3 * n)
    hy = np.empty(n)
    tb = np.empty(p)
    _el_into(z, s, n, A, Q2, Rinv2, prior, mode, pred, out, hy, tb,
             np.empty(p), np.empty(p))
    return out, hy, tb


@njit(cache=CACHE)
def _coeffs_into(z, n, A, Q2, Rinv2, prior, pdot, mode, G, L, K, fy, fl, DR, Hty, tmp):
    """Sweep coefficients G, L, K and the prior-drift forcing at one point.

    ``D_jac_contract`` is linear in its parameter argument, so the p basis
    contractions give the Jacobian at theta, the drift term and H_theta_y.
    """
    p = prior.shape[0]
    y = z[:n]
    lam = z[n:2 * n]
    x = z[2 * n:]
    at = y if mode == GENERAL else x
    Dm = D(at)
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(p):
                acc += Dm[i, k] * Rinv2[k, j]
            DR[i, j] = acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(p):
                acc += DR[i, k] * Dm[j, k]
            L[i, j] = acc
        acc = 0.0
        for k in range(p):
            acc += Dm[i, k] * pdot[k]
        fy[i] = acc
    if mode != GENERAL:
        for i in range(n):
            fl[i] = 0.0
            for j in range(n):
                G[i, j] = 0.0
                K[i, j] = Q2[i, j]
        return
    tb = np.empty(p)
    _theta_bar_into(Dm, lam, Rinv2, tb, tmp)
    theta = prior + tb
    Jf = fj(y)
    H = hc(y, lam, theta)
    for i in range(n):
        fl[i] = 0.0
        for j in range(n):
            G[i, j] = A[i, j] + Jf[i, j]
    ej = np.zeros(p)
    for m in range(p):
        ej[:] = 0.0
        ej[m] = 1.0
        B = Djc(y, ej)
        for i in range(n):
            acc = 0.0
            for k in range(n):
                acc += B[k, i] * lam[k]
            Hty[m, i] = acc
            fl[i] += pdot[m] * acc
            for j in range(n):
                G[i, j] += theta[m] * B[i, j]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(p):
                acc += DR[i, k] * Hty[k, j]
            G[i, j] -= acc
    # K = Q2 + H - Hty^T Rinv2 Hty
    for i in range(n):
        for j in range(n):
            acc = Q2[i, j] + H[i, j]
            for a in range(p):
                for b in range(p):
                    acc -= Hty[a, i] * Rinv2[a, b] * Hty[b, j]
            K[i, j] = acc


@njit(cache=CACHE)
def glk(y, x, lam, A, Q2, Rinv2, prior, mode):
    n = y.shape[0]
    p = prior.shape[0]
    z = np.concatenate((y, lam, x))
    G = np.empty((n, n))
    L = np.empty((n, n))
    K = np.empty((n, n))
    _coeffs_into(z, n, A, Q2, Rinv2, prior, np.zeros(p), mode, G, L, K,
                 np.empty(n), np.empty(n), np.empty((n, p)), np.empty((p, n)), np.empty(p))
    return G, L, K


@njit(cache=CACHE)
def _drive_piece(x, a, b, eta, A, pkind, pvals, tab_t, tab_v, k1, k2, k3, k4, xt):
    """One RK4 step of the drive from time a to b with the noise held at eta."""
    n = x.shape[0]
    h = b - a
    _drive_into(x, a, eta, A, pkind, pvals, tab_t, tab_v, k1)
    for j in range(n):
        xt[j] = x[j] + 0.5 * h * k1[j]
    _drive_into(xt, a + 0.5 * h, eta, A, pkind, pvals, tab_t, tab_v, k2)
    for j in range(n):
        xt[j] = x[j] + 0.5 * h * k2[j]
    _drive_into(xt, a + 0.5 * h, eta, A, pkind, pvals, tab_t, tab_v, k3)
    for j in range(n):
        xt[j] = x[j] + h * k3[j]
    _drive_into(xt, b, eta, A, pkind, pvals, tab_t, tab_v, k4)
    for j in range(n):
        x[j] += (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@njit(cache=CACHE)
def _drive_span(x, a, b, A, pred, k1, k2, k3, k4, xt):
    """Advance the drive from a to b, breaking the step at every noise switch.

    Splitting at the switches keeps the lookahead a continuous function of
    the start time; stepping straight over them does not.
    """
    _, pkind, pvals, tab_t, tab_v, noise, noise_dt = pred
    s = a
    while b - s > 1e-13:
        k = noise_index(s, noise_dt)
        e = min(b, (k + 1) * noise_dt)
        if e - s <= 1e-13:
            e = b
        _drive_piece(x, s, e, noise_value(s, noise, noise_dt), A, pkind, pvals, tab_t, tab_v,
                     k1, k2, k3, k4, xt)
        s = e


@njit(cache=CACHE)
def forward_el(y0, lam0, x0, t, h, N, prob, pred):
    """RK4 along the horizon grid.

    Returns node states ``Z = [y, lam, x]``, their rates, H_y and theta_bar
    at each node, the drive at interval midpoints, and a status: -1 on
    success, otherwise the first node whose value went non-finite.

    Without noise the drive is integrated together with ``(y, lam)``.  With
    held noise it is integrated first, split at the noise switches, and the
    Euler-Lagrange stages read it at nodes and midpoints.
    """
    A, Q2, Rinv2, prior, pdot, mode = prob
    n = y0.shape[0]
    m = 3 * n
    p = prior.shape[0]
    Z = np.zeros((N + 1, m))
    dZ = np.zeros((N + 1, m))
    HY = np.zeros((N + 1, n))
    TB = np.zeros((N + 1, p))
    XM = np.zeros((N, n))
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    zt = np.empty(m)
    hy = np.empty(n)
    tb = np.empty(p)
    theta = np.empty(p)
    tmp = np.empty(p)
    Z[0, :n] = y0
    Z[0, n:2 * n] = lam0
    Z[0, 2 * n:] = x0
    split = pred[0] != HOLD and pred[5].shape[0] > 0
    if split:
        d1 = np.empty(n)
        d2 = np.empty(n)
        d3 = np.empty(n)
        d4 = np.empty(n)
        xt = np.empty(n)
        xc = x0.copy()
        for i in range(N):
            a = t + i * h
            _drive_span(xc, a, a + 0.5 * h, A, pred, d1, d2, d3, d4, xt)
            XM[i] = xc
            _drive_span(xc, a + 0.5 * h, a + h, A, pred, d1, d2, d3, d4, xt)
            Z[i + 1, 2 * n:] = xc
        if not all_finite(Z[:, 2 * n:]):
            return Z, dZ, HY, TB, XM, N
    for i in range(N):
        s = t + i * h
        z = Z[i]
        k1 = dZ[i]
        _el_into(z, s, n, A, Q2, Rinv2, prior, mode, pred, k1, HY[i], TB[i], theta, tmp)
        for j in range(m):
            zt[j] = z[j] + 0.5 * h * k1[j]
        if split:
            zt[2 * n:] = XM[i]
        _el_into(zt, s + 0.5 * h, n, A, Q2, Rinv2, prior, mode, pred, k2, hy, tb, theta, tmp)
        for j in range(m):
            zt[j] = z[j] + 0.5 * h * k2[j]
        if split:
            zt[2 * n:] = XM[i]
        _el_into(zt, s + 0.5 * h, n, A, Q2, Rinv2, prior, mode, pred, k3, hy, tb, theta, tmp)
        for j in range(m):
            zt[j] = z[j] + h * k3[j]
        if split:
            zt[2 * n:] = Z[i + 1, 2 * n:]
        _el_into(zt, s + h, n, A, Q2, Rinv2, prior, mode, pred, k4, hy, tb, theta, tmp)
        zn = Z[i + 1]
        last = 2 * n if split else m
        for j in range(last):
            zn[j] = z[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if not all_finite(zn):
            return Z, dZ, HY, TB, XM, i + 1
    _el_into(Z[N], t + N * h, n, A, Q2, Rinv2, prior, mode, pred, dZ[N], HY[N], TB[N], theta, tmp)
    if not (all_finite(dZ[N]) and all_finite(HY[N])):
        return Z, dZ, HY, TB, XM, N
    if not split:
        for i in range(N):
            for j in range(n):
                c = 2 * n + j
                XM[i, j] = 0.5 * (Z[i, c] + Z[i + 1, c]) + (h / 8.0) * (dZ[i, c] - dZ[i + 1, c])
    return Z, dZ, HY, TB, XM, -1


@njit(cache=CACHE)
def _sweep_rate_into(S, c, G, L, K, fy, fl, Sd, cd, SL):
    """dS/dtau = -G^T S - S G + S L S - K, dc/dtau = -(G^T - S L) c - S fy - fl."""
    n = S.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += S[i, k] * L[k, j]
            SL[i, j] = acc
    for i in range(n):
        for j in range(i, n):
            acc = -K[i, j]
            for k in range(n):
                acc += -G[k, i] * S[k, j] - S[i, k] * G[k, j] + SL[i, k] * S[k, j]
            Sd[i, j] = acc
            Sd[j, i] = acc
        acc = -fl[i]
        for k in range(n):
            acc += -G[k, i] * c[k] + SL[i, k] * c[k] - S[i, k] * fy[k]
        cd[i] = acc


@njit(cache=CACHE)
def backward_sweep(Z, dZ, XM, h, S_T, c_T, prob):
    """RK4 backward in tau for the Riccati matrix S and the offset c.

    Midpoint coefficients come from a cubic Hermite fit of ``(y, lam)`` and
    the drive midpoints ``XM`` so the sweep keeps fourth-order accuracy.  Returns
    ``(S_all, c_all, status)`` with status -1 or the failing node.
    """
    A, Q2, Rinv2, prior, pdot, mode = prob
    N = Z.shape[0] - 1
    m = Z.shape[1]
    n = S_T.shape[0]
    p = prior.shape[0]
    S_all = np.zeros((N + 1, n, n))
    c_all = np.zeros((N + 1, n))
    # coefficient sets: 0 = interval end (hi), 1 = midpoint, 2 = interval start (lo)
    G = np.empty((3, n, n))
    L = np.empty((3, n, n))
    K = np.empty((3, n, n))
    fy = np.empty((3, n))
    fl = np.empty((3, n))
    DR = np.empty((n, p))
    Hty = np.empty((p, n))
    tmp = np.empty(p)
    zm = np.empty(m)
    Sd = np.empty((4, n, n))
    cd = np.empty((4, n))
    St = np.empty((n, n))
    ct = np.empty(n)
    SL = np.empty((n, n))
    S = S_T.copy()
    c = c_T.copy()
    S_all[N] = S
    c_all[N] = c
    hi = 0
    lo = 2
    _coeffs_into(Z[N], n, A, Q2, Rinv2, prior, pdot, mode, G[hi], L[hi], K[hi],
                 fy[hi], fl[hi], DR, Hty, tmp)
    for i in range(N - 1, -1, -1):
        for j in range(2 * n):
            zm[j] = 0.5 * (Z[i, j] + Z[i + 1, j]) + (h / 8.0) * (dZ[i, j] - dZ[i + 1, j])
        zm[2 * n:] = XM[i]
        _coeffs_into(zm, n, A, Q2, Rinv2, prior, pdot, mode, G[1], L[1], K[1],
                     fy[1], fl[1], DR, Hty, tmp)
        _coeffs_into(Z[i], n, A, Q2, Rinv2, prior, pdot, mode, G[lo], L[lo], K[lo],
                     fy[lo], fl[lo], DR, Hty, tmp)
        _sweep_rate_into(S, c, G[hi], L[hi], K[hi], fy[hi], fl[hi], Sd[0], cd[0], SL)
        for a in range(n):
            ct[a] = c[a] - 0.5 * h * cd[0, a]
            for b in range(n):
                St[a, b] = S[a, b] - 0.5 * h * Sd[0, a, b]
        _sweep_rate_into(St, ct, G[1], L[1], K[1], fy[1], fl[1], Sd[1], cd[1], SL)
        for a in range(n):
            ct[a] = c[a] - 0.5 * h * cd[1, a]
            for b in range(n):
                St[a, b] = S[a, b] - 0.5 * h * Sd[1, a, b]
        _sweep_rate_into(St, ct, G[1], L[1], K[1], fy[1], fl[1], Sd[2], cd[2], SL)
        for a in range(n):
            ct[a] = c[a] - h * cd[2, a]
            for b in range(n):
                St[a, b] = S[a, b] - h * Sd[2, a, b]
        _sweep_rate_into(St, ct, G[lo], L[lo], K[lo], fy[lo], fl[lo], Sd[3], cd[3], SL)
        for a in range(n):
            c[a] -= (h / 6.0) * (cd[0, a] + 2.0 * cd[1, a] + 2.0 * cd[2, a] + cd[3, a])
            for b in range(n):
                S[a, b] -= (h / 6.0) * (Sd[0, a, b] + 2.0 * Sd[1, a, b]
                                        + 2.0 * Sd[2, a, b] + Sd[3, a, b])
        if not (all_finite(S) and all_finite(c)):
            return S_all, c_all, i
        S_all[i] = S
        c_all[i] = c
        hi, lo = lo, hi
    return S_all, c_all, -1


@njit(cache=CACHE)
def horizon_solve(t, T, dT, y, lam, x, As, dtau, prob, pred):
    """Return ``(lam_rate, F, status, where)``.

    ``status`` is 0 on success, 1 for a forward failure and 2 for a sweep
    failure, with ``where`` the offending node.  ``T == 0`` skips the sweep
    and holds the costate.
    """
    n = y.shape[0]
    if T <= 0.0:
        return np.zeros(n), lam.copy(), 0, -1
    N = grid_size(T, dtau)
    h = T / N
    Z, dZ, HY, TB, XM, st = forward_el(y, lam, x, t, h, N, prob, pred)
    if st >= 0:
        return np.zeros(n), np.full(n, np.nan), 1, st
    F = Z[N, n:2 * n].copy()
    c_T = HY[N] * (1.0 + dT) - As @ F
    S_all, c_all, st = backward_sweep(Z, dZ, XM, h, np.zeros((n, n)), c_T, prob)
    if st >= 0:
        return np.zeros(n), F, 2, st
    return -HY[0] + c_all[0], F, 0, -1


@njit(cache=CACHE)
def joint_rate(t, w, eta, n, p, Tf, alpha, As, dtau, kappa, A, Q2, Rinv2, mode, pred):
    """Time derivative of the packed state ``w = [y, lam, prior, x]``.

    The drive rows use the held noise value ``eta`` for the whole step while
    the horizon lookahead reads the noise schedule itself.
    """
    y = w[:n]
    lam = w[n:2 * n]
    prior = w[2 * n:2 * n + p]
    x = w[2 * n + p:]
    Dm = D(y) if mode == GENERAL else D(x)
    tb = np.empty(p)
    _theta_bar_into(Dm, lam, Rinv2, tb, np.empty(p))
    pdot = kappa * tb
    prob = (A, Q2, Rinv2, prior.copy(), pdot, mode)
    out = np.empty(w.shape[0])
    out[:n] = response_rate(y, x, prior + tb, A, mode)
    out[2 * n:2 * n + p] = pdot
    _drive_into(x, t, eta, A, pred[1], pred[2], pred[3], pred[4], out[2 * n + p:])
    T = -Tf * np.expm1(-alpha * t)
    dT = alpha * (Tf - T)
    ld, F, st, where = horizon_solve(t, T, dT, y, lam, x, As, dtau, prob, pred)
    out[n:2 * n] = ld
    return out, F, tb, st, where
