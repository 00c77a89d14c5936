"""Compiled inner loops for the max-pivot Jacobi iteration.

All routines work on a dense Hermitian matrix stored in full (both triangles).
Row maxima are cached over the strict upper triangle so a pivot search costs
O(N) per rotation.
"""

import math

import numpy as np
from numba import njit

CONVERGED = 0
LOG_FULL = 1
BUDGET_EXHAUSTED = 2


@njit(cache=True)
def scan_row(M, k):
    n = M.shape[0]
    best = -1.0
    bj = -1
    for j in range(k + 1, n):
        v = abs(M[k, j])
        if v > best:
            best = v
            bj = j
    return best, bj


@njit(cache=True)
def init_row_max(M, rmax, ridx):
    n = M.shape[0]
    for k in range(n - 1):
        rmax[k], ridx[k] = scan_row(M, k)
    rmax[n - 1] = -1.0
    ridx[n - 1] = -1


@njit(cache=True)
def global_max(rmax):
    a = -1
    w = -1.0
    for k in range(rmax.shape[0] - 1):
        if rmax[k] > w:
            w = rmax[k]
            a = k
    return a, w


@njit(cache=True)
def angle_from_pivot(ea, eb, w):
    d = ea - eb
    if d == 0.0:
        if w == 0.0:
            return 0.0
        return math.pi / 2
    return math.atan(2.0 * w / d)


@njit(cache=True)
def _rotate_hermitian(X, a, b, c, s, u):
    # X <- R^dagger X R with column a' = c a + u s b, column b' = c b - conj(u) s a
    n = X.shape[0]
    us = u * s
    cus = np.conj(u) * s
    for j in range(n):
        if j == a or j == b:
            continue
        xa = X[a, j]
        xb = X[b, j]
        na = c * xa + cus * xb
        nb = c * xb - us * xa
        X[a, j] = na
        X[b, j] = nb
        X[j, a] = np.conj(na)
        X[j, b] = np.conj(nb)
    xaa = X[a, a]
    xab = X[a, b]
    xba = X[b, a]
    xbb = X[b, b]
    # T = B2 R2
    taa = c * xaa + us * xab
    tba = c * xba + us * xbb
    tab = c * xab - cus * xaa
    tbb = c * xbb - cus * xba
    X[a, a] = c * taa + cus * tba
    X[a, b] = c * tab + cus * tbb
    X[b, a] = c * tba - us * taa
    X[b, b] = c * tbb - us * tab


@njit(cache=True)
def _rotate_columns_t(Ut, a, b, c, s, u):
    # U <- U R, stored transposed so the update touches two contiguous rows
    n = Ut.shape[1]
    us = u * s
    cus = np.conj(u) * s
    for j in range(n):
        xa = Ut[a, j]
        xb = Ut[b, j]
        Ut[a, j] = c * xa + us * xb
        Ut[b, j] = c * xb - cus * xa


@njit(cache=True)
def _offnorm(M):
    n = M.shape[0]
    tot = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                tot += abs(M[i, j]) ** 2
    return tot / n


@njit(cache=True)
def run_jacobi(M, obs, Ut, use_vectors, rmax, ridx, w_stop, budget,
               log_w, log_ea, log_eb, log_eta, log_phase, log_a, log_b, pos,
               norm_every, norm_log, norm_pos):
    """Rotate until the largest off-diagonal magnitude drops below ``w_stop``.

    Returns ``(pos, used, norm_pos, status)``.
    """
    n = M.shape[0]
    nobs = obs.shape[0]
    cap = log_w.shape[0]
    ncap = norm_log.shape[0]
    used = 0
    while True:
        a, w = global_max(rmax)
        if a < 0 or w < w_stop:
            return pos, used, norm_pos, CONVERGED
        if used >= budget:
            return pos, used, norm_pos, BUDGET_EXHAUSTED
        if pos >= cap:
            return pos, used, norm_pos, LOG_FULL
        b = ridx[a]
        hba = M[b, a]
        ea = M[a, a].real
        eb = M[b, b].real
        u = hba / w
        eta = angle_from_pivot(ea, eb, w)
        c = math.cos(0.5 * eta)
        s = math.sin(0.5 * eta)
        log_w[pos] = w
        log_ea[pos] = ea
        log_eb[pos] = eb
        log_eta[pos] = eta
        log_phase[pos] = math.atan2(hba.imag, hba.real)
        log_a[pos] = a
        log_b[pos] = b
        pos += 1
        used += 1

        _rotate_hermitian(M, a, b, c, s, u)
        M[a, b] = 0.0
        M[b, a] = 0.0
        M[a, a] = M[a, a].real
        M[b, b] = M[b, b].real
        for m in range(nobs):
            _rotate_hermitian(obs[m], a, b, c, s, u)
        if use_vectors:
            _rotate_columns_t(Ut, a, b, c, s, u)

        for k in range(n - 1):
            if k == a or k == b or ridx[k] == a or ridx[k] == b:
                rmax[k], ridx[k] = scan_row(M, k)
            else:
                if k < a:
                    v = abs(M[k, a])
                    if v > rmax[k] or (v == rmax[k] and a < ridx[k]):
                        rmax[k] = v
                        ridx[k] = a
                if k < b:
                    v = abs(M[k, b])
                    if v > rmax[k] or (v == rmax[k] and b < ridx[k]):
                        rmax[k] = v
                        ridx[k] = b

        if norm_every > 0 and pos % norm_every == 0 and norm_pos < ncap:
            norm_log[norm_pos] = _offnorm(M)
            norm_pos += 1
