"""Compiled log density and gradient in unconstrained coordinates.

A numba port of ``KFPPosterior``'s numpy path (matrix exponential included),
used when sampling. The numpy code remains the reference implementation and
the two are checked against each other in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..expm import _B, _THETA

SIGMA_FLOOR = 1e-3

_THETA_LOW = np.array([_THETA[3], _THETA[5], _THETA[7], _THETA[9]])
_THETA13 = _THETA[13]
_B_LOW = np.zeros((4, 10))
for _row, _m in enumerate((3, 5, 7, 9)):
    _B_LOW[_row, : _m + 1] = _B[_m]
_B13 = np.array(_B[13])


@njit(cache=True)
def _solve_pade(U, V):
    # (V - U) X = V + U by Gaussian elimination with partial pivoting; the
    # library solve carries too much per-call overhead for these small systems
    M = V - U
    X = V + U
    n = M.shape[0]
    for col in range(n):
        piv = col
        best = abs(M[col, col])
        for r in range(col + 1, n):
            if abs(M[r, col]) > best:
                best = abs(M[r, col])
                piv = r
        if best == 0.0:
            raise ZeroDivisionError("singular Pade denominator")
        if piv != col:
            for j in range(n):
                M[col, j], M[piv, j] = M[piv, j], M[col, j]
                X[col, j], X[piv, j] = X[piv, j], X[col, j]
        inv = 1.0 / M[col, col]
        for r in range(col + 1, n):
            f = M[r, col] * inv
            if f != 0.0:
                for j in range(col + 1, n):
                    M[r, j] -= f * M[col, j]
                for j in range(n):
                    X[r, j] -= f * X[col, j]
    for col in range(n - 1, -1, -1):
        inv = 1.0 / M[col, col]
        for j in range(n):
            acc = X[col, j]
            for r in range(col + 1, n):
                acc -= M[col, r] * X[r, j]
            X[col, j] = acc * inv
    return X


@njit(cache=True)
def expm_jit(A):
    n = A.shape[0]
    ident = np.eye(n)
    norm = 0.0
    for j in range(n):
        col = 0.0
        for i in range(n):
            col += abs(A[i, j])
        norm = max(norm, col)
    if norm == 0.0:
        return ident
    for row in range(4):
        if norm <= _THETA_LOW[row]:
            m = 3 + 2 * row
            b = _B_LOW[row]
            A2 = A @ A
            P = ident.copy()
            U = b[1] * ident
            V = b[0] * ident
            for j in range(1, (m - 1) // 2 + 1):
                P = P @ A2
                U = U + b[2 * j + 1] * P
                V = V + b[2 * j] * P
            return _solve_pade(A @ U, V)
    s = max(0, int(math.ceil(math.log2(norm / _THETA13))))
    As = A / 2.0 ** s
    b = _B13
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
              + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = _solve_pade(U, V)
    for _ in range(s):
        R = R @ R
    return R


@njit(cache=True)
def logp_grad(u, lower, width, n_model, infer_sigma, fixed_sigma, k_index, B0, a0, dB, da,
              prop_idx, labeled, gap_values, gap_ids, obs_nodes, y_sum, y_sq_sum, n_rep,
              ll_const, lp_const, want_grad):
    dim = u.shape[0]
    grad_u = np.zeros(dim)
    s = np.empty(dim)
    theta = np.empty(dim)
    log_jac = 0.0
    for i in range(dim):
        ui = u[i]
        if not np.isfinite(ui):
            return -np.inf, grad_u
        if ui >= 0:
            e = math.exp(-ui)
            s[i] = 1.0 / (1.0 + e)
            # log s + log(1 - s) = -u - 2 log(1 + e^-u)
            log_jac += math.log(width[i]) - ui - 2.0 * math.log1p(e)
        else:
            e = math.exp(ui)
            s[i] = e / (1.0 + e)
            log_jac += math.log(width[i]) + ui - 2.0 * math.log1p(e)
        theta[i] = lower[i] + width[i] * s[i]
        if not (theta[i] >= lower[i] and theta[i] <= lower[i] + width[i]):
            return -np.inf, grad_u

    N = B0.shape[0]
    P = n_model
    k = np.empty(N)
    for i in range(N):
        k[i] = theta[k_index[i]]
        if k[i] <= 0:
            return -np.inf, grad_u
    c = theta[n_model] if infer_sigma else fixed_sigma
    if c <= 0:
        return -np.inf, grad_u
    B = B0.copy()
    alpha = a0.copy()
    for j in range(prop_idx.shape[0]):
        t = theta[prop_idx[j]]
        B += t * dB[j]
        alpha += t * da[j]
    for i in range(N):
        if alpha[i] < 0:
            return -np.inf, grad_u
        for j in range(N):
            if B[i, j] < 0:
                return -np.inf, grad_u
    for li in range(labeled.shape[0]):
        i = labeled[li]
        total = alpha[i]
        for j in range(N):
            total += B[i, j]
        if not total < 1.0:
            return -np.inf, grad_u

    lp = lp_const + log_jac
    T = gap_ids.shape[0]
    n_obs = obs_nodes.shape[0]
    if T == 0 or n_obs == 0:
        if want_grad:
            for i in range(dim):
                grad_u[i] = 1.0 - 2.0 * s[i]
        return lp, grad_u

    # augmented generator: x, then one sensitivity block per model parameter, then 1
    D = N * (P + 1) + 1 if want_grad else N + 1
    G = np.zeros((D, D))
    nblocks = P + 1 if want_grad else 1
    for blk in range(nblocks):
        lo = N * blk
        for i in range(N):
            for j in range(N):
                G[lo + i, lo + j] = k[i] * (B[i, j] - (1.0 if i == j else 0.0))
    for i in range(N):
        G[i, D - 1] = k[i] * alpha[i]
    if want_grad:
        for i in range(N):
            p = k_index[i]
            lo = N * (p + 1)
            for j in range(N):
                G[lo + i, j] = B[i, j] - (1.0 if i == j else 0.0)
            G[lo + i, D - 1] = alpha[i]
        for jj in range(prop_idx.shape[0]):
            p = prop_idx[jj]
            lo = N * (p + 1)
            for i in range(N):
                for j in range(N):
                    G[lo + i, j] = k[i] * dB[jj, i, j]
                G[lo + i, D - 1] = k[i] * da[jj, i]

    n_gaps = gap_values.shape[0]
    props = np.empty((n_gaps, D, D))
    for g in range(n_gaps):
        props[g] = expm_jit(gap_values[g] * G)

    z = np.zeros(D)
    for i in range(N):
        z[i] = 1.0
    z[D - 1] = 1.0
    grad = np.zeros(dim)
    R = n_rep
    ll = -ll_const
    for t in range(T):
        z = props[gap_ids[t]] @ z
        for o in range(n_obs):
            node = obs_nodes[o]
            mu = z[node]
            raw = c * mu
            active = raw > SIGMA_FLOOR
            sigma = raw if active else SIGMA_FLOOR
            inv2 = 1.0 / (sigma * sigma)
            s1 = y_sum[t, o] - R * mu
            s2 = y_sq_sum[t, o] - mu * (y_sum[t, o] + s1)
            ll += -0.5 * s2 * inv2 - R * math.log(sigma)
            if want_grad:
                dsig = (s2 * inv2 - R) / sigma if active else 0.0
                dmu = s1 * inv2 + dsig * c
                for p in range(P):
                    grad[p] += dmu * z[N * (p + 1) + node]
                if infer_sigma:
                    grad[n_model] += dsig * mu
    if not np.isfinite(ll):
        return -np.inf, grad_u
    if want_grad:
        for i in range(dim):
            grad_u[i] = grad[i] * width[i] * s[i] * (1.0 - s[i]) + (1.0 - 2.0 * s[i])
    return lp + ll, grad_u
