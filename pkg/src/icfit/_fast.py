"""Compiled inner loops (numba) for the pairwise partial-correlation scores.

The pair sweep is the hot path of every consistency step: p(p-1)/2
conditioning-set solves per iteration.  Everything here works on plain
float64/int64 arrays so the kernels can be cached across processes.
"""

import numpy as np
from numba import njit

ATANH_CLAMP = 1.0 - 1e-8


@njit(cache=True)
def _cholesky_inplace(A, L):
    """Lower Cholesky factor of A into L; returns False if not SPD."""
    m = A.shape[0]
    for i in range(m):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True)
def _chol_solve(L, b, x):
    """Solve (L L^T) x = b given the Cholesky factor L."""
    m = L.shape[0]
    for i in range(m):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(m - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, m):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(cache=True)
def pair_scores(cov, corr_abs, nbrs, nbr_len, n, cap):
    """Fisher-transformed partial correlations for every unordered pair.

    For pair (i, j) the conditioning set is the union of the two screened
    neighborhoods minus {i, j}; when the union exceeds ``cap`` entries
    (or n-4, whichever is smaller) the members with the largest absolute
    correlation to either endpoint are kept.  Singular conditioning
    covariances fall back to ridge-regularized solves.
    """
    p = cov.shape[0]
    cap_eff = min(cap, n - 4)
    scores = np.zeros((p, p))
    member = np.zeros(p, dtype=np.bool_)
    sel = np.empty(p, dtype=np.int64)
    keys = np.empty(p, dtype=np.float64)
    maxs = max(cap_eff, 1)
    A = np.empty((maxs, maxs))
    L = np.empty((maxs, maxs))
    b1 = np.empty(maxs)
    b2 = np.empty(maxs)
    u = np.empty(maxs)
    v = np.empty(maxs)

    for i in range(p):
        for j in range(i + 1, p):
            # union of neighborhoods, excluding the pair itself
            cnt = 0
            for t in range(nbr_len[i]):
                k = nbrs[i, t]
                if k != i and k != j and not member[k]:
                    member[k] = True
                    sel[cnt] = k
                    cnt += 1
            for t in range(nbr_len[j]):
                k = nbrs[j, t]
                if k != i and k != j and not member[k]:
                    member[k] = True
                    sel[cnt] = k
                    cnt += 1
            for t in range(cnt):
                member[sel[t]] = False

            if cnt > cap_eff:
                for t in range(cnt):
                    k = sel[t]
                    key = corr_abs[k, i]
                    if corr_abs[k, j] > key:
                        key = corr_abs[k, j]
                    keys[t] = -key
                order = np.argsort(keys[:cnt], kind="mergesort")
                kept = np.empty(cap_eff, dtype=np.int64)
                for t in range(cap_eff):
                    kept[t] = sel[order[t]]
                m = cap_eff
                for t in range(m):
                    sel[t] = kept[t]
            else:
                m = cnt

            if m == 0:
                c_ii = cov[i, i]
                c_jj = cov[j, j]
                c_ij = cov[i, j]
            else:
                tr = 0.0
                for a in range(m):
                    ka = sel[a]
                    b1[a] = cov[ka, i]
                    b2[a] = cov[ka, j]
                    for b in range(m):
                        A[a, b] = cov[ka, sel[b]]
                    tr += A[a, a]
                ridge = 1e-6 * tr / m
                ok = _cholesky_inplace(A[:m, :m], L[:m, :m])
                attempts = 0
                while not ok and attempts < 4:
                    for a in range(m):
                        A[a, a] += ridge
                    ridge *= 10.0
                    ok = _cholesky_inplace(A[:m, :m], L[:m, :m])
                    attempts += 1
                if not ok:
                    scores[i, j] = 0.0
                    scores[j, i] = 0.0
                    continue
                _chol_solve(L[:m, :m], b1[:m], u[:m])
                _chol_solve(L[:m, :m], b2[:m], v[:m])
                d1 = 0.0
                d2 = 0.0
                d12 = 0.0
                for a in range(m):
                    d1 += b1[a] * u[a]
                    d2 += b2[a] * v[a]
                    d12 += b1[a] * v[a]
                c_ii = cov[i, i] - d1
                c_jj = cov[j, j] - d2
                c_ij = cov[i, j] - d12

            floor_i = 1e-12 * cov[i, i]
            floor_j = 1e-12 * cov[j, j]
            if c_ii < floor_i:
                c_ii = floor_i
            if c_jj < floor_j:
                c_jj = floor_j
            r = c_ij / np.sqrt(c_ii * c_jj)
            if r > ATANH_CLAMP:
                r = ATANH_CLAMP
            elif r < -ATANH_CLAMP:
                r = -ATANH_CLAMP
            s = np.sqrt(n - m - 3.0) * np.arctanh(r)
            scores[i, j] = s
            scores[j, i] = s
    return scores
