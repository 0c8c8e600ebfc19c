"""Compiled kernels for the banded solvers.

Row ``i`` of an almost-banded matrix is stored explicitly over the window of
columns ``[i - L, i + L + U]`` (``W[i, j - i + L]``); its entries beyond the
window equal ``C[i] . B[:, j]`` where ``B`` holds the original dense rows.
Givens rotations keep both representations in step, so the factorization
costs O(n (L + U) (L + Nb)).
"""

import numpy as np
from numba import config, njit, prange

# the bundled TBB is often too old; try OpenMP first to avoid a noisy fallback
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def qr_factor_kernel(W, C, B, G1, G2, L, U):
    n = W.shape[0]
    nb = B.shape[0]
    for k in range(n):
        for i in range(k + 1, min(k + L, n - 1) + 1):
            b = W[i, k - i + L]
            if b == 0:
                G1[k, i - k - 1] = 1.0
                G2[k, i - k - 1] = 0.0
                continue
            a = W[k, L]
            rho = np.sqrt((a * a.conjugate()).real + (b * b.conjugate()).real)
            g1 = a / rho
            g2 = b / rho
            G1[k, i - k - 1] = g1
            G2[k, i - k - 1] = g2
            cg1 = g1.conjugate()
            cg2 = g2.conjugate()
            jmax = min(k + L + U, n - 1)
            for j in range(k, jmax + 1):
                xk = W[k, j - k + L]
                xi = W[i, j - i + L]
                W[k, j - k + L] = cg1 * xk + cg2 * xi
                W[i, j - i + L] = -g2 * xk + g1 * xi
            for j in range(jmax + 1, min(i + L + U, n - 1) + 1):
                xk = W[k, 0] * 0
                for d in range(nb):
                    xk += C[k, d] * B[d, j]
                W[i, j - i + L] = -g2 * xk + g1 * W[i, j - i + L]
            for d in range(nb):
                ck = C[k, d]
                ci = C[i, d]
                C[k, d] = cg1 * ck + cg2 * ci
                C[i, d] = -g2 * ck + g1 * ci
            W[i, k - i + L] = 0.0


@njit(**_OPTS)
def qr_solve_kernel(W, C, B, G1, G2, L, U, rhs, out):
    n = W.shape[0]
    nb = B.shape[0]
    for k in range(n):
        out[k] = rhs[k]
    for k in range(n):
        for i in range(k + 1, min(k + L, n - 1) + 1):
            g1 = G1[k, i - k - 1]
            g2 = G2[k, i - k - 1]
            yk = out[k]
            yi = out[i]
            out[k] = g1.conjugate() * yk + g2.conjugate() * yi
            out[i] = -g2 * yk + g1 * yi
    sigma = np.zeros(nb, dtype=out.dtype)
    w = L + U
    for k in range(n - 1, -1, -1):
        j = k + w + 1
        if j < n:
            for d in range(nb):
                sigma[d] += B[d, j] * out[j]
        acc = out[k]
        for j in range(k + 1, min(k + w, n - 1) + 1):
            acc -= W[k, j - k + L] * out[j]
        for d in range(nb):
            acc -= C[k, d] * sigma[d]
        out[k] = acc / W[k, L]


@njit(**_OPTS)
def qr_solve_many_kernel(W, C, B, G1, G2, L, U, rhs, out):
    # independent factorizations stacked along the first axis
    for p in range(W.shape[0]):
        qr_solve_kernel(W[p], C[p], B, G1[p], G2[p], L, U, rhs[p], out[p])


@njit(parallel=True, **_OPTS)
def qr_solve_many_parallel_kernel(W, C, B, G1, G2, L, U, rhs, out):
    for p in prange(W.shape[0]):
        qr_solve_kernel(W[p], C[p], B, G1[p], G2[p], L, U, rhs[p], out[p])


@njit(**_OPTS)
def upper_banded_solve_kernel(ab, u, rhs, out):
    n = ab.shape[1]
    for i in range(n - 1, -1, -1):
        acc = rhs[i]
        for j in range(i + 1, min(i + u, n - 1) + 1):
            acc -= ab[u + i - j, j] * out[j]
        out[i] = acc / ab[u, i]


@njit(**_OPTS)
def banded_matvec_kernel(ab, lower, upper, rows, x, out):
    cols = ab.shape[1]
    for i in range(rows):
        acc = out[i] * 0
        for j in range(max(0, i - lower), min(cols - 1, i + upper) + 1):
            acc += ab[upper + i - j, j] * x[j]
        out[i] = acc


@njit(**_OPTS)
def pole_sum_kernel(W, C, B, G1, G2, L, U, wts, V, top_scale, fac, nb, out):
    # out = sum_p fac[p] Re(x_p) with x_p solving system p for the right-hand
    # side sum_j wts[p, j] V[j], its first nb entries scaled by top_scale[p]
    n = W.shape[1]
    rhs = np.empty(n, dtype=W.dtype)
    x = np.empty(n, dtype=W.dtype)
    for i in range(n):
        out[i] = 0.0
    for p in range(W.shape[0]):
        for i in range(n):
            acc = W[p, 0, 0] * 0
            for j in range(V.shape[0]):
                acc += wts[p, j] * V[j, i]
            rhs[i] = acc
        for i in range(nb):
            rhs[i] *= top_scale[p]
        qr_solve_kernel(W[p], C[p], B, G1[p], G2[p], L, U, rhs, x)
        for i in range(n):
            out[i] += fac[p] * x[i].real
