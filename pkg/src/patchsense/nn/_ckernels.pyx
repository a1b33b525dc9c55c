# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same signatures and results as ``_pykernels``.

The recurrent time loops run here with fused elementwise updates; matrix
products go straight to BLAS through scipy's Cython bindings.
"""
import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef inline void _gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                       double* A, int lda, double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # Row-major C(m,n) = alpha*op(A)(m,k) @ op(B)(k,n) + beta*C, issued as the
    # column-major product C^T = op(B)^T op(A)^T. lda/ldb/ldc are row strides.
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    if m <= 0 or n <= 0:
        return
    dgemm(&cb, &ca, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double _sig(double v) noexcept nogil:
    cdef double e
    if v >= 0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int K = w.shape[0], M = w.shape[2]
    cdef int Lo = L - K + 1
    cdef int bi, t, m, k
    out = np.empty((B, Lo, M))
    cdef double[:, :, ::1] z = out
    with nogil:
        for bi in range(B):
            for t in range(Lo):
                for m in range(M):
                    z[bi, t, m] = b[m]
            for k in range(K):
                _gemm(False, False, Lo, M, F, 1.0, &x[bi, k, 0], F, &w[k, 0, 0], M, 1.0, &z[bi, 0, 0], M)
    return out


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w, double[:, :, ::1] dz):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int K = w.shape[0], M = w.shape[2]
    cdef int Lo = L - K + 1
    cdef int bi, t, m, k
    dx_a = np.zeros((B, L, F))
    dw_a = np.zeros((K, F, M))
    db_a = np.zeros(M)
    cdef double[:, :, ::1] dx = dx_a
    cdef double[:, :, ::1] dw = dw_a
    cdef double[::1] db = db_a
    with nogil:
        for bi in range(B):
            for t in range(Lo):
                for m in range(M):
                    db[m] += dz[bi, t, m]
            for k in range(K):
                _gemm(True, False, F, M, Lo, 1.0, &x[bi, k, 0], F, &dz[bi, 0, 0], M, 1.0, &dw[k, 0, 0], M)
                _gemm(False, True, Lo, F, M, 1.0, &dz[bi, 0, 0], M, &w[k, 0, 0], M, 1.0, &dx[bi, k, 0], F)
    return dx_a, dw_a, db_a


def maxpool1d_forward(double[:, :, ::1] x, int pool):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int Lp = L // pool
    cdef int bi, p, f, q, best
    cdef double v, bv
    y_a = np.empty((B, Lp, F))
    idx_a = np.empty((B, Lp, F), dtype=np.int64)
    cdef double[:, :, ::1] y = y_a
    cdef long long[:, :, ::1] idx = idx_a
    with nogil:
        for bi in range(B):
            for p in range(Lp):
                for f in range(F):
                    best = 0
                    bv = x[bi, p * pool, f]
                    for q in range(1, pool):
                        v = x[bi, p * pool + q, f]
                        if v > bv:
                            bv = v
                            best = q
                    y[bi, p, f] = bv
                    idx[bi, p, f] = best
    return y_a, idx_a


def maxpool1d_backward(double[:, :, ::1] dy, long long[:, :, ::1] idx, int length, int pool):
    cdef int B = dy.shape[0], Lp = dy.shape[1], F = dy.shape[2]
    cdef int bi, p, f
    dx_a = np.zeros((B, length, F))
    cdef double[:, :, ::1] dx = dx_a
    with nogil:
        for bi in range(B):
            for p in range(Lp):
                for f in range(F):
                    dx[bi, p * pool + idx[bi, p, f], f] += dy[bi, p, f]
    return dx_a


def lstm_forward(x, wx, wh, b):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int H = wh.shape[0]
    gates_a = np.ascontiguousarray((x.reshape(B * L, F) @ wx + b).reshape(B, L, 4 * H))
    hs_a = np.zeros((B, L, H))
    cs_a = np.zeros((B, L, H))
    cdef double[:, :, ::1] g = gates_a
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] cs = cs_a
    cdef double[:, ::1] whv = wh
    cdef int t, bi, j
    cdef double gi, gf, gg, go, c, cprev
    with nogil:
        for t in range(L):
            if t > 0:
                _gemm(False, False, B, 4 * H, H, 1.0, &hs[0, t - 1, 0], L * H,
                      &whv[0, 0], 4 * H, 1.0, &g[0, t, 0], L * 4 * H)
            for bi in range(B):
                for j in range(H):
                    gi = _sig(g[bi, t, j])
                    gf = _sig(g[bi, t, H + j])
                    gg = tanh(g[bi, t, 2 * H + j])
                    go = _sig(g[bi, t, 3 * H + j])
                    cprev = cs[bi, t - 1, j] if t > 0 else 0.0
                    c = gf * cprev + gi * gg
                    cs[bi, t, j] = c
                    hs[bi, t, j] = go * tanh(c)
                    g[bi, t, j] = gi
                    g[bi, t, H + j] = gf
                    g[bi, t, 2 * H + j] = gg
                    g[bi, t, 3 * H + j] = go
    return hs_a, cs_a, gates_a


def lstm_backward(x, wx, wh, hs_in, cs_in, gates_in, dhs_in):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int H = wh.shape[0]
    da_a = np.zeros((B, L, 4 * H))
    dwh_a = np.zeros((H, 4 * H))
    dhn_a = np.zeros((B, H))
    dcn_a = np.zeros((B, H))
    cdef double[:, :, ::1] da = da_a
    cdef double[:, ::1] dwh = dwh_a
    cdef double[:, ::1] dh_next = dhn_a
    cdef double[:, ::1] dc_next = dcn_a
    cdef double[:, :, ::1] hs = hs_in
    cdef double[:, :, ::1] cs = cs_in
    cdef double[:, :, ::1] g = gates_in
    cdef double[:, :, ::1] dhs = dhs_in
    cdef double[:, ::1] whv = wh
    cdef int t, bi, j
    cdef double gi, gf, gg, go, tc, dh, dc, cprev
    with nogil:
        for t in range(L - 1, -1, -1):
            for bi in range(B):
                for j in range(H):
                    gi = g[bi, t, j]
                    gf = g[bi, t, H + j]
                    gg = g[bi, t, 2 * H + j]
                    go = g[bi, t, 3 * H + j]
                    cprev = cs[bi, t - 1, j] if t > 0 else 0.0
                    tc = tanh(cs[bi, t, j])
                    dh = dhs[bi, t, j] + dh_next[bi, j]
                    dc = dc_next[bi, j] + dh * go * (1.0 - tc * tc)
                    da[bi, t, j] = dc * gg * gi * (1.0 - gi)
                    da[bi, t, H + j] = dc * cprev * gf * (1.0 - gf)
                    da[bi, t, 2 * H + j] = dc * gi * (1.0 - gg * gg)
                    da[bi, t, 3 * H + j] = dh * tc * go * (1.0 - go)
                    dc_next[bi, j] = dc * gf
            if t > 0:
                _gemm(True, False, H, 4 * H, B, 1.0, &hs[0, t - 1, 0], L * H,
                      &da[0, t, 0], L * 4 * H, 1.0, &dwh[0, 0], 4 * H)
            _gemm(False, True, B, H, 4 * H, 1.0, &da[0, t, 0], L * 4 * H,
                  &whv[0, 0], 4 * H, 0.0, &dh_next[0, 0], H)
    flat = da_a.reshape(B * L, 4 * H)
    dx = (flat @ wx.T).reshape(B, L, F)
    dwx = x.reshape(B * L, F).T @ flat
    return dx, dwx, dwh_a, flat.sum(axis=0)


def gru_forward(x, wx, wh, b_in, b_rec):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int H = wh.shape[0]
    gates_a = np.ascontiguousarray((x.reshape(B * L, F) @ wx + b_in).reshape(B, L, 3 * H))
    hs_a = np.zeros((B, L, H))
    hn_a = np.zeros((B, L, H))
    hw_a = np.empty((B, 3 * H))
    cdef double[:, :, ::1] g = gates_a
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] hn = hn_a
    cdef double[:, ::1] hw = hw_a
    cdef double[:, ::1] whv = wh
    cdef double[::1] brec = b_rec
    cdef int t, bi, j
    cdef double z, r, n, hprev
    with nogil:
        for t in range(L):
            for bi in range(B):
                for j in range(3 * H):
                    hw[bi, j] = brec[j]
            if t > 0:
                _gemm(False, False, B, 3 * H, H, 1.0, &hs[0, t - 1, 0], L * H,
                      &whv[0, 0], 3 * H, 1.0, &hw[0, 0], 3 * H)
            for bi in range(B):
                for j in range(H):
                    hprev = hs[bi, t - 1, j] if t > 0 else 0.0
                    z = _sig(g[bi, t, j] + hw[bi, j])
                    r = _sig(g[bi, t, H + j] + hw[bi, H + j])
                    n = tanh(g[bi, t, 2 * H + j] + r * hw[bi, 2 * H + j])
                    hs[bi, t, j] = z * hprev + (1.0 - z) * n
                    hn[bi, t, j] = hw[bi, 2 * H + j]
                    g[bi, t, j] = z
                    g[bi, t, H + j] = r
                    g[bi, t, 2 * H + j] = n
    return hs_a, gates_a, hn_a


def gru_backward(x, wx, wh, hs_in, gates_in, hn_in, dhs_in):
    cdef int B = x.shape[0], L = x.shape[1], F = x.shape[2]
    cdef int H = wh.shape[0]
    dxw_a = np.zeros((B, L, 3 * H))
    dwh_a = np.zeros((H, 3 * H))
    dbr_a = np.zeros(3 * H)
    dhn_a = np.zeros((B, H))
    dhw_a = np.zeros((B, 3 * H))
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] dwh = dwh_a
    cdef double[::1] db_rec = dbr_a
    cdef double[:, ::1] dh_next = dhn_a
    cdef double[:, ::1] dhw = dhw_a
    cdef double[:, :, ::1] hs = hs_in
    cdef double[:, :, ::1] g = gates_in
    cdef double[:, :, ::1] hn = hn_in
    cdef double[:, :, ::1] dhs = dhs_in
    cdef double[:, ::1] whv = wh
    cdef int t, bi, j
    cdef double z, r, n, hprev, dh, dan, daz, dar
    with nogil:
        for t in range(L - 1, -1, -1):
            for bi in range(B):
                for j in range(H):
                    z = g[bi, t, j]
                    r = g[bi, t, H + j]
                    n = g[bi, t, 2 * H + j]
                    hprev = hs[bi, t - 1, j] if t > 0 else 0.0
                    dh = dhs[bi, t, j] + dh_next[bi, j]
                    dan = dh * (1.0 - z) * (1.0 - n * n)
                    daz = dh * (hprev - n) * z * (1.0 - z)
                    dar = dan * hn[bi, t, j] * r * (1.0 - r)
                    dxw[bi, t, j] = daz
                    dxw[bi, t, H + j] = dar
                    dxw[bi, t, 2 * H + j] = dan
                    dhw[bi, j] = daz
                    dhw[bi, H + j] = dar
                    dhw[bi, 2 * H + j] = dan * r
                    db_rec[j] += daz
                    db_rec[H + j] += dar
                    db_rec[2 * H + j] += dan * r
                    dh_next[bi, j] = dh * z
            if t > 0:
                _gemm(True, False, H, 3 * H, B, 1.0, &hs[0, t - 1, 0], L * H,
                      &dhw[0, 0], 3 * H, 1.0, &dwh[0, 0], 3 * H)
            _gemm(False, True, B, H, 3 * H, 1.0, &dhw[0, 0], 3 * H,
                  &whv[0, 0], 3 * H, 1.0, &dh_next[0, 0], H)
    flat = dxw_a.reshape(B * L, 3 * H)
    dx = (flat @ wx.T).reshape(B, L, F)
    dwx = x.reshape(B * L, F).T @ flat
    return dx, dwx, dwh_a, flat.sum(axis=0), dbr_a
