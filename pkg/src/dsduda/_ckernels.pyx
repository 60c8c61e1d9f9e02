# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: radix-2 FFT and the LSTM time recurrence.

Mirrors ``_pykernels`` exactly in signature and semantics.
"""

import numpy as np

from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _matmul(double* a, double* b, double* c, int m, int k, int n,
                         double beta) noexcept nogil:
    # row-major C[m,n] = A[m,k] @ B[k,n] + beta*C, via column-major dgemm on transposes
    cdef char tr = b'N'
    cdef double one = 1.0
    dgemm(&tr, &tr, &n, &m, &k, &one, b, &n, a, &k, &beta, c, &n)


cdef inline void _matmul_tn(double* a, double* b, double* c, int m, int k, int n,
                            double beta) noexcept nogil:
    # row-major C[k,n] = A[m,k]^T @ B[m,n] + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tn, &tt, &n, &k, &m, &one, b, &n, a, &k, &beta, c, &n)


cdef inline void _matmul_nt(double* a, double* b, double* c, int m, int k, int n,
                            double beta) noexcept nogil:
    # row-major C[m,n] = A[m,k] @ B[n,k]^T + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tt, &tn, &n, &m, &k, &one, b, &k, a, &k, &beta, c, &n)


cdef inline double _sig(double a) noexcept nogil:
    return 1.0 / (1.0 + exp(-a))


cdef inline double _tanh(double a) noexcept nogil:
    # libmvec has no fast vector tanh on this glibc; exp-based form vectorizes
    return 2.0 / (1.0 + exp(-2.0 * a)) - 1.0


def fft_inplace(double[:, ::1] re, double[:, ::1] im,
                const double[::1] tw_re, const double[::1] tw_im):
    cdef Py_ssize_t rows = re.shape[0]
    cdef Py_ssize_t n = re.shape[1]
    cdef Py_ssize_t r, i, j, bit, size, half, step, start, k
    cdef double tr, ti, wr, wi, ar, ai
    if n <= 1:
        return
    with nogil:
        for r in range(rows):
            j = 0
            for i in range(1, n):
                bit = n >> 1
                while j & bit:
                    j ^= bit
                    bit >>= 1
                j |= bit
                if i < j:
                    tr = re[r, i]; re[r, i] = re[r, j]; re[r, j] = tr
                    ti = im[r, i]; im[r, i] = im[r, j]; im[r, j] = ti
            size = 2
            while size <= n:
                half = size // 2
                step = n // size
                start = 0
                while start < n:
                    for k in range(half):
                        wr = tw_re[k * step]
                        wi = tw_im[k * step]
                        i = start + k
                        j = i + half
                        tr = re[r, j] * wr - im[r, j] * wi
                        ti = re[r, j] * wi + im[r, j] * wr
                        ar = re[r, i]
                        ai = im[r, i]
                        re[r, i] = ar + tr
                        im[r, i] = ai + ti
                        re[r, j] = ar - tr
                        im[r, j] = ai - ti
                    start += size
                size *= 2


cdef int _active(const long[::1] lengths, int t) noexcept nogil:
    cdef int n = 0
    while n < lengths.shape[0] and lengths[n] > t:
        n += 1
    return n


def lstm_forward(xp_in, w_hh_in, lengths_in):
    cdef double[:, :, ::1] xp = np.ascontiguousarray(xp_in, dtype=np.float64)
    cdef double[:, ::1] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef const long[::1] lengths = np.ascontiguousarray(lengths_in, dtype=np.int64)
    cdef int B = xp.shape[0]
    cdef int T = xp.shape[1]
    cdef int G = xp.shape[2]
    cdef int H = G // 4
    hs_arr = np.zeros((B, T, H))
    cs_arr = np.zeros((B, T, H))
    gates_arr = np.zeros((B, T, G))
    a_arr = np.empty((B, G))
    h_arr = np.zeros((B, H))
    c_arr = np.zeros((B, H))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] c = c_arr
    cdef int t, b, u, nb
    cdef double* ap
    cdef double* gp
    cdef double* cp
    cdef double* hp
    if B == 0 or T == 0:
        return hs_arr, cs_arr, gates_arr
    with nogil:
        for t in range(T):
            nb = _active(lengths, t)
            if nb == 0:
                break
            for b in range(nb):
                for u in range(G):
                    a[b, u] = xp[b, t, u]
            if t > 0:
                _matmul(&h[0, 0], &w_hh[0, 0], &a[0, 0], nb, H, G, 1.0)
            for b in range(nb):
                # raw contiguous pointers so gcc vectorizes exp through libmvec
                ap = &a[b, 0]
                gp = &gates[b, t, 0]
                cp = &c[b, 0]
                hp = &h[b, 0]
                for u in range(G):
                    gp[u] = _sig(ap[u])
                for u in range(H):
                    gp[2 * H + u] = _tanh(ap[2 * H + u])
                for u in range(H):
                    cp[u] = gp[H + u] * cp[u] + gp[u] * gp[2 * H + u]
                for u in range(H):
                    hp[u] = gp[3 * H + u] * _tanh(cp[u])
                for u in range(H):
                    hs[b, t, u] = hp[u]
                    cs[b, t, u] = cp[u]
    return hs_arr, cs_arr, gates_arr


def lstm_backward(dhs_in, hs_in, cs_in, gates_in, w_hh_in, lengths_in):
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, :, ::1] cs = np.ascontiguousarray(cs_in, dtype=np.float64)
    cdef double[:, :, ::1] gates = np.ascontiguousarray(gates_in, dtype=np.float64)
    cdef double[:, ::1] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef const long[::1] lengths = np.ascontiguousarray(lengths_in, dtype=np.int64)
    cdef int B = hs.shape[0]
    cdef int T = hs.shape[1]
    cdef int H = hs.shape[2]
    cdef int G = 4 * H
    dxp_arr = np.zeros((B, T, G))
    dw_arr = np.zeros((H, G))
    dh_next_arr = np.zeros((B, H))
    dc_next_arr = np.zeros((B, H))
    da_arr = np.empty((B, G))
    hprev_arr = np.empty((B, H))
    zeros_arr = np.zeros(H)
    cdef double[:, :, ::1] dxp = dxp_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[:, ::1] dh_next = dh_next_arr
    cdef double[:, ::1] dc_next = dc_next_arr
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] hprev = hprev_arr
    cdef double[::1] zeros = zeros_arr
    cdef int t, b, u, nb
    cdef double* gp
    cdef double* dap
    cdef double* cp
    cdef double* cpp
    cdef double* dhp
    cdef double* dnp
    cdef double* dcp
    cdef double ig, fg, gg, og, tc, dh, dc
    if B == 0 or T == 0:
        return dxp_arr, dw_arr
    with nogil:
        for t in range(T - 1, -1, -1):
            nb = _active(lengths, t)
            if nb == 0:
                continue
            for b in range(nb):
                gp = &gates[b, t, 0]
                dap = &da[b, 0]
                cp = &cs[b, t, 0]
                dhp = &dhs[b, t, 0]
                dnp = &dh_next[b, 0]
                dcp = &dc_next[b, 0]
                if t > 0:
                    cpp = &cs[b, t - 1, 0]
                else:
                    cpp = &zeros[0]
                for u in range(H):
                    dh = dhp[u] + dnp[u]
                    tc = _tanh(cp[u])
                    ig = gp[u]
                    fg = gp[H + u]
                    gg = gp[2 * H + u]
                    og = gp[3 * H + u]
                    dc = dcp[u] + dh * og * (1.0 - tc * tc)
                    dap[u] = dc * gg * ig * (1.0 - ig)
                    dap[H + u] = dc * cpp[u] * fg * (1.0 - fg)
                    dap[2 * H + u] = dc * ig * (1.0 - gg * gg)
                    dap[3 * H + u] = dh * tc * og * (1.0 - og)
                    dcp[u] = dc * fg
                for u in range(G):
                    dxp[b, t, u] = dap[u]
            if t > 0:
                for b in range(nb):
                    for u in range(H):
                        hprev[b, u] = hs[b, t - 1, u]
                _matmul_tn(&hprev[0, 0], &da[0, 0], &dw[0, 0], nb, H, G, 1.0)
            _matmul_nt(&da[0, 0], &w_hh[0, 0], &dh_next[0, 0], nb, G, H, 0.0)
    return dxp_arr, dw_arr
