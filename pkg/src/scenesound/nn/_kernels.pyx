# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport cython
from libc.math cimport exp, tanh

ctypedef fused real:
    float
    double


cdef inline real _sigm(real a) noexcept nogil:
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    cdef real e = exp(a)
    return e / (1.0 + e)


def _forward(real[:, :, ::1] xp, real[:, :, ::1] U, real[:, :, ::1] hs,
             real[:, :, ::1] gs, real[:, :, ::1] rs, real[:, :, ::1] cs):
    cdef Py_ssize_t B = xp.shape[0], T = xp.shape[1], H = U.shape[1]
    cdef Py_ssize_t b, t, i, j
    cdef real ag, ar, ah, hp, g, r, c
    cdef real[::1] rh
    rh_arr = np.empty(H, dtype=np.asarray(xp).dtype)
    rh = rh_arr
    with nogil:
        for b in range(B):
            for t in range(T):
                for i in range(H):
                    ar = xp[b, t, H + i]
                    if t > 0:
                        for j in range(H):
                            ar = ar + U[1, i, j] * hs[b, t - 1, j]
                    r = _sigm(ar)
                    rs[b, t, i] = r
                for j in range(H):
                    rh[j] = rs[b, t, j] * hs[b, t - 1, j] if t > 0 else 0
                for i in range(H):
                    ag = xp[b, t, i]
                    ah = xp[b, t, 2 * H + i]
                    if t > 0:
                        for j in range(H):
                            ag = ag + U[0, i, j] * hs[b, t - 1, j]
                            ah = ah + U[2, i, j] * rh[j]
                        hp = hs[b, t - 1, i]
                    else:
                        hp = 0
                    g = _sigm(ag)
                    c = tanh(ah)
                    gs[b, t, i] = g
                    cs[b, t, i] = c
                    hs[b, t, i] = (1 - g) * hp + g * c


def _backward(real[:, :, ::1] dh_out, real[:, :, ::1] hs, real[:, :, ::1] gs,
              real[:, :, ::1] rs, real[:, :, ::1] cs, real[:, :, ::1] U,
              real[:, :, ::1] dxp, real[:, :, ::1] dU):
    cdef Py_ssize_t B = hs.shape[0], T = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t b, t, i, j
    cdef real dh, g, r, c, hp, s
    dtype = np.asarray(hs).dtype
    cdef real[::1] dh_next = np.zeros(H, dtype=dtype)
    cdef real[::1] drh = np.zeros(H, dtype=dtype)
    cdef real[::1] dag = np.zeros(H, dtype=dtype)
    cdef real[::1] dar = np.zeros(H, dtype=dtype)
    cdef real[::1] dah = np.zeros(H, dtype=dtype)
    cdef real[::1] hprev = np.zeros(H, dtype=dtype)
    with nogil:
        for b in range(B):
            for j in range(H):
                dh_next[j] = 0
            t = T - 1
            while t >= 0:
                for i in range(H):
                    hprev[i] = hs[b, t - 1, i] if t > 0 else 0
                for i in range(H):
                    g = gs[b, t, i]
                    c = cs[b, t, i]
                    dh = dh_out[b, t, i] + dh_next[i]
                    dah[i] = dh * g * (1 - c * c)
                    dag[i] = dh * (c - hprev[i]) * g * (1 - g)
                    dh_next[i] = dh * (1 - g)
                for j in range(H):
                    s = 0
                    for i in range(H):
                        s = s + dah[i] * U[2, i, j]
                    drh[j] = s
                for j in range(H):
                    r = rs[b, t, j]
                    dar[j] = drh[j] * hprev[j] * r * (1 - r)
                    dh_next[j] = dh_next[j] + drh[j] * r
                for j in range(H):
                    s = 0
                    for i in range(H):
                        s = s + dag[i] * U[0, i, j] + dar[i] * U[1, i, j]
                    dh_next[j] = dh_next[j] + s
                if t > 0:
                    for i in range(H):
                        for j in range(H):
                            dU[0, i, j] += dag[i] * hprev[j]
                            dU[1, i, j] += dar[i] * hprev[j]
                            dU[2, i, j] += dah[i] * rs[b, t, j] * hprev[j]
                for i in range(H):
                    dxp[b, t, i] = dag[i]
                    dxp[b, t, H + i] = dar[i]
                    dxp[b, t, 2 * H + i] = dah[i]
                t -= 1


def gru_scan_forward(xp, U):
    B, T, H3 = xp.shape
    H = H3 // 3
    xp = np.ascontiguousarray(xp)
    U = np.ascontiguousarray(U, dtype=xp.dtype)
    hs = np.empty((B, T, H), xp.dtype)
    gs = np.empty_like(hs)
    rs = np.empty_like(hs)
    cs = np.empty_like(hs)
    _forward(xp, U, hs, gs, rs, cs)
    return hs, gs, rs, cs


def gru_scan_backward(dh_out, hs, gs, rs, cs, U):
    B, T, H = hs.shape
    dtype = hs.dtype
    dxp = np.empty((B, T, 3 * H), dtype)
    dU = np.zeros((3, H, H), dtype)
    _backward(np.ascontiguousarray(dh_out, dtype=dtype), np.ascontiguousarray(hs),
              np.ascontiguousarray(gs), np.ascontiguousarray(rs),
              np.ascontiguousarray(cs), np.ascontiguousarray(U, dtype=dtype), dxp, dU)
    return dxp, dU


def _pool_fwd(real[:, :, :, ::1] x, int pf, int pt, real[:, :, :, ::1] out, int[:, :, :, ::1] idx):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], Fo = out.shape[2], To = out.shape[3]
    cdef Py_ssize_t b, c, fo, to, i, j
    cdef real best, v
    cdef int arg
    with nogil:
        for b in range(B):
            for c in range(C):
                for fo in range(Fo):
                    for to in range(To):
                        best = x[b, c, fo * pf, to * pt]
                        arg = 0
                        for i in range(pf):
                            for j in range(pt):
                                v = x[b, c, fo * pf + i, to * pt + j]
                                if v > best:
                                    best = v
                                    arg = i * pt + j
                        out[b, c, fo, to] = best
                        idx[b, c, fo, to] = arg


def _pool_bwd(real[:, :, :, ::1] dout, int[:, :, :, ::1] idx, int pf, int pt, real[:, :, :, ::1] dx):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[1], Fo = dout.shape[2], To = dout.shape[3]
    cdef Py_ssize_t b, c, fo, to
    cdef int a
    with nogil:
        for b in range(B):
            for c in range(C):
                for fo in range(Fo):
                    for to in range(To):
                        a = idx[b, c, fo, to]
                        dx[b, c, fo * pf + a // pt, to * pt + a % pt] = dout[b, c, fo, to]


def maxpool_forward(x, pool_f, pool_t):
    x = np.ascontiguousarray(x)
    B, C, F, T = x.shape
    out = np.empty((B, C, F // pool_f, T // pool_t), x.dtype)
    idx = np.empty(out.shape, np.int32)
    _pool_fwd(x, pool_f, pool_t, out, idx)
    return out, idx


def maxpool_backward(dout, idx, shape, pool_f, pool_t):
    dx = np.zeros(shape, dout.dtype)
    _pool_bwd(np.ascontiguousarray(dout), np.ascontiguousarray(idx, dtype=np.int32), pool_f, pool_t, dx)
    return dx
