"""Pure-numpy hot kernels (fallback for the compiled ``_kernels`` module).

GRU shapes: ``xp`` is (B, T, 3H), the input projections for the update gate,
reset gate and candidate, with biases already added. ``U`` is (3, H, H).
The scan always runs forward in time; callers reverse the sequence for the
backward direction.
"""
import numpy as np


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gru_scan_forward(xp, U):
    B, T, H3 = xp.shape
    H = H3 // 3
    dtype = xp.dtype
    hs = np.empty((B, T, H), dtype)
    gs = np.empty((B, T, H), dtype)
    rs = np.empty((B, T, H), dtype)
    cs = np.empty((B, T, H), dtype)
    h_prev = np.zeros((B, H), dtype)
    Ug, Ur, Uh = U[0].T, U[1].T, U[2].T
    for t in range(T):
        x = xp[:, t]
        g = _sigmoid(x[:, :H] + h_prev @ Ug)
        r = _sigmoid(x[:, H : 2 * H] + h_prev @ Ur)
        c = np.tanh(x[:, 2 * H :] + (r * h_prev) @ Uh)
        h_prev = (1.0 - g) * h_prev + g * c
        hs[:, t], gs[:, t], rs[:, t], cs[:, t] = h_prev, g, r, c
    return hs, gs, rs, cs


def gru_scan_backward(dh_out, hs, gs, rs, cs, U):
    """Back-propagate through the recurrence.

    Returns the gradient w.r.t. ``xp`` (B, T, 3H) and ``U`` (3, H, H).
    """
    B, T, H = hs.shape
    dtype = hs.dtype
    dxp = np.empty((B, T, 3 * H), dtype)
    dU = np.zeros((3, H, H), dtype)
    dh_next = np.zeros((B, H), dtype)
    zeros = np.zeros((B, H), dtype)
    for t in range(T - 1, -1, -1):
        h_prev = hs[:, t - 1] if t > 0 else zeros
        g, r, c = gs[:, t], rs[:, t], cs[:, t]
        dh = dh_out[:, t] + dh_next
        da_h = dh * g * (1.0 - c * c)
        da_g = dh * (c - h_prev) * g * (1.0 - g)
        drh = da_h @ U[2]
        da_r = drh * h_prev * r * (1.0 - r)
        dh_next = dh * (1.0 - g) + drh * r + da_g @ U[0] + da_r @ U[1]
        dU[0] += da_g.T @ h_prev
        dU[1] += da_r.T @ h_prev
        dU[2] += da_h.T @ (r * h_prev)
        dxp[:, t, :H] = da_g
        dxp[:, t, H : 2 * H] = da_r
        dxp[:, t, 2 * H :] = da_h
    return dxp, dU


def maxpool_forward(x, pool_f, pool_t):
    """Non-overlapping max pooling of (B, C, F, T).

    Returns the pooled map and, per output cell, the row-major index of the
    first maximum inside its pool_f x pool_t window.
    """
    B, C, F, T = x.shape
    Fo, To = F // pool_f, T // pool_t
    win = x.reshape(B, C, Fo, pool_f, To, pool_t).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, Fo, To, pool_f * pool_t)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int32)


def maxpool_backward(dout, idx, shape, pool_f, pool_t):
    B, C, F, T = shape
    Fo, To = F // pool_f, T // pool_t
    dwin = np.zeros((B, C, Fo, To, pool_f * pool_t), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dwin = dwin.reshape(B, C, Fo, To, pool_f, pool_t).transpose(0, 1, 2, 4, 3, 5)
    return dwin.reshape(shape)
