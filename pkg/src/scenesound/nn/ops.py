"""Forward/backward kernels for the fixed network topology.

Feature maps are batched as (B, C, F, T). Each ``*_forward`` returns the
output and a cache; the matching ``*_backward`` consumes the upstream
gradient and the cache.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import backend

LEAKY_SLOPE = 0.01


# -- parameter containers --------------------------------------------------


@dataclass
class ConvParams:
    kernels: np.ndarray  # (C_out, C_in, kF, kT)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        if self.kernels.ndim != 4 or self.bias.shape != (self.kernels.shape[0],):
            raise ValueError("conv kernels must be (C_out, C_in, kF, kT) with matching bias")
        kf, kt = self.kernels.shape[2:]
        if kf % 2 == 0 or kt % 2 == 0:
            raise ValueError("same-padded convolution needs odd kernel sizes")


@dataclass
class DenseParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("dense W must be (out, in) with bias (out,)")


@dataclass
class GruParams:
    """One direction of a GRU: update gate g, reset gate r, candidate h."""

    W_g: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_g: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_g: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        H, I = self.W_g.shape
        for name, shape in (("W", (H, I)), ("U", (H, H)), ("b", (H,))):
            for gate in "grh":
                arr = getattr(self, f"{name}_{gate}")
                if arr.shape != shape:
                    raise ValueError(f"{name}_{gate} has shape {arr.shape}, expected {shape}")

    @property
    def hidden(self) -> int:
        return self.W_g.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.W_g.shape[1]

    def stacked(self):
        W = np.concatenate([self.W_g, self.W_r, self.W_h], axis=0)
        U = np.stack([self.U_g, self.U_r, self.U_h])
        b = np.concatenate([self.b_g, self.b_r, self.b_h])
        return W, U, b

    @classmethod
    def from_stacked(cls, W, U, b):
        H = U.shape[1]
        return cls(W[:H], W[H : 2 * H], W[2 * H :], U[0], U[1], U[2], b[:H], b[H : 2 * H], b[2 * H :])

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# -- activations -----------------------------------------------------------


def sigmoid(a):
    a = np.asarray(a)
    out = np.empty_like(a, dtype=np.result_type(a, np.float32))
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(a):
    return np.tanh(a)


def softmax(a, axis=-1):
    a = np.asarray(a)
    z = np.exp(a - a.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def leaky_relu(a):
    return np.maximum(a, LEAKY_SLOPE * a)


def leaky_relu_grad(a):
    g = (a > 0).astype(a.dtype)
    g *= 1.0 - LEAKY_SLOPE
    g += LEAKY_SLOPE
    return g


# -- convolution -----------------------------------------------------------


def _as_batch(x, ndim):
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ValueError(f"expected a {ndim - 1}-D or batched {ndim}-D array, got {x.ndim}-D")
    return x, False


def _windows(xpad, kf, kt):
    # (B, C, F, T, kf, kt) view over a padded map
    return np.lib.stride_tricks.sliding_window_view(xpad, (kf, kt), axis=(2, 3))


def conv2d_forward(x, p: ConvParams, activation=True):
    """Zero-padded 'same' cross-correlation over (F, T), then leaky ReLU."""
    B, C, F, T = x.shape
    Co, Ci, kf, kt = p.kernels.shape
    if C != Ci:
        raise ValueError(f"conv expects {Ci} input channels, got {C}")
    pf, pt = kf // 2, kt // 2
    xpad = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    z = np.tensordot(_windows(xpad, kf, kt), p.kernels, axes=([1, 4, 5], [1, 2, 3]))
    z = np.ascontiguousarray(np.moveaxis(z, 3, 1))
    z += p.bias[None, :, None, None]
    out = leaky_relu(z) if activation else z
    return out, (xpad, z, p.kernels, activation)


def conv2d_backward(dout, cache, input_grad=True):
    """Returns (dx, dkernels, dbias); dx is None when ``input_grad`` is False."""
    xpad, z, kernels, activation = cache
    Co, Ci, kf, kt = kernels.shape
    dz = dout * leaky_relu_grad(z) if activation else dout
    dW = np.tensordot(dz, _windows(xpad, kf, kt), axes=([0, 2, 3], [0, 2, 3]))
    db = dz.sum(axis=(0, 2, 3))
    if not input_grad:
        return None, dW, db
    pf, pt = kf // 2, kt // 2
    dzpad = np.pad(dz, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    flipped = kernels[:, :, ::-1, ::-1]
    dx = np.tensordot(_windows(dzpad, kf, kt), flipped, axes=([1, 4, 5], [0, 2, 3]))
    dx = np.ascontiguousarray(np.moveaxis(dx, 3, 1))
    return dx, dW, db


def conv2d(x, p: ConvParams, activation=True):
    """Single-map or batched convolution, forward only."""
    xb, single = _as_batch(x, 4)
    out, _ = conv2d_forward(xb, p, activation)
    return out[0] if single else out


# -- pooling ---------------------------------------------------------------


def maxpool_forward(x, pool_f, pool_t, impl=None):
    """Non-overlapping max pooling; ties go to the first element in scan order."""
    B, C, F, T = x.shape
    if F % pool_f or T % pool_t:
        raise ValueError(f"map {F}x{T} is not divisible by pool {pool_f}x{pool_t}")
    if pool_f == pool_t == 1:
        return x, (x.shape, 1, 1, None, impl)
    out, idx = backend.get(impl).maxpool_forward(x, pool_f, pool_t)
    return out, (x.shape, pool_f, pool_t, idx, impl)


def maxpool_backward(dout, cache):
    shape, pool_f, pool_t, idx, impl = cache
    if idx is None:
        return dout
    return backend.get(impl).maxpool_backward(dout, idx, shape, pool_f, pool_t)


def maxpool(x, pool_f, pool_t):
    xb, single = _as_batch(x, 4)
    out, _ = maxpool_forward(xb, pool_f, pool_t)
    return out[0] if single else out


# -- dense -----------------------------------------------------------------


def dense_forward(x, p: DenseParams):
    """``x`` is (..., in); returns (..., out)."""
    if x.shape[-1] != p.W.shape[1]:
        raise ValueError(f"dense expects {p.W.shape[1]} inputs, got {x.shape[-1]}")
    return x @ p.W.T + p.b, x


def dense_backward(dout, x, p: DenseParams):
    """Returns (dx, dW, db)."""
    lead = dout.reshape(-1, dout.shape[-1])
    xin = x.reshape(-1, x.shape[-1])
    return dout @ p.W, lead.T @ xin, lead.sum(axis=0)


def dense(x, p: DenseParams):
    return dense_forward(np.asarray(x), p)[0]


# -- GRU -------------------------------------------------------------------


def gru_step(x_t, h_adj, p: GruParams):
    """One recurrence step; ``h_adj`` is h[t-1] (forward) or h[t+1] (backward)."""
    x_t = np.asarray(x_t)
    h_adj = np.asarray(h_adj)
    if x_t.shape != (p.n_inputs,) or h_adj.shape != (p.hidden,):
        raise ValueError("gru_step shape mismatch")
    g = sigmoid(p.W_g @ x_t + p.U_g @ h_adj + p.b_g)
    r = sigmoid(p.W_r @ x_t + p.U_r @ h_adj + p.b_r)
    cand = np.tanh(p.W_h @ x_t + p.U_h @ (r * h_adj) + p.b_h)
    return (1.0 - g) * h_adj + g * cand


def gru_forward(x, p: GruParams, reverse=False, impl=None):
    """Run one direction over a batch ``x`` of shape (B, T, I) -> (B, T, H)."""
    if x.shape[-1] != p.n_inputs:
        raise ValueError(f"GRU expects {p.n_inputs} inputs, got {x.shape[-1]}")
    if x.shape[1] < 1:
        raise ValueError("GRU needs a non-empty sequence")
    W, U, b = p.stacked()
    xs = x[:, ::-1] if reverse else x
    xp = np.ascontiguousarray(xs @ W.T + b)
    scan = backend.get(impl)
    hs, gs, rs, cs = scan.gru_scan_forward(xp, U)
    out = hs[:, ::-1] if reverse else hs
    return out, (xs, W, U, hs, gs, rs, cs, reverse, impl)


def gru_backward(dout, cache):
    """Returns (dx, GruParams-shaped gradients)."""
    xs, W, U, hs, gs, rs, cs, reverse, impl = cache
    dh = dout[:, ::-1] if reverse else dout
    scan = backend.get(impl)
    dxp, dU = scan.gru_scan_backward(np.ascontiguousarray(dh), hs, gs, rs, cs, U)
    B, T, _ = dxp.shape
    flat = dxp.reshape(B * T, -1)
    dW = flat.T @ xs.reshape(B * T, -1)
    db = flat.sum(axis=0)
    dxs = dxp @ W
    dx = dxs[:, ::-1] if reverse else dxs
    return dx, GruParams.from_stacked(dW, dU, db)


def bigru_forward(x, p_f: GruParams, p_b: GruParams, impl=None):
    """(B, T, I) -> (B, T, 2H), forward states first."""
    hf, cf = gru_forward(x, p_f, reverse=False, impl=impl)
    hb, cb = gru_forward(x, p_b, reverse=True, impl=impl)
    return np.concatenate([hf, hb], axis=-1), (cf, cb, p_f.hidden)


def bigru_backward(dout, cache):
    cf, cb, H = cache
    dxf, gf = gru_backward(dout[..., :H], cf)
    dxb, gb = gru_backward(dout[..., H:], cb)
    return dxf + dxb, gf, gb


def bigru(seq, p_f: GruParams, p_b: GruParams, impl=None):
    """Unbatched BiGRU: ``seq`` is (I, T); returns (2H, T)."""
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[1] == 0:
        raise ValueError("bigru expects a non-empty (I, T) sequence")
    out, _ = bigru_forward(seq.T[None], p_f, p_b, impl=impl)
    return out[0].T
