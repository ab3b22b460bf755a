"""Differentiable network primitives: 3-d and dilated 1-d convolution,
LSTM sequence cells, dropout, and spatial pooling.

Convolutions are direct summation realized as im2col + one matmul; the
backward pass scatters gradients back with per-offset slice adds (no
np.add.at). Same-size zero padding throughout, TF "SAME" convention:
out = ceil(in / stride).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, record
from .errors import ShapeError, UsageError


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lo = total // 2
    return lo, total - lo


# ---------------------------------------------------------------------------
# conv3d


def _im2col3d(x: np.ndarray, kt: int, kw: int, kh: int, st: int, sw: int, sh: int) -> np.ndarray:
    """(T,W,H,Cin) -> (To*Wo*Ho, kt*kw*kh*Cin) with SAME zero padding."""
    t, w, h, cin = x.shape
    to, wo, ho = -(-t // st), -(-w // sw), -(-h // sh)
    pt, pw, ph = _same_pad(t, kt, st), _same_pad(w, kw, sw), _same_pad(h, kh, sh)
    xp = np.zeros((t + pt[0] + pt[1], w + pw[0] + pw[1], h + ph[0] + ph[1], cin), dtype=x.dtype)
    xp[pt[0]:pt[0] + t, pw[0]:pw[0] + w, ph[0]:ph[0] + h] = x
    col = np.empty((to, wo, ho, kt, kw, kh, cin), dtype=x.dtype)
    for it in range(kt):
        for iw in range(kw):
            for ih in range(kh):
                col[:, :, :, it, iw, ih] = xp[it:it + to * st:st, iw:iw + wo * sw:sw, ih:ih + ho * sh:sh]
    return col.reshape(to * wo * ho, kt * kw * kh * cin)


def _col2im3d(gcol: np.ndarray, x_shape: tuple, kt: int, kw: int, kh: int,
              st: int, sw: int, sh: int) -> np.ndarray:
    t, w, h, cin = x_shape
    to, wo, ho = -(-t // st), -(-w // sw), -(-h // sh)
    pt, pw, ph = _same_pad(t, kt, st), _same_pad(w, kw, sw), _same_pad(h, kh, sh)
    gp = np.zeros((t + pt[0] + pt[1], w + pw[0] + pw[1], h + ph[0] + ph[1], cin), dtype=gcol.dtype)
    g6 = gcol.reshape(to, wo, ho, kt, kw, kh, cin)
    for it in range(kt):
        for iw in range(kw):
            for ih in range(kh):
                gp[it:it + to * st:st, iw:iw + wo * sw:sw, ih:ih + ho * sh:sh] += g6[:, :, :, it, iw, ih]
    return gp[pt[0]:pt[0] + t, pw[0]:pw[0] + w, ph[0]:ph[0] + h]


def conv3d(x: Tensor, kernel: Tensor, strides: tuple[int, int, int] = (1, 1, 1)) -> Tensor:
    """3-d convolution of a (T,W,H,Cin) grid with a (kt,kw,kh,Cin,Cout) kernel."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv3d expects a 4-d input (T,W,H,Cin), got {x.data.shape}")
    if kernel.data.ndim != 5:
        raise ShapeError(f"conv3d expects a 5-d kernel (kt,kw,kh,Cin,Cout), got {kernel.data.shape}")
    kt, kw, kh, cin, cout = kernel.data.shape
    if cin != x.data.shape[3]:
        raise ShapeError(
            f"conv3d channel mismatch: input has {x.data.shape[3]} channels, kernel expects {cin}")
    st, sw, sh = strides
    if min(st, sw, sh) < 1:
        raise UsageError(f"conv3d strides must be >= 1, got {strides}")
    t, w, h, _ = x.data.shape
    to, wo, ho = -(-t // st), -(-w // sw), -(-h // sh)

    col = _im2col3d(x.data, kt, kw, kh, st, sw, sh)
    k2 = kernel.data.reshape(kt * kw * kh * cin, cout)
    out = (col @ k2).reshape(to, wo, ho, cout)

    def vjp(g):
        g2 = g.reshape(to * wo * ho, cout)
        gx = _col2im3d(g2 @ k2.T, x.data.shape, kt, kw, kh, st, sw, sh) if x.requires_grad else None
        gk = (col.T @ g2).reshape(kernel.data.shape) if kernel.requires_grad else None
        return gx, gk

    return record([x, kernel], out, vjp)


# ---------------------------------------------------------------------------
# dilated conv1d


def _conv1d_offsets(k: int, dilation: int) -> np.ndarray:
    # taps sit at (j - (k-1)//2) * d around each output frame
    return (np.arange(k) - (k - 1) // 2) * dilation


def conv1d_dilated(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Dilated 1-d convolution over time: (T,Cin) x (k,Cin,Cout) -> (T,Cout).

    Same-length zero padding; tap j reads input at t + (j - (k-1)//2)*dilation.
    """
    if dilation < 1:
        raise UsageError(f"dilation must be >= 1, got {dilation}")
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise ShapeError(f"conv1d_dilated expects (T,Cin) and (k,Cin,Cout), got {x.data.shape} and {kernel.data.shape}")
    k, cin, cout = kernel.data.shape
    if cin != x.data.shape[1]:
        raise ShapeError(f"conv1d_dilated channel mismatch: input {x.data.shape[1]}, kernel {cin}")
    t = x.data.shape[0]
    offs = _conv1d_offsets(k, dilation)
    pad_lo = max(0, -int(offs.min()))
    pad_hi = max(0, int(offs.max()))
    xp = np.zeros((t + pad_lo + pad_hi, cin), dtype=x.data.dtype)
    xp[pad_lo:pad_lo + t] = x.data

    col = np.empty((t, k, cin), dtype=x.data.dtype)
    for j, off in enumerate(offs):
        col[:, j] = xp[pad_lo + off:pad_lo + off + t]
    col2 = col.reshape(t, k * cin)
    k2 = kernel.data.reshape(k * cin, cout)
    out = col2 @ k2

    def vjp(g):
        gx = None
        if x.requires_grad:
            gcol = (g @ k2.T).reshape(t, k, cin)
            gxp = np.zeros_like(xp)
            for j, off in enumerate(offs):
                gxp[pad_lo + off:pad_lo + off + t] += gcol[:, j]
            gx = gxp[pad_lo:pad_lo + t]
        gk = (col2.T @ g).reshape(kernel.data.shape) if kernel.requires_grad else None
        return gx, gk

    return record([x, kernel], out, vjp)


# ---------------------------------------------------------------------------
# LSTM over a whole sequence (fused: one tape op, BPTT inside)


def lstm_seq(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over a (T,Din) sequence, returning (T,H) hidden states.

    Gate layout along the last axis of wx/wh/b is [input, forget, cell, output].
    ``reverse=True`` processes the sequence back-to-front (states returned in
    original time order).
    """
    t_len, din = x.data.shape
    if wx.data.ndim != 2 or wx.data.shape[0] != din:
        raise ShapeError(f"lstm wx shape {wx.data.shape} incompatible with input dim {din}")
    hidden4 = wx.data.shape[1]
    if hidden4 % 4 != 0:
        raise ShapeError(f"lstm gate width {hidden4} is not a multiple of 4")
    hid = hidden4 // 4
    if wh.data.shape != (hid, hidden4) or b.data.shape != (hidden4,):
        raise ShapeError(f"lstm parameter shapes {wh.data.shape}, {b.data.shape} do not match hidden size {hid}")

    xs = x.data[::-1] if reverse else x.data
    pre_x = xs @ wx.data + b.data  # (T, 4H), all time steps in one matmul

    i_s = np.empty((t_len, hid), dtype=x.data.dtype)
    f_s = np.empty_like(i_s)
    g_s = np.empty_like(i_s)
    o_s = np.empty_like(i_s)
    c_s = np.empty_like(i_s)
    tc_s = np.empty_like(i_s)
    h_s = np.empty_like(i_s)

    h = np.zeros(hid, dtype=x.data.dtype)
    c = np.zeros(hid, dtype=x.data.dtype)
    for t in range(t_len):
        z = pre_x[t] + h @ wh.data
        zi, zf, zg, zo = z[:hid], z[hid:2 * hid], z[2 * hid:3 * hid], z[3 * hid:]
        i = 1.0 / (1.0 + np.exp(-zi))
        f = 1.0 / (1.0 + np.exp(-zf))
        g = np.tanh(zg)
        o = 1.0 / (1.0 + np.exp(-zo))
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        i_s[t], f_s[t], g_s[t], o_s[t], c_s[t], tc_s[t], h_s[t] = i, f, g, o, c, tc, h

    out = h_s[::-1].copy() if reverse else h_s

    def vjp(grad_out):
        gh_seq = grad_out[::-1] if reverse else grad_out
        gz = np.empty((t_len, 4 * hid), dtype=x.data.dtype)
        gh_next = np.zeros(hid, dtype=x.data.dtype)
        gc_next = np.zeros(hid, dtype=x.data.dtype)
        for t in range(t_len - 1, -1, -1):
            gh = gh_seq[t] + gh_next
            go = gh * tc_s[t]
            gc = gh * o_s[t] * (1.0 - tc_s[t] * tc_s[t]) + gc_next
            gi = gc * g_s[t]
            gg = gc * i_s[t]
            c_prev = c_s[t - 1] if t > 0 else np.zeros(hid, dtype=x.data.dtype)
            gf = gc * c_prev
            gc_next = gc * f_s[t]
            gz[t, :hid] = gi * i_s[t] * (1.0 - i_s[t])
            gz[t, hid:2 * hid] = gf * f_s[t] * (1.0 - f_s[t])
            gz[t, 2 * hid:3 * hid] = gg * (1.0 - g_s[t] * g_s[t])
            gz[t, 3 * hid:] = go * o_s[t] * (1.0 - o_s[t])
            gh_next = gz[t] @ wh.data.T

        gx = None
        if x.requires_grad:
            gxs = gz @ wx.data.T
            gx = gxs[::-1].copy() if reverse else gxs
        gwx = None
        if wx.requires_grad:
            gwx = xs.T @ gz
        gwh = None
        if wh.requires_grad:
            h_prev = np.vstack([np.zeros((1, hid), dtype=x.data.dtype), h_s[:-1]])
            gwh = h_prev.T @ gz
        gb = gz.sum(axis=0) if b.requires_grad else None
        return gx, gwx, gwh, gb

    return record([x, wx, wh, b], out, vjp)


# ---------------------------------------------------------------------------
# dropout and pooling


def dropout(x: Tensor, p: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout: keep-prob (1-p) mask scaled by 1/(1-p); identity at inference."""
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        def vjp_id(g):
            return (g,)
        return record([x], x.data.copy(), vjp_id)

    rng = np.random.Generator(np.random.PCG64(seed))
    keep = 1.0 - p
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep
    out = x.data * mask

    def vjp(g):
        return (g * mask,)

    return record([x], out, vjp)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool over the W,H axes of a (T,W,H,C) tensor -> (T,C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial_mean expects (T,W,H,C), got {x.data.shape}")
    t, w, h, c = x.data.shape
    out = x.data.mean(axis=(1, 2))

    def vjp(g):
        return (np.broadcast_to(g[:, None, None, :], x.data.shape) / (w * h),)

    return record([x], out, vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a (C,) bias along the last axis of x."""
    if b.data.shape != (x.data.shape[-1],):
        raise ShapeError(f"bias shape {b.data.shape} does not match channels {x.data.shape[-1]}")
    out = x.data + b.data

    def vjp(g):
        gb = g.reshape(-1, b.data.shape[0]).sum(axis=0)
        return g, gb

    return record([x, b], out, vjp)
