"""Brute-force integer reference for conv/FC layers.

Cross-correlation (no kernel flip) with 64-bit accumulation; results are
returned as int32 and an OverflowError is raised if they do not fit.
"""
from __future__ import annotations

import numpy as np

from .psiquant import PsiTensor

I32_MIN, I32_MAX = -(1 << 31), (1 << 31) - 1


def _to_i32(a: np.ndarray) -> np.ndarray:
    if a.size and (a.min() < I32_MIN or a.max() > I32_MAX):
        raise OverflowError("reference result exceeds int32")
    return a.astype(np.int32)


def _check_conv(x: np.ndarray, w: np.ndarray, bias) -> np.ndarray:
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"expected input (C,H,W) and weights (K,C,kh,kw), got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"input has {x.shape[0]} channels, weights expect {w.shape[1]}")
    b = np.zeros(w.shape[0], np.int64) if bias is None else np.asarray(bias, np.int64)
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} filters")
    return b


def conv2d_ref(x, weights, bias=None, h_stride: int = 1, v_stride: int = 1, pad: int = 0) -> np.ndarray:
    """Exact integer cross-correlation. ``x`` is (C,H,W), ``weights`` (K,C,kh,kw)."""
    x = np.asarray(x, np.int64)
    w = np.asarray(weights, np.int64)
    b = _check_conv(x, w, bias)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    k, c, kh, kw = w.shape
    hp, wp = xp.shape[1:]
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // v_stride + 1
    ow = (wp - kw) // h_stride + 1
    out = np.zeros((k, oh, ow), np.int64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + v_stride * (oh - 1) + 1:v_stride, j:j + h_stride * (ow - 1) + 1:h_stride]
            out += np.tensordot(w[:, :, i, j], patch, axes=([1], [0]))
    return _to_i32(out + b[:, None, None])


def conv2d_naive(x, weights, bias=None, h_stride: int = 1, v_stride: int = 1, pad: int = 0) -> np.ndarray:
    """Six nested loops over plain ints; second implementation for cross-checks."""
    x = np.asarray(x, np.int64)
    w = np.asarray(weights, np.int64)
    b = _check_conv(x, w, bias)
    C, H, W = x.shape
    K, _, kh, kw = w.shape
    oh = (H + 2 * pad - kh) // v_stride + 1
    ow = (W + 2 * pad - kw) // h_stride + 1
    xl = x.tolist()
    wl = w.tolist()
    out = [[[int(b[f])] * ow for _ in range(oh)] for f in range(K)]
    for f in range(K):
        for oy in range(oh):
            for ox in range(ow):
                acc = out[f][oy][ox]
                for c in range(C):
                    for i in range(kh):
                        yy = oy * v_stride + i - pad
                        if not 0 <= yy < H:
                            continue
                        for j in range(kw):
                            xx = ox * h_stride + j - pad
                            if 0 <= xx < W:
                                acc += wl[f][c][i][j] * xl[c][yy][xx]
                out[f][oy][ox] = acc
    return _to_i32(np.array(out, np.int64).reshape(K, oh, ow))


def quantized_ref(x, psi: PsiTensor, bias=None, h_stride: int = 1, v_stride: int = 1, pad: int = 0) -> np.ndarray:
    """Convolution with every weight replaced by its PSI reconstruction."""
    return conv2d_ref(x, psi.effective(), bias, h_stride, v_stride, pad)


def fc_ref(x, weights, bias=None) -> np.ndarray:
    x = np.asarray(x, np.int64).ravel()
    w = np.asarray(weights, np.int64)
    if w.ndim != 2 or w.shape[1] != x.size:
        raise ValueError(f"weights {w.shape} do not match input length {x.size}")
    b = np.zeros(w.shape[0], np.int64) if bias is None else np.asarray(bias, np.int64)
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
    return _to_i32(w @ x + b)


def quantized_fc_ref(x, psi: PsiTensor, bias=None) -> np.ndarray:
    return fc_ref(x, psi.effective(), bias)


def post_ops_ref(sums, relu: bool = True, requant_shift: int = 0, pool: tuple[int, int] | None = None) -> np.ndarray:
    """ReLU, right shift, clamp to uint8, then max pooling over (H, W)."""
    s = np.asarray(sums, np.int64)
    if not relu:
        return s.astype(np.int32)
    a = np.clip(np.maximum(s, 0) >> requant_shift, 0, 255)
    if pool:
        pk, ps = pool
        _, h, w = a.shape
        oh, ow = (h - pk) // ps + 1, (w - pk) // ps + 1
        out = np.zeros((a.shape[0], oh, ow), np.int64)
        for y in range(oh):
            for x in range(ow):
                out[:, y, x] = a[:, y * ps:y * ps + pk, x * ps:x * ps + pk].max(axis=(1, 2))
        a = out
    return a.astype(np.uint8)
