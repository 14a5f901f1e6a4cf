"""Differentiable operators the network is assembled from.

Convolution comes in two flavours: a naive direct-loop implementation kept
as the correctness oracle, and the default im2col + matrix-multiply fast
path.  Both are differentiable and must agree to 1e-5 absolute on
unit-scale inputs.  Resizing covers bilinear interpolation (half-pixel
centers, i.e. sample center (i + 0.5) / scale - 0.5) and the pixel
shuffle / unshuffle permutation pair.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BranchCountMismatch, IndivisibleSize, ShapeMismatch
from .tensor import Tensor, accumulate_grad, grad_enabled, record_op

LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _check_conv_args(x: Tensor, weight: Tensor, bias: Tensor | None) -> int:
    co, ci, kh, kw = weight.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeMismatch(f"kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if x.shape[1] != ci:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weight expects {ci}")
    if bias is not None and bias.shape != (1, co, 1, 1):
        raise ShapeMismatch(f"bias must be (1,{co},1,1), got {bias.shape}")
    return kh


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           method: str = "im2col") -> Tensor:
    """Same-padding stride-1 convolution, (B,Ci,H,W) -> (B,Co,H,W)."""
    k = _check_conv_args(x, weight, bias)
    if method == "im2col":
        return _conv_im2col(x, weight, bias, k)
    if method == "naive":
        return _conv_naive(x, weight, bias, k)
    raise ValueError(f"unknown conv method {method!r}")


def _conv_im2col(x: Tensor, weight: Tensor, bias: Tensor | None, k: int) -> Tensor:
    b, ci, h, w = x.shape
    co = weight.shape[0]
    parents = (x, weight) if bias is None else (x, weight, bias)
    track = grad_enabled() and any(p.requires_grad for p in parents)

    if k == 1:
        wmat = weight.data.reshape(co, ci)
        out = np.tensordot(x.data, wmat, axes=([1], [1])).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)
        if bias is not None:
            out += bias.data
        if not track:
            return record_op(out, parents, None)

        def backward_1x1(o: Tensor) -> None:
            g = o.grad
            accumulate_grad(weight, np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
                            .reshape(weight.shape))
            gx = np.tensordot(g, wmat, axes=([1], [0])).transpose(0, 3, 1, 2)
            accumulate_grad(x, np.ascontiguousarray(gx))
            if bias is not None:
                accumulate_grad(bias, g.sum(axis=(0, 2, 3), keepdims=True))

        return record_op(out, parents, backward_1x1)

    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))          # (B,Ci,H,W,3,3)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, h * w, ci * 9)
    wmat = weight.data.reshape(co, ci * 9)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(b, co, h, w)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data
    if not track:
        return record_op(out, parents, None)

    def backward_3x3(o: Tensor) -> None:
        g = o.grad
        gm = g.reshape(b, co, h * w).transpose(0, 2, 1)          # (B,HW,Co)
        accumulate_grad(weight, np.tensordot(gm, cols, axes=([0, 1], [0, 1]))
                        .reshape(weight.shape))
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(b, h, w, ci, 3, 3)
            dxp = np.zeros_like(xp)
            for u in range(3):
                for v in range(3):
                    dxp[:, :, u:u + h, v:v + w] += dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            accumulate_grad(x, dxp[:, :, 1:h + 1, 1:w + 1])
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3), keepdims=True))

    return record_op(out, parents, backward_3x3)


def _conv_naive_arrays(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                       k: int) -> np.ndarray:
    nb, ci, h, wd = x.shape
    co = w.shape[0]
    p = k // 2
    out = np.zeros((nb, co, h, wd), dtype=x.dtype)
    for bi in range(nb):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for c in range(ci):
                        for u in range(k):
                            for v in range(k):
                                ii, jj = i + u - p, j + v - p
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += float(w[o, c, u, v]) * float(x[bi, c, ii, jj])
                    if b is not None:
                        acc += float(b[0, o, 0, 0])
                    out[bi, o, i, j] = acc
    return out


def _conv_naive(x: Tensor, weight: Tensor, bias: Tensor | None, k: int) -> Tensor:
    out = _conv_naive_arrays(x.data, weight.data,
                             None if bias is None else bias.data, k)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(o: Tensor) -> None:
        g = o.grad
        nb, ci, h, wd = x.shape
        co = weight.shape[0]
        p = k // 2
        dx = np.zeros_like(x.data)
        dw = np.zeros_like(weight.data)
        for bi in range(nb):
            for oc in range(co):
                for i in range(h):
                    for j in range(wd):
                        go = g[bi, oc, i, j]
                        for c in range(ci):
                            for u in range(k):
                                for v in range(k):
                                    ii, jj = i + u - p, j + v - p
                                    if 0 <= ii < h and 0 <= jj < wd:
                                        dw[oc, c, u, v] += go * x.data[bi, c, ii, jj]
                                        dx[bi, c, ii, jj] += go * weight.data[oc, c, u, v]
        accumulate_grad(x, dx)
        accumulate_grad(weight, dw)
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3), keepdims=True))

    return record_op(out, parents, backward)


# ---------------------------------------------------------------------------
# pointwise / pooling / softmax
# ---------------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = x.data >= 0
    out = np.where(mask, x.data, slope * x.data)

    def backward(o: Tensor) -> None:
        one = np.asarray(1.0, dtype=x.data.dtype)
        sl = np.asarray(slope, dtype=x.data.dtype)
        accumulate_grad(x, o.grad * np.where(mask, one, sl))

    return record_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel, (B,C,H,W) -> (B,C,1,1)."""
    return x.mean(axes=(2, 3))


def branch_softmax(logits: list[Tensor]) -> list[Tensor]:
    """Softmax across a list of equally shaped tensors (per element).

    Uses max-subtraction so the result is invariant under adding a common
    constant.  Outputs are positive and sum to one across the list.
    """
    if len(logits) < 2:
        raise BranchCountMismatch(f"need at least 2 branches, got {len(logits)}")
    shape = logits[0].shape
    for t in logits[1:]:
        if t.shape != shape:
            raise ShapeMismatch(f"branch shapes differ: {shape} vs {t.shape}")
    stack = np.stack([t.data for t in logits], axis=0)
    stack = stack - stack.max(axis=0, keepdims=True)
    e = np.exp(stack)
    probs = e / e.sum(axis=0, keepdims=True)

    outs = []
    for i in range(len(logits)):
        def backward(o: Tensor, i: int = i) -> None:
            gp = o.grad * probs[i]
            for j, lj in enumerate(logits):
                if lj.requires_grad:
                    accumulate_grad(lj, gp * (1.0 - probs[i]) if j == i else -gp * probs[j])

        outs.append(record_op(probs[i].copy(), tuple(logits), backward))
    return outs


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def _lerp_map(out_size: int, in_size: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = out_size / in_size
    src = (np.arange(out_size) + 0.5) / scale - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = (src - i0).astype(dtype)
    lo = np.clip(i0, 0, in_size - 1)
    hi = np.clip(i0 + 1, 0, in_size - 1)
    return lo, hi, frac


def bilinear_resize(x: Tensor, factor: int, direction: str) -> Tensor:
    """Bilinear scale by a power-of-two factor, up or down.

    Computed as lerp(a, b, f) = a + f*(b - a) per axis, which maps constant
    images to the same constant bit-exactly.
    """
    if factor not in (1, 2, 4, 8):
        raise IndivisibleSize(f"factor must be 2^k, k<=3, got {factor}")
    b, c, h, w = x.shape
    if direction == "down":
        if h % factor or w % factor:
            raise IndivisibleSize(f"{h}x{w} not divisible by {factor}")
        oh, ow = h // factor, w // factor
    elif direction == "up":
        oh, ow = h * factor, w * factor
    else:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    if factor == 1:
        return x + 0.0  # identity, still recorded for the graph

    lo_h, hi_h, f_h = _lerp_map(oh, h, x.data.dtype)
    lo_w, hi_w, f_w = _lerp_map(ow, w, x.data.dtype)
    fh = f_h[None, None, :, None]
    fw = f_w[None, None, None, :]

    a = x.data[:, :, lo_h, :]
    t = a + fh * (x.data[:, :, hi_h, :] - a)
    a2 = t[:, :, :, lo_w]
    out = a2 + fw * (t[:, :, :, hi_w] - a2)

    def backward(o: Tensor) -> None:
        g = o.grad
        dt = np.zeros((b, c, oh, w), dtype=g.dtype)
        np.add.at(dt, (slice(None), slice(None), slice(None), lo_w), g * (1.0 - fw))
        np.add.at(dt, (slice(None), slice(None), slice(None), hi_w), g * fw)
        dx = np.zeros_like(x.data)
        np.add.at(dx, (slice(None), slice(None), lo_h, slice(None)), dt * (1.0 - fh))
        np.add.at(dx, (slice(None), slice(None), hi_h, slice(None)), dt * fh)
        accumulate_grad(x, dx)

    return record_op(out, (x,), backward)


def _unshuffle_arrays(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return (x.reshape(b, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, 4 * c, h // 2, w // 2))


def _shuffle_arrays(x: np.ndarray) -> np.ndarray:
    b, c4, h, w = x.shape
    c = c4 // 4
    return (x.reshape(b, c, 2, 2, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, c, 2 * h, 2 * w))


def pixel_unshuffle(x: Tensor) -> Tensor:
    """(B,C,H,W) -> (B,4C,H/2,W/2); out channel 4c+2dy+dx holds offset (dy,dx) of c."""
    _, _, h, w = x.shape
    if h % 2 or w % 2:
        raise IndivisibleSize(f"pixel_unshuffle needs even H,W, got {h}x{w}")
    out = _unshuffle_arrays(x.data)

    def backward(o: Tensor) -> None:
        accumulate_grad(x, _shuffle_arrays(o.grad))

    return record_op(out, (x,), backward)


def pixel_shuffle(x: Tensor) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`; (B,4C,H,W) -> (B,C,2H,2W)."""
    _, c, _, _ = x.shape
    if c % 4:
        raise IndivisibleSize(f"pixel_shuffle needs channels divisible by 4, got {c}")
    out = _shuffle_arrays(x.data)

    def backward(o: Tensor) -> None:
        accumulate_grad(x, _unshuffle_arrays(o.grad))

    return record_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# concatenation
# ---------------------------------------------------------------------------

def concat_channels(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of empty list")
    b, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (b, h, w):
            raise ShapeMismatch(f"concat needs matching B,H,W: {tensors[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(o: Tensor) -> None:
        for t, piece in zip(tensors, np.split(o.grad, splits, axis=1)):
            accumulate_grad(t, piece)

    return record_op(out, tuple(tensors), backward)
