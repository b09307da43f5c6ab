"""Dense numeric kernel: matmul, 2-D cross-correlation, 2x2 pooling, seeded RNG.

All tensors are plain numpy arrays in contiguous row-major layout.  Training
code runs in float32, verification oracles in float64; every function here is
dtype-preserving.  Convolution follows the machine-learning convention
(cross-correlation, no kernel flip).
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes do not compose."""


def make_rng(seed):
    """Seeded generator (numpy PCG64). Same seed, same draw sequence."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rng(seed, index):
    """Independent child generator for run `index` of a master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def matmul(a, b):
    """Matrix product c[i,j] = sum_p a[i,p] b[p,j] with shape validation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def _as_batched(x, ndim_single):
    """Add a leading batch axis if `x` is a single sample."""
    x = np.asarray(x)
    if x.ndim == ndim_single:
        return x[None], True
    if x.ndim == ndim_single + 1:
        return x, False
    raise DimensionError(f"expected {ndim_single}-d or {ndim_single + 1}-d input, got shape {x.shape}")


def _im2col(x, kh, kw):
    """Unfold (B,C,H,W) into patch matrix (B, Ho*Wo, C*kh*kw)."""
    b, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B,C,Ho,Wo,kh,kw)
    ho, wo = win.shape[2], win.shape[3]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kh * kw)
    return np.ascontiguousarray(col), ho, wo


def conv2d_forward(x, kernels):
    """Valid cross-correlation of (C,H,W) input with (O,C,kh,kw) kernels.

    out[o,y,x] = sum_{c,u,v} input[c,y+u,x+v] * kernels[o,c,u,v]

    A leading batch axis is accepted and preserved.
    """
    out, _ = conv2d_forward_cached(x, kernels)
    return out


def conv2d_forward_cached(x, kernels):
    """conv2d_forward that also returns the im2col patch matrix for backprop."""
    x, single = _as_batched(x, 3)
    kernels = np.asarray(kernels)
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be 4-d (O,C,kh,kw), got {kernels.shape}")
    o, c, kh, kw = kernels.shape
    if x.shape[1] != c:
        raise DimensionError(f"input channels {x.shape[1]} != kernel channels {c}")
    if x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError(f"input {x.shape[2]}x{x.shape[3]} smaller than kernel {kh}x{kw}")
    col, ho, wo = _im2col(x, kh, kw)
    out = col @ kernels.reshape(o, -1).T          # (B, Ho*Wo, O)
    out = out.transpose(0, 2, 1).reshape(x.shape[0], o, ho, wo)
    if single:
        return out[0], col
    return out, col


def conv2d_backward(delta, col, kernels, in_hw):
    """Gradients of a valid cross-correlation.

    delta: upstream (B,O,Ho,Wo) (or unbatched), col: patch matrix cached by
    forward, in_hw: (H,W) of the forward input.  Returns (grad_kernels,
    grad_input); grad_kernels sums over the batch.  The input gradient is the
    full cross-correlation of delta with spatially flipped, channel-swapped
    kernels, which is the adjoint of the forward map.
    """
    delta, single = _as_batched(delta, 3)
    o, c, kh, kw = kernels.shape
    b, _, ho, wo = delta.shape
    dmat = np.ascontiguousarray(delta.reshape(b, o, ho * wo).transpose(0, 2, 1))  # (B,P,O)
    grad_k = (dmat.reshape(-1, o).T @ col.reshape(-1, c * kh * kw)).reshape(o, c, kh, kw)
    pad = np.pad(delta, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    adj = np.ascontiguousarray(kernels[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))   # (C,O,kh,kw)
    grad_x, _ = conv2d_forward_cached(pad, adj)
    if grad_x.shape[2:] != tuple(in_hw):
        raise DimensionError(f"upstream shape {delta.shape} inconsistent with input {in_hw}")
    if single:
        return grad_k, grad_x[0]
    return grad_k, grad_x


@dataclass
class PoolCache:
    """Bookkeeping for pool2d_backward.

    For max mode, argmax holds the flat index (0..3, row-major within the 2x2
    block, first index on ties) of each block's maximum.
    """
    mode: str
    in_shape: tuple
    argmax: np.ndarray | None = None


def _blocks(x):
    """View (..., H, W) as (..., H/2, W/2, 4) blocks."""
    h, w = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    xb = x.reshape(lead + (h // 2, 2, w // 2, 2))
    xb = np.moveaxis(xb, -3, -2)                  # (..., H/2, W/2, 2, 2)
    return xb.reshape(lead + (h // 2, w // 2, 4))


def pool2d(x, mode):
    """2x2 pooling with stride 2 over the trailing two axes.

    mode 'mean' averages each block; 'max' takes the block maximum and records
    the argmax position for backprop.  H and W must be even.
    """
    x = np.asarray(x)
    if mode not in ("mean", "max"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    if x.ndim < 2 or x.shape[-2] % 2 or x.shape[-1] % 2:
        raise DimensionError(f"pool2d needs even trailing dims, got {x.shape}")
    xb = _blocks(x)
    if mode == "mean":
        return xb.mean(axis=-1), PoolCache("mean", x.shape)
    idx = xb.argmax(axis=-1)
    out = np.take_along_axis(xb, idx[..., None], axis=-1)[..., 0]
    return out, PoolCache("max", x.shape, idx)


def pool2d_backward(upstream, cache, mode):
    """Route upstream gradients back through pool2d.

    Mean spreads each value as value/4 over its block; max routes each value
    to the recorded argmax and zeros elsewhere.
    """
    upstream = np.asarray(upstream)
    if mode != cache.mode:
        raise ValueError(f"mode {mode!r} does not match cache mode {cache.mode!r}")
    expected = cache.in_shape[:-2] + (cache.in_shape[-2] // 2, cache.in_shape[-1] // 2)
    if upstream.shape != expected:
        raise DimensionError(f"upstream shape {upstream.shape}, expected {expected}")
    if mode == "mean":
        grad_b = np.broadcast_to((upstream * 0.25)[..., None], upstream.shape + (4,))
    else:
        grad_b = np.zeros(upstream.shape + (4,), dtype=upstream.dtype)
        np.put_along_axis(grad_b, cache.argmax[..., None], upstream[..., None], axis=-1)
    h2, w2 = expected[-2], expected[-1]
    lead = expected[:-2]
    grad = grad_b.reshape(lead + (h2, w2, 2, 2))
    grad = np.moveaxis(grad, -2, -3)
    return np.ascontiguousarray(grad.reshape(cache.in_shape))
