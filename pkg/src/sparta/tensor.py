"""Dense float64 tensor arithmetic for small NHWC convolutional networks.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Feature maps
use the N x H x W x C layout and convolution kernels K x K x C_in x C_out.
Every function here is pure: inputs are never written to.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a float64 array, validating the tensor invariants."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
    return arr


_UNARY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "neg": np.negative,
    "exp": np.exp,
    "abs": np.abs,
    "sign": np.sign,
    "square": np.square,
    "tanh": np.tanh,
    "relu": lambda a: np.maximum(a, 0.0),
    "sigmoid": lambda a: sigmoid(a),
}

_BINARY: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "min": np.minimum,
}


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Apply a named unary or binary op pointwise.

    Binary ops broadcast with numpy rules (right-aligned, singleton axes
    expand).  ``exp`` overflows to inf for inputs above ~709.
    """
    a = np.asarray(a, dtype=np.float64)
    if b is None:
        try:
            fn = _UNARY[op]
        except KeyError:
            raise ValueError(f"unknown unary op {op!r}") from None
        return fn(a)
    try:
        fn = _BINARY[op]
    except KeyError:
        raise ValueError(f"unknown binary op {op!r}") from None
    b = np.asarray(b, dtype=np.float64)
    broadcast_shape(a.shape, b.shape)
    return fn(a, b)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------- convolution


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold ``x`` (N,H,W,C) into patches of shape (N,Ho,Wo,K,K,C)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    # win: (N, H', W', C, K, K)
    win = win[:, ::stride, ::stride]
    return win.transpose(0, 1, 2, 4, 5, 3)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back to (N,H,W,C)."""
    n, h, w, c = x_shape
    ho, wo = cols.shape[1], cols.shape[2]
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols[:, :, :, i, j, :]
    if pad:
        out = out[:, pad:pad + h, pad:pad + w, :]
    return out


def _check_conv(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> int:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects an N x H x W x C input, got shape {x.shape}")
    k = w.shape[-4]
    if w.shape[-3] != k:
        raise ShapeError(f"kernel must be square, got shape {w.shape}")
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if x.shape[3] != w.shape[-2]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[3]} channels, kernel expects {w.shape[-2]}"
        )
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if x.shape[1] + 2 * pad < k or x.shape[2] + 2 * pad < k:
        raise ShapeError(f"input {x.shape} too small for a {k}x{k} kernel with pad={pad}")
    return k


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-D cross-correlation of an NHWC batch with a K x K x C_in x C_out kernel."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    k = _check_conv(x, w, stride, pad)
    c_out = w.shape[3]
    if k == 1 and pad == 0:
        xs = x[:, ::stride, ::stride, :]
        out = xs.reshape(-1, xs.shape[3]) @ w.reshape(w.shape[2], c_out)
        out = out.reshape(xs.shape[0], xs.shape[1], xs.shape[2], c_out)
    else:
        cols = im2col(x, k, stride, pad)
        n, ho, wo = cols.shape[:3]
        out = cols.reshape(n * ho * wo, -1) @ w.reshape(-1, c_out)
        out = out.reshape(n, ho, wo, c_out)
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (c_out,):
            raise ShapeError(f"bias shape {b.shape} does not match {c_out} output channels")
        out = out + b
    return out


def conv2d_per_sample(x, w, b=None, pad: int = 0) -> np.ndarray:
    """Stride-1 convolution where every batch element has its own kernel.

    ``w`` is N x K x K x C_in x C_out and ``b`` is N x C_out.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 5 or w.shape[0] != x.shape[0]:
        raise ShapeError(f"per-sample kernel must be N x K x K x Cin x Cout, got {w.shape} for input {x.shape}")
    k = _check_conv(x, w, 1, pad)
    if k == 1 and pad == 0:
        out = np.einsum("nhwc,ncd->nhwd", x, w[:, 0, 0], optimize=True)
    else:
        cols = im2col(x, k, 1, pad)
        out = np.einsum("nhwijc,nijcd->nhwd", cols, w, optimize=True)
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)[:, None, None, :]
    return out


# -------------------------------------------------------------------- pooling


def global_avg_pool(x) -> np.ndarray:
    """Mean over the spatial axes: N x H x W x C -> N x 1 x 1 x C."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects N x H x W x C, got {x.shape}")
    return x.mean(axis=(1, 2), keepdims=True)


def avg_pool(x, n: int) -> np.ndarray:
    """Non-overlapping n x n average pooling. ``n`` must divide H and W."""
    x = np.asarray(x, dtype=np.float64)
    b, h, w, c = x.shape
    if h % n or w % n:
        raise ShapeError(f"pool size {n} does not divide spatial extents {h}x{w}")
    return x.reshape(b, h // n, n, w // n, n, c).mean(axis=(2, 4))


def upsample_nearest(x, n: int) -> np.ndarray:
    """Repeat each spatial cell into an n x n block."""
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(np.repeat(x, n, axis=1), n, axis=2)


def outer_fuse(s, v) -> np.ndarray:
    """Outer product of a spatial map (N,H,W,1) and channel vector (N,1,1,C)."""
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if s.ndim != 4 or s.shape[3] != 1:
        raise ShapeError(f"spatial map must be N x H x W x 1, got {s.shape}")
    if v.ndim != 4 or v.shape[1:3] != (1, 1):
        raise ShapeError(f"channel vector must be N x 1 x 1 x C, got {v.shape}")
    if s.shape[0] != v.shape[0]:
        raise ShapeError(f"batch mismatch: {s.shape[0]} vs {v.shape[0]}")
    return s * v


# -------------------------------------------------------------- serialization


def write_tensor(fp: BinaryIO, x) -> None:
    """Write ``x`` as: u32 rank, u32 extents..., float64 values (all little-endian)."""
    x = as_tensor(x)
    fp.write(struct.pack(f"<I{x.ndim}I", x.ndim, *x.shape))
    fp.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_tensor(fp: BinaryIO) -> np.ndarray:
    head = fp.read(4)
    if len(head) != 4:
        raise EOFError("truncated tensor header")
    (rank,) = struct.unpack("<I", head)
    dims = fp.read(4 * rank)
    if len(dims) != 4 * rank:
        raise EOFError("truncated tensor extents")
    shape = struct.unpack(f"<{rank}I", dims)
    count = int(np.prod(shape))
    raw = fp.read(8 * count)
    if len(raw) != 8 * count:
        raise EOFError(f"truncated tensor payload: expected {8 * count} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def tensor_to_bytes(x) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, x)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))
