"""Dense tensor kernels: valid convolution, 2x2 max pooling, matmul.

Tensors are plain float64 numpy arrays in row-major order.  Image batches
use index order (sample, row, column, channel).  All kernels are pure
functions; the backward variants compute gradients of the scalar
``sum(upstream * output)`` with respect to each forward argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

Tensor = np.ndarray


@dataclass(frozen=True)
class Shape4:
    """Batch shape (sample, row, column, channel); all extents positive."""

    n: int
    h: int
    w: int
    c: int

    def __post_init__(self):
        for name in ("n", "h", "w", "c"):
            if getattr(self, name) < 1:
                raise DimensionError(f"Shape4.{name} must be positive, got {getattr(self, name)}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n, self.h, self.w, self.c)


def _check_rank(name: str, x: Tensor, rank: int) -> None:
    if x.ndim != rank:
        raise DimensionError(f"{name} must have rank {rank}, got shape {x.shape}")


def conv2d_valid(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid (no padding), stride-1 cross-correlation.

    x: (n, h, w, cin); kernels: (kh, kw, cin, cout); bias: (cout,).
    Returns (n, h-kh+1, w-kw+1, cout).  One matmul per kernel tap keeps the
    largest temporary at one shifted input copy instead of a full im2col
    buffer.
    """
    _check_rank("input", x, 4)
    _check_rank("kernels", kernels, 4)
    kh, kw, cin, cout = kernels.shape
    n, h, w, xc = x.shape
    if xc != cin:
        raise DimensionError(f"channel mismatch: input has {xc} channels, kernels expect {cin}")
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    if bias.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {bias.shape}")
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((n, oh, ow, cout))
    for di in range(kh):
        for dj in range(kw):
            patch = x[:, di:di + oh, dj:dj + ow, :].reshape(n * oh * ow, cin)
            out += (patch @ kernels[di, dj]).reshape(n, oh, ow, cout)
    return out + bias


def conv2d_grads(x: Tensor, kernels: Tensor, upstream: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients of sum(upstream * conv2d_valid(x, kernels, bias)).

    Returns (input_grad, kernel_grad, bias_grad).
    """
    _check_rank("input", x, 4)
    _check_rank("kernels", kernels, 4)
    _check_rank("upstream", upstream, 4)
    kh, kw, cin, cout = kernels.shape
    n, h, w, xc = x.shape
    if xc != cin:
        raise DimensionError(f"channel mismatch: input has {xc} channels, kernels expect {cin}")
    oh, ow = h - kh + 1, w - kw + 1
    if upstream.shape != (n, oh, ow, cout):
        raise DimensionError(
            f"upstream must have the forward output shape {(n, oh, ow, cout)}, got {upstream.shape}"
        )
    up2d = upstream.reshape(n * oh * ow, cout)
    bias_grad = up2d.sum(axis=0)
    kernel_grad = np.empty_like(kernels)
    input_grad = np.zeros_like(x)
    for di in range(kh):
        for dj in range(kw):
            patch = x[:, di:di + oh, dj:dj + ow, :].reshape(n * oh * ow, cin)
            kernel_grad[di, dj] = patch.T @ up2d
            input_grad[:, di:di + oh, dj:dj + ow, :] += (up2d @ kernels[di, dj].T).reshape(
                n, oh, ow, cin
            )
    return input_grad, kernel_grad, bias_grad


def maxpool2x2(x: Tensor) -> tuple[Tensor, Tensor]:
    """Non-overlapping 2x2 max pooling, stride 2; odd trailing row/col discarded.

    Returns (output, argmax) where argmax holds, per window, the flat index
    0..3 (row-major within the window) of the winner; ties go to the first
    position in scan order.
    """
    _check_rank("input", x, 4)
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2x2 needs h, w >= 2, got {h}x{w}")
    oh, ow = h // 2, w // 2
    trimmed = x[:, : 2 * oh, : 2 * ow, :]
    windows = trimmed.reshape(n, oh, 2, ow, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, 4)
    argmax = windows.argmax(axis=-1)
    out = windows.max(axis=-1)
    return out, argmax


def maxpool2x2_backward(argmax: Tensor, upstream: Tensor, input_shape: tuple[int, ...]) -> Tensor:
    """Scatter each upstream value to its recorded argmax position."""
    n, h, w, c = input_shape
    oh, ow = h // 2, w // 2
    if argmax.shape != (n, oh, ow, c):
        raise DimensionError(f"argmax shape {argmax.shape} does not match input shape {input_shape}")
    if upstream.shape != (n, oh, ow, c):
        raise DimensionError(f"upstream shape {upstream.shape} does not match pooled shape {(n, oh, ow, c)}")
    windows = np.zeros((n, oh, ow, c, 4), dtype=upstream.dtype)
    np.put_along_axis(windows, argmax[..., None], upstream[..., None], axis=-1)
    grad = np.zeros(input_shape, dtype=upstream.dtype)
    grad[:, : 2 * oh, : 2 * ow, :] = (
        windows.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * oh, 2 * ow, c)
    )
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of (m, k) by (k, p)."""
    _check_rank("a", a, 2)
    _check_rank("b", b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b
