"""Dense tensor kernels in NCHW layout.

The reference kernels are explicit multiply-accumulate implementations
(im2col plus matmul).  Every kernel preserves the input dtype, so the same
code paths run float32 in production and float64 inside numerical checks.
Tensors are treated as immutable values: no kernel writes to its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .opcount import record_ops


@dataclass(frozen=True)
class Shape4:
    """Batch/channel/height/width extents of an activation tensor."""

    batch: int
    channels: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("batch", "channels", "height", "width"):
            if getattr(self, name) < 1:
                raise ShapeError(f"Shape4.{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def of(cls, x: np.ndarray) -> "Shape4":
        if x.ndim != 4:
            raise ShapeError(f"expected a 4-d NCHW array, got shape {tuple(x.shape)}")
        return cls(*(int(e) for e in x.shape))

    def conv_output(self, kernel_h: int, kernel_w: int, stride: int, padding: int) -> "Shape4":
        """Output extents of a valid convolution over this input."""
        if stride < 1:
            raise ShapeError(f"stride must be >= 1, got {stride}")
        if padding < 0:
            raise ShapeError(f"padding must be >= 0, got {padding}")
        hp = self.height + 2 * padding
        wp = self.width + 2 * padding
        if kernel_h > hp or kernel_w > wp:
            raise ShapeError(
                f"kernel {kernel_h}x{kernel_w} exceeds padded input {hp}x{wp}"
            )
        return Shape4(
            self.batch,
            self.channels,
            (hp - kernel_h) // stride + 1,
            (wp - kernel_w) // stride + 1,
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.batch, self.channels, self.height, self.width)


def im2col(x: np.ndarray, kernel_h: int, kernel_w: int, stride: int,
           padding: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Flatten conv windows into rows: [N*Ho*Wo, C*kh*kw] plus (Ho, Wo)."""
    n, c, _, _ = x.shape
    out = Shape4.of(x).conv_output(kernel_h, kernel_w, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel_h, kernel_w), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(
        n * out.height * out.width, c * kernel_h * kernel_w
    )
    return np.ascontiguousarray(cols), (out.height, out.width)


def col2im(cols: np.ndarray, x_shape: tuple[int, int, int, int], kernel_h: int,
           kernel_w: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add the inverse of :func:`im2col` (used by backward passes)."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kernel_h) // stride + 1
    wo = (wp - kernel_w) // stride + 1
    grad = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, ho, wo, c, kernel_h, kernel_w).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kernel_h):
        for j in range(kernel_w):
            grad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    return grad[:, :, padding:padding + h, padding:padding + w]


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-d NCHW, got shape {tuple(x.shape)}")
    if weights.ndim != 4:
        raise ShapeError(f"conv weights must be 4-d FCKK, got shape {tuple(weights.shape)}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} do not match weight channels {weights.shape[1]}"
        )


def conv2d_with_cols(x: np.ndarray, weights: np.ndarray, stride: int = 1,
                     padding: int = 0) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """Cross-correlation returning the flattened windows for reuse in backward."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    _check_conv_shapes(x, weights)
    f = weights.shape[0]
    kh, kw = weights.shape[2], weights.shape[3]
    cols, (ho, wo) = im2col(x, kh, kw, stride, padding)
    wmat = weights.reshape(f, -1)
    out = cols @ wmat.T
    record_ops(
        inner_multiplies=cols.shape[0] * f * wmat.shape[1],
        inner_additions=cols.shape[0] * f * (wmat.shape[1] - 1),
    )
    out = out.reshape(x.shape[0], ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols, (ho, wo)


def conv2d_reference(x: np.ndarray, weights: np.ndarray, stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Standard convolution (cross-correlation, no kernel flip).

    input [N,C,H,W] x weights [F,C,kh,kw] -> [N,F,H',W'] where
    H' = (H + 2*padding - kh)//stride + 1, analogously W'.  Each output
    element is the exact multiply-accumulate sum over its window.
    """
    out, _, _ = conv2d_with_cols(x, weights, stride, padding)
    return out


def conv2d_weight_grad(grad_out: np.ndarray, cols: np.ndarray,
                       weight_shape: tuple[int, ...]) -> np.ndarray:
    """Gradient of a conv output w.r.t. its weights, from cached windows."""
    f = grad_out.shape[1]
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(-1, f)
    if gmat.shape[0] != cols.shape[0]:
        raise ShapeError(
            f"gradient rows {gmat.shape[0]} do not match cached windows {cols.shape[0]}"
        )
    return (gmat.T @ cols).reshape(weight_shape)


def conv2d_input_grad(grad_out: np.ndarray, weights: np.ndarray,
                      x_shape: tuple[int, int, int, int], stride: int,
                      padding: int) -> np.ndarray:
    """Gradient of a conv output w.r.t. its input, for given weights."""
    f = weights.shape[0]
    kh, kw = weights.shape[2], weights.shape[3]
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(-1, f)
    wmat = weights.reshape(f, -1)
    grad_cols = gmat @ wmat
    return col2im(grad_cols, x_shape, kh, kw, stride, padding)


def linear_reference(x: np.ndarray, weights: np.ndarray,
                     bias: np.ndarray | None = None) -> np.ndarray:
    """Affine map: input [N,D] x weights [K,D] (+ bias [K]) -> [N,K]."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(
            f"linear expects 2-d input and weights, got {tuple(x.shape)} and {tuple(weights.shape)}"
        )
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"input features {x.shape[1]} do not match weight features {weights.shape[1]}"
        )
    out = x @ weights.T
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (weights.shape[0],):
            raise ShapeError(
                f"bias shape {tuple(bias.shape)} does not match {weights.shape[0]} outputs"
            )
        out = out + bias
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x), 0)


def prelu(x: np.ndarray, slope: float) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype))


def add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ShapeError(f"elementwise add needs equal shapes, got {tuple(x.shape)} and {tuple(y.shape)}")
    return x + y


def scale(x: np.ndarray, k: float) -> np.ndarray:
    x = np.asarray(x)
    return x * np.asarray(k, dtype=x.dtype)


def global_average_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial axes: [N,C,H,W] -> [N,C]."""
    Shape4.of(np.asarray(x))
    return np.asarray(x).mean(axis=(2, 3))


def max_pool(x: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping k x k max pooling (stride k, floor division)."""
    x = np.asarray(x)
    s = Shape4.of(x)
    if k < 1:
        raise ShapeError(f"pool kernel must be >= 1, got {k}")
    if k > s.height or k > s.width:
        raise ShapeError(f"pool kernel {k} exceeds spatial extents {s.height}x{s.width}")
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::k, ::k]
    return win.max(axis=(4, 5))


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Scale each row of [N,D] onto the unit sphere."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d array of row vectors, got shape {tuple(x.shape)}")
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / np.maximum(norms, np.asarray(eps, dtype=x.dtype))
