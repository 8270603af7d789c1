"""Dense float64 tensor primitives: creation, GEMM, and im2col lowering.

Tensors are plain C-contiguous ``numpy.ndarray`` objects with dtype float64;
every operation in the package goes through these helpers so the layout
(row-major) and precision (64-bit) stay uniform.

BLAS is pinned to a single thread for the lifetime of the process: multi-
threaded GEMM kernels reassociate reductions differently per thread count,
which breaks the bitwise run-to-run reproducibility the training and
checkpoint contracts rely on. At the matrix sizes this package produces,
the single-threaded kernels are also the faster ones.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

try:
    from threadpoolctl import threadpool_limits

    _BLAS_SINGLE_THREAD = threadpool_limits(limits=1, user_api="blas")
except ImportError:  # results then depend on the BLAS thread environment
    _BLAS_SINGLE_THREAD = None

FLOAT = np.float64


def tensor_create(shape: Sequence[int], fill: float = 0.0) -> np.ndarray:
    """Allocate a row-major float64 tensor of `shape` filled with `fill`."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("tensor shape must have at least one extent")
    if any(s < 1 for s in shape):
        raise ShapeError(f"tensor extents must be >= 1, got {shape}")
    return np.full(shape, fill, dtype=FLOAT)


def as_tensor(values) -> np.ndarray:
    """Coerce nested sequences / arrays to a float64 ndarray."""
    return np.asarray(values, dtype=FLOAT)


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product C[m, p] = sum_k A[m, k] * B[k, p].

    Inner extents must match. Each output element is reduced sequentially,
    so the result does not depend on BLAS thread count.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"gemm needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"gemm inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def conv_output_length(length: int, kernel: int, stride: int = 1, dilation: int = 1) -> int:
    """Valid-convolution output extent: floor((L - ((K-1)*d + 1)) / s) + 1."""
    span = (kernel - 1) * dilation + 1
    if span > length:
        raise ShapeError(
            f"dilated kernel span {span} (kernel {kernel}, dilation {dilation}) "
            f"exceeds input extent {length}"
        )
    return (length - span) // stride + 1


def im2col_batch(
    x: np.ndarray,
    kernel: Sequence[int],
    strides: Sequence[int] | None = None,
    dilations: Sequence[int] | None = None,
) -> np.ndarray:
    """Lower a batched [B, C, *spatial] tensor to patch columns.

    Returns [B, C * prod(kernel), prod(out)] where each column is one
    receptive-field patch flattened channel-major, kernel offsets row-major.
    """
    kernel = tuple(int(k) for k in kernel)
    nsp = len(kernel)
    strides = tuple(int(s) for s in strides) if strides is not None else (1,) * nsp
    dilations = tuple(int(d) for d in dilations) if dilations is not None else (1,) * nsp
    if x.ndim != nsp + 2:
        raise ShapeError(f"expected [B, C, {nsp} spatial] input, got shape {x.shape}")
    spatial = x.shape[2:]
    out = tuple(
        conv_output_length(spatial[i], kernel[i], strides[i], dilations[i]) for i in range(nsp)
    )

    spans = tuple((kernel[i] - 1) * dilations[i] + 1 for i in range(nsp))
    windows = sliding_window_view(x, spans, axis=tuple(range(2, 2 + nsp)))
    # windows: [B, C, *valid_positions, *spans]; subsample positions by stride
    # and taps within each window by dilation.
    pos_idx = tuple(slice(None, None, strides[i]) for i in range(nsp))
    tap_idx = tuple(slice(None, None, dilations[i]) for i in range(nsp))
    windows = windows[(slice(None), slice(None)) + pos_idx + tap_idx]
    # [B, C, *out, *kernel] -> [B, C, *kernel, *out]
    order = (0, 1) + tuple(range(2 + nsp, 2 + 2 * nsp)) + tuple(range(2, 2 + nsp))
    windows = windows.transpose(order)
    b, c = x.shape[0], x.shape[1]
    return np.ascontiguousarray(windows).reshape(b, c * int(np.prod(kernel)), int(np.prod(out)))


def im2col(
    x: np.ndarray,
    kernel: Sequence[int],
    strides: Sequence[int] | None = None,
    dilations: Sequence[int] | None = None,
) -> np.ndarray:
    """Patch-matrix lowering of a single [C, *spatial] (or [*spatial]) input.

    Column j holds the flattened receptive field of output position j, so a
    valid convolution becomes ``gemm(weight_matrix, im2col(x, ...))``.
    """
    x = as_tensor(x)
    nsp = len(tuple(kernel))
    if x.ndim == nsp:
        x = x[np.newaxis]  # single implicit channel
    if x.ndim != nsp + 1:
        raise ShapeError(f"expected [C, {nsp} spatial] input, got shape {x.shape}")
    cols = im2col_batch(x[np.newaxis], kernel, strides, dilations)
    return cols[0]


def col2im_batch(
    cols: np.ndarray,
    x_shape: tuple[int, ...],
    kernel: Sequence[int],
    strides: Sequence[int] | None = None,
    dilations: Sequence[int] | None = None,
) -> np.ndarray:
    """Adjoint of `im2col_batch`: scatter-add patch columns back to [B, C, *spatial]."""
    kernel = tuple(int(k) for k in kernel)
    nsp = len(kernel)
    strides = tuple(int(s) for s in strides) if strides is not None else (1,) * nsp
    dilations = tuple(int(d) for d in dilations) if dilations is not None else (1,) * nsp
    b, c = x_shape[0], x_shape[1]
    spatial = x_shape[2:]
    out = tuple(
        conv_output_length(spatial[i], kernel[i], strides[i], dilations[i]) for i in range(nsp)
    )
    x = np.zeros(x_shape, dtype=FLOAT)
    cols = cols.reshape((b, c) + kernel + out)
    for tap in np.ndindex(kernel):
        dst = tuple(
            slice(tap[i] * dilations[i], tap[i] * dilations[i] + strides[i] * out[i], strides[i])
            for i in range(nsp)
        )
        x[(slice(None), slice(None)) + dst] += cols[(slice(None), slice(None)) + tap]
    return x
