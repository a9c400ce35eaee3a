"""
Dense tensor helpers shared by the alignment kernels.

Tensors are plain numpy arrays in C order (row-major, last dimension
fastest). The reference path is float64; float32 is accepted as an opt-in
and kept as-is. The validators below are the single place where the shape
contracts of the domain types are enforced:

- FeatureMap:     (C, H, W)
- FlowField:      (2, H, W), channel 0 = dx, channel 1 = dy
- OffsetField:    (G, N, 2, H, W)
- MaskField:      (G, N, H, W), values in [0, 1]
- ConvKernel:     (C_out, C_in, n, n), n odd
- PointwiseKernel (C_out, G*N*(C_in/G), 1, 1)
"""

import sys
import math
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import InputError, ShapeError, SizeError

Tensor = np.ndarray
FeatureMap = np.ndarray
FlowField = np.ndarray
OffsetField = np.ndarray
MaskField = np.ndarray
ConvKernel = np.ndarray
PointwiseKernel = np.ndarray

WIDE = np.float64
NARROW = np.float32

Index = Union[int, Sequence[int]]


def tensor_new(dims: Sequence[int], fill: float = 0.0, dtype=WIDE) -> Tensor:
    """
    Create a tensor of the given shape with every element equal to ``fill``.

    Args:
        dims: Non-empty list of positive dimensions
        fill: Fill value
        dtype: WIDE (float64, default) or NARROW (float32)

    Returns:
        New C-ordered array

    Raises:
        ShapeError: Empty dims or a dimension < 1
        SizeError: The flat length overflows the index range
    """
    dims = tuple(dims)
    if not dims:
        raise ShapeError("dims must be non-empty")
    if any(int(d) != d or d < 1 for d in dims):
        raise ShapeError(f"every dimension must be a positive integer, got {dims}")

    itemsize = np.dtype(dtype).itemsize
    length = math.prod(int(d) for d in dims)
    if length > sys.maxsize // itemsize:
        raise SizeError(f"flat length of {dims} overflows the index range")

    return np.full(tuple(int(d) for d in dims), fill, dtype=dtype)


def tensor_sum(t: Tensor) -> float:
    """
    Sum all elements in flat index order.

    The accumulation is strictly sequential (left to right), so repeated
    calls return identical bits and match a serial loop exactly.
    """
    flat = np.ravel(np.asarray(t), order="C")
    if flat.size == 0:
        return 0.0
    return float(np.add.accumulate(flat)[-1])


def tensor_get(t: Tensor, index: Index) -> float:
    """Read one element at a multi-index."""
    return t[_check_index(t, index)]


def tensor_set(t: Tensor, index: Index, value: float) -> None:
    """Write one element at a multi-index (in place)."""
    t[_check_index(t, index)] = value


def _check_index(t: Tensor, index: Index) -> Tuple[int, ...]:
    index = (index,) if isinstance(index, (int, np.integer)) else tuple(index)
    if len(index) != t.ndim:
        raise ShapeError(f"index {index} has {len(index)} entries for a {t.ndim}-d tensor")
    for i, d in zip(index, t.shape):
        if not 0 <= i < d:
            raise InputError(f"index {index} out of range for shape {t.shape}")
    return index


def _as_float(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype != NARROW:
        arr = arr.astype(WIDE, copy=False)
    return arr


def _require_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")


def as_feature_map(x, name: str = "feature") -> FeatureMap:
    """Validate a (C, H, W) feature map."""
    arr = _as_float(x)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must have dims (C, H, W), got {arr.shape}")
    return arr


def as_flow_field(flow, name: str = "flow") -> FlowField:
    """Validate a (2, H, W) flow/displacement field with finite values."""
    arr = _as_float(flow)
    if arr.ndim != 3 or arr.shape[0] != 2 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must have dims (2, H, W), got {arr.shape}")
    _require_finite(arr, name)
    return arr


def as_offset_field(offsets, name: str = "offsets") -> OffsetField:
    """Validate a (G, N, 2, H, W) offset field with finite values."""
    arr = _as_float(offsets)
    if arr.ndim != 5 or arr.shape[2] != 2 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must have dims (G, N, 2, H, W), got {arr.shape}")
    _require_finite(arr, name)
    return arr


def as_mask_field(masks, name: str = "masks") -> MaskField:
    """Validate a (G, N, H, W) mask field with values in [0, 1]."""
    arr = _as_float(masks)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must have dims (G, N, H, W), got {arr.shape}")
    _require_finite(arr, name)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InputError(f"{name} values must lie in [0, 1]")
    return arr


def as_conv_kernel(kernel, name: str = "kernel") -> ConvKernel:
    """Validate a (C_out, C_in, n, n) kernel with odd n."""
    arr = _as_float(kernel)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must have dims (C_out, C_in, n, n), got {arr.shape}")
    if arr.shape[2] != arr.shape[3] or arr.shape[2] % 2 == 0:
        raise ShapeError(f"{name} must be square with odd size, got {arr.shape[2:]}")
    return arr


def group_width(channels: int, groups: int) -> int:
    """Channels per deformable group; raises ShapeError if C % G != 0."""
    if groups < 1 or channels % groups != 0:
        raise ShapeError(f"{channels} channels cannot be split into {groups} groups")
    return channels // groups


def require_spatial_match(a: np.ndarray, b: np.ndarray, what: str) -> None:
    """Raise ShapeError unless the trailing (H, W) dims agree."""
    if a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"{what}: spatial dims {a.shape[-2:]} != {b.shape[-2:]}")
