"""
Deformable convolution and its decomposition.

Two independent routes compute the same output:

1. deform_conv: gather a deformable column tensor (C_in, n*n, H, W) and
   contract it with the kernel, tap by tap, as in the DCN formula
   y(p) = sum_k w(p_k) * x(p + p_k + dp_k).
2. decomposed_deform_conv: warp each group of channels once per offset,
   stack the G*N warped features and mix them with a 1x1 convolution.

kernel_to_pointwise() maps an n x n kernel onto the 1x1 weights of route 2.
The stacking order is group-major, then offset index, then channel within
the group. Stride and dilation are 1 and the padding keeps H x W.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .sampling import BaseOffset, ZERO_TAP, kernel_taps, sample_bilinear_grid, sampling_grid
from .tensor_core import (
    ConvKernel,
    FeatureMap,
    MaskField,
    OffsetField,
    PointwiseKernel,
    as_conv_kernel,
    as_feature_map,
    as_mask_field,
    as_offset_field,
    group_width,
    require_spatial_match,
)

# Equivalence is declared at this absolute difference
EQUIVALENCE_TOL = 1e-10


@dataclass
class EquivalenceReport:
    """Outcome of running both deformable convolution routes on one input."""
    max_abs_diff: float
    passed: bool

    def to_dict(self) -> Dict[str, object]:
        return {"max_abs_diff": self.max_abs_diff, "pass": self.passed}


def generalized_taps(num_offsets: int) -> List[BaseOffset]:
    """Taps for N offsets without a kernel-grid meaning: all (0, 0)."""
    return [ZERO_TAP] * num_offsets


def conv2d(x: FeatureMap, kernel: ConvKernel) -> FeatureMap:
    """
    Standard cross-correlation, stride 1, zero padding (n-1)/2.

    Args:
        x: (C, H, W) input
        kernel: (C_out, C, n, n) weights

    Returns:
        (C_out, H, W) output
    """
    x = as_feature_map(x)
    kernel = as_conv_kernel(kernel)
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"kernel expects {kernel.shape[1]} input channels, feature has {x.shape[0]}")

    n = kernel.shape[2]
    r = (n - 1) // 2
    channels, height, width = x.shape
    padded = np.pad(x, ((0, 0), (r, r), (r, r)))
    patches = sliding_window_view(padded, (n, n), axis=(1, 2))
    columns = np.ascontiguousarray(
        patches.reshape(channels, height, width, n * n).transpose(0, 3, 1, 2)
    )
    return _contract(kernel, columns)


def _contract(kernel: ConvKernel, columns: np.ndarray) -> FeatureMap:
    """Contract (C_out, C, n, n) weights with (C, n*n, H, W) columns."""
    c_out, c_in, n, _ = kernel.shape
    return np.einsum("oik,ikhw->ohw", kernel.reshape(c_out, c_in, n * n), columns)


def _check_offsets(x: FeatureMap, offsets: OffsetField, groups: int) -> int:
    if offsets.shape[0] != groups:
        raise ShapeError(f"offsets carry {offsets.shape[0]} groups, expected {groups}")
    require_spatial_match(x, offsets, "offsets")
    return group_width(x.shape[0], groups)


def _check_masks(masks: MaskField, offsets: OffsetField) -> None:
    if masks.shape[:2] != offsets.shape[:2] or masks.shape[2:] != offsets.shape[3:]:
        raise ShapeError(f"masks shape {masks.shape} does not match offsets {offsets.shape}")


def _deformable_columns(
    x: FeatureMap,
    offsets: OffsetField,
    taps: Sequence[BaseOffset],
    groups: int,
    masks: Optional[MaskField] = None
) -> np.ndarray:
    """Sampled values x(p + p_k + dp_k) (times m_k(p)) laid out as (C, N, H, W)."""
    channels, height, width = x.shape
    width_g = channels // groups
    columns = np.zeros((channels, len(taps), height, width), dtype=x.dtype)
    for g in range(groups):
        block = x[g * width_g:(g + 1) * width_g]
        for k, tap in enumerate(taps):
            ys, xs = sampling_grid(offsets[g, k], tap)
            sampled = sample_bilinear_grid(block, ys, xs)
            if masks is not None:
                sampled = sampled * masks[g, k]
            columns[g * width_g:(g + 1) * width_g, k] = sampled
    return columns


def _deform_conv(x, offsets, kernel, groups, masks):
    x = as_feature_map(x)
    offsets = as_offset_field(offsets)
    kernel = as_conv_kernel(kernel)
    _, c_in, n, _ = kernel.shape
    if c_in != x.shape[0]:
        raise ShapeError(f"kernel expects {c_in} input channels, feature has {x.shape[0]}")
    if offsets.shape[1] != n * n:
        raise ShapeError(f"deformable convolution needs N == n*n == {n * n} offsets, got {offsets.shape[1]}")
    _check_offsets(x, offsets, groups)
    if masks is not None:
        _check_masks(masks, offsets)

    columns = _deformable_columns(x, offsets, kernel_taps(n), groups, masks)
    return _contract(kernel, columns)


def deform_conv(x: FeatureMap, offsets: OffsetField, kernel: ConvKernel, groups: int = 1) -> FeatureMap:
    """
    Deformable convolution with bilinear sampling and zero padding.

    Args:
        x: (C, H, W) input, C divisible by ``groups``
        offsets: (G, n*n, 2, H, W) learned offsets; offset k of group g
            displaces tap p_k for input channels [g*C/G, (g+1)*C/G)
        kernel: (C_out, C, n, n) weights
        groups: Number of deformable groups G

    Returns:
        (C_out, H, W) output

    Raises:
        ShapeError: N != n*n, C not divisible by G, or mismatched dims
    """
    return _deform_conv(x, offsets, kernel, groups, None)


def modulated_deform_conv(
    x: FeatureMap,
    offsets: OffsetField,
    masks: MaskField,
    kernel: ConvKernel,
    groups: int = 1
) -> FeatureMap:
    """
    Modulated deformable convolution: y(p) = sum_k w(p_k) x(p + p_k + dp_k) m_k(p).

    Raises:
        InputError: A mask value lies outside [0, 1]
    """
    return _deform_conv(x, offsets, kernel, groups, as_mask_field(masks))


def kernel_to_pointwise(kernel: ConvKernel, groups: int = 1) -> PointwiseKernel:
    """
    Rearrange an n x n kernel into 1x1 weights over the stacked warped features.

    Stacked channel (g*N + k)*(C/G) + c receives w[:, g*C/G + c, p_k].
    """
    kernel = as_conv_kernel(kernel)
    c_out, c_in, n, _ = kernel.shape
    width_g = group_width(c_in, groups)
    taps = n * n
    per_group = kernel.reshape(c_out, groups, width_g, taps)
    return np.ascontiguousarray(
        per_group.transpose(0, 1, 3, 2).reshape(c_out, groups * taps * width_g, 1, 1)
    )


def warp_stack(
    x: FeatureMap,
    offsets: OffsetField,
    taps: Sequence[BaseOffset],
    groups: int = 1
) -> np.ndarray:
    """
    Warp every group of channels by each of its N offsets and stack them.

    Returns:
        (G*N*(C/G), H, W) stacked warped features, group-major, then offset
        index, then channel within the group
    """
    channels, height, width = x.shape
    width_g = channels // groups
    num_offsets = offsets.shape[1]
    stack = np.zeros((groups, num_offsets, width_g, height, width), dtype=x.dtype)
    for g in range(groups):
        block = x[g * width_g:(g + 1) * width_g]
        for k, tap in enumerate(taps):
            ys, xs = sampling_grid(offsets[g, k], tap)
            stack[g, k] = sample_bilinear_grid(block, ys, xs)
    return stack.reshape(groups * num_offsets * width_g, height, width)


def expand_masks(masks: MaskField, width_g: int) -> np.ndarray:
    """Repeat (G, N, H, W) masks over the channels of each group: (G*N*(C/G), H, W)."""
    return np.repeat(masks.reshape(-1, *masks.shape[2:]), width_g, axis=0)


def pointwise_conv(stack: np.ndarray, pw: PointwiseKernel) -> FeatureMap:
    """1x1 convolution of a (S, H, W) stack with (C_out, S, 1, 1) weights."""
    return np.einsum("os,shw->ohw", pw[:, :, 0, 0], stack)


def _check_pointwise(pw: np.ndarray, expected_inner: int) -> np.ndarray:
    pw = np.asarray(pw)
    if pw.dtype != np.float32:
        pw = pw.astype(np.float64, copy=False)
    if pw.ndim != 4 or pw.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise kernel must have dims (C_out, S, 1, 1), got {pw.shape}")
    if pw.shape[1] != expected_inner:
        raise ShapeError(f"pointwise kernel has {pw.shape[1]} inner channels, expected {expected_inner}")
    return pw


def prepare_decomposition(x, offsets, taps, pw, groups, masks=None):
    """Validate the inputs of the decomposed path and return them normalized."""
    x = as_feature_map(x)
    offsets = as_offset_field(offsets)
    width_g = _check_offsets(x, offsets, groups)
    num_offsets = offsets.shape[1]
    taps = list(taps) if taps is not None else generalized_taps(num_offsets)
    if len(taps) != num_offsets:
        raise ShapeError(f"{len(taps)} taps given for {num_offsets} offsets")
    pw = _check_pointwise(pw, groups * num_offsets * width_g)
    if masks is not None:
        masks = as_mask_field(masks)
        _check_masks(masks, offsets)
    return x, offsets, taps, pw, masks


def decomposed_deform_conv(
    x: FeatureMap,
    offsets: OffsetField,
    taps: Optional[Sequence[BaseOffset]],
    pw: PointwiseKernel,
    groups: int = 1,
    masks: Optional[MaskField] = None
) -> FeatureMap:
    """
    Deformable convolution as N separate warpings followed by a 1x1 convolution.

    Args:
        x: (C, H, W) input
        offsets: (G, N, 2, H, W), any N
        taps: N base offsets (None means all (0, 0))
        pw: (C_out, G*N*(C/G), 1, 1) pointwise weights
        groups: Number of deformable groups
        masks: Optional (G, N, H, W) modulation, applied to each warped
            feature before the mix

    Returns:
        (C_out, H, W) output
    """
    x, offsets, taps, pw, masks = prepare_decomposition(x, offsets, taps, pw, groups, masks)
    stack = warp_stack(x, offsets, taps, groups)
    if masks is not None:
        stack = stack * expand_masks(masks, x.shape[0] // groups)
    return pointwise_conv(stack, pw)


def modulated_decomposed_deform_conv(x, offsets, masks, taps, pw, groups=1) -> FeatureMap:
    """Decomposed path of the modulated deformable convolution."""
    return decomposed_deform_conv(x, offsets, taps, pw, groups, masks=masks)


def equivalence_report(
    x: FeatureMap,
    offsets: OffsetField,
    kernel: ConvKernel,
    groups: int = 1,
    pointwise: Optional[PointwiseKernel] = None,
    tol: float = EQUIVALENCE_TOL
) -> EquivalenceReport:
    """
    Run deform_conv and the decomposed path on the same input and compare.

    Args:
        x, offsets, kernel, groups: As for deform_conv (N == n*n)
        pointwise: Override for kernel_to_pointwise(kernel, groups), e.g. a
            deliberately corrupted mapping
        tol: Pass threshold on the maximum absolute difference
    """
    kernel = as_conv_kernel(kernel)
    direct = deform_conv(x, offsets, kernel, groups)
    pw = kernel_to_pointwise(kernel, groups) if pointwise is None else pointwise
    decomposed = decomposed_deform_conv(x, offsets, kernel_taps(kernel.shape[2]), pw, groups)
    max_abs_diff = float(np.max(np.abs(direct - decomposed)))
    return EquivalenceReport(max_abs_diff=max_abs_diff, passed=bool(max_abs_diff <= tol))
