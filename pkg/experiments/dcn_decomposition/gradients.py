"""
Backward passes for warping, convolution and the decomposed deformable
convolution, plus a central finite-difference checker.

The deformable gradient is the chain rule through the decomposition:
the 1x1 mix first, then one warp adjoint per (group, offset). The bilinear
kernel is piecewise linear, so its derivative jumps at integer coordinates;
the backward pass always uses the cell containing coordinate - eps (the
left limit).
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dcn_core import expand_masks, prepare_decomposition, warp_stack
from .errors import EvaluationError, InputError, ShapeError
from .sampling import BaseOffset, ZERO_TAP, Displacement, corner_taps, sampling_grid
from .tensor_core import (
    ConvKernel,
    FeatureMap,
    MaskField,
    OffsetField,
    PointwiseKernel,
    as_conv_kernel,
    as_feature_map,
    as_flow_field,
    require_spatial_match,
)

FD_STEP = 1e-5
FD_TOL = 1e-6
REL_FLOOR = 1e-8


@dataclass
class GradBundle:
    """Gradients of a scalar objective w.r.t. every input of the decomposed DCN."""
    grad_input: FeatureMap
    grad_offsets: OffsetField
    grad_kernel: PointwiseKernel
    grad_masks: Optional[MaskField] = None


@dataclass
class FiniteDiffResult:
    """Comparison of an analytic gradient against central differences."""
    max_rel_err: float
    passed: bool
    numeric: np.ndarray
    worst_index: Tuple[int, ...]


def _require_shape(grad: np.ndarray, shape: Tuple[int, ...], what: str) -> None:
    if grad.shape != shape:
        raise ShapeError(f"{what}: gradient shape {grad.shape} != primal shape {shape}")


def warp_backward(
    grad_out: FeatureMap,
    feature: FeatureMap,
    disp: Displacement,
    base: BaseOffset = ZERO_TAP
) -> Tuple[FeatureMap, Displacement]:
    """
    Adjoint of warp().

    Args:
        grad_out: (C, H, W) gradient w.r.t. the warped output
        feature: (C, H, W) source of the forward warp
        disp: (2, H, W) displacement of the forward warp
        base: Tap offset of the forward warp

    Returns:
        (grad_feature, grad_disp): grad_feature scatters each output gradient
        to the four corners with the forward weights; grad_disp[0] / [1] is
        the derivative w.r.t. dx / dy summed over channels
    """
    feature = as_feature_map(feature)
    disp = as_flow_field(disp, "disp")
    grad_out = as_feature_map(grad_out, "grad_out")
    require_spatial_match(feature, disp, "warp_backward")
    _require_shape(grad_out, feature.shape, "warp_backward")

    channels, height, width = feature.shape
    ys, xs = sampling_grid(disp, base)
    corners, ly, lx = corner_taps(ys, xs, height, width, left_limit=True)
    wys = (1.0 - ly, ly)
    wxs = (1.0 - lx, lx)

    grad_feature = np.zeros((channels, height * width), dtype=np.float64)
    projected = {}
    for cy, cx, rows, cols, valid in corners:
        weight = np.where(valid, wys[cy] * wxs[cx], 0.0)
        flat = (rows * width + cols).ravel()
        contrib = (grad_out * weight).reshape(channels, -1)
        for c in range(channels):
            grad_feature[c] += np.bincount(flat, weights=contrib[c], minlength=height * width)
        values = np.where(valid, feature[:, rows, cols], 0.0)
        projected[cy, cx] = np.einsum("chw,chw->hw", grad_out, values)

    grad_dy = wxs[0] * (projected[1, 0] - projected[0, 0]) + wxs[1] * (projected[1, 1] - projected[0, 1])
    grad_dx = wys[0] * (projected[0, 1] - projected[0, 0]) + wys[1] * (projected[1, 1] - projected[1, 0])
    grad_disp = np.stack([grad_dx, grad_dy])
    return grad_feature.reshape(channels, height, width), grad_disp


def conv_backward(grad_out: FeatureMap, x: FeatureMap, kernel: ConvKernel) -> Tuple[FeatureMap, ConvKernel]:
    """
    Adjoint of conv2d() w.r.t. its input and its weights.

    Returns:
        (grad_x, grad_kernel) with the shapes of x and kernel
    """
    x = as_feature_map(x)
    kernel = as_conv_kernel(kernel)
    grad_out = as_feature_map(grad_out, "grad_out")
    c_out, c_in, n, _ = kernel.shape
    channels, height, width = x.shape
    if c_in != channels:
        raise ShapeError(f"kernel expects {c_in} input channels, feature has {channels}")
    _require_shape(grad_out, (c_out, height, width), "conv_backward")

    r = (n - 1) // 2
    padded = np.pad(x, ((0, 0), (r, r), (r, r)))
    patches = sliding_window_view(padded, (n, n), axis=(1, 2))
    grad_kernel = np.einsum("ohw,ihwab->oiab", grad_out, patches)

    grad_padded = np.zeros_like(padded)
    for a in range(n):
        for b in range(n):
            grad_padded[:, a:a + height, b:b + width] += np.einsum("oi,ohw->ihw", kernel[:, :, a, b], grad_out)
    grad_x = grad_padded[:, r:r + height, r:r + width]
    return np.ascontiguousarray(grad_x), grad_kernel


def dcn_backward(
    grad_out: FeatureMap,
    x: FeatureMap,
    offsets: OffsetField,
    taps: Optional[Sequence[BaseOffset]],
    pw: PointwiseKernel,
    groups: int = 1,
    masks: Optional[MaskField] = None
) -> GradBundle:
    """
    Gradients of the decomposed deformable convolution.

    Args:
        grad_out: (C_out, H, W) gradient w.r.t. the output
        x, offsets, taps, pw, groups: As for decomposed_deform_conv
        masks: Modulation used in the forward pass, if any

    Returns:
        GradBundle for x, offsets, pw (and masks when given)
    """
    x, offsets, taps, pw, masks = prepare_decomposition(x, offsets, taps, pw, groups, masks)
    grad_out = as_feature_map(grad_out, "grad_out")
    channels, height, width = x.shape
    num_offsets = offsets.shape[1]
    width_g = channels // groups
    _require_shape(grad_out, (pw.shape[0], height, width), "dcn_backward")

    stack = warp_stack(x, offsets, taps, groups)
    expanded = expand_masks(masks, width_g) if masks is not None else None
    mixed = stack * expanded if expanded is not None else stack

    weights = pw[:, :, 0, 0]
    grad_kernel = np.einsum("ohw,shw->os", grad_out, mixed)[:, :, None, None]
    grad_mixed = np.einsum("os,ohw->shw", weights, grad_out)

    grad_masks = None
    if expanded is not None:
        grad_masks = (grad_mixed * stack).reshape(groups, num_offsets, width_g, height, width).sum(axis=2)
        grad_stack = grad_mixed * expanded
    else:
        grad_stack = grad_mixed
    grad_stack = grad_stack.reshape(groups, num_offsets, width_g, height, width)

    grad_input = np.zeros_like(x, dtype=np.float64)
    grad_offsets = np.zeros_like(offsets, dtype=np.float64)
    for g in range(groups):
        block = slice(g * width_g, (g + 1) * width_g)
        for k, tap in enumerate(taps):
            grad_feature, grad_disp = warp_backward(grad_stack[g, k], x[block], offsets[g, k], tap)
            grad_input[block] += grad_feature
            grad_offsets[g, k] = grad_disp

    return GradBundle(
        grad_input=grad_input,
        grad_offsets=grad_offsets,
        grad_kernel=grad_kernel,
        grad_masks=grad_masks
    )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - b| / max(|a|, |b|, 1e-8), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / scale


def finite_diff_check(
    forward: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic_grad: np.ndarray,
    h: float = FD_STEP,
    tol: float = FD_TOL
) -> FiniteDiffResult:
    """
    Compare an analytic gradient with central finite differences.

    Args:
        forward: Scalar objective of a parameter block
        params: Point at which to differentiate (not modified)
        analytic_grad: Gradient to check, same shape as params
        h: Step of the central difference
        tol: Pass threshold on the maximum relative error

    Returns:
        FiniteDiffResult

    Raises:
        InputError: h <= 0
        EvaluationError: forward returned a non-finite value
    """
    if not h > 0:
        raise InputError(f"finite-difference step must be positive, got {h}")
    point = np.array(params, dtype=np.float64, copy=True)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    _require_shape(analytic, point.shape, "finite_diff_check")

    flat = point.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for idx in range(flat.size):
        original = flat[idx]
        flat[idx] = original + h
        f_plus = float(forward(point.copy()))
        flat[idx] = original - h
        f_minus = float(forward(point.copy()))
        flat[idx] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"forward is non-finite around coordinate {idx}")
        numeric[idx] = (f_plus - f_minus) / (2.0 * h)

    numeric = numeric.reshape(point.shape)
    errors = relative_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(errors)), point.shape) if errors.size else ()
    max_rel_err = float(errors.max()) if errors.size else 0.0
    return FiniteDiffResult(
        max_rel_err=max_rel_err,
        passed=bool(max_rel_err <= tol),
        numeric=numeric,
        worst_index=tuple(int(i) for i in worst)
    )
