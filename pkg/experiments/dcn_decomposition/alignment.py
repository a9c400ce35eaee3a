"""
Alignment modules built from the kernels.

- predict_offsets: a three-layer convolutional offset (and mask) predictor
  fed with the concatenated reference and neighbouring features.
- deformable_align: the decomposed deformable convolution applied to the
  neighbouring feature only. The reference feature never enters the
  convolution; it only influences the offsets.
- flow_align: the G = N = 1 case, i.e. flow warping plus a 1x1 convolution.
- image_align: warping alone, the image-level alignment baseline.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .dcn_core import conv2d, decomposed_deform_conv, kernel_to_pointwise
from .errors import ShapeError
from .sampling import ZERO_TAP, BaseOffset, kernel_taps, warp
from .tensor_core import (
    ConvKernel,
    FeatureMap,
    FlowField,
    MaskField,
    OffsetField,
    PointwiseKernel,
    as_conv_kernel,
    as_feature_map,
    as_flow_field,
    as_offset_field,
    require_spatial_match,
)

LEAKY_SLOPE = 0.1
DEFAULT_HIDDEN = 16


@dataclass
class PredictorWeights:
    """Weights of the offset predictor: two hidden 3x3 layers and an output layer."""
    conv1: ConvKernel
    conv2: ConvKernel
    conv_out: ConvKernel
    groups: int = 1
    num_offsets: int = 1

    def __post_init__(self):
        self.conv1 = as_conv_kernel(self.conv1, "conv1")
        self.conv2 = as_conv_kernel(self.conv2, "conv2")
        self.conv_out = as_conv_kernel(self.conv_out, "conv_out")
        if self.conv2.shape[1] != self.conv1.shape[0] or self.conv_out.shape[1] != self.conv2.shape[0]:
            raise ShapeError("predictor layers do not chain: hidden widths disagree")
        if self.conv_out.shape[0] not in (self.offset_channels, self.offset_channels + self.mask_channels):
            raise ShapeError(
                f"output layer emits {self.conv_out.shape[0]} channels, expected "
                f"{self.offset_channels} (+{self.mask_channels} with masks)"
            )

    @property
    def offset_channels(self) -> int:
        return 2 * self.groups * self.num_offsets

    @property
    def mask_channels(self) -> int:
        return self.groups * self.num_offsets

    @property
    def with_masks(self) -> bool:
        return self.conv_out.shape[0] == self.offset_channels + self.mask_channels


def init_predictor_weights(
    channels: int,
    groups: int = 1,
    num_offsets: int = 1,
    hidden: int = DEFAULT_HIDDEN,
    with_masks: bool = False,
    scale: float = 0.1,
    seed: int = 0
) -> PredictorWeights:
    """Random predictor weights drawn from N(0, scale^2) with a fixed seed."""
    rng = np.random.default_rng(seed)
    out_channels = 2 * groups * num_offsets + (groups * num_offsets if with_masks else 0)
    return PredictorWeights(
        conv1=rng.normal(0.0, scale, size=(hidden, 2 * channels, 3, 3)),
        conv2=rng.normal(0.0, scale, size=(hidden, hidden, 3, 3)),
        conv_out=rng.normal(0.0, scale, size=(out_channels, hidden, 3, 3)),
        groups=groups,
        num_offsets=num_offsets
    )


def leaky_relu(z: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def logistic(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function; logistic(0) == 0.5 exactly."""
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def predict_offsets(
    f_ref: FeatureMap,
    f_nbr: FeatureMap,
    w: PredictorWeights
) -> Tuple[OffsetField, Optional[MaskField]]:
    """
    Predict offsets (and masks) from a reference/neighbour feature pair.

    Args:
        f_ref: (C, H, W) reference feature
        f_nbr: (C, H, W) neighbouring feature
        w: Predictor weights; conv1 must take 2*C input channels

    Returns:
        (offsets (G, N, 2, H, W), masks (G, N, H, W) in [0, 1] or None)
    """
    f_ref = as_feature_map(f_ref, "f_ref")
    f_nbr = as_feature_map(f_nbr, "f_nbr")
    if f_ref.shape != f_nbr.shape:
        raise ShapeError(f"reference {f_ref.shape} and neighbour {f_nbr.shape} differ in shape")
    if w.conv1.shape[1] != 2 * f_ref.shape[0]:
        raise ShapeError(f"conv1 expects {w.conv1.shape[1]} channels, pair has {2 * f_ref.shape[0]}")

    _, height, width = f_ref.shape
    hidden = leaky_relu(conv2d(np.concatenate([f_ref, f_nbr], axis=0), w.conv1))
    hidden = leaky_relu(conv2d(hidden, w.conv2))
    out = conv2d(hidden, w.conv_out)

    offsets = out[:w.offset_channels].reshape(w.groups, w.num_offsets, 2, height, width)
    masks = None
    if w.with_masks:
        masks = logistic(out[w.offset_channels:]).reshape(w.groups, w.num_offsets, height, width)
    return offsets, masks


def identity_pointwise(channels: int) -> PointwiseKernel:
    """1x1 weights that copy a single warped feature through (G = N = 1)."""
    return np.eye(channels, dtype=np.float64)[:, :, None, None]


def averaging_pointwise(out_channels: int, stacked_channels: int) -> PointwiseKernel:
    """1x1 weights whose every output channel is the mean of the stacked inputs."""
    return np.full((out_channels, stacked_channels, 1, 1), 1.0 / stacked_channels)


def resolve_weights(
    kernel_or_pw: np.ndarray,
    channels: int,
    num_offsets: int,
    groups: int,
    taps: Optional[Sequence[BaseOffset]] = None
) -> Tuple[PointwiseKernel, Optional[Sequence[BaseOffset]]]:
    """
    Accept either pointwise weights over the N*C stacked channels or an
    n x n kernel with n*n == N, and return pointwise weights plus taps.
    """
    weights = np.asarray(kernel_or_pw, dtype=np.float64)
    if weights.ndim != 4:
        raise ShapeError(f"alignment weights must be 4-d, got {weights.shape}")
    if weights.shape[2:] == (1, 1) and weights.shape[1] == num_offsets * channels:
        return weights, taps
    if weights.shape[1] == channels and weights.shape[2] == weights.shape[3] and weights.shape[2] ** 2 == num_offsets:
        return kernel_to_pointwise(weights, groups), taps if taps is not None else kernel_taps(weights.shape[2])
    raise ShapeError(
        f"weights {weights.shape} fit neither a pointwise kernel over {num_offsets * channels} "
        f"stacked channels nor an n x n kernel with n*n == {num_offsets}"
    )


def deformable_align(
    f_nbr: FeatureMap,
    offsets: OffsetField,
    kernel_or_pw: np.ndarray,
    masks: Optional[MaskField] = None,
    groups: int = 1,
    taps: Optional[Sequence[BaseOffset]] = None
) -> FeatureMap:
    """
    Align a neighbouring feature with (modulated) deformable convolution.

    Args:
        f_nbr: (C, H, W) neighbouring feature
        offsets: (G, N, 2, H, W)
        kernel_or_pw: Pointwise kernel (C_out, N*C, 1, 1) or ConvKernel with n*n == N
        masks: Optional (G, N, H, W) modulation
        groups: Deformable groups
        taps: Base offsets for the pointwise form (default all (0, 0))

    Returns:
        (C_out, H, W) aligned feature
    """
    f_nbr = as_feature_map(f_nbr, "f_nbr")
    offsets = as_offset_field(offsets)
    pw, taps = resolve_weights(kernel_or_pw, f_nbr.shape[0], offsets.shape[1], groups, taps)
    return decomposed_deform_conv(f_nbr, offsets, taps, pw, groups, masks=masks)


def align_pair(
    f_ref: FeatureMap,
    f_nbr: FeatureMap,
    w: PredictorWeights,
    kernel_or_pw: np.ndarray
) -> Tuple[FeatureMap, OffsetField, Optional[MaskField]]:
    """Full pipeline: predict offsets from both features, then align the neighbour."""
    offsets, masks = predict_offsets(f_ref, f_nbr, w)
    aligned = deformable_align(f_nbr, offsets, kernel_or_pw, masks, w.groups)
    return aligned, offsets, masks


def flow_align(f_nbr: FeatureMap, flow: FlowField, pw: PointwiseKernel) -> FeatureMap:
    """Flow-based alignment: warp by the flow, then a 1x1 convolution."""
    f_nbr = as_feature_map(f_nbr, "f_nbr")
    flow = as_flow_field(flow)
    require_spatial_match(f_nbr, flow, "flow_align")
    return decomposed_deform_conv(f_nbr, flow[None, None], [ZERO_TAP], pw, 1)


def image_align(image: FeatureMap, flow: FlowField) -> FeatureMap:
    """Image-level alignment: warping only, no convolution."""
    return warp(image, flow)
