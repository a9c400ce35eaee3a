"""
Deformable convolution decomposition kernels

Numerical reference implementation of deformable convolution and its exact
decomposition into N spatial warpings followed by a 1x1 convolution.

Main Components:
- tensor_core: dense tensor helpers and shape validators
- sampling: bilinear sampling and backward warping
- dcn_core: conv2d, (modulated) deformable convolution, the decomposed path
  and the equivalence report
- gradients: backward passes and the finite-difference checker
- losses: Charbonnier data loss and the offset-fidelity loss
- alignment: offset predictor, deformable / flow / image alignment

Quick Start:
    from experiments.dcn_decomposition import (
        deform_conv, kernel_to_pointwise, decomposed_deform_conv, kernel_taps
    )

    y_direct = deform_conv(x, offsets, kernel, groups=2)
    y_split = decomposed_deform_conv(
        x, offsets, kernel_taps(3), kernel_to_pointwise(kernel, 2), groups=2
    )
"""

from .errors import (
    DCNLabError,
    InputError,
    ShapeError,
    SizeError,
    DegenerateInputError,
    EvaluationError,
    DivergenceError,
    FormatError,
    WriteError
)
from .tensor_core import (
    Tensor,
    FeatureMap,
    FlowField,
    OffsetField,
    MaskField,
    ConvKernel,
    PointwiseKernel,
    tensor_new,
    tensor_sum,
    tensor_get,
    tensor_set,
    as_feature_map,
    as_flow_field,
    as_offset_field,
    as_mask_field
)
from .sampling import BaseOffset, ZERO_TAP, kernel_taps, bilinear_sample, sample_bilinear_grid, warp
from .dcn_core import (
    EQUIVALENCE_TOL,
    EquivalenceReport,
    conv2d,
    deform_conv,
    modulated_deform_conv,
    kernel_to_pointwise,
    decomposed_deform_conv,
    modulated_decomposed_deform_conv,
    equivalence_report,
    generalized_taps,
    warp_stack
)
from .gradients import (
    GradBundle,
    FiniteDiffResult,
    warp_backward,
    conv_backward,
    dcn_backward,
    finite_diff_check,
    relative_error
)
from .losses import (
    Reduction,
    FidelityConfig,
    charbonnier,
    charbonnier_grad,
    heaviside,
    offset_fidelity,
    offset_fidelity_grad,
    total_loss
)
from .alignment import (
    PredictorWeights,
    init_predictor_weights,
    predict_offsets,
    deformable_align,
    align_pair,
    flow_align,
    image_align,
    identity_pointwise,
    averaging_pointwise
)

__all__ = [
    'DCNLabError', 'InputError', 'ShapeError', 'SizeError', 'DegenerateInputError',
    'EvaluationError', 'DivergenceError', 'FormatError', 'WriteError',
    'Tensor', 'FeatureMap', 'FlowField', 'OffsetField', 'MaskField', 'ConvKernel', 'PointwiseKernel',
    'tensor_new', 'tensor_sum', 'tensor_get', 'tensor_set',
    'as_feature_map', 'as_flow_field', 'as_offset_field', 'as_mask_field',
    'BaseOffset', 'ZERO_TAP', 'kernel_taps', 'bilinear_sample', 'sample_bilinear_grid', 'warp',
    'EQUIVALENCE_TOL', 'EquivalenceReport', 'conv2d', 'deform_conv', 'modulated_deform_conv',
    'kernel_to_pointwise', 'decomposed_deform_conv', 'modulated_decomposed_deform_conv',
    'equivalence_report', 'generalized_taps', 'warp_stack',
    'GradBundle', 'FiniteDiffResult', 'warp_backward', 'conv_backward', 'dcn_backward',
    'finite_diff_check', 'relative_error',
    'Reduction', 'FidelityConfig', 'charbonnier', 'charbonnier_grad', 'heaviside',
    'offset_fidelity', 'offset_fidelity_grad', 'total_loss',
    'PredictorWeights', 'init_predictor_weights', 'predict_offsets', 'deformable_align',
    'align_pair', 'flow_align', 'image_align', 'identity_pointwise', 'averaging_pointwise'
]

__version__ = '1.0.0'
__author__ = 'Alignment Lab'
