"""
Offset diversity analysis and desk-scale experiments

This package measures learned offsets against optical flow and runs the
small synthetic experiments built on the dcn_decomposition kernels.

Main Components:
- analysis: diversity maps, flow-distance CDF, offset ranking, mask/flow
  scatter, Pearson correlation and StatsReport
- harness: synthetic scenes (SceneSpec, synth_pair), offset fitting
  (FitConfig, fit_offsets, FitReport) and N / G sweeps

Quick Start:
    from experiments.offset_diversity import SceneSpec, FitConfig, fit_scene

    report = fit_scene(SceneSpec(seed=3), FitConfig())
    print(report.max_deviation[-1])
"""

from .analysis import (
    DiversityMap,
    StatsReport,
    offset_diversity_map,
    flow_distance_map,
    flow_distance_cdf,
    mean_flow_distance,
    sort_by_flow_distance,
    mask_flow_scatter,
    pearson,
    mask_small_fraction,
    psnr,
    out_of_frame_mask,
    warp_border_fraction,
    build_stats_report
)
from .harness import (
    SplitMix64,
    FlowKind,
    InitKind,
    Rect,
    SceneSpec,
    FitConfig,
    FitReport,
    SweepResult,
    make_flow,
    synth_pair,
    interior_mask,
    initial_offsets,
    fit_offsets,
    fit_scene,
    diversity_sweep,
    group_sweep,
    alignment_contrast
)

__all__ = [
    'DiversityMap',
    'StatsReport',
    'offset_diversity_map',
    'flow_distance_map',
    'flow_distance_cdf',
    'mean_flow_distance',
    'sort_by_flow_distance',
    'mask_flow_scatter',
    'pearson',
    'mask_small_fraction',
    'psnr',
    'out_of_frame_mask',
    'warp_border_fraction',
    'build_stats_report',
    'SplitMix64',
    'FlowKind',
    'InitKind',
    'Rect',
    'SceneSpec',
    'FitConfig',
    'FitReport',
    'SweepResult',
    'make_flow',
    'synth_pair',
    'interior_mask',
    'initial_offsets',
    'fit_offsets',
    'fit_scene',
    'diversity_sweep',
    'group_sweep',
    'alignment_contrast'
]

__version__ = "1.0.0"
__author__ = "Alignment Lab"
