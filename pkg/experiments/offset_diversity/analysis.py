"""
Offset diagnostics

This module measures how a learned offset field relates to optical flow:
1. Diversity maps (pixelwise spread of all G*N offsets)
2. Cumulative distribution of the L1 distance between offsets and flow
3. Ranking of offset fields by their mean distance to the flow
4. Mask/flow scatter and Pearson correlation for modulated offsets
5. Alignment quality helpers (PSNR, fraction of out-of-frame warps)

build_stats_report() bundles every statistic into a self-describing
StatsReport that the CLI writes as CSV.
"""

import sys
import math
from pathlib import Path
from dataclasses import dataclass, field
from typing import Dict, List, Any, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))
from scripts.utils import logger
from experiments.dcn_decomposition.errors import DegenerateInputError, InputError, ShapeError
from experiments.dcn_decomposition.tensor_core import (
    FlowField,
    MaskField,
    OffsetField,
    as_flow_field,
    as_mask_field,
    as_offset_field,
    require_spatial_match,
    tensor_sum,
)

DiversityMap = np.ndarray

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_MASK_THRESHOLD = 0.05


def flow_distance_map(offsets: OffsetField, flow: FlowField) -> np.ndarray:
    """(G, N, H, W) L1 distance |dx - u| + |dy - v| of every estimation."""
    offsets = as_offset_field(offsets)
    flow = as_flow_field(flow)
    require_spatial_match(offsets, flow, "flow distance")
    deviation = np.abs(offsets - flow[None, None])
    return deviation[:, :, 0] + deviation[:, :, 1]


def offset_diversity_map(offsets: OffsetField) -> DiversityMap:
    """
    Pixelwise population standard deviation of all G*N offsets.

    Args:
        offsets: (G, N, 2, H, W)

    Returns:
        (H, W) map sqrt(var_dx + var_dy); zero wherever the offsets coincide
    """
    offsets = as_offset_field(offsets)
    vectors = offsets.reshape(-1, 2, *offsets.shape[3:])
    count = vectors.shape[0]

    # Serial accumulation over the (g, n) estimations, in index order
    mean = vectors[0].copy()
    for vector in vectors[1:]:
        mean = mean + vector
    mean = mean / count
    variance = np.zeros_like(mean)
    for vector in vectors:
        diff = vector - mean
        variance = variance + diff * diff
    variance = variance / count
    return np.sqrt(variance[0] + variance[1])


def flow_distance_cdf(offsets: OffsetField, flow: FlowField, thresholds: Sequence[float]) -> List[float]:
    """
    Fraction of (g, n, pixel) estimations within each L1 distance of the flow.

    Args:
        offsets: (G, N, 2, H, W)
        flow: (2, H, W)
        thresholds: Ascending, positive distances in pixels

    Returns:
        One fraction per threshold, non-decreasing and within [0, 1]
    """
    thresholds = [float(tau) for tau in thresholds]
    if not thresholds:
        raise InputError("at least one threshold is required")
    if any(tau <= 0 for tau in thresholds) or any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise InputError(f"thresholds must be positive and ascending, got {thresholds}")

    distance = flow_distance_map(offsets, flow)
    return [float(np.count_nonzero(distance <= tau)) / distance.size for tau in thresholds]


def mean_flow_distance(offsets: OffsetField, flow: FlowField) -> np.ndarray:
    """(G, N) mean-over-pixels L1 distance of each offset field to the flow."""
    return _pixel_means(flow_distance_map(offsets, flow))


def _pixel_means(planes: np.ndarray) -> np.ndarray:
    """(G, N) means of (G, N, H, W) planes, each summed serially in row-major order."""
    groups, num_offsets = planes.shape[:2]
    means = np.empty((groups, num_offsets), dtype=np.float64)
    for g in range(groups):
        for n in range(num_offsets):
            means[g, n] = tensor_sum(planes[g, n]) / planes[g, n].size
    return means


def sort_by_flow_distance(offsets: OffsetField, flow: FlowField) -> List[Tuple[int, int]]:
    """
    Order the (g, n) offset fields by ascending mean L1 distance to the flow.

    Ties keep (g, n) lexicographic order.
    """
    distance = mean_flow_distance(offsets, flow)
    groups, num_offsets = distance.shape
    indices = [(g, n) for g in range(groups) for n in range(num_offsets)]
    return sorted(indices, key=lambda gn: (distance[gn], gn))


def mask_flow_scatter(offsets: OffsetField, masks: MaskField, flow: FlowField) -> List[Tuple[float, float]]:
    """
    (mean L1 distance to flow, mean mask value) for every (g, n), lexicographic.
    """
    masks = as_mask_field(masks)
    distance = mean_flow_distance(offsets, flow)
    if masks.shape[:2] != distance.shape or masks.shape[2:] != np.shape(flow)[1:]:
        raise ShapeError(f"masks shape {masks.shape} does not match offsets {np.shape(offsets)}")
    mean_mask = _pixel_means(masks)
    return [
        (float(distance[g, n]), float(mean_mask[g, n]))
        for g in range(distance.shape[0])
        for n in range(distance.shape[1])
    ]


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Sample Pearson correlation coefficient.

    Raises:
        InputError: Different lengths or fewer than two samples
        DegenerateInputError: Either vector has zero variance
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise InputError(f"pearson needs two vectors of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise InputError("pearson needs at least two samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("pearson is undefined for a zero-variance input")

    dx = x - tensor_sum(x) / x.size
    dy = y - tensor_sum(y) / y.size
    sxx = tensor_sum(dx * dx)
    syy = tensor_sum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("pearson is undefined for a zero-variance input")
    r = tensor_sum(dx * dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def mask_small_fraction(masks: MaskField, threshold: float = DEFAULT_MASK_THRESHOLD) -> float:
    """Fraction of mask values below ``threshold`` (near-redundant offsets)."""
    masks = as_mask_field(masks)
    return float(np.count_nonzero(masks < threshold)) / masks.size


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0, mask: Optional[np.ndarray] = None) -> float:
    """
    Peak signal-to-noise ratio in dB; +inf when the inputs agree exactly.

    Args:
        pred: Prediction
        target: Target of the same shape
        peak: Peak signal value
        mask: Optional boolean/0-1 selection broadcastable to pred
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not peak > 0:
        raise InputError(f"peak must be positive, got {peak}")

    squared = (pred - target) ** 2
    if mask is not None:
        selected = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
        if not selected.any():
            raise DegenerateInputError("psnr mask selects no elements")
        squared = squared[selected]
    mse = float(np.mean(squared))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


def out_of_frame_mask(flow: FlowField) -> np.ndarray:
    """(H, W) boolean map of pixels whose backward-warp source lies outside the frame."""
    flow = as_flow_field(flow)
    _, height, width = flow.shape
    ys = np.arange(height)[:, None] + flow[1]
    xs = np.arange(width)[None, :] + flow[0]
    return (ys < 0) | (ys > height - 1) | (xs < 0) | (xs > width - 1)


def warp_border_fraction(flow: FlowField) -> float:
    """Fraction of pixels that a backward warp by ``flow`` fills from outside the frame."""
    outside = out_of_frame_mask(flow)
    return float(np.count_nonzero(outside)) / outside.size


@dataclass
class StatsReport:
    """Named statistics of one offset field plus where they came from."""
    statistics: Dict[str, Any]
    sources: Dict[str, str]
    provenance: Dict[str, Any]
    diversity_map: DiversityMap = field(repr=False, default=None)

    def add(self, name: str, value: Any, source: str):
        self.statistics[name] = value
        self.sources[name] = source

    def to_frame(self) -> pd.DataFrame:
        """Long table: one row per scalar (statistic, key, value, source)."""
        rows = []
        for name, value in self.statistics.items():
            if isinstance(value, dict):
                for key, item in value.items():
                    rows.append({'statistic': name, 'key': str(key), 'value': item, 'source': self.sources[name]})
            else:
                rows.append({'statistic': name, 'key': '', 'value': value, 'source': self.sources[name]})
        return pd.DataFrame(rows, columns=['statistic', 'key', 'value', 'source'])

    def provenance_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{'field': key, 'value': str(value)} for key, value in self.provenance.items()],
            columns=['field', 'value']
        )


def build_stats_report(
    offsets: OffsetField,
    flow: FlowField,
    masks: Optional[MaskField] = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD
) -> StatsReport:
    """
    Compute every offset diagnostic for one field.

    Args:
        offsets: (G, N, 2, H, W)
        flow: (2, H, W)
        masks: Optional (G, N, H, W) modulation masks
        thresholds: CDF thresholds in pixels
        mask_threshold: Cut-off for mask_small_fraction

    Returns:
        StatsReport with diversity, CDF, ranking and (with masks) mask statistics
    """
    offsets = as_offset_field(offsets)
    flow = as_flow_field(flow)
    groups, num_offsets = offsets.shape[:2]
    logger.info(f"Building offset statistics for G={groups}, N={num_offsets}, {flow.shape[1]}x{flow.shape[2]} pixels")

    report = StatsReport(
        statistics={},
        sources={},
        provenance={
            'offsets_shape': 'x'.join(str(d) for d in offsets.shape),
            'flow_shape': 'x'.join(str(d) for d in flow.shape),
            'masks_shape': 'x'.join(str(d) for d in masks.shape) if masks is not None else 'none',
            'thresholds': ','.join(f"{float(tau):g}" for tau in thresholds),
            'mask_threshold': mask_threshold,
            'distance_metric': 'l1'
        }
    )

    diversity = offset_diversity_map(offsets)
    report.diversity_map = diversity
    report.add('diversity_mean', float(diversity.mean()), 'offset_diversity_map')
    report.add('diversity_max', float(diversity.max()), 'offset_diversity_map')

    cdf = flow_distance_cdf(offsets, flow, thresholds)
    report.add('flow_distance_cdf', {f"{float(tau):g}": frac for tau, frac in zip(thresholds, cdf)}, 'flow_distance_cdf')
    report.add('warp_border_fraction', warp_border_fraction(flow), 'warp_border_fraction')

    distance = mean_flow_distance(offsets, flow)
    report.add(
        'mean_flow_distance',
        {f"g{g}n{n}": float(distance[g, n]) for g in range(groups) for n in range(num_offsets)},
        'mean_flow_distance'
    )
    ranking = sort_by_flow_distance(offsets, flow)
    report.add('flow_distance_rank', {rank: f"g{g}n{n}" for rank, (g, n) in enumerate(ranking)}, 'sort_by_flow_distance')

    if masks is not None:
        scatter = mask_flow_scatter(offsets, masks, flow)
        report.add(
            'mean_mask',
            {f"g{g}n{n}": scatter[g * num_offsets + n][1] for g in range(groups) for n in range(num_offsets)},
            'mask_flow_scatter'
        )
        report.add('mask_small_fraction', mask_small_fraction(masks, mask_threshold), 'mask_small_fraction')
        try:
            correlation = pearson([d for d, _ in scatter], [m for _, m in scatter])
        except InputError as e:
            logger.warning(f"Mask/flow correlation undefined: {e}")
            correlation = float('nan')
        report.add('mask_flow_pearson', correlation, 'pearson')

    logger.debug(f"Statistics computed: {', '.join(report.statistics)}")
    return report
