"""
Desk-scale offset experiments

This module turns claims about trained alignment networks into small,
deterministic experiments:
1. synth_pair builds a textured reference/neighbour pair with a known flow
   and an optional occluded rectangle
2. fit_offsets optimizes offsets and pointwise weights by full-batch
   gradient descent on Charbonnier data loss plus offset-fidelity loss
3. diversity_sweep / group_sweep compare final data loss and offset
   diversity across offset counts N and deformable groups G
4. alignment_contrast scores plain image warping against the reference

All randomness comes from SplitMix64 streams seeded by the scene seed.
"""

import sys
import math
from pathlib import Path
from dataclasses import astuple, dataclass, field, replace
from enum import Enum
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Any, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))
from scripts.utils import logger
from experiments.dcn_decomposition.errors import DegenerateInputError, DivergenceError, InputError
from experiments.dcn_decomposition.tensor_core import FeatureMap, FlowField, OffsetField, PointwiseKernel, group_width
from experiments.dcn_decomposition.sampling import sample_bilinear_grid
from experiments.dcn_decomposition.dcn_core import decomposed_deform_conv
from experiments.dcn_decomposition.gradients import dcn_backward
from experiments.dcn_decomposition.losses import (
    FidelityConfig,
    charbonnier,
    charbonnier_grad,
    offset_fidelity,
    offset_fidelity_grad,
    total_loss,
)
from experiments.dcn_decomposition.alignment import averaging_pointwise, image_align
from experiments.offset_diversity.analysis import offset_diversity_map, out_of_frame_mask, pearson, psnr

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Linear part of the affine flow, applied to (x - cx, y - cy)
AFFINE_MATRIX = ((0.05, -0.02), (0.02, 0.05))

# Relative change of the total loss over the last tenth of the steps below
# which a fit is reported as converged
CONVERGENCE_TOL = 1e-3

# Keys of the ``sweep`` config section that replace the ``fit`` section
SWEEP_FIT_KEYS = ("steps", "lr", "weight_lr", "init", "init_jitter")


class SplitMix64:
    """SplitMix64 generator; output i of a fresh stream is mix(seed + (i+1)*gamma)."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= MASK64:
            raise InputError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.state = int(seed)

    def uint64s(self, count: int) -> np.ndarray:
        """Next ``count`` outputs as a uint64 array (numpy arithmetic wraps mod 2^64)."""
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self.uint64s(1)[0])

    def uniform(self, shape: Tuple[int, ...]) -> np.ndarray:
        """Uniform doubles in [0, 1) from the top 53 bits of each output."""
        count = int(np.prod(shape))
        bits = self.uint64s(count) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0 ** -53).reshape(shape)


class FlowKind(Enum):
    """Ground-truth motion of a synthetic scene."""
    CONSTANT = "constant"
    AFFINE = "affine"
    PIECEWISE = "piecewise"


class InitKind(Enum):
    """Starting point of the offsets in fit_offsets."""
    ZEROS = "zeros"
    FLOW = "flow"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle [top, top+height) x [left, left+width)."""
    top: int
    left: int
    height: int
    width: int

    def rows(self) -> slice:
        return slice(self.top, self.top + self.height)

    def cols(self) -> slice:
        return slice(self.left, self.left + self.width)


DEFAULT_OCCLUSION = Rect(5, 5, 6, 6)


def _coerce(kind, value, name: str):
    """Turn an enum value (or its string) into the enum member, raising InputError."""
    try:
        return kind(value)
    except ValueError:
        choices = ", ".join(member.value for member in kind)
        raise InputError(f"{name} must be one of {choices}, got {value!r}")


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic reference/neighbour pair."""
    height: int = 16
    width: int = 16
    channels: int = 4
    flow_kind: FlowKind = FlowKind.CONSTANT
    flow_vector: Tuple[float, float] = (3.0, 0.0)
    occlusion: Optional[Rect] = DEFAULT_OCCLUSION
    smoothness: int = 3
    contrast: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flow_kind", _coerce(FlowKind, self.flow_kind, "flow_kind"))
        object.__setattr__(self, "flow_vector", tuple(float(v) for v in self.flow_vector))
        if min(self.height, self.width, self.channels) < 1:
            raise InputError(f"scene dims must be positive, got {self.height}x{self.width}x{self.channels}")
        if len(self.flow_vector) != 2 or not all(math.isfinite(v) for v in self.flow_vector):
            raise InputError(f"flow_vector must be two finite numbers, got {self.flow_vector}")
        if self.smoothness < 0 or not (math.isfinite(self.contrast) and self.contrast >= 0):
            raise InputError("smoothness and contrast must be non-negative")
        if not 0 <= int(self.seed) <= MASK64:
            raise InputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        rect = self.occlusion
        if rect is not None:
            if (rect.height < 1 or rect.width < 1 or rect.top < 0 or rect.left < 0
                    or rect.top + rect.height > self.height or rect.left + rect.width > self.width):
                raise InputError(f"occlusion {rect} does not fit a {self.height}x{self.width} frame")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "SceneSpec":
        """Build from a ``scene`` config section; occlusion is [top, left, height, width] or null."""
        occlusion = config.get("occlusion", list(astuple(DEFAULT_OCCLUSION)))
        return cls(
            height=int(config.get("height", 16)),
            width=int(config.get("width", 16)),
            channels=int(config.get("channels", 4)),
            flow_kind=config.get("flow_kind", "constant"),
            flow_vector=tuple(config.get("flow_vector", (3.0, 0.0))),
            occlusion=Rect(*[int(v) for v in occlusion]) if occlusion else None,
            smoothness=int(config.get("smoothness", 3)),
            contrast=float(config.get("contrast", 0.1)),
            seed=int(config.get("seed", 0))
        )


@dataclass(frozen=True)
class FitConfig:
    """Optimization settings of fit_offsets."""
    num_offsets: int = 1
    groups: int = 1
    fidelity: FidelityConfig = field(default_factory=FidelityConfig)
    steps: int = 500
    lr: float = 0.1
    weight_lr: Optional[float] = None
    init: InitKind = InitKind.ADVERSARIAL
    adversarial_distance: float = 10.0
    init_jitter: float = 0.0
    mask_out_of_frame: bool = True

    def __post_init__(self):
        object.__setattr__(self, "init", _coerce(InitKind, self.init, "init"))
        if self.steps < 1:
            raise InputError(f"steps must be >= 1, got {self.steps}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise InputError(f"lr must be positive, got {self.lr}")
        if self.weight_lr is not None and not self.weight_lr >= 0:
            raise InputError(f"weight_lr must be non-negative, got {self.weight_lr}")
        if self.num_offsets < 1 or self.groups < 1:
            raise InputError("num_offsets and groups must be >= 1")
        if self.init_jitter < 0:
            raise InputError(f"init_jitter must be non-negative, got {self.init_jitter}")

    @classmethod
    def from_dict(cls, fit: Dict[str, Any], fidelity: Dict[str, Any]) -> "FitConfig":
        """Build from the ``fit`` and ``fidelity`` config sections."""
        return cls(
            num_offsets=int(fit.get("num_offsets", 1)),
            groups=int(fit.get("groups", 1)),
            fidelity=FidelityConfig(
                lam=float(fidelity.get("lambda", 1.0)),
                t=float(fidelity.get("t", 2.0)),
                reduction=fidelity.get("reduction", "sum")
            ),
            steps=int(fit.get("steps", 500)),
            lr=float(fit.get("lr", 0.1)),
            weight_lr=float(fit["weight_lr"]) if fit.get("weight_lr") is not None else None,
            init=fit.get("init", "adversarial"),
            adversarial_distance=float(fit.get("adversarial_distance", 10.0)),
            init_jitter=float(fit.get("init_jitter", 0.0)),
            mask_out_of_frame=bool(fit.get("mask_out_of_frame", True))
        )

    @classmethod
    def from_sweep_dict(cls, fit: Dict[str, Any], fidelity: Dict[str, Any], sweep: Dict[str, Any]) -> "FitConfig":
        """Build sweep fits: the ``sweep`` section's optimizer keys override the ``fit`` section."""
        merged = dict(fit)
        merged.update({key: sweep[key] for key in SWEEP_FIT_KEYS if key in sweep})
        return cls.from_dict(merged, fidelity)


# Feature-level side of alignment_contrast: one offset per pixel fitted from
# the flow without the fidelity target
FEATURE_ALIGN_CONFIG = FitConfig(
    num_offsets=1,
    fidelity=FidelityConfig(lam=0.0),
    steps=200,
    init=InitKind.FLOW
)


@dataclass
class FitReport:
    """Per-step traces and final state of one offset fit."""
    data_loss: List[float]
    fidelity_loss: List[float]
    max_deviation: List[float]
    interior_max_deviation: List[float]
    mean_diversity: List[float]
    offsets: OffsetField
    pointwise: PointwiseKernel
    final_data_loss: float
    final_diversity: float
    converged: bool

    def to_frame(self) -> pd.DataFrame:
        """One row per optimization step."""
        return pd.DataFrame({
            'step': np.arange(len(self.data_loss)),
            'data_loss': self.data_loss,
            'fidelity_loss': self.fidelity_loss,
            'max_deviation': self.max_deviation,
            'interior_max_deviation': self.interior_max_deviation,
            'mean_diversity': self.mean_diversity
        })


@dataclass
class SweepResult:
    """Aggregated sweep table plus the diversity/quality correlation."""
    table: pd.DataFrame
    correlation: float


def make_flow(spec: SceneSpec) -> FlowField:
    """Ground-truth (2, H, W) flow of a scene."""
    vx, vy = spec.flow_vector
    flow = np.zeros((2, spec.height, spec.width), dtype=np.float64)
    if spec.flow_kind is FlowKind.CONSTANT:
        flow[0], flow[1] = vx, vy
    elif spec.flow_kind is FlowKind.AFFINE:
        ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
        rx = xs - (spec.width - 1) / 2.0
        ry = ys - (spec.height - 1) / 2.0
        (a, b), (c, d) = AFFINE_MATRIX
        flow[0] = vx + a * rx + b * ry
        flow[1] = vy + c * rx + d * ry
    else:
        half = spec.width // 2
        flow[0, :, :half], flow[1, :, :half] = vx, vy
        flow[0, :, half:], flow[1, :, half:] = -vx, -vy
    return flow


def _box_blur(planes: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        padded = np.pad(planes, ((0, 0), (1, 1), (1, 1)), mode="edge")
        planes = sliding_window_view(padded, (3, 3), axis=(1, 2)).mean(axis=(-2, -1))
    return planes


def make_texture(spec: SceneSpec, margin: int) -> np.ndarray:
    """Zero-mean smooth random canvas (C, H+2M, W+2M) with std ``contrast``."""
    rng = SplitMix64(spec.seed)
    shape = (spec.channels, spec.height + 2 * margin, spec.width + 2 * margin)
    texture = _box_blur(rng.uniform(shape) - 0.5, spec.smoothness)
    texture = texture - texture.mean()
    std = texture.std()
    if std > 0:
        texture = texture * (spec.contrast / std)
    return np.ascontiguousarray(texture)


def synth_pair(spec: SceneSpec) -> Tuple[FeatureMap, FeatureMap, FlowField]:
    """
    Build a deterministic reference/neighbour pair with known flow.

    f_nbr is a crop of a smooth random canvas T and f_ref(p) samples T at
    p + flow(p), the same coordinate a backward warp of f_nbr reads. Warping
    f_nbr by the flow therefore recovers f_ref for every flow kind wherever
    the source lies in the frame. The occlusion rectangle is zeroed in f_nbr.

    Args:
        spec: Scene parameters

    Returns:
        (f_ref, f_nbr, flow_gt)
    """
    flow = make_flow(spec)
    margin = int(math.ceil(np.max(np.abs(flow)))) + 2
    texture = make_texture(spec, margin)

    f_nbr = texture[:, margin:margin + spec.height, margin:margin + spec.width].copy()
    ys = np.arange(spec.height, dtype=np.float64)[:, None] + flow[1]
    xs = np.arange(spec.width, dtype=np.float64)[None, :] + flow[0]
    f_ref = sample_bilinear_grid(texture, ys + margin, xs + margin)

    if spec.occlusion is not None:
        f_nbr[:, spec.occlusion.rows(), spec.occlusion.cols()] = 0.0
    return f_ref, f_nbr, flow


def interior_mask(spec: SceneSpec, flow: FlowField) -> np.ndarray:
    """(H, W) pixels whose ground-truth source is in the frame and untouched by the occlusion."""
    mask = ~out_of_frame_mask(flow)
    rect = spec.occlusion
    if rect is not None:
        ys = np.arange(spec.height)[:, None] + flow[1]
        xs = np.arange(spec.width)[None, :] + flow[0]
        touches = (
            (np.floor(ys) <= rect.top + rect.height - 1) & (np.ceil(ys) >= rect.top)
            & (np.floor(xs) <= rect.left + rect.width - 1) & (np.ceil(xs) >= rect.left)
        )
        mask &= ~touches
    return mask


def initial_offsets(flow: FlowField, config: FitConfig, seed: int = 0) -> OffsetField:
    """Starting offsets (G, N, 2, H, W) for the configured init kind and jitter."""
    shape = (config.groups, config.num_offsets) + flow.shape
    if config.init is InitKind.ZEROS:
        offsets = np.zeros(shape, dtype=np.float64)
    else:
        offsets = np.broadcast_to(flow, shape).astype(np.float64)
        if config.init is InitKind.ADVERSARIAL:
            offsets[:, :, 0] += config.adversarial_distance
    if config.init_jitter > 0:
        offsets = offsets + config.init_jitter * (2.0 * SplitMix64(seed).uniform(shape) - 1.0)
    return offsets


def _max_deviation(offsets: OffsetField, flow: FlowField, where: Optional[np.ndarray] = None) -> float:
    deviation = np.abs(offsets - flow[None, None])
    if where is not None:
        if not where.any():
            return 0.0
        deviation = deviation[:, :, :, where]
    return float(deviation.max())


def _is_converged(totals: List[float]) -> bool:
    window = max(1, len(totals) // 10)
    if len(totals) <= window:
        return False
    start, end = totals[-window - 1], totals[-1]
    return abs(start - end) <= CONVERGENCE_TOL * max(1.0, abs(end))


def fit_offsets(
    f_ref: FeatureMap,
    f_nbr: FeatureMap,
    flow_gt: FlowField,
    config: FitConfig = FitConfig(),
    seed: int = 0,
    interior: Optional[np.ndarray] = None
) -> FitReport:
    """
    Fit offsets and pointwise weights that align f_nbr onto f_ref.

    Minimizes charbonnier(decomposed_deform_conv(f_nbr, offsets, pw), f_ref)
    + offset_fidelity(offsets, flow_gt) by plain gradient descent. Offsets
    step with ``lr``; the pointwise weights, shared by every pixel, step
    with ``weight_lr`` (default lr / (H*W)) from the averaging kernel.

    Args:
        f_ref: (C, H, W) reference feature
        f_nbr: (C, H, W) neighbouring feature
        flow_gt: (2, H, W) ground-truth flow, target of the fidelity loss
        config: Offset counts, fidelity, steps, learning rates and init
        seed: Seed of the init jitter stream
        interior: (H, W) pixels used for interior_max_deviation
            (default: ground-truth source inside the frame)

    Returns:
        FitReport with one trace entry per step

    Raises:
        DivergenceError: The loss or the offsets became non-finite
    """
    channels, height, width = f_ref.shape
    groups, num_offsets = config.groups, config.num_offsets
    group_width(channels, groups)
    in_frame = ~out_of_frame_mask(flow_gt)
    if interior is None:
        interior = in_frame
    data_mask = np.broadcast_to(in_frame, f_ref.shape).astype(np.float64) if config.mask_out_of_frame else None
    weight_lr = config.weight_lr if config.weight_lr is not None else config.lr / (height * width)

    offsets = initial_offsets(flow_gt, config, seed)
    pw = averaging_pointwise(channels, num_offsets * channels)
    logger.info(
        f"Fitting offsets: G={groups}, N={num_offsets}, lambda={config.fidelity.lam}, "
        f"t={config.fidelity.t}, init={config.init.value}, steps={config.steps}"
    )

    traces: Dict[str, List[float]] = {key: [] for key in ('data', 'fid', 'dev', 'interior', 'div', 'total')}
    for step in range(config.steps):
        pred = decomposed_deform_conv(f_nbr, offsets, None, pw, groups)
        data = charbonnier(pred, f_ref, mask=data_mask)
        fid = offset_fidelity(offsets, flow_gt, config.fidelity)
        total = total_loss(data, fid)
        if not math.isfinite(total):
            logger.error(f"Loss diverged at step {step}")
            raise DivergenceError(step)

        traces['data'].append(data)
        traces['fid'].append(fid)
        traces['total'].append(total)
        traces['dev'].append(_max_deviation(offsets, flow_gt))
        traces['interior'].append(_max_deviation(offsets, flow_gt, interior))
        traces['div'].append(float(offset_diversity_map(offsets).mean()))
        if step % 100 == 0:
            logger.debug(f"step {step}: data={data:.6g} fid={fid:.6g} max_dev={traces['dev'][-1]:.4g}")

        grad_out = charbonnier_grad(pred, f_ref, mask=data_mask)
        bundle = dcn_backward(grad_out, f_nbr, offsets, None, pw, groups)
        offsets = offsets - config.lr * (bundle.grad_offsets + offset_fidelity_grad(offsets, flow_gt, config.fidelity))
        pw = pw - weight_lr * bundle.grad_kernel
        if not (np.all(np.isfinite(offsets)) and np.all(np.isfinite(pw))):
            logger.error(f"Parameters diverged at step {step}")
            raise DivergenceError(step, f"non-finite parameters after step {step}")

    final_pred = decomposed_deform_conv(f_nbr, offsets, None, pw, groups)
    final_data = charbonnier(final_pred, f_ref, mask=data_mask)
    if not math.isfinite(final_data):
        raise DivergenceError(config.steps)
    final_diversity = float(offset_diversity_map(offsets).mean())
    logger.info(
        f"Fit finished: data loss {traces['data'][0]:.6g} -> {final_data:.6g}, "
        f"max deviation {traces['dev'][-1]:.4g} px, diversity {final_diversity:.4g}"
    )

    return FitReport(
        data_loss=traces['data'],
        fidelity_loss=traces['fid'],
        max_deviation=traces['dev'],
        interior_max_deviation=traces['interior'],
        mean_diversity=traces['div'],
        offsets=offsets,
        pointwise=pw,
        final_data_loss=final_data,
        final_diversity=final_diversity,
        converged=_is_converged(traces['total'])
    )


def fit_scene(spec: SceneSpec, config: FitConfig) -> FitReport:
    """synth_pair + fit_offsets with the scene seed driving the init jitter."""
    f_ref, f_nbr, flow = synth_pair(spec)
    return fit_offsets(f_ref, f_nbr, flow, config, seed=spec.seed, interior=interior_mask(spec, flow))


def _run_cells(spec: SceneSpec, configs: List[FitConfig], seeds: Sequence[int], workers: int) -> List[FitReport]:
    cells = [(config, seed) for config in configs for seed in seeds]

    def run(cell):
        config, seed = cell
        return fit_scene(replace(spec, seed=int(seed)), config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, cells))
    return [run(cell) for cell in cells]


def _aggregate(axis: str, values: Sequence[int], reports: List[FitReport], num_seeds: int) -> SweepResult:
    rows = []
    for i, value in enumerate(values):
        cell = reports[i * num_seeds:(i + 1) * num_seeds]
        rows.append({
            axis: int(value),
            'mean_final_data_loss': float(np.mean([r.final_data_loss for r in cell])),
            'mean_final_diversity': float(np.mean([r.final_diversity for r in cell])),
            'seeds': num_seeds
        })
    table = pd.DataFrame(rows, columns=[axis, 'mean_final_data_loss', 'mean_final_diversity', 'seeds'])

    correlation = float('nan')
    if len(rows) >= 2:
        try:
            correlation = pearson(table['mean_final_diversity'], -table['mean_final_data_loss'])
        except DegenerateInputError as e:
            logger.warning(f"Diversity/loss correlation undefined: {e}")
    return SweepResult(table=table, correlation=correlation)


def _sweep_config(config: FitConfig, **changes) -> FitConfig:
    """Sweeps fit without the flow target (lambda = 0)."""
    return replace(config, fidelity=replace(config.fidelity, lam=0.0), **changes)


def diversity_sweep(
    spec: SceneSpec,
    ns: Sequence[int],
    config: FitConfig,
    seeds: Sequence[int],
    workers: int = 1
) -> SweepResult:
    """
    Fit every (N, seed) cell with lambda = 0 and average per N.

    Args:
        spec: Scene (its seed is replaced by each sweep seed)
        ns: Offset counts
        config: Base fit settings (groups, steps, lr, init, jitter)
        seeds: Scene/jitter seeds
        workers: Thread count; the table is identical to a serial run

    Returns:
        SweepResult with rows (N, mean final data loss, mean final diversity)
        and pearson(diversity, -loss) across rows (NaN for a single row)
    """
    if not ns:
        raise InputError("at least one offset count is required")
    if not seeds:
        raise InputError("at least one seed is required")
    logger.info(f"Diversity sweep over N={list(ns)} with {len(seeds)} seeds")
    configs = [_sweep_config(config, num_offsets=int(n)) for n in ns]
    reports = _run_cells(spec, configs, seeds, workers)
    return _aggregate('N', ns, reports, len(seeds))


def group_sweep(
    spec: SceneSpec,
    gs: Sequence[int],
    config: FitConfig,
    seeds: Sequence[int],
    workers: int = 1
) -> SweepResult:
    """Counterpart of diversity_sweep along the deformable-group axis (N from config)."""
    if not gs:
        raise InputError("at least one group count is required")
    if not seeds:
        raise InputError("at least one seed is required")
    for g in gs:
        group_width(spec.channels, int(g))
    logger.info(f"Group sweep over G={list(gs)} with {len(seeds)} seeds")
    configs = [_sweep_config(config, groups=int(g)) for g in gs]
    reports = _run_cells(spec, configs, seeds, workers)
    return _aggregate('G', gs, reports, len(seeds))


def alignment_contrast(spec: SceneSpec, report: Optional[FitReport] = None) -> Dict[str, float]:
    """
    Score image-level and feature-level alignment of the neighbour.

    The image-level side warps f_nbr by the ground-truth flow. The
    feature-level side applies fitted offsets and pointwise weights
    (decomposed deformable convolution); without ``report`` they come from
    fit_offsets with FEATURE_ALIGN_CONFIG, which starts at the flow.

    Args:
        spec: Scene to align
        report: Fit on the same scene to score on the feature side

    Returns:
        PSNR of both sides over all pixels and over the interior, next to
        the fraction of pixels filled from outside the frame and the
        occluded fraction
    """
    f_ref, f_nbr, flow = synth_pair(spec)
    interior = interior_mask(spec, flow)
    in_frame = ~out_of_frame_mask(flow)
    if report is None:
        report = fit_offsets(f_ref, f_nbr, flow, FEATURE_ALIGN_CONFIG, seed=spec.seed, interior=interior)

    image_level = image_align(f_nbr, flow)
    feature_level = decomposed_deform_conv(f_nbr, report.offsets, None, report.pointwise, report.offsets.shape[0])

    def score(aligned: np.ndarray) -> Tuple[float, float]:
        inside = psnr(aligned, f_ref, mask=interior[None]) if interior.any() else float('nan')
        return psnr(aligned, f_ref), inside

    result: Dict[str, float] = {}
    result['psnr_all'], result['psnr_interior'] = score(image_level)
    result['feature_psnr_all'], result['feature_psnr_interior'] = score(feature_level)
    result['border_fraction'] = 1.0 - float(np.count_nonzero(in_frame)) / in_frame.size
    result['occluded_fraction'] = float(np.count_nonzero(in_frame & ~interior)) / interior.size

    logger.info(
        f"Image alignment: PSNR {result['psnr_all']:.3f} dB overall, {result['psnr_interior']:.3f} dB interior; "
        f"feature alignment: {result['feature_psnr_all']:.3f} dB overall, "
        f"{result['feature_psnr_interior']:.3f} dB interior"
    )
    return result
