"""
Data-fitting loss and offset-fidelity loss.

The fidelity term ties every learned offset to a reference optical flow:

    L_fid = lambda * sum_{g,n} sum_{i,j} sum_{comp in (dx, dy)} H(|o - f| - t) * |o - f|

The deviation is taken per displacement component and the same flow is
compared with every offset of every group. H(0) = 0, so a deviation of
exactly t is free. The gradient treats H as a constant gate.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InputError, ShapeError
from .tensor_core import FlowField, OffsetField, Tensor, as_flow_field, as_offset_field, require_spatial_match

CHARBONNIER_EPS = 1e-3


class Reduction(Enum):
    """How the fidelity penalty is reduced over components."""
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class FidelityConfig:
    """Weight and tolerance of the offset-fidelity loss."""
    lam: float = 1.0
    t: float = 2.0
    reduction: Reduction = Reduction.SUM

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InputError(f"lambda must be a non-negative number, got {self.lam}")
        if not (np.isfinite(self.t) and self.t >= 0):
            raise InputError(f"threshold t must be a non-negative number, got {self.t}")
        try:
            object.__setattr__(self, "reduction", Reduction(self.reduction))
        except ValueError:
            raise InputError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")


def _check_pair(pred: Tensor, target: Tensor, mask: Optional[np.ndarray]):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.shape)
    return pred, target, mask


def charbonnier(pred: Tensor, target: Tensor, eps: float = CHARBONNIER_EPS, mask: Optional[np.ndarray] = None) -> float:
    """
    Charbonnier penalty: sum of sqrt((pred - target)^2 + eps^2).

    Args:
        pred: Prediction
        target: Target of the same shape
        eps: Smoothing constant (>= 0)
        mask: Optional 0/1 weights broadcastable to pred; zero excludes an element
    """
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    pred, target, mask = _check_pair(pred, target, mask)
    penalty = np.sqrt((pred - target) ** 2 + eps ** 2)
    if mask is not None:
        penalty = penalty * mask
    return float(np.sum(penalty))


def charbonnier_grad(pred: Tensor, target: Tensor, eps: float = CHARBONNIER_EPS, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Elementwise derivative of charbonnier() w.r.t. pred (0 where diff == eps == 0)."""
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps}")
    pred, target, mask = _check_pair(pred, target, mask)
    diff = pred - target
    norm = np.sqrt(diff ** 2 + eps ** 2)
    grad = np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0)
    if mask is not None:
        grad = grad * mask
    return grad


def heaviside(z: float) -> int:
    """Step function with H(0) = 0."""
    return 1 if z > 0 else 0


def _deviation(offsets: OffsetField, flow: FlowField) -> np.ndarray:
    offsets = as_offset_field(offsets)
    flow = as_flow_field(flow)
    require_spatial_match(offsets, flow, "offset_fidelity")
    return offsets - flow[None, None]


def _scale(deviation: np.ndarray, cfg: FidelityConfig) -> float:
    if cfg.reduction is Reduction.MEAN:
        return cfg.lam / deviation.size
    return cfg.lam


def offset_fidelity(offsets: OffsetField, flow: FlowField, cfg: FidelityConfig) -> float:
    """
    Thresholded L1 penalty between every offset and the flow.

    Args:
        offsets: (G, N, 2, H, W)
        flow: (2, H, W); dx compared with dx, dy with dy
        cfg: Weight, threshold and reduction

    Returns:
        Non-negative scalar; zero iff every deviation is <= t
    """
    magnitude = np.abs(_deviation(offsets, flow))
    gated = np.where(magnitude > cfg.t, magnitude, 0.0)
    return _scale(magnitude, cfg) * float(np.sum(gated))


def offset_fidelity_grad(offsets: OffsetField, flow: FlowField, cfg: FidelityConfig) -> np.ndarray:
    """lambda * sign(o - f) where |o - f| > t, else 0 (offset-field shaped)."""
    deviation = _deviation(offsets, flow)
    gate = np.abs(deviation) > cfg.t
    return np.where(gate, _scale(deviation, cfg) * np.sign(deviation), 0.0)


def total_loss(data: float, fid: float) -> float:
    """Augmented objective: data term plus the (already weighted) fidelity term."""
    return data + fid
