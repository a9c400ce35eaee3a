"""
Bilinear sampling and backward warping.

warp() implements x_k(p) = x(p + p_k + dp_k): every output pixel (i, j)
reads the source at row i + base.dy + disp[1, i, j] and column
j + base.dx + disp[0, i, j]. Samples use the four integer neighbours;
neighbours outside the frame contribute zero (zero padding), which is what
produces the dark borders of warped outputs.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import InputError, ShapeError
from .tensor_core import FeatureMap, as_feature_map, as_flow_field, require_spatial_match

Displacement = np.ndarray


@dataclass(frozen=True)
class BaseOffset:
    """Integer tap position p_k of a standard convolution, in pixels."""
    dy: int = 0
    dx: int = 0


ZERO_TAP = BaseOffset(0, 0)


def kernel_taps(n: int) -> List[BaseOffset]:
    """
    Enumerate the taps of an n x n kernel row-major.

    For n=3 this gives (-1,-1), (-1,0), (-1,1), (0,-1), ... (1,1) as (dy, dx).
    """
    if n < 1 or n % 2 == 0:
        raise InputError(f"kernel size must be a positive odd integer, got {n}")
    r = (n - 1) // 2
    return [BaseOffset(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def bilinear_sample(plane: np.ndarray, y: float, x: float) -> float:
    """
    Sample a single H x W plane at a real coordinate.

    Args:
        plane: 2D grid
        y: Row coordinate
        x: Column coordinate

    Returns:
        Bilinear interpolation of the four integer neighbours; neighbours
        outside [0, H-1] x [0, W-1] contribute 0.

    Raises:
        InputError: NaN (or infinite) coordinate
        ShapeError: Plane is not a non-empty 2D grid
    """
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise ShapeError(f"plane must be a non-empty 2D grid, got shape {plane.shape}")
    if not (math.isfinite(y) and math.isfinite(x)):
        raise InputError(f"sample coordinate must be finite, got ({y}, {x})")

    height, width = plane.shape
    y0 = math.floor(y)
    x0 = math.floor(x)
    ly = y - y0
    lx = x - x0

    value = 0.0
    for yy, wy in ((y0, 1.0 - ly), (y0 + 1, ly)):
        for xx, wx in ((x0, 1.0 - lx), (x0 + 1, lx)):
            if 0 <= yy < height and 0 <= xx < width:
                value += (float(plane[yy, xx]) * wy) * wx
    return value


def sampling_grid(disp: Displacement, base: BaseOffset = ZERO_TAP) -> Tuple[np.ndarray, np.ndarray]:
    """Absolute sample coordinates (ys, xs) of a displacement plus a tap."""
    height, width = disp.shape[-2:]
    ys = np.arange(height, dtype=disp.dtype)[:, None] + base.dy + disp[1]
    xs = np.arange(width, dtype=disp.dtype)[None, :] + base.dx + disp[0]
    return ys, xs


def corner_taps(ys: np.ndarray, xs: np.ndarray, height: int, width: int, left_limit: bool = False):
    """
    Yield the four bilinear corners of every coordinate.

    Each item is (dy, dx, row, col, valid) with dy, dx in {0, 1} naming the
    corner, row/col clipped into the frame and ``valid`` marking corners
    that are really inside it. With ``left_limit`` the cell containing
    coordinate - eps is used, so integer coordinates sit at the right edge
    of their cell.

    Returns:
        (corners, ly, lx): corner list and fractional positions in the cell
    """
    if left_limit:
        y0 = np.ceil(ys) - 1.0
        x0 = np.ceil(xs) - 1.0
    else:
        y0 = np.floor(ys)
        x0 = np.floor(xs)
    ly = ys - y0
    lx = xs - x0
    # Cells beyond one pixel of padding have no valid corner either way
    y0 = np.clip(y0, -2, height + 1).astype(np.intp)
    x0 = np.clip(x0, -2, width + 1).astype(np.intp)

    corners = []
    for cy in (0, 1):
        for cx in (0, 1):
            rows = y0 + cy
            cols = x0 + cx
            valid = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
            corners.append((cy, cx, np.clip(rows, 0, height - 1), np.clip(cols, 0, width - 1), valid))
    return corners, ly, lx


def sample_bilinear_grid(planes: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """
    Vectorized bilinear_sample over whole coordinate grids.

    Args:
        planes: (C, H, W) stack of source planes
        ys: Row coordinates, any 2D shape (H', W')
        xs: Column coordinates, same shape as ys

    Returns:
        (C, H', W') samples, bit-identical to calling bilinear_sample per element
    """
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(xs))):
        raise InputError("sample coordinates must be finite")

    height, width = planes.shape[-2:]
    corners, ly, lx = corner_taps(ys, xs, height, width)
    wys = (1.0 - ly, ly)
    wxs = (1.0 - lx, lx)

    out = np.zeros((planes.shape[0],) + ys.shape, dtype=planes.dtype)
    for cy, cx, rows, cols, valid in corners:
        term = (planes[:, rows, cols] * wys[cy]) * wxs[cx]
        out = out + np.where(valid, term, 0.0)
    return out


def warp(feature: FeatureMap, disp: Displacement, base: BaseOffset = ZERO_TAP) -> FeatureMap:
    """
    Backward-warp a feature map by a displacement field plus a tap offset.

    Args:
        feature: (C, H, W) source feature
        disp: (2, H, W) displacement (dx, dy)
        base: Integer tap offset p_k

    Returns:
        (C, H, W) warped feature

    Raises:
        ShapeError: Spatial dims of feature and disp differ
    """
    feature = as_feature_map(feature)
    disp = as_flow_field(disp, "disp")
    require_spatial_match(feature, disp, "warp")

    ys, xs = sampling_grid(disp, base)
    return sample_bilinear_grid(feature, ys, xs)
