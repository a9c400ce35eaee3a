"""
File formats of the alignment lab.

- .flo: Middlebury optical flow (float32 magic 202021.25, int32 width,
  int32 height, then height x width interleaved (u, v) float32 values)
- .tnsr: "TNSR" magic, uint32 version 1, uint8 dtype code (1 = float32,
  2 = float64), uint8 ndim, ndim x uint32 dims, then row-major payload
- .pgm: binary greyscale (P5, maxval 255) heatmaps of diversity maps
- CSV reports with a header row and a %.10g significand cap

Every integer and float on disk is little-endian.
"""

import sys
import math
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))
from scripts.utils import save_results, logger
from experiments.dcn_decomposition.errors import FormatError, InputError, WriteError
from experiments.dcn_decomposition.tensor_core import FlowField, Tensor, as_flow_field

PathLike = Union[str, Path]

FLO_MAGIC = 202021.25
FLO_HEADER_BYTES = 12

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
TNSR_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
TNSR_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def _write_bytes(path: PathLike, payload: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise WriteError(f"could not write {path}: {e}") from e
    logger.debug(f"Wrote {len(payload)} bytes to {path}")
    return path


def read_flo(path: PathLike) -> FlowField:
    """
    Read a Middlebury .flo file.

    Args:
        path: File path

    Returns:
        (2, H, W) float64 flow; u becomes the dx channel, v the dy channel

    Raises:
        FormatError: Wrong magic, bad size fields or truncated payload
    """
    data = Path(path).read_bytes()
    if len(data) < FLO_HEADER_BYTES:
        raise FormatError(f"{path}: {len(data)} bytes is too short for a .flo header")
    magic = np.frombuffer(data, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic {magic!r}")
    width, height = (int(v) for v in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid .flo size {width}x{height}")

    expected = FLO_HEADER_BYTES + 8 * width * height
    if len(data) != expected:
        raise FormatError(f"{path}: payload holds {len(data) - FLO_HEADER_BYTES} bytes, expected {expected - FLO_HEADER_BYTES}")
    values = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=FLO_HEADER_BYTES)
    return np.ascontiguousarray(values.reshape(height, width, 2).transpose(2, 0, 1), dtype=np.float64)


def write_flo(flow: FlowField, path: PathLike) -> Path:
    """
    Write a flow field as .flo (values stored as float32).

    Raises:
        InputError: Non-finite or wrongly shaped flow
        WriteError: I/O failure
    """
    flow = as_flow_field(flow)
    _, height, width = flow.shape
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([width, height], dtype="<i4").tobytes()
    payload = np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4").tobytes()
    return _write_bytes(path, header + payload)


def read_tensor(path: PathLike) -> Tensor:
    """
    Read a TNSR file.

    Returns:
        Array with the stored dims; float32 or float64 as declared

    Raises:
        FormatError: Bad magic, version, dtype code, dims or payload length
    """
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != TNSR_MAGIC:
        raise FormatError(f"{path}: missing TNSR magic")
    version = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if version != TNSR_VERSION:
        raise FormatError(f"{path}: unsupported TNSR version {version}")
    code, ndim = data[8], data[9]
    if code not in TNSR_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if ndim < 1:
        raise FormatError(f"{path}: a tensor needs at least one dimension")

    header_bytes = 10 + 4 * ndim
    if len(data) < header_bytes:
        raise FormatError(f"{path}: truncated dims")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype="<u4", count=ndim, offset=10))
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: dims must be positive, got {dims}")

    dtype = TNSR_DTYPES[code]
    expected = math.prod(dims) * dtype.itemsize
    if len(data) - header_bytes != expected:
        raise FormatError(f"{path}: payload holds {len(data) - header_bytes} bytes, expected {expected}")
    values = np.frombuffer(data, dtype=dtype, offset=header_bytes)
    return values.astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def write_tensor(t: Tensor, path: PathLike) -> Path:
    """
    Write a tensor as TNSR; float32 is kept, everything else is stored as float64.

    Raises:
        InputError: Zero-dimensional tensor or more than 255 dims
        WriteError: I/O failure
    """
    arr = np.asarray(t)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float64)
    if not 1 <= arr.ndim <= 255:
        raise InputError(f"TNSR stores 1 to 255 dims, got {arr.ndim}")
    code = TNSR_CODES[arr.dtype]
    header = (
        TNSR_MAGIC
        + np.array([TNSR_VERSION], dtype="<u4").tobytes()
        + bytes([code, arr.ndim])
        + np.array(arr.shape, dtype="<u4").tobytes()
    )
    payload = np.ascontiguousarray(arr, dtype=TNSR_DTYPES[code]).tobytes()
    return _write_bytes(path, header + payload)


def heatmap_pixels(values: np.ndarray) -> np.ndarray:
    """
    Min-max normalize a 2D map to uint8 with round-half-to-even.

    A constant map becomes all zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise InputError(f"heatmap needs a non-empty 2D map, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InputError("heatmap values must be finite")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def heatmap_pgm(values: np.ndarray, path: PathLike) -> Path:
    """Write a 2D map as a binary P5 PGM (maxval 255)."""
    pixels = heatmap_pixels(values)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return _write_bytes(path, header + pixels.tobytes())


def write_csv_report(rows: Union[List[Dict[str, Any]], pd.DataFrame], path: PathLike) -> Path:
    """Write rows (dicts or a DataFrame) as CSV with a header row and %.10g floats."""
    try:
        return save_results(rows, path, format="csv")
    except OSError as e:
        raise WriteError(f"could not write {path}: {e}") from e
