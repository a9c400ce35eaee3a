"""
Tests for bilinear sampling and backward warping.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from experiments.dcn_decomposition.errors import InputError, ShapeError
from experiments.dcn_decomposition.gradients import warp_backward
from experiments.dcn_decomposition.sampling import (
    BaseOffset,
    ZERO_TAP,
    bilinear_sample,
    kernel_taps,
    sample_bilinear_grid,
    warp,
)

PLANE = np.array([[1.0, 2.0], [3.0, 4.0]])


def test_bilinear_grid_point():
    assert bilinear_sample(PLANE, 0.0, 0.0) == 1.0
    assert bilinear_sample(PLANE, 1.0, 1.0) == 4.0


def test_bilinear_center():
    assert bilinear_sample(PLANE, 0.5, 0.5) == 2.5


def test_bilinear_out_of_bounds_is_zero():
    assert bilinear_sample(PLANE, -1.0, -1.0) == 0.0
    assert bilinear_sample(PLANE, 5.0, 0.0) == 0.0


def test_bilinear_partial_overlap_uses_zero_padding():
    # Half of the weight falls outside the frame
    assert bilinear_sample(PLANE, 0.0, 1.5) == pytest.approx(1.0)
    assert bilinear_sample(PLANE, -0.5, 0.0) == pytest.approx(0.5)


def test_bilinear_rejects_nan():
    with pytest.raises(InputError):
        bilinear_sample(PLANE, float("nan"), 0.0)
    with pytest.raises(ShapeError):
        bilinear_sample(np.zeros(3), 0.0, 0.0)


def test_kernel_taps_row_major():
    taps = kernel_taps(3)
    assert len(taps) == 9
    assert taps[0] == BaseOffset(-1, -1)
    assert taps[1] == BaseOffset(-1, 0)
    assert taps[4] == ZERO_TAP
    assert taps[8] == BaseOffset(1, 1)
    assert kernel_taps(1) == [ZERO_TAP]
    with pytest.raises(InputError):
        kernel_taps(2)


def test_warp_zero_disp_is_identity():
    rng = np.random.default_rng(0)
    feature = rng.normal(size=(3, 5, 4))
    out = warp(feature, np.zeros((2, 5, 4)))
    assert np.array_equal(out, feature)


def test_warp_integer_shift_zero_pads():
    feature = np.array([[[1.0, 2.0, 3.0]]])
    disp = np.zeros((2, 1, 3))
    disp[0] = 1.0
    assert np.array_equal(warp(feature, disp), [[[2.0, 3.0, 0.0]]])


def test_warp_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    feature = rng.normal(size=(1, 4, 4))
    disp = rng.uniform(-1.5, 1.5, size=(2, 4, 4))
    out = warp(feature, disp)
    for i in range(4):
        for j in range(4):
            expected = bilinear_sample(feature[0], i + disp[1, i, j], j + disp[0, i, j])
            assert abs(out[0, i, j] - expected) <= 1e-14


def test_warp_base_offset_shifts_sample():
    rng = np.random.default_rng(2)
    feature = rng.normal(size=(2, 5, 5))
    disp = rng.uniform(-0.4, 0.4, size=(2, 5, 5))
    shifted = disp.copy()
    shifted[0] += 1.0
    shifted[1] -= 1.0
    np.testing.assert_allclose(warp(feature, disp, BaseOffset(-1, 1)), warp(feature, shifted), atol=1e-14)


def test_warp_shape_mismatch():
    with pytest.raises(ShapeError):
        warp(np.zeros((1, 4, 4)), np.zeros((2, 4, 5)))


def test_sample_grid_matches_scalar():
    rng = np.random.default_rng(3)
    planes = rng.normal(size=(2, 3, 3))
    ys = rng.uniform(-1.0, 3.0, size=(2, 5))
    xs = rng.uniform(-1.0, 3.0, size=(2, 5))
    out = sample_bilinear_grid(planes, ys, xs)
    assert out.shape == (2, 2, 5)
    for c in range(2):
        for a in range(2):
            for b in range(5):
                assert out[c, a, b] == pytest.approx(bilinear_sample(planes[c], ys[a, b], xs[a, b]), abs=1e-14)


def test_sample_grid_rejects_non_finite():
    with pytest.raises(InputError):
        sample_bilinear_grid(np.zeros((1, 2, 2)), np.array([[np.inf]]), np.array([[0.0]]))


def test_far_coordinates_sample_zero_without_cast_warnings():
    planes = np.ones((1, 3, 3))
    ys = np.array([[1e30, -1e30], [2.0 ** 63, 1.0]])
    xs = np.array([[1.0, 1.0], [1.0, -(2.0 ** 64)]])
    with np.errstate(all="raise"):
        out = sample_bilinear_grid(planes, ys, xs)
        grad_feature, grad_disp = warp_backward(np.ones((1, 2, 2)), np.ones((1, 2, 2)), np.full((2, 2, 2), 1e30))
    assert np.array_equal(out, np.zeros((1, 2, 2)))
    assert not grad_feature.any() and not grad_disp.any()
