"""
Tests for offset prediction and the alignment modules.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from experiments.dcn_decomposition.errors import ShapeError
from experiments.dcn_decomposition.sampling import ZERO_TAP, bilinear_sample, warp
from experiments.dcn_decomposition.dcn_core import decomposed_deform_conv, deform_conv
from experiments.dcn_decomposition.alignment import (
    PredictorWeights,
    align_pair,
    averaging_pointwise,
    deformable_align,
    flow_align,
    identity_pointwise,
    image_align,
    init_predictor_weights,
    logistic,
    predict_offsets,
)


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    return rng.normal(size=(2, 6, 6)), rng.normal(size=(2, 6, 6))


def test_zero_weights_give_zero_offsets_and_half_masks(pair):
    f_ref, f_nbr = pair
    w = PredictorWeights(
        conv1=np.zeros((4, 4, 3, 3)),
        conv2=np.zeros((4, 4, 3, 3)),
        conv_out=np.zeros((3 * 2 * 2, 4, 3, 3)),
        groups=2,
        num_offsets=2
    )
    assert w.with_masks
    offsets, masks = predict_offsets(f_ref, f_nbr, w)
    assert offsets.shape == (2, 2, 2, 6, 6)
    assert np.all(offsets == 0.0)
    assert np.all(masks == 0.5)


@pytest.mark.parametrize("groups,num_offsets", [(1, 1), (2, 3), (1, 9)])
def test_predictor_output_shapes(pair, groups, num_offsets):
    f_ref, f_nbr = pair
    w = init_predictor_weights(2, groups=groups, num_offsets=num_offsets, hidden=8, seed=groups)
    offsets, masks = predict_offsets(f_ref, f_nbr, w)
    assert offsets.shape == (groups, num_offsets, 2, 6, 6)
    assert masks is None
    assert np.all(np.isfinite(offsets))


def test_predictor_masks_lie_in_unit_interval(pair):
    f_ref, f_nbr = pair
    w = init_predictor_weights(2, groups=1, num_offsets=2, with_masks=True, scale=1.0, seed=3)
    _, masks = predict_offsets(f_ref, f_nbr, w)
    assert masks.shape == (1, 2, 6, 6)
    assert np.all((masks >= 0.0) & (masks <= 1.0))


def test_input_order_matters(pair):
    f_ref, f_nbr = pair
    w = init_predictor_weights(2, seed=5)
    forward, _ = predict_offsets(f_ref, f_nbr, w)
    swapped, _ = predict_offsets(f_nbr, f_ref, w)
    assert not np.allclose(forward, swapped)


def test_symmetric_weights_ignore_order(pair):
    f_ref, f_nbr = pair
    w = init_predictor_weights(2, seed=6)
    w.conv1[:, 2:] = w.conv1[:, :2]
    forward, _ = predict_offsets(f_ref, f_nbr, w)
    swapped, _ = predict_offsets(f_nbr, f_ref, w)
    np.testing.assert_allclose(forward, swapped, rtol=0, atol=1e-12)


def test_predictor_weight_validation():
    with pytest.raises(ShapeError):
        PredictorWeights(np.zeros((4, 4, 3, 3)), np.zeros((5, 3, 3, 3)), np.zeros((2, 5, 3, 3)))
    with pytest.raises(ShapeError):
        PredictorWeights(np.zeros((4, 4, 3, 3)), np.zeros((4, 4, 3, 3)), np.zeros((5, 4, 3, 3)))


def test_logistic_midpoint():
    assert logistic(np.array(0.0)) == 0.5


def test_identity_alignment(pair):
    _, f_nbr = pair
    out = deformable_align(f_nbr, np.zeros((1, 1, 2, 6, 6)), identity_pointwise(2))
    np.testing.assert_array_equal(out, f_nbr)


def test_alignment_recovers_integer_translation():
    rng = np.random.default_rng(1)
    canvas = rng.normal(size=(2, 8, 10))
    f_ref = canvas[:, :, 2:10]
    f_nbr = canvas[:, :, :8]
    flow = np.zeros((2, 8, 8))
    flow[0] = 2.0
    out = deformable_align(f_nbr, flow[None, None], identity_pointwise(2))
    # Columns 6 and 7 would read beyond the neighbour's frame
    np.testing.assert_array_equal(out[:, :, :6], f_ref[:, :, :6])
    assert np.all(out[:, :, 6:] == 0.0)


def test_binary_masks_select_warped_paths():
    rng = np.random.default_rng(2)
    f_nbr = rng.normal(size=(2, 5, 5))
    offsets = rng.uniform(-1.0, 1.0, size=(1, 2, 2, 5, 5))
    masks = (rng.random(size=(1, 2, 5, 5)) < 0.5).astype(np.float64)
    pw = rng.normal(size=(3, 4, 1, 1))
    out = deformable_align(f_nbr, offsets, pw, masks=masks)
    expected = np.zeros((3, 5, 5))
    for k in range(2):
        path = np.einsum("oc,chw->ohw", pw[:, k * 2:(k + 1) * 2, 0, 0], warp(f_nbr, offsets[0, k]))
        expected += masks[0, k] * path
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_accepts_conv_kernel_form():
    rng = np.random.default_rng(3)
    f_nbr = rng.normal(size=(2, 6, 6))
    offsets = rng.uniform(-1.0, 1.0, size=(1, 9, 2, 6, 6))
    kernel = rng.normal(size=(2, 2, 3, 3))
    np.testing.assert_allclose(deformable_align(f_nbr, offsets, kernel), deform_conv(f_nbr, offsets, kernel), rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        deformable_align(f_nbr, offsets[:, :4], kernel)


def test_reference_only_reaches_output_through_offsets(pair):
    f_ref, f_nbr = pair
    w = init_predictor_weights(2, num_offsets=2, seed=7)
    pw = averaging_pointwise(2, 4)
    aligned, offsets, masks = align_pair(f_ref, f_nbr, w, pw)
    assert masks is None
    np.testing.assert_array_equal(aligned, deformable_align(f_nbr, offsets, pw))

    perturbed = f_ref + 1.0
    _, moved, _ = align_pair(perturbed, f_nbr, w, pw)
    assert not np.allclose(moved, offsets)
    # With cached offsets the reference plays no part
    np.testing.assert_array_equal(deformable_align(f_nbr, offsets, pw), aligned)


def test_flow_align_examples(pair):
    _, f_nbr = pair
    assert np.array_equal(flow_align(f_nbr, np.zeros((2, 6, 6)), identity_pointwise(2)), f_nbr)

    rng = np.random.default_rng(4)
    flow = rng.uniform(-2.0, 2.0, size=(2, 6, 6))
    pw = rng.normal(size=(3, 2, 1, 1))
    assert np.array_equal(flow_align(f_nbr, flow, pw), decomposed_deform_conv(f_nbr, flow[None, None], [ZERO_TAP], pw, 1))


def test_flow_align_half_pixel_on_ramp():
    ramp = np.tile(np.arange(5.0), (4, 1))[None]
    flow = np.zeros((2, 4, 5))
    flow[0] = 0.5
    out = flow_align(ramp, flow, identity_pointwise(1))
    for i in range(4):
        for j in range(5):
            assert out[0, i, j] == pytest.approx(bilinear_sample(ramp[0], i, j + 0.5), abs=1e-14)
    assert out[0, 0, 1] == pytest.approx(1.5)


def test_image_align_examples():
    rng = np.random.default_rng(5)
    image = rng.normal(size=(1, 4, 4))
    assert np.array_equal(image_align(image, np.zeros((2, 4, 4))), image)

    flow = np.zeros((2, 4, 4))
    flow[1] = 1.0
    shifted = image_align(image, flow)
    np.testing.assert_array_equal(shifted[:, :3], image[:, 1:])
    assert np.all(shifted[:, 3] == 0.0)


def test_image_align_smooths_checkerboard():
    checker = (np.indices((8, 8)).sum(axis=0) % 2 * 2.0 - 1.0)[None]
    flow = np.full((2, 8, 8), 0.5)
    out = image_align(checker, flow)
    assert np.max(np.abs(out)) < np.max(np.abs(checker))
