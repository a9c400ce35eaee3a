"""
Tests for the synthetic scenes, offset fitting and sweeps.
"""

import sys
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from scripts.utils import load_config
from experiments.dcn_decomposition.errors import DivergenceError, InputError, ShapeError
from experiments.dcn_decomposition.losses import FidelityConfig
from experiments.dcn_decomposition.sampling import warp
from experiments.offset_diversity.harness import (
    FitConfig,
    FlowKind,
    InitKind,
    Rect,
    SceneSpec,
    SplitMix64,
    alignment_contrast,
    diversity_sweep,
    fit_offsets,
    fit_scene,
    group_sweep,
    initial_offsets,
    interior_mask,
    make_flow,
    make_texture,
    synth_pair,
)

SEEDS = [0, 1, 2, 3, 4]


def test_splitmix_reference_value():
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


def test_splitmix_stream_is_contiguous():
    batch = SplitMix64(42).uint64s(5)
    rng = SplitMix64(42)
    singles = [rng.next_u64() for _ in range(5)]
    assert [int(v) for v in batch] == singles


def test_splitmix_uniform_range():
    values = SplitMix64(7).uniform((1000,))
    assert values.min() >= 0.0 and values.max() < 1.0
    assert abs(values.mean() - 0.5) < 0.05


def test_splitmix_rejects_negative_seed():
    with pytest.raises(InputError):
        SplitMix64(-1)


def test_make_flow_kinds():
    constant = make_flow(SceneSpec())
    assert np.all(constant[0] == 3.0) and np.all(constant[1] == 0.0)

    piecewise = make_flow(SceneSpec(flow_kind="piecewise"))
    assert np.all(piecewise[0, :, :8] == 3.0) and np.all(piecewise[0, :, 8:] == -3.0)

    affine = make_flow(SceneSpec(flow_kind=FlowKind.AFFINE))
    assert affine[0].mean() == pytest.approx(3.0)
    assert affine[1].mean() == pytest.approx(0.0, abs=1e-12)
    assert np.ptp(affine[0]) > 0


def test_scene_validation():
    with pytest.raises(InputError):
        SceneSpec(flow_kind="spiral")
    with pytest.raises(InputError):
        SceneSpec(occlusion=Rect(12, 12, 6, 6))
    with pytest.raises(InputError):
        SceneSpec(channels=0)
    with pytest.raises(InputError):
        SceneSpec(flow_vector=(float("inf"), 0.0))


def test_scene_from_dict():
    spec = SceneSpec.from_dict({"height": 8, "width": 10, "flow_kind": "affine", "occlusion": None, "seed": 3})
    assert (spec.height, spec.width, spec.seed) == (8, 10, 3)
    assert spec.flow_kind is FlowKind.AFFINE
    assert spec.occlusion is None
    assert SceneSpec.from_dict({}).occlusion == Rect(5, 5, 6, 6)
    assert SceneSpec.from_dict({"occlusion": []}).occlusion is None


def test_texture_statistics():
    texture = make_texture(SceneSpec(), margin=5)
    assert texture.shape == (4, 26, 26)
    assert texture.mean() == pytest.approx(0.0, abs=1e-12)
    assert texture.std() == pytest.approx(0.1)


def test_zero_flow_pair_is_identical():
    f_ref, f_nbr, flow = synth_pair(SceneSpec(flow_vector=(0.0, 0.0), occlusion=None))
    assert np.array_equal(f_ref, f_nbr)
    assert np.all(flow == 0.0)


def test_integer_flow_pair_is_consistent():
    f_ref, f_nbr, flow = synth_pair(SceneSpec(flow_vector=(2.0, 0.0), occlusion=None))
    aligned = warp(f_nbr, flow)
    np.testing.assert_allclose(aligned[:, :, :14], f_ref[:, :, :14], rtol=0, atol=1e-15)


@pytest.mark.parametrize("spec", [
    SceneSpec(flow_kind="affine", occlusion=None),
    SceneSpec(flow_vector=(1.5, 0.0), occlusion=None),
    SceneSpec(flow_vector=(-0.75, 1.25), seed=3),
    SceneSpec(flow_kind="piecewise", flow_vector=(2.5, -0.5), occlusion=None, seed=1),
])
def test_warping_neighbour_recovers_reference(spec):
    f_ref, f_nbr, flow = synth_pair(spec)
    interior = interior_mask(spec, flow)
    assert np.count_nonzero(interior) > interior.size // 2
    aligned = warp(f_nbr, flow)
    np.testing.assert_allclose(aligned[:, interior], f_ref[:, interior], rtol=0, atol=1e-12)


def test_pair_is_deterministic_and_occluded():
    spec = SceneSpec(seed=9)
    first = synth_pair(spec)
    second = synth_pair(spec)
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
    f_nbr = first[1]
    assert np.all(f_nbr[:, 5:11, 5:11] == 0.0)
    assert not np.array_equal(synth_pair(replace(spec, seed=10))[0], first[0])


def test_interior_mask():
    spec = SceneSpec()
    mask = interior_mask(spec, make_flow(spec))
    assert not mask[0, 13:].any()
    assert mask[0, :13].all()
    assert not mask[5, 2] and not mask[10, 7]
    assert mask[5, 1] and mask[4, 4] and mask[11, 4]


def test_initial_offsets():
    flow = make_flow(SceneSpec())
    zeros = initial_offsets(flow, FitConfig(init="zeros", num_offsets=2))
    assert zeros.shape == (1, 2, 2, 16, 16) and np.all(zeros == 0.0)

    adversarial = initial_offsets(flow, FitConfig(adversarial_distance=10.0))
    assert np.all(adversarial[:, :, 0] == 13.0) and np.all(adversarial[:, :, 1] == 0.0)

    jittered = initial_offsets(flow, FitConfig(init=InitKind.FLOW, init_jitter=1.0, groups=2), seed=4)
    deviation = jittered - flow[None, None]
    assert np.all(np.abs(deviation) <= 1.0) and np.ptp(deviation) > 0
    assert np.array_equal(jittered, initial_offsets(flow, FitConfig(init="flow", init_jitter=1.0, groups=2), seed=4))


def test_fit_config_validation():
    with pytest.raises(InputError):
        FitConfig(init="random")
    with pytest.raises(InputError):
        FitConfig(steps=0)
    with pytest.raises(InputError):
        FitConfig(lr=0.0)
    config = FitConfig.from_dict({"num_offsets": 5, "init": "flow", "weight_lr": 0.01}, {"lambda": 0.0, "t": 1.0})
    assert config.num_offsets == 5 and config.init is InitKind.FLOW
    assert config.fidelity == FidelityConfig(lam=0.0, t=1.0)
    assert config.weight_lr == 0.01


def test_flow_init_without_fidelity_stays_at_optimum():
    spec = SceneSpec(channels=1, flow_vector=(2.0, 1.0), occlusion=None)
    f_ref, f_nbr, flow = synth_pair(spec)
    config = FitConfig(init="flow", fidelity=FidelityConfig(lam=0.0), steps=60)
    report = fit_offsets(f_ref, f_nbr, flow, config)
    assert len(report.data_loss) == 60
    assert all(b <= a for a, b in zip(report.data_loss[:50], report.data_loss[1:51]))
    assert report.max_deviation[-1] <= 0.5
    assert np.max(np.abs(report.offsets - flow[None, None])) <= 0.5
    assert report.final_diversity == 0.0


@pytest.mark.parametrize("seed", SEEDS)
def test_fidelity_loss_stabilizes_adversarial_offsets(seed):
    spec = SceneSpec(seed=seed)
    config = FitConfig(init="adversarial", adversarial_distance=10.0, fidelity=FidelityConfig(lam=1.0, t=2.0))
    report = fit_scene(spec, config)
    final_quarter = report.max_deviation[-len(report.max_deviation) // 4:]
    assert max(final_quarter) <= 2.25
    assert report.max_deviation[0] == pytest.approx(10.0)


@pytest.mark.parametrize("seed", SEEDS)
def test_without_fidelity_adversarial_offsets_stay_away(seed):
    spec = SceneSpec(seed=seed)
    config = FitConfig(init="adversarial", adversarial_distance=10.0, fidelity=FidelityConfig(lam=0.0, t=2.0))
    report = fit_scene(spec, config)
    assert report.max_deviation[-1] > 2.0
    assert all(f == 0.0 for f in report.fidelity_loss)


def test_fit_is_deterministic():
    spec = SceneSpec(seed=2)
    config = FitConfig(num_offsets=2, steps=30, init_jitter=0.5)
    first = fit_scene(spec, config)
    second = fit_scene(spec, config)
    assert first.data_loss == second.data_loss
    assert np.array_equal(first.offsets, second.offsets)
    assert np.array_equal(first.pointwise, second.pointwise)


def test_fit_report_frame():
    report = fit_scene(SceneSpec(), FitConfig(steps=12))
    frame = report.to_frame()
    assert list(frame.columns) == [
        'step', 'data_loss', 'fidelity_loss', 'max_deviation', 'interior_max_deviation', 'mean_diversity'
    ]
    assert len(frame) == 12
    assert isinstance(report.converged, bool)
    assert math.isfinite(report.final_data_loss)


def test_fit_raises_on_non_finite_loss():
    f_ref, f_nbr, flow = synth_pair(SceneSpec())
    f_ref = f_ref.copy()
    f_ref[0, 0, 0] = np.nan
    with pytest.raises(DivergenceError) as excinfo:
        fit_offsets(f_ref, f_nbr, flow, FitConfig(steps=5))
    assert excinfo.value.step == 0


def test_fit_rejects_indivisible_groups():
    f_ref, f_nbr, flow = synth_pair(SceneSpec())
    with pytest.raises(ShapeError):
        fit_offsets(f_ref, f_nbr, flow, FitConfig(groups=3, steps=1))


def test_single_offset_sweep():
    result = diversity_sweep(SceneSpec(), [1], FitConfig(steps=20, init="flow"), [0])
    assert len(result.table) == 1
    assert result.table['N'].tolist() == [1]
    assert result.table['mean_final_diversity'].tolist() == [0.0]
    assert math.isnan(result.correlation)


def test_sweep_is_deterministic_and_thread_safe():
    config = FitConfig(steps=15, init="flow", init_jitter=1.0)
    serial = diversity_sweep(SceneSpec(), [1, 2], config, [0, 1])
    again = diversity_sweep(SceneSpec(), [1, 2], config, [0, 1])
    threaded = diversity_sweep(SceneSpec(), [1, 2], config, [0, 1], workers=2)
    assert serial.table.equals(again.table)
    assert serial.table.equals(threaded.table)
    assert list(serial.table.columns) == ['N', 'mean_final_data_loss', 'mean_final_diversity', 'seeds']
    assert serial.table['mean_final_diversity'].iloc[1] > 0


def test_group_sweep():
    result = group_sweep(SceneSpec(), [1, 2], FitConfig(steps=10, init="flow", init_jitter=1.0), [0])
    assert result.table['G'].tolist() == [1, 2]
    with pytest.raises(ShapeError):
        group_sweep(SceneSpec(), [3], FitConfig(steps=1), [0])
    with pytest.raises(InputError):
        group_sweep(SceneSpec(), [], FitConfig(steps=1), [0])


def test_alignment_contrast():
    clean = alignment_contrast(SceneSpec(flow_vector=(0.0, 0.0), occlusion=None))
    assert clean['psnr_all'] == math.inf
    assert clean['feature_psnr_all'] == math.inf
    assert clean['border_fraction'] == 0.0

    result = alignment_contrast(SceneSpec())
    assert result['border_fraction'] == pytest.approx(3.0 / 16.0)
    assert result['occluded_fraction'] > 0
    assert result['psnr_interior'] > result['psnr_all']
    assert math.isfinite(result['feature_psnr_all'])


def test_alignment_contrast_scores_the_given_fit():
    spec = SceneSpec(flow_vector=(1.5, 0.5), seed=6)
    # A fit that barely moves from the flow reproduces the image-level warp
    report = fit_scene(spec, FitConfig(init="flow", fidelity=FidelityConfig(lam=0.0), steps=1, lr=1e-12, weight_lr=0.0))
    result = alignment_contrast(spec, report)
    assert result['feature_psnr_all'] == pytest.approx(result['psnr_all'], rel=1e-9)


def test_sweep_config_from_sections():
    config = FitConfig.from_sweep_dict(
        {"steps": 500, "lr": 0.1, "init": "adversarial", "num_offsets": 3},
        {"lambda": 1.0, "t": 2.0},
        {"steps": 40, "lr": 0.3, "weight_lr": 5e-5, "init": "flow", "init_jitter": 2.0, "seeds": [0]}
    )
    assert (config.steps, config.lr, config.weight_lr, config.init_jitter) == (40, 0.3, 5e-5, 2.0)
    assert config.init is InitKind.FLOW
    assert config.num_offsets == 3


def test_more_offsets_lower_the_occluded_data_loss():
    defaults = load_config()
    section = defaults["sweep"]
    config = FitConfig.from_sweep_dict(defaults["fit"], defaults["fidelity"], section)
    spec = SceneSpec.from_dict(defaults["scene"])
    assert spec.occlusion is not None
    assert len(section["seeds"]) >= 5

    result = diversity_sweep(spec, [1, 5], config, section["seeds"])
    single, multi = result.table['mean_final_data_loss'].tolist()
    assert multi <= 0.9 * single
    assert result.table['mean_final_diversity'].iloc[1] > result.table['mean_final_diversity'].iloc[0]
