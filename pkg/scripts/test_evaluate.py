"""
Tests for the equivalence and gradient check suites.
"""

import sys
from pathlib import Path

import pytest

# Add parent directory to path
sys.path.append(str(Path(__file__).parent.parent))

from scripts.evaluate import EquivalenceSuite, GradientSuite, run_suite
from scripts.utils import load_config


def test_configurations_skip_indivisible_groups():
    configs = EquivalenceSuite.configurations([2, 3], [1, 2], [3], [6])
    assert [(c["channels"], c["groups"]) for c in configs] == [(2, 1), (2, 2), (3, 1)]


def test_equivalence_suite_passes():
    suite = EquivalenceSuite()
    rows = suite.run(cases=2, channels=[4], groups=[1, 2], kernels=[1, 3], sizes=[6], seed=3)
    assert len(rows) == 2 * 4
    summary = suite.summary()
    assert summary["pass"]
    assert summary["checks"] == 8 and summary["failures"] == 0
    assert summary["max_abs_diff"] <= 1e-12
    assert all(row["conv_reduction_diff"] <= 1e-12 for row in rows)


def test_equivalence_suite_is_seeded():
    first = EquivalenceSuite().run(cases=1, channels=[2], groups=[1], kernels=[3], sizes=[6], seed=5)
    second = EquivalenceSuite().run(cases=1, channels=[2], groups=[1], kernels=[3], sizes=[6], seed=5)
    assert first == second


def test_gradient_suite_passes():
    suite = GradientSuite()
    rows = suite.run(cases=4)
    targets = {row["target"] for row in rows}
    assert {
        "warp_backward.feature",
        "warp_backward.disp",
        "conv_backward.x",
        "conv_backward.kernel",
        "dcn_backward.x",
        "dcn_backward.offsets",
        "dcn_backward.pointwise",
        "dcn_backward.modulated.masks",
        "offset_fidelity_grad",
        "charbonnier_warp.disp",
    } <= targets
    summary = suite.summary()
    assert summary["pass"], [row for row in rows if not row["pass"]]
    assert summary["max_rel_err"] <= 1e-5


def test_empty_suite_does_not_pass():
    suite = EquivalenceSuite()
    assert suite.summary() == {
        "suite": "equiv-check", "checks": 0, "failures": 0, "max_abs_diff": 0.0, "pass": False
    }


def test_run_suite():
    suite = run_suite("equiv-check", {"cases": 1, "channels": [2], "groups": [2], "kernels": [1], "sizes": [6]})
    assert isinstance(suite, EquivalenceSuite)
    assert suite.passed()
    with pytest.raises(ValueError):
        run_suite("lint", {})


def test_equivalence_suite_with_shipped_defaults():
    options = load_config()["equivalence"]
    assert options["cases"] >= 100
    suite = EquivalenceSuite()
    rows = suite.run(
        cases=options["cases"],
        channels=options["channels"],
        groups=options["groups"],
        kernels=options["kernels"],
        sizes=options["sizes"],
        offset_range=options["offset_range"],
        tol=options["tol"],
        seed=options["seed"]
    )
    grid = {(row["channels"], row["groups"], row["kernel"], row["size"]) for row in rows}
    assert grid == {
        (c, g, n, s)
        for c in (2, 4, 8) for g in (1, 2, 4) for n in (1, 3) for s in (6, 12)
        if c % g == 0
    }
    assert len(rows) == len(grid) * options["cases"]
    summary = suite.summary()
    assert summary["pass"]
    assert summary["max_abs_diff"] <= 1e-12
    assert max(row["conv_reduction_diff"] for row in rows) <= 1e-12


def test_gradient_suite_with_shipped_defaults():
    options = load_config()["gradient_check"]
    assert options["cases"] >= 20
    suite = GradientSuite()
    rows = suite.run(cases=options["cases"], h=options["h"], tol=options["tol"], seed=options["seed"])
    per_target = {}
    for row in rows:
        per_target[row["target"]] = per_target.get(row["target"], 0) + 1
    assert all(count >= 20 for count in per_target.values())
    summary = suite.summary()
    assert summary["pass"], [row for row in rows if not row["pass"]]
    assert options["tol"] <= 1e-6
