"""
Check suites for the alignment lab.

This module provides the randomized suites behind the CLI checks:
- EquivalenceSuite: deform_conv against the decomposed path (and zero-offset
  deform_conv against conv2d) over a grid of channel, group, kernel and
  size configurations
- GradientSuite: every analytic backward pass against central finite
  differences

Each suite collects one row per check and a summary dict; rows are written
as CSV reports by the CLI.
"""

import sys
import itertools
from pathlib import Path
from typing import Callable, Dict, List, Any, Sequence

import numpy as np

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))
from scripts.utils import logger
from experiments.dcn_decomposition import (
    FidelityConfig,
    conv2d,
    conv_backward,
    dcn_backward,
    decomposed_deform_conv,
    deform_conv,
    equivalence_report,
    finite_diff_check,
    offset_fidelity,
    offset_fidelity_grad,
    warp,
    warp_backward,
)
from experiments.dcn_decomposition.gradients import FD_STEP, FD_TOL
from experiments.dcn_decomposition.losses import CHARBONNIER_EPS

# The Charbonnier-of-warp check is nonlinear and runs at a looser tolerance
CHARBONNIER_CHECK_TOL = 1e-5


class CheckSuite:
    """Base class: collects result rows and reports a pass/fail summary."""

    metric = "max_error"

    def __init__(self, name: str):
        """
        Initialize suite.

        Args:
            name: Name used in logs and reports
        """
        self.name = name
        self.rows: List[Dict[str, Any]] = []

    def passed(self) -> bool:
        return bool(self.rows) and all(row["pass"] for row in self.rows)

    def summary(self) -> Dict[str, Any]:
        """Count of checks, worst metric value and overall verdict."""
        worst = max((row[self.metric] for row in self.rows), default=0.0)
        return {
            "suite": self.name,
            "checks": len(self.rows),
            "failures": sum(1 for row in self.rows if not row["pass"]),
            self.metric: float(worst),
            "pass": self.passed()
        }


class EquivalenceSuite(CheckSuite):
    """deform_conv vs. decomposed_deform_conv on random instances."""

    metric = "max_abs_diff"

    def __init__(self):
        super().__init__("equiv-check")

    @staticmethod
    def configurations(
        channels: Sequence[int],
        groups: Sequence[int],
        kernels: Sequence[int],
        sizes: Sequence[int]
    ) -> List[Dict[str, int]]:
        """Every (C, G, n, H=W) combination with C divisible by G."""
        return [
            {"channels": c, "groups": g, "kernel": n, "size": s}
            for c, g, n, s in itertools.product(channels, groups, kernels, sizes)
            if c % g == 0
        ]

    def run(
        self,
        cases: int = 100,
        channels: Sequence[int] = (2, 4, 8),
        groups: Sequence[int] = (1, 2, 4),
        kernels: Sequence[int] = (1, 3),
        sizes: Sequence[int] = (6, 12),
        offset_range: float = 3.0,
        tol: float = 1e-10,
        seed: int = 0
    ) -> List[Dict[str, Any]]:
        """
        Run ``cases`` random instances per configuration.

        Args:
            cases: Instances per configuration
            channels, groups, kernels, sizes: Configuration grid
            offset_range: Offsets are uniform in [-offset_range, offset_range]
            tol: Pass threshold on max |direct - decomposed|
            seed: Base seed; instance i of configuration k uses default_rng([seed, k, i])

        Returns:
            One row per instance
        """
        configs = self.configurations(channels, groups, kernels, sizes)
        logger.info(f"Equivalence suite: {len(configs)} configurations x {cases} cases")
        self.rows = []
        for k, cfg in enumerate(configs):
            c, g, n, s = cfg["channels"], cfg["groups"], cfg["kernel"], cfg["size"]
            for i in range(cases):
                rng = np.random.default_rng([seed, k, i])
                x = rng.normal(size=(c, s, s))
                kernel = rng.normal(size=(c, c, n, n))
                offsets = rng.uniform(-offset_range, offset_range, size=(g, n * n, 2, s, s))
                report = equivalence_report(x, offsets, kernel, g, tol=tol)
                zero = np.zeros_like(offsets)
                conv_diff = float(np.max(np.abs(deform_conv(x, zero, kernel, g) - conv2d(x, kernel))))
                self.rows.append({
                    "config": k,
                    "case": i,
                    "channels": c,
                    "groups": g,
                    "kernel": n,
                    "size": s,
                    "max_abs_diff": report.max_abs_diff,
                    "conv_reduction_diff": conv_diff,
                    "pass": report.passed and conv_diff <= tol
                })
        summary = self.summary()
        logger.info(f"Equivalence suite: max_abs_diff={summary['max_abs_diff']:.3e}, pass={summary['pass']}")
        return self.rows


def _fractional_disp(rng: np.random.Generator, shape) -> np.ndarray:
    """Displacements whose fractional part lies in [0.1, 0.9] (away from the bilinear kinks)."""
    return rng.integers(-2, 3, size=shape) + rng.uniform(0.1, 0.9, size=shape)


def _fidelity_offsets(rng: np.random.Generator, flow: np.ndarray, shape, t: float) -> np.ndarray:
    """Offsets whose per-component deviation from flow stays >= 0.05 away from 0 and +-t."""
    inside = rng.uniform(0.05, t - 0.05, size=shape)
    outside = rng.uniform(t + 0.05, t + 3.0, size=shape)
    magnitude = np.where(rng.random(size=shape) < 0.5, inside, outside)
    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
    return flow[None, None] + sign * magnitude


class GradientSuite(CheckSuite):
    """Analytic gradients vs. central finite differences."""

    metric = "max_rel_err"

    def __init__(self):
        super().__init__("grad-check")

    def _check(self, case: int, target: str, forward: Callable, params: np.ndarray,
               analytic: np.ndarray, h: float, tol: float):
        result = finite_diff_check(forward, params, analytic, h=h, tol=tol)
        self.rows.append({
            "case": case,
            "target": target,
            "size": int(np.size(params)),
            "max_rel_err": result.max_rel_err,
            "tol": tol,
            "pass": result.passed
        })
        if not result.passed:
            logger.warning(f"{target} (case {case}) failed: rel err {result.max_rel_err:.3e} at {result.worst_index}")

    def run(
        self,
        cases: int = 20,
        h: float = FD_STEP,
        tol: float = FD_TOL,
        seed: int = 0
    ) -> List[Dict[str, Any]]:
        """
        Check every backward pass on ``cases`` small random instances.

        Linear objectives <v, y(theta) - y(theta_0)> are used so that outputs
        untouched by a perturbation cancel exactly.

        Args:
            cases: Random instances
            h: Finite-difference step
            tol: Pass threshold on the maximum relative error
            seed: Base seed; case i uses default_rng([seed, i])

        Returns:
            One row per (case, gradient target)
        """
        logger.info(f"Gradient suite: {cases} cases, h={h:g}, tol={tol:g}")
        self.rows = []
        for i in range(cases):
            rng = np.random.default_rng([seed, i])
            channels = 2 if i % 2 == 0 else 4
            groups = 1 if i % 4 < 2 else 2
            size, num_offsets, c_out = 4, 2, 2
            x = rng.normal(size=(channels, size, size))
            self._check_warp(i, rng, x, h, tol)
            self._check_conv(i, rng, x, c_out, h, tol)
            self._check_dcn(i, rng, x, groups, num_offsets, c_out, h, tol)
            self._check_fidelity(i, rng, groups, num_offsets, size, h, tol)
            self._check_charbonnier(i, rng, x, h)
        summary = self.summary()
        logger.info(f"Gradient suite: max_rel_err={summary['max_rel_err']:.3e}, pass={summary['pass']}")
        return self.rows

    def _check_warp(self, i, rng, x, h, tol):
        disp = _fractional_disp(rng, (2,) + x.shape[1:])
        v = rng.normal(size=x.shape)
        y0 = warp(x, disp)
        grad_feature, grad_disp = warp_backward(v, x, disp)
        self._check(i, "warp_backward.feature", lambda p: np.sum(v * (warp(p, disp) - y0)), x, grad_feature, h, tol)
        self._check(i, "warp_backward.disp", lambda p: np.sum(v * (warp(x, p) - y0)), disp, grad_disp, h, tol)

    def _check_conv(self, i, rng, x, c_out, h, tol):
        kernel = rng.normal(size=(c_out, x.shape[0], 3, 3))
        v = rng.normal(size=(c_out,) + x.shape[1:])
        y0 = conv2d(x, kernel)
        grad_x, grad_kernel = conv_backward(v, x, kernel)
        self._check(i, "conv_backward.x", lambda p: np.sum(v * (conv2d(p, kernel) - y0)), x, grad_x, h, tol)
        self._check(i, "conv_backward.kernel", lambda p: np.sum(v * (conv2d(x, p) - y0)), kernel, grad_kernel, h, tol)

    def _check_dcn(self, i, rng, x, groups, num_offsets, c_out, h, tol):
        channels, size = x.shape[0], x.shape[1]
        offsets = _fractional_disp(rng, (groups, num_offsets, 2, size, size))
        pw = rng.normal(size=(c_out, num_offsets * channels, 1, 1))
        masks = rng.uniform(0.1, 0.9, size=(groups, num_offsets, size, size))
        v = rng.normal(size=(c_out, size, size))

        for modulated in (False, True):
            m = masks if modulated else None
            tag = "dcn_backward.modulated" if modulated else "dcn_backward"
            y0 = decomposed_deform_conv(x, offsets, None, pw, groups, m)
            bundle = dcn_backward(v, x, offsets, None, pw, groups, m)

            def objective(xx=x, oo=offsets, ww=pw, mm=m):
                return np.sum(v * (decomposed_deform_conv(xx, oo, None, ww, groups, mm) - y0))

            self._check(i, f"{tag}.x", lambda p: objective(xx=p), x, bundle.grad_input, h, tol)
            self._check(i, f"{tag}.offsets", lambda p: objective(oo=p), offsets, bundle.grad_offsets, h, tol)
            self._check(i, f"{tag}.pointwise", lambda p: objective(ww=p), pw, bundle.grad_kernel, h, tol)
            if modulated:
                self._check(i, f"{tag}.masks", lambda p: objective(mm=p), masks, bundle.grad_masks, h, tol)

    def _check_fidelity(self, i, rng, groups, num_offsets, size, h, tol):
        cfg = FidelityConfig(lam=0.5, t=1.0)
        flow = rng.uniform(-2.0, 2.0, size=(2, size, size))
        offsets = _fidelity_offsets(rng, flow, (groups, num_offsets, 2, size, size), cfg.t)
        analytic = offset_fidelity_grad(offsets, flow, cfg)
        self._check(i, "offset_fidelity_grad", lambda p: offset_fidelity(p, flow, cfg), offsets, analytic, h, tol)

    def _check_charbonnier(self, i, rng, x, h):
        disp = _fractional_disp(rng, (2,) + x.shape[1:])
        pred = warp(x, disp)
        # Residuals of at least 0.5 keep the check off the eps-scale curvature of the penalty
        sign = np.where(rng.random(size=x.shape) < 0.5, -1.0, 1.0)
        target = pred + sign * rng.uniform(0.5, 1.5, size=x.shape)
        terms0 = np.sqrt((pred - target) ** 2 + CHARBONNIER_EPS ** 2)
        grad_pred = (pred - target) / np.sqrt((pred - target) ** 2 + CHARBONNIER_EPS ** 2)
        _, analytic = warp_backward(grad_pred, x, disp)

        def forward(p):
            return np.sum(np.sqrt((warp(x, p) - target) ** 2 + CHARBONNIER_EPS ** 2) - terms0)

        self._check(i, "charbonnier_warp.disp", forward, disp, analytic, h, CHARBONNIER_CHECK_TOL)


def print_evaluation_report(summary: Dict[str, Any]):
    """Print formatted suite summary."""
    print("\n" + "=" * 70)
    print(f"{str(summary.get('suite', 'check')).upper()} REPORT")
    print("=" * 70)

    for key, value in summary.items():
        if isinstance(value, float):
            print(f"{key}: {value:.3e}")
        else:
            print(f"{key}: {value}")

    print("=" * 70 + "\n")


def run_suite(name: str, options: Dict[str, Any]) -> CheckSuite:
    """Build and run the suite registered under ``name`` with keyword options."""
    suites = {"equiv-check": EquivalenceSuite, "grad-check": GradientSuite}
    if name not in suites:
        raise ValueError(f"Unknown suite: {name}")
    suite = suites[name]()
    suite.run(**options)
    return suite


if __name__ == "__main__":
    for suite_name in ("equiv-check", "grad-check"):
        print_evaluation_report(run_suite(suite_name, {}).summary())
