"""
Main runner for the deformable alignment lab.

This script provides one command-line interface to every check and
experiment in the lab.
Usage:
    python scripts/run_experiment.py equiv-check --cases 100 --seed 7
    python scripts/run_experiment.py grad-check --report results/grad.csv
    python scripts/run_experiment.py warp --feature f.tnsr --flow f.flo --out aligned.tnsr
    python scripts/run_experiment.py analyze --offsets o.tnsr --flow f.flo --out-dir results/stats
    python scripts/run_experiment.py fit --init adversarial --lambda 1 --report results/fit.csv
    python scripts/run_experiment.py sweep --ns 1,5 --seeds 0,1,2,3,4 --report results/sweep.csv

Exit codes: 0 success, 1 failed check or diverged fit, 2 usage, input or
file-format error.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Any, Optional

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))
from scripts.utils import load_config, parse_int_list, parse_occlusion, set_log_level, logger
from scripts.tensor_io import heatmap_pgm, read_flo, read_tensor, write_csv_report, write_tensor
from scripts.evaluate import EquivalenceSuite, GradientSuite, print_evaluation_report
from experiments.dcn_decomposition import (
    DCNLabError,
    DivergenceError,
    ShapeError,
    as_feature_map,
    image_align,
)
from experiments.offset_diversity import (
    FitConfig,
    SceneSpec,
    alignment_contrast,
    build_stats_report,
    diversity_sweep,
    fit_scene,
    flow_distance_map,
    group_sweep,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def parse_float_list(text: str) -> List[float]:
    """Parse a comma separated list of numbers ("0.5,1,2")."""
    return [float(part) for part in text.split(",") if part.strip()]


def _pick(value: Any, section: Dict[str, Any], key: str) -> Any:
    """CLI flag if given, otherwise the config value."""
    return value if value is not None else section[key]


class CommandRunner:
    """Base class for CLI subcommands."""

    name = "command"
    help = ""

    def __init__(self, config: Dict[str, Any]):
        """
        Initialize runner.

        Args:
            config: Lab configuration (load_config output)
        """
        self.config = config

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser):
        pass

    def run(self, args: argparse.Namespace) -> int:
        raise NotImplementedError


class EquivalenceCheckRunner(CommandRunner):
    """Random-suite check of deform_conv against the decomposed path."""

    name = "equiv-check"
    help = "Check deformable convolution against its decomposition on random instances"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--cases", type=int, help="Instances per configuration")
        parser.add_argument("--channels", type=parse_int_list, help="Channel counts, e.g. 2,4,8")
        parser.add_argument("--groups", type=parse_int_list, help="Deformable group counts, e.g. 1,2,4")
        parser.add_argument("--kernel", type=parse_int_list, help="Kernel sizes, e.g. 1,3")
        parser.add_argument("--sizes", type=parse_int_list, help="Spatial sizes H=W, e.g. 6,12")
        parser.add_argument("--seed", type=int, help="Base random seed")
        parser.add_argument("--tol", type=float, help="Pass threshold on max |difference|")
        parser.add_argument("--report", type=str, help="CSV report path")

    def run(self, args):
        section = self.config["equivalence"]
        suite = EquivalenceSuite()
        suite.run(
            cases=_pick(args.cases, section, "cases"),
            channels=_pick(args.channels, section, "channels"),
            groups=_pick(args.groups, section, "groups"),
            kernels=_pick(args.kernel, section, "kernels"),
            sizes=_pick(args.sizes, section, "sizes"),
            offset_range=float(section["offset_range"]),
            tol=_pick(args.tol, section, "tol"),
            seed=_pick(args.seed, section, "seed")
        )
        return _finish_suite(suite, args.report)


class GradientCheckRunner(CommandRunner):
    """Finite-difference check of every backward pass."""

    name = "grad-check"
    help = "Check analytic gradients against central finite differences"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--cases", type=int, help="Random instances")
        parser.add_argument("--h", type=float, help="Finite-difference step")
        parser.add_argument("--tol", type=float, help="Pass threshold on the max relative error")
        parser.add_argument("--seed", type=int, help="Base random seed")
        parser.add_argument("--report", type=str, help="CSV report path")

    def run(self, args):
        section = self.config["gradient_check"]
        suite = GradientSuite()
        suite.run(
            cases=_pick(args.cases, section, "cases"),
            h=_pick(args.h, section, "h"),
            tol=_pick(args.tol, section, "tol"),
            seed=_pick(args.seed, section, "seed")
        )
        return _finish_suite(suite, args.report)


def _finish_suite(suite, report: Optional[str]) -> int:
    summary = suite.summary()
    print_evaluation_report(summary)
    if report:
        write_csv_report(suite.rows, report)
    return EXIT_OK if summary["pass"] else EXIT_FAILED


class WarpRunner(CommandRunner):
    """Image-level alignment of a feature file by a flow file."""

    name = "warp"
    help = "Warp a TNSR feature (C, H, W) by a .flo flow"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--feature", type=str, required=True, help="Input TNSR feature (C, H, W)")
        parser.add_argument("--flow", type=str, required=True, help="Input .flo flow")
        parser.add_argument("--out", type=str, required=True, help="Output TNSR path")

    def run(self, args):
        feature = as_feature_map(read_tensor(args.feature))
        flow = read_flo(args.flow)
        aligned = image_align(feature, flow)
        write_tensor(aligned, args.out)
        logger.info(f"Warped {args.feature} by {args.flow} into {args.out}")
        return EXIT_OK


class AnalyzeRunner(CommandRunner):
    """Offset statistics as CSV plus PGM heatmaps."""

    name = "analyze"
    help = "Compute offset/flow statistics and diversity heatmaps"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--offsets", type=str, required=True, help="TNSR offsets (G, N, 2, H, W)")
        parser.add_argument("--flow", type=str, required=True, help=".flo flow")
        parser.add_argument("--masks", type=str, help="TNSR masks (G, N, H, W)")
        parser.add_argument("--out-dir", type=str, required=True, help="Output directory")
        parser.add_argument("--thresholds", type=parse_float_list, help="CDF thresholds in pixels")

    def run(self, args):
        section = self.config["analysis"]
        offsets = read_tensor(args.offsets)
        if offsets.ndim != 5:
            raise ShapeError(f"{args.offsets}: offsets must have dims (G, N, 2, H, W), got {offsets.shape}")
        flow = read_flo(args.flow)
        masks = read_tensor(args.masks) if args.masks else None

        report = build_stats_report(
            offsets,
            flow,
            masks=masks,
            thresholds=_pick(args.thresholds, section, "thresholds"),
            mask_threshold=float(section["mask_threshold"])
        )
        out_dir = Path(args.out_dir)
        write_csv_report(report.to_frame(), out_dir / "stats.csv")
        write_csv_report(report.provenance_frame(), out_dir / "provenance.csv")
        heatmap_pgm(report.diversity_map, out_dir / "diversity.pgm")
        distance = flow_distance_map(offsets, flow)
        for g in range(distance.shape[0]):
            for n in range(distance.shape[1]):
                heatmap_pgm(distance[g, n], out_dir / f"flow_distance_g{g}_n{n}.pgm")
        logger.info(f"Statistics written to {out_dir}")
        return EXIT_OK


def add_scene_arguments(parser: argparse.ArgumentParser):
    """Synthetic scene flags shared by fit and sweep."""
    parser.add_argument("--height", type=int, help="Scene height")
    parser.add_argument("--width", type=int, help="Scene width")
    parser.add_argument("--channels", type=int, help="Feature channels")
    parser.add_argument("--flow", type=str, choices=["constant", "affine", "piecewise"], help="Flow kind")
    parser.add_argument("--flow-vector", type=parse_float_list, help="Flow vector dx,dy")
    parser.add_argument("--occlusion", type=parse_occlusion, help="top,left,height,width or none")
    parser.add_argument("--seed", type=int, help="Scene seed")


def scene_from_args(args: argparse.Namespace, config: Dict[str, Any]) -> SceneSpec:
    section = dict(config["scene"])
    overrides = {
        "height": args.height,
        "width": args.width,
        "channels": args.channels,
        "flow_kind": args.flow,
        "flow_vector": args.flow_vector,
        "seed": args.seed
    }
    section.update({key: value for key, value in overrides.items() if value is not None})
    if args.occlusion is not None:
        section["occlusion"] = args.occlusion
    return SceneSpec.from_dict(section)


class FitRunner(CommandRunner):
    """Offset fitting on a synthetic scene."""

    name = "fit"
    help = "Fit offsets on a synthetic scene with the offset-fidelity loss"

    @classmethod
    def add_arguments(cls, parser):
        add_scene_arguments(parser)
        parser.add_argument("--n", type=int, help="Offsets per group N")
        parser.add_argument("--g", type=int, help="Deformable groups G")
        parser.add_argument("--lambda", dest="lam", type=float, help="Fidelity weight")
        parser.add_argument("--t", type=float, help="Fidelity threshold in pixels")
        parser.add_argument("--steps", type=int, help="Gradient descent steps")
        parser.add_argument("--lr", type=float, help="Offset learning rate")
        parser.add_argument("--init", type=str, choices=["zeros", "flow", "adversarial"], help="Offset init")
        parser.add_argument("--distance", type=float, help="Adversarial init distance in pixels")
        parser.add_argument("--jitter", type=float, help="Uniform init jitter in pixels")
        parser.add_argument("--report", type=str, help="CSV report path (per-step traces)")

    def run(self, args):
        spec = scene_from_args(args, self.config)
        fit = dict(self.config["fit"])
        fidelity = dict(self.config["fidelity"])
        overrides = {
            "num_offsets": args.n,
            "groups": args.g,
            "steps": args.steps,
            "lr": args.lr,
            "init": args.init,
            "adversarial_distance": args.distance,
            "init_jitter": args.jitter
        }
        fit.update({key: value for key, value in overrides.items() if value is not None})
        if args.lam is not None:
            fidelity["lambda"] = args.lam
        if args.t is not None:
            fidelity["t"] = args.t

        report = fit_scene(spec, FitConfig.from_dict(fit, fidelity))
        contrast = alignment_contrast(spec, report)
        if args.report:
            write_csv_report(report.to_frame(), args.report)

        print("\n" + "=" * 60)
        print(f"Final data loss: {report.final_data_loss:.6g}")
        print(f"Final max deviation: {report.max_deviation[-1]:.4g} px "
              f"(interior {report.interior_max_deviation[-1]:.4g} px)")
        print(f"Final mean diversity: {report.final_diversity:.4g}")
        print(f"Converged: {report.converged}")
        print(f"Image-level warp PSNR: {contrast['psnr_all']:.3f} dB "
              f"(interior {contrast['psnr_interior']:.3f} dB, border fraction {contrast['border_fraction']:.3f})")
        print(f"Feature-level alignment PSNR: {contrast['feature_psnr_all']:.3f} dB "
              f"(interior {contrast['feature_psnr_interior']:.3f} dB)")
        print("=" * 60)
        return EXIT_OK


class SweepRunner(CommandRunner):
    """Diversity sweep over N (or over G with --gs)."""

    name = "sweep"
    help = "Compare final data loss and offset diversity across N or G"

    @classmethod
    def add_arguments(cls, parser):
        add_scene_arguments(parser)
        parser.add_argument("--ns", type=parse_int_list, help="Offset counts, e.g. 1,5")
        parser.add_argument("--gs", type=parse_int_list, help="Group counts; runs the group sweep instead")
        parser.add_argument("--seeds", type=parse_int_list, help="Seeds, e.g. 0,1,2,3,4")
        parser.add_argument("--steps", type=int, help="Gradient descent steps per fit")
        parser.add_argument("--lr", type=float, help="Offset learning rate")
        parser.add_argument("--weight-lr", type=float, help="Pointwise weight learning rate")
        parser.add_argument("--jitter", type=float, help="Uniform init jitter in pixels")
        parser.add_argument("--workers", type=int, help="Worker threads")
        parser.add_argument("--report", type=str, help="CSV report path")

    def run(self, args):
        spec = scene_from_args(args, self.config)
        section = dict(self.config["sweep"])
        overrides = {
            "steps": args.steps,
            "lr": args.lr,
            "weight_lr": args.weight_lr,
            "init_jitter": args.jitter
        }
        section.update({key: value for key, value in overrides.items() if value is not None})
        base = FitConfig.from_sweep_dict(self.config["fit"], self.config["fidelity"], section)
        seeds = _pick(args.seeds, section, "seeds")
        workers = _pick(args.workers, section, "workers")

        if args.gs:
            result = group_sweep(spec, args.gs, base, seeds, workers=workers)
        else:
            result = diversity_sweep(spec, _pick(args.ns, section, "ns"), replace(base, groups=1), seeds, workers=workers)

        if args.report:
            write_csv_report(result.table, args.report)
        print("\n" + result.table.to_string(index=False))
        print(f"\npearson(diversity, -loss) = {result.correlation:.4f}\n")
        return EXIT_OK


COMMANDS = {
    runner.name: runner
    for runner in (EquivalenceCheckRunner, GradientCheckRunner, WarpRunner, AnalyzeRunner, FitRunner, SweepRunner)
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_experiment.py",
        description="Deformable alignment lab: decomposition checks, offset analysis and fitting experiments"
    )
    parser.add_argument("--config", type=str, help="Path to config file (default: config.json)")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, runner in COMMANDS.items():
        runner.add_arguments(subparsers.add_parser(name, help=runner.help, description=runner.help))
    return parser


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Parse ``argv`` and run the selected subcommand.

    Returns:
        Exit code: 0 success, 1 failed check or divergence, 2 usage/input/format error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    config = load_config(args.config)
    set_log_level("DEBUG" if args.verbose else config["logging"]["level"])

    runner = COMMANDS[args.command](config)
    try:
        return runner.run(args)
    except DivergenceError as e:
        logger.error(f"{args.command}: optimization diverged at step {e.step}: {e}")
        return EXIT_FAILED
    except (DCNLabError, OSError, ValueError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE


def main() -> int:
    """Main entry point."""
    return cli_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
