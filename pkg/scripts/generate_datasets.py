"""
Synthetic scene generator for the alignment lab

This script writes deterministic reference/neighbour feature pairs with
their ground-truth flow, so the warp and analyze commands have inputs:
- scene_XXX/f_ref.tnsr   reference feature (C, H, W), float64
- scene_XXX/f_nbr.tnsr   neighbouring feature (C, H, W), float64
- scene_XXX/flow.flo     ground-truth flow (Middlebury .flo)
- scene_XXX/offsets.tnsr flow-initialized offsets (1, 1, 2, H, W) for analyze

Usage:
    python generate_datasets.py --scenes 4
    python generate_datasets.py --scenes 8 --seed 100 --flow affine
    python generate_datasets.py --out datasets/scenes --occlusion none
"""

import sys
import argparse
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Any, Optional

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))
from scripts.utils import get_dataset_path, load_config, parse_occlusion, save_results, logger
from scripts.tensor_io import write_flo, write_tensor
from experiments.dcn_decomposition import DCNLabError
from experiments.offset_diversity import SceneSpec, synth_pair

# Base directories
BASE_DIR = get_dataset_path("scenes")


class SceneGenerator:
    """Write synthetic scenes derived from one base SceneSpec."""

    def __init__(self, base: SceneSpec, out_dir: Path = BASE_DIR):
        """
        Initialize generator.

        Args:
            base: Scene parameters; each scene replaces only the seed
            out_dir: Root directory of the scene folders
        """
        self.base = base
        self.out_dir = Path(out_dir)

    def generate_scene(self, index: int, seed: int) -> Dict[str, Any]:
        """Write one scene folder and return its manifest entry."""
        spec = replace(self.base, seed=seed)
        f_ref, f_nbr, flow = synth_pair(spec)
        scene_dir = self.out_dir / f"scene_{index:03d}"

        write_tensor(f_ref, scene_dir / "f_ref.tnsr")
        write_tensor(f_nbr, scene_dir / "f_nbr.tnsr")
        write_flo(flow, scene_dir / "flow.flo")
        write_tensor(flow[None, None], scene_dir / "offsets.tnsr")
        logger.debug(f"Wrote {scene_dir}")

        occlusion = spec.occlusion
        return {
            'scene': scene_dir.name,
            'seed': seed,
            'height': spec.height,
            'width': spec.width,
            'channels': spec.channels,
            'flow_kind': spec.flow_kind.value,
            'flow_vector': list(spec.flow_vector),
            'occlusion': [occlusion.top, occlusion.left, occlusion.height, occlusion.width] if occlusion else None
        }

    def generate(self, count: int, seed: int) -> List[Dict[str, Any]]:
        """Write ``count`` scenes with seeds seed, seed+1, ... plus manifest.json."""
        manifest = [self.generate_scene(i, seed + i) for i in range(count)]
        save_results(manifest, self.out_dir / "manifest.json", format="json")
        return manifest


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = argparse.ArgumentParser(description="Generate synthetic alignment scenes")
    parser.add_argument("--scenes", type=int, default=4, help="Number of scenes")
    parser.add_argument("--seed", type=int, default=0, help="Seed of the first scene")
    parser.add_argument("--out", type=str, default=str(BASE_DIR), help="Output directory")
    parser.add_argument("--flow", type=str, choices=["constant", "affine", "piecewise"], help="Flow kind")
    parser.add_argument("--occlusion", type=parse_occlusion, help="top,left,height,width or none")
    parser.add_argument("--config", type=str, help="Path to config file")
    args = parser.parse_args(argv)

    if args.scenes < 1:
        parser.error("--scenes must be >= 1")

    section = dict(load_config(args.config)["scene"])
    if args.flow:
        section["flow_kind"] = args.flow
    if args.occlusion is not None:
        section["occlusion"] = args.occlusion

    try:
        generator = SceneGenerator(SceneSpec.from_dict(section), Path(args.out))
        manifest = generator.generate(args.scenes, args.seed)
    except (DCNLabError, ValueError, OSError) as e:
        logger.error(f"Scene generation failed: {e}")
        return 2

    print(f"\n✅ Generated {len(manifest)} scenes in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
