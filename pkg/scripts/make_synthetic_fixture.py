"""
Writes a synthetic SR/HR fixture (PNG pairs + manifest.csv) for smoke runs of the CLI.

    python scripts/make_synthetic_fixture.py OUT_DIR [--pairs 8] [--size 32] [--seed 0] [--random-mos]
"""

import argparse
import sys
from pathlib import Path

# Add project root to sys.path
sys.path.append(str(Path(__file__).resolve().parent.parent))

import config  # noqa: E402
from src.data.synthetic import write_synthetic_fixture  # noqa: E402
from src.models.pban_config import PBANConfig  # noqa: E402


def main(argv=None) -> Path:
    parser = argparse.ArgumentParser(description="Synthetic SR/HR fixture generator")
    parser.add_argument("out_dir")
    parser.add_argument("--pairs", type=int, default=8)
    parser.add_argument("--size", type=int, default=config.PATCH_SIZE)
    parser.add_argument("--seed", type=int, default=config.SEED)
    parser.add_argument("--random-mos", action="store_true", help="Labels independent of content")
    parser.add_argument(
        "--micro-config", action="store_true", help="Also write micro.json (micro architecture)"
    )
    args = parser.parse_args(argv)

    manifest = write_synthetic_fixture(
        args.out_dir,
        n=args.pairs,
        size=args.size,
        seed=args.seed,
        mos="random" if args.random_mos else "distortion",
    )
    if args.micro_config:
        (Path(args.out_dir) / "micro.json").write_text(PBANConfig.micro().to_json() + "\n")
    print(manifest)
    return manifest


if __name__ == "__main__":
    main()
