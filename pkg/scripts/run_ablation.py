#!/usr/bin/env python3
"""End-to-end ablation experiment: synthesize data, train the three
variants with identical seeds, and print the comparison table.

    python3 scripts/run_ablation.py --out runs/ablation_demo
"""
import argparse
import sys
from pathlib import Path

from camalign.cli import main as cli_main

DESK_CONFIG = [
    "model.layers=2", "model.heads=4", "model.dim=64", "model.feat_dim=32",
    "model.classes=6", "model.max_len=24", "decode.max_len=24",
    "train.epochs=30", "train.batch=8", "train.seed=5",
    "train.delta=0.5", "vtac.k=0.3",
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation_demo")
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--seed", type=int, default=21)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    code = cli_main(["synth", "--out", str(data_dir), "--samples", str(args.samples),
                     "--seed", str(args.seed), "--glyphs", "6", "--max-glyphs", "2"])
    if code != 0:
        return code
    return cli_main(["ablate", "--data", str(data_dir), "--out", str(out),
                     "--set", *DESK_CONFIG])


if __name__ == "__main__":
    sys.exit(main())
