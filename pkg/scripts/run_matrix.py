#!/usr/bin/env python3
"""Run the full variant matrix from one config and merge the results.

Each variant gets its own subdirectory (train + eval), then everything is
merged into <out>/comparison. Examples:

    python3 scripts/run_matrix.py -c configs/desk32.yaml -o runs/desk32
    python3 scripts/run_matrix.py -c configs/desk32.yaml -o runs/quick \
        --set model.channel_scale=0.25 --variants Original PGD-01 --seed 1
"""

from __future__ import annotations

import argparse
import os
import sys

from counterfake.cli import main as cli_main
from counterfake.experiments import VARIANTS

DEFAULT_MATRIX = ["Original", "PGD-01", "PGD-005", "Ensemble", "Random",
                  "Lite", "Lite-Ens", "Lite-Random"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", "-c", required=True)
    parser.add_argument("--out", "-o", required=True)
    parser.add_argument("--variants", nargs="+", default=DEFAULT_MATRIX,
                        choices=sorted(VARIANTS), metavar="VARIANT")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE")
    args = parser.parse_args()

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")

    run_dirs = []
    for variant in args.variants:
        run_dir = os.path.join(args.out, variant.lower().replace("-", "_"))
        run_dirs.append(run_dir)
        base = ["--config", args.config, "--out", run_dir,
                "--set", f"variant={variant}"]
        for item in overrides:
            base += ["--set", item]
        print(f"=== train {variant} -> {run_dir}")
        rc = cli_main(["train", *base])
        if rc != 0:
            return rc
        print(f"=== eval {variant}")
        rc = cli_main(["eval", *base,
                       "--checkpoint", os.path.join(run_dir, "checkpoints", "final.ckpt")])
        if rc != 0:
            return rc

    print("=== merge")
    return cli_main(["report", *run_dirs, "--out", os.path.join(args.out, "comparison")])


if __name__ == "__main__":
    sys.exit(main())
