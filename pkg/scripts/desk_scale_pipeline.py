#!/usr/bin/env python3
"""Generate data, train a regression model, and print its error table.

A thin wrapper over the edgefbg CLI that wires the three commands
together in one working directory:

    python3 scripts/desk_scale_pipeline.py --workdir runs/demo --n 2000
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from edgefbg.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-epochs", type=int, default=20)
    parser.add_argument("--patience", type=int, default=5)
    parser.add_argument("--learning-rate", type=float, default=1e-3)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    config = {
        "dataset": str(workdir / "data.efbg"),
        "seed": args.seed,
        "model": "regression",
        "input_transform": "zscale1d",
        "output_method": "m4",
        "optimizer": {"kind": "adamw", "learning_rate": args.learning_rate},
        "loss": "mse",
        "batch_size": 64,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
    }
    config_path = workdir / "run.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n")

    checkpoint = workdir / "model.efck"
    for argv in (
        ["generate", "--n", str(args.n), "--seed", str(args.seed),
         "--config", str(config_path)],
        ["train", "--config", str(config_path),
         "--out-checkpoint", str(checkpoint)],
        ["eval", "--checkpoint", str(checkpoint),
         "--dataset", config["dataset"], "--split", "test"],
    ):
        code = cli(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
