#!/usr/bin/env python3
"""The two-step tuning protocol: architecture first, then training params.

Runs Hyperband over the `layers` space, freezes the winning architecture,
runs Hyperband over the `training` space on top of it, then trains a
final model with the combined winner:

    python3 scripts/tune_protocol.py --workdir runs/tuned --n 2000 --budget 9
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from edgefbg.cli import main as cli


def winner(ledger_path: Path) -> dict:
    doc = json.loads(ledger_path.read_text())
    top = doc["trials"][0]
    if top["status"] != "ok":
        raise SystemExit(f"no successful trial in {ledger_path}")
    return top["config"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budget", type=int, default=9,
                        help="hyperband max epochs per trial")
    parser.add_argument("--final-epochs", type=int, default=30)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    dataset = workdir / "data.efbg"

    def write_config(name: str, **overrides) -> Path:
        doc = {
            "dataset": str(dataset),
            "seed": args.seed,
            "output_method": "m4",
            "batch_size": 64,
            "hyperband": {"max_epochs": args.budget, "eta": 3},
        }
        doc.update(overrides)
        path = workdir / name
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path

    code = cli(["generate", "--n", str(args.n), "--seed", str(args.seed),
                "--out", str(dataset)])
    if code != 0:
        return code

    # step 1: architecture search
    step1 = write_config("step1.json")
    ledger1 = workdir / "layers.ledger.json"
    code = cli(["tune", "--config", str(step1), "--space", "layers",
                "--out-ledger", str(ledger1)])
    if code != 0:
        return code
    arch_config = winner(ledger1)
    architecture = {
        "channels": [arch_config[f"channels_{i}"] for i in range(1, 8)],
        "kernel_size": arch_config["kernel_size"],
        "pools": {str(i): arch_config[f"pool_size_{i}"] for i in range(1, 8)
                  if arch_config[f"pool_after_{i}"]},
    }

    # step 2: training-parameter search on the frozen architecture
    step2 = write_config("step2.json", architecture=architecture)
    ledger2 = workdir / "training.ledger.json"
    code = cli(["tune", "--config", str(step2), "--space", "training",
                "--out-ledger", str(ledger2)])
    if code != 0:
        return code
    train_config = winner(ledger2)

    final = write_config(
        "final.json",
        architecture=architecture,
        optimizer={
            "kind": train_config["optimizer"],
            "learning_rate": train_config["learning_rate"],
            "momentum": train_config["momentum"],
            "weight_decay": train_config["weight_decay"],
        },
        loss=train_config["loss"],
        dropout_rate=train_config["dropout_rate"],
        max_epochs=args.final_epochs,
        patience=10,
    )
    checkpoint = workdir / "model.efck"
    code = cli(["train", "--config", str(final),
                "--out-checkpoint", str(checkpoint)])
    if code != 0:
        return code
    return cli(["eval", "--checkpoint", str(checkpoint),
                "--dataset", str(dataset), "--split", "test"])


if __name__ == "__main__":
    sys.exit(main())
