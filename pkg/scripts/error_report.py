#!/usr/bin/env python3
"""Per-marker box statistics of a checkpoint's errors on a dataset split.

Prints one row per marker with the median / quartiles / whiskers of that
marker's Euclidean error across the split, mirroring how shape-sensing
error distributions are usually plotted:

    python3 scripts/error_report.py --checkpoint model.efck --dataset data.efbg
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from edgefbg.dataio import load_checkpoint, read_dataset
from edgefbg.metrics import per_marker_summary, shape_rmse, tip_error
from edgefbg.models import predict_chains
from edgefbg.training import SplitSpec, split_indices


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--split", choices=("train", "val", "test", "all"),
                        default="test")
    args = parser.parse_args()

    checkpoint = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    n = dataset.spectra.shape[0]
    run_config = checkpoint.extra.get("run_config")
    spec = (SplitSpec(tuple(run_config["split"]), seed=int(run_config["seed"]))
            if run_config else SplitSpec())
    subset = (np.arange(n) if args.split == "all"
              else getattr(split_indices(n, spec), args.split))

    targets = dataset.targets[subset].astype(np.float64)
    relative = checkpoint.outputs.method == "m4"
    anchors = targets[:, 0] if relative else None
    predicted = predict_chains(checkpoint.model, dataset.spectra[subset],
                               checkpoint.inputs, checkpoint.outputs, anchors)

    stats = per_marker_summary(targets, predicted, exclude_first=relative)
    first = 2 if relative else 1
    print("marker\tmedian_mm\tq1_mm\tq3_mm\twhisker_low\twhisker_high\toutliers")
    for offset, box in enumerate(stats):
        print(f"{first + offset}\t{box.median:.4f}\t{box.q1:.4f}\t{box.q3:.4f}"
              f"\t{box.whisker_low:.4f}\t{box.whisker_high:.4f}\t{box.outliers}")
    tips = [tip_error(t, p) for t, p in zip(targets, predicted)]
    rmses = [shape_rmse(t, p, exclude_first=relative)
             for t, p in zip(targets, predicted)]
    print(f"# median tip error: {np.median(tips):.4f} mm")
    print(f"# median shape RMSE: {np.median(rmses):.4f} mm")
    return 0


if __name__ == "__main__":
    sys.exit(main())
