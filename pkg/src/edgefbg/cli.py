"""Command-line entry points: generate, train, tune, eval, pairs.

Every command is a pure function of its input files, config, and seed;
reruns produce byte-identical datasets, checkpoints and ledgers. Errors
exit nonzero with a single-line machine-parsable message on stderr:
2 = bad config, 3 = missing file, 4 = bad file format, 1 = anything else.
Set EDGEFBG_LOG=debug|info|warning to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    RunConfig,
    load_checkpoint,
    load_run_config,
    read_dataset,
    save_checkpoint,
)
from .errors import ConfigError, DataFormatError
from .hyperband import load_preset, run_hyperband
from .metrics import report_table
from .models import build_regression, build_siamese, predict_chains
from .optim import CompositeLossParams, OptimizerConfig
from .pairs import compute_thresholds, label_pairs, pairwise_rmse
from .simulate import generate_dataset, simulator_from_dict
from .training import (
    SplitSpec,
    fit_input_pipeline,
    make_regression_runner,
    make_siamese_runner,
    split_indices,
    train_regression,
    train_siamese,
)
from .transforms import fit_output

log = logging.getLogger("edgefbg")

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4


def _split_for(config: RunConfig, n: int):
    return split_indices(n, SplitSpec(config.split, seed=config.seed))


def cmd_generate(args) -> int:
    sampler = layout = noise = None
    extra_meta = None
    out = args.out
    if args.config is not None:
        rc = load_run_config(args.config)
        sampler, layout, noise = simulator_from_dict(rc.simulator)
        out = out or rc.dataset
        extra_meta = {"config_digest": rc.digest()}
    if out is None:
        raise ConfigError("--out is required when no --config provides a dataset path")
    generate_dataset(out, args.n, args.seed, sampler, layout, noise, extra_meta)
    print(f"wrote {args.n} samples to {out}")
    return 0


def _mine_pairs(targets: np.ndarray, budget: int, seed: int):
    scores = pairwise_rmse(targets, budget=budget, seed=seed)
    thresholds = compute_thresholds(scores)
    return scores, thresholds, label_pairs(scores, thresholds)


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    dataset = read_dataset(rc.dataset)
    n = dataset.spectra.shape[0]
    split = _split_for(rc, n)
    inputs = fit_input_pipeline(rc.input_transform, dataset.spectra[split.train])
    outputs = fit_output(rc.output_method, dataset.targets[split.train])
    optimizer_cfg = OptimizerConfig(**rc.optimizer)

    if rc.model == "regression":
        model = build_regression(rc.extractor_config(), rc.output_dim(),
                                 rc.dropout_rate, seed=rc.seed)
        optimizer = optimizer_cfg.build(model.parameters())
        history = train_regression(
            model, dataset.spectra, dataset.targets, split, inputs, outputs,
            optimizer, loss=rc.loss, batch_size=rc.batch_size,
            max_epochs=rc.max_epochs, patience=rc.patience, seed=rc.seed)
    else:
        budget = int(rc.siamese.get("pair_budget", 2_000_000))
        _, thresholds, train_pairs = _mine_pairs(
            dataset.targets[split.train], budget, rc.seed)
        log.info("mined %d labeled train pairs", len(train_pairs))
        val_scores = pairwise_rmse(dataset.targets[split.val], budget=budget,
                                   seed=rc.seed)
        val_pairs = label_pairs(val_scores, thresholds)
        if not {p.label for p in val_pairs} == {0, 1}:
            val_pairs = None  # not enough validation pairs of both kinds
        defaults = CompositeLossParams()
        params = CompositeLossParams(
            alpha=float(rc.siamese.get("alpha", defaults.alpha)),
            margin=float(rc.siamese.get("margin", defaults.margin)),
            delta=float(rc.siamese.get("delta", defaults.delta)))
        model = build_siamese(rc.extractor_config(), seed=rc.seed)
        optimizer = optimizer_cfg.build(model.parameters())
        history = train_siamese(
            model, dataset.spectra, dataset.targets, split, inputs, outputs,
            train_pairs, optimizer, params, val_pairs=val_pairs,
            batch_size=rc.batch_size, max_epochs=rc.max_epochs,
            patience=rc.patience, seed=rc.seed)

    extra = {
        "run_config": rc.to_dict(),
        "config_digest": rc.digest(),
        "n_epochs": history.n_epochs,
        "best_epoch": history.best_epoch,
        "best_val_rmse_mm": history.best_val_rmse,
    }
    save_checkpoint(args.out_checkpoint, model, inputs, outputs, extra)
    history_path = Path(str(args.out_checkpoint) + ".history.tsv")
    history_path.write_text(history.table(seconds=False))
    print(f"trained {rc.model} for {history.n_epochs} epochs; "
          f"best val RMSE {history.best_val_rmse:.4f} mm "
          f"at epoch {history.best_epoch}; checkpoint {args.out_checkpoint}")
    return 0


def cmd_tune(args) -> int:
    rc = load_run_config(args.config)
    space_name = args.space or rc.hyperband.get("space")
    if not space_name:
        raise ConfigError("no search space: pass --space or set hyperband.space")
    space = load_preset(space_name)
    max_epochs = int(rc.hyperband.get("max_epochs", 27))
    eta = int(rc.hyperband.get("eta", 3))
    dataset = read_dataset(rc.dataset)
    split = _split_for(rc, dataset.spectra.shape[0])
    if space_name == "siamese":
        runner = make_siamese_runner(
            dataset.spectra, dataset.targets, split,
            input_transform=rc.input_transform, output_method=rc.output_method,
            batch_size=rc.batch_size, extractor=rc.extractor_config(),
            pair_budget=int(rc.siamese.get("pair_budget", 2_000_000)),
            pair_seed=rc.seed,
            learning_rate=float(rc.optimizer.get("learning_rate", 1e-4)))
    else:
        runner = make_regression_runner(
            dataset.spectra, dataset.targets, split,
            input_transform=rc.input_transform, output_method=rc.output_method,
            batch_size=rc.batch_size, extractor=rc.extractor_config())
    result = run_hyperband(space, runner, max_epochs=max_epochs, eta=eta,
                           seed=rc.seed)
    doc = {
        "space": space_name,
        "max_epochs": max_epochs,
        "eta": eta,
        "seed": rc.seed,
        "epochs_per_bracket": result.epochs_per_bracket,
        "trials": [
            {
                "rank": rank,
                "bracket": t.bracket,
                "index": t.index,
                "seed": t.seed,
                "status": t.status,
                "epochs": t.epochs_used,
                "objective_mm": t.objective if np.isfinite(t.objective) else None,
                "config": dict(t.config),
            }
            for rank, t in enumerate(result.ranked, start=1)
        ],
    }
    Path(args.out_ledger).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    best = result.best
    print(f"ran {len(result.ranked)} trials; best objective "
          f"{best.objective:.4f} mm from bracket {best.bracket}; "
          f"ledger {args.out_ledger}")
    return 0


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    n = dataset.spectra.shape[0]
    run_config = checkpoint.extra.get("run_config")
    if run_config is not None:
        spec = SplitSpec(tuple(run_config["split"]), seed=int(run_config["seed"]))
    else:
        spec = SplitSpec()
    if args.split == "all":
        subset = np.arange(n)
    else:
        subset = getattr(split_indices(n, spec), args.split)
    spectra = dataset.spectra[subset]
    targets = dataset.targets[subset].astype(np.float64)
    relative = checkpoint.outputs.method == "m4"
    anchors = targets[:, 0] if relative else None
    predicted = predict_chains(checkpoint.model, spectra, checkpoint.inputs,
                               checkpoint.outputs, anchors=anchors)
    print(report_table(targets, predicted, exclude_first=relative), end="")
    return 0


def cmd_pairs(args) -> int:
    dataset = read_dataset(args.dataset)
    scores, thresholds, labeled = _mine_pairs(dataset.targets, args.budget,
                                              args.seed)
    labels = [p.label for p in labeled]
    diagnostics = {
        "n_samples": int(dataset.spectra.shape[0]),
        "pairs_scored": int(scores.rmse.shape[0]),
        "t_low_mm": thresholds.t_low,
        "t_high_mm": thresholds.t_high,
        "band": thresholds.band,
        "genuine": labels.count(0),
        "imposter": labels.count(1),
        "discarded": int(scores.rmse.shape[0]) - len(labeled),
    }
    print(json.dumps(diagnostics, sort_keys=True))
    if args.out is not None:
        rmse_of = {}
        for a, b, r in zip(scores.index_a, scores.index_b, scores.rmse):
            rmse_of[(int(a), int(b))] = float(r)
        lines = ["index_a\tindex_b\trmse_mm\tlabel"]
        for p in labeled:
            r = rmse_of[(p.index_a, p.index_b)]
            lines.append(f"{p.index_a}\t{p.index_b}\t{r:.8g}\t{p.label}")
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgefbg",
        description="Fiber shape sensing: data generation, training, "
                    "tuning, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset file")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="dataset path (default: config's)")
    p.add_argument("--config", default=None, help="run config with simulator settings")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="hyperband search over a preset space")
    p.add_argument("--config", required=True)
    p.add_argument("--space", choices=("layers", "training", "siamese"),
                   default=None)
    p.add_argument("--out-ledger", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="error table of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pairs", help="pair mining thresholds and label counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--budget", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write labeled pairs TSV here")
    p.set_defaults(func=cmd_pairs)
    return parser


def _fail(kind: str, message: str) -> None:
    flat = " ".join(str(message).split())
    print(f"edgefbg: {kind}: {flat}", file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("EDGEFBG_LOG", "warning").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail("config", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _fail("missing", exc.filename if exc.filename else exc)
        return EXIT_MISSING
    except DataFormatError as exc:
        _fail("format", exc)
        return EXIT_FORMAT
    except (ValueError, RuntimeError, OSError) as exc:
        _fail("error", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
