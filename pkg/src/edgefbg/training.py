"""Training orchestration: splits, epoch loops, early stopping, histories.

Both trainers mutate the model in place and return a TrainHistory. The
early-stopping metric is always the validation shape RMSE in absolute mm
(predictions pushed through the inverse output transform), so model
selection is comparable no matter which loss or output scaling is in use.

Determinism contract: with a fixed (data, config, seed) every epoch's
shuffle order, dropout mask and therefore every recorded loss value is
reproduced exactly; wall-clock seconds are the only nondeterministic field.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .metrics import shape_rmse
from .models import (
    ExtractorConfig,
    InputPipeline,
    SiameseModel,
    build_regression,
    build_siamese,
    predict_chains,
)
from .nn.tensor import Tensor
from .optim import (
    CompositeLossParams,
    Optimizer,
    OptimizerConfig,
    STANDARD_LOSSES,
    composite_loss,
)
from .pairs import (
    LabeledPair,
    build_pair_epoch,
    compute_thresholds,
    label_pairs,
    pairwise_rmse,
)
from .transforms import (
    OutputTransformParams,
    apply_output,
    fit_output,
    fit_whiten,
    fit_zscale1d,
)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint, exhaustive train/validation/test fractions."""

    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError(f"need three positive fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {self.fractions}")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_indices(n: int, spec: SplitSpec = SplitSpec()) -> Split:
    """Shuffled index partition; sizes floor the first two fractions."""
    n_train = int(n * spec.fractions[0] + 1e-9)
    n_val = int(n * spec.fractions[1] + 1e-9)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"n={n} is too small to split as {spec.fractions}")
    order = np.random.default_rng([spec.seed]).permutation(n)
    return Split(
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train:n_train + n_val]),
        test=np.sort(order[n_train + n_val:]),
    )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    seconds: float
    genuine_score: float | None = None  # twin training: mean pair score, label 0
    imposter_score: float | None = None  # and label 1


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[EpochRecord, ...]
    best_epoch: int
    best_val_rmse: float

    @property
    def n_epochs(self) -> int:
        return len(self.records)

    def curves(self) -> tuple[np.ndarray, np.ndarray]:
        """(train_loss, val_rmse) per epoch, the deterministic part."""
        train = np.array([r.train_loss for r in self.records])
        val = np.array([r.val_rmse for r in self.records])
        return train, val

    def table(self, seconds: bool = True) -> str:
        scored = any(r.genuine_score is not None for r in self.records)
        header = ["epoch", "train_loss", "val_rmse_mm"]
        if scored:
            header += ["genuine_score", "imposter_score"]
        if seconds:
            header.append("seconds")
        lines = ["\t".join(header)]
        for r in self.records:
            row = [str(r.epoch), f"{r.train_loss:.8g}", f"{r.val_rmse:.8g}"]
            if scored:
                row += [f"{r.genuine_score:.8g}" if r.genuine_score is not None else "-",
                        f"{r.imposter_score:.8g}" if r.imposter_score is not None else "-"]
            if seconds:
                row.append(f"{r.seconds:.3f}")
            lines.append("\t".join(row))
        tail = ["best", str(self.best_epoch), f"{self.best_val_rmse:.8g}"]
        tail += ["-"] * (len(header) - 3)
        lines.append("\t".join(tail))
        return "\n".join(lines) + "\n"


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _snapshot(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_dict().items()}


def _check_finite(loss: Tensor, epoch: int, batch: int) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise RuntimeError(
            f"non-finite training loss {value} at epoch {epoch}, batch {batch}; "
            "lower the learning rate or switch losses"
        )
    return value


def _validation_rmse(model, spectra_val: np.ndarray, targets_val: np.ndarray,
                     inputs: InputPipeline, outputs: OutputTransformParams,
                     batch_size: int) -> float:
    anchors = None
    if outputs.method == "m4":
        anchors = targets_val[:, 0].astype(np.float64)
    chains = predict_chains(model, spectra_val, inputs, outputs,
                            anchors=anchors, batch_size=batch_size)
    exclude = outputs.method == "m4"
    scores = [shape_rmse(t, p, exclude_first=exclude)
              for t, p in zip(targets_val.astype(np.float64), chains)]
    return float(np.mean(scores))


class _EarlyStopper:
    """Tracks the best validation score and the no-improvement streak."""

    def __init__(self, model: nn.Module, patience: int):
        self.model = model
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = -1
        self.best_state = _snapshot(model)
        self.stale = 0

    def update(self, epoch: int, val_rmse: float) -> bool:
        """Records the epoch; returns True when training should stop."""
        if val_rmse < self.best:
            self.best = val_rmse
            self.best_epoch = epoch
            self.best_state = _snapshot(self.model)
            self.stale = 0
            return False
        self.stale += 1
        return self.stale > self.patience

    def restore_best(self):
        self.model.load_state_dict(self.best_state)


def train_regression(model: RegressionModel, spectra: np.ndarray,
                     targets: np.ndarray, split: Split,
                     inputs: InputPipeline, outputs: OutputTransformParams,
                     optimizer: Optimizer,
                     loss: str | Callable = "mse",
                     batch_size: int = 64, max_epochs: int = 100,
                     patience: int = 20, seed: int = 0) -> TrainHistory:
    """Minibatch training with early stopping on validation shape RMSE."""
    loss_fn = STANDARD_LOSSES[loss] if isinstance(loss, str) else loss
    x_all = inputs.apply(spectra)
    y_all = apply_output(targets, outputs).astype(np.float32)
    x_train, y_train = x_all[split.train], y_all[split.train]
    spectra_val, targets_val = spectra[split.val], targets[split.val]

    stopper = _EarlyStopper(model, patience)
    records = []
    for epoch in range(max_epochs):
        start = time.perf_counter()
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(x_train))
        model.train()
        losses = []
        for b, lo in enumerate(range(0, len(order), batch_size)):
            idx = order[lo:lo + batch_size]
            optimizer.zero_grad()
            pred = model(Tensor(np.ascontiguousarray(x_train[idx])), rng=rng)
            loss_t = loss_fn(pred, Tensor(np.ascontiguousarray(y_train[idx])))
            value = _check_finite(loss_t, epoch, b)
            loss_t.backward()
            optimizer.step()
            losses.append(value)
        val_rmse = _validation_rmse(model, spectra_val, targets_val,
                                    inputs, outputs, batch_size)
        records.append(EpochRecord(epoch, float(np.mean(losses)), val_rmse,
                                   time.perf_counter() - start))
        if stopper.update(epoch, val_rmse):
            break
    stopper.restore_best()
    return TrainHistory(tuple(records), stopper.best_epoch, stopper.best)


def _pair_scores(model: SiameseModel, x: np.ndarray,
                 pairs: list[LabeledPair], batch_size: int) -> tuple[float, float]:
    """Mean pair score per class, eval mode: (genuine mean, imposter mean)."""
    sums = {0: 0.0, 1: 0.0}
    counts = {0: 0, 1: 0}
    was_training = model.training
    model.eval()
    with nn.no_grad():
        for lo in range(0, len(pairs), batch_size):
            chunk = pairs[lo:lo + batch_size]
            ia = np.array([p.index_a for p in chunk])
            ib = np.array([p.index_b for p in chunk])
            _, _, score = model(Tensor(np.ascontiguousarray(x[ia])),
                                Tensor(np.ascontiguousarray(x[ib])))
            for p, s in zip(chunk, score.data.ravel()):
                sums[p.label] += float(s)
                counts[p.label] += 1
    if was_training:
        model.train()
    return (sums[0] / max(counts[0], 1), sums[1] / max(counts[1], 1))


def train_siamese(model: SiameseModel, spectra: np.ndarray, targets: np.ndarray,
                  split: Split, inputs: InputPipeline,
                  outputs: OutputTransformParams,
                  train_pairs: list[LabeledPair],
                  optimizer: Optimizer,
                  params: CompositeLossParams = CompositeLossParams(),
                  val_pairs: list[LabeledPair] | None = None,
                  batch_size: int = 64, max_epochs: int = 100,
                  patience: int = 20, seed: int = 0) -> TrainHistory:
    """Composite-loss pair training; validation is single-arm shape RMSE.

    ``train_pairs`` index into the train split (0 = first train sample);
    ``val_pairs`` (optional, indexing the validation split) only add the
    per-class mean pair scores to the history.
    """
    x_all = inputs.apply(spectra)
    y_all = apply_output(targets, outputs).astype(np.float32)
    x_train, y_train = x_all[split.train], y_all[split.train]
    x_val = x_all[split.val]
    spectra_val, targets_val = spectra[split.val], targets[split.val]

    stopper = _EarlyStopper(model, patience)
    records = []
    for epoch in range(max_epochs):
        start = time.perf_counter()
        batches = build_pair_epoch(train_pairs, _epoch_seed(seed, epoch),
                                   batch_size)
        model.train()
        losses = []
        for b, batch in enumerate(batches):
            optimizer.zero_grad()
            x_a = Tensor(np.ascontiguousarray(x_train[batch.index_a]))
            x_b = Tensor(np.ascontiguousarray(x_train[batch.index_b]))
            y_a, y_b, y_pred = model(x_a, x_b)
            loss_t = composite_loss(
                batch.labels.astype(np.float32), y_pred,
                np.ascontiguousarray(y_train[batch.index_a]), y_a,
                np.ascontiguousarray(y_train[batch.index_b]), y_b,
                params,
            )
            value = _check_finite(loss_t, epoch, b)
            loss_t.backward()
            optimizer.step()
            losses.append(value)
        val_rmse = _validation_rmse(model, spectra_val, targets_val,
                                    inputs, outputs, batch_size)
        genuine = imposter = None
        if val_pairs:
            genuine, imposter = _pair_scores(model, x_val, val_pairs, batch_size)
        records.append(EpochRecord(epoch, float(np.mean(losses)), val_rmse,
                                   time.perf_counter() - start,
                                   genuine_score=genuine,
                                   imposter_score=imposter))
        if stopper.update(epoch, val_rmse):
            break
    stopper.restore_best()
    return TrainHistory(tuple(records), stopper.best_epoch, stopper.best)


def fit_input_pipeline(kind: str, train_spectra: np.ndarray) -> InputPipeline:
    if kind == "zscale1d":
        return InputPipeline("zscale1d", zscale=fit_zscale1d(train_spectra))
    if kind == "whiten":
        return InputPipeline("whiten", whiten=fit_whiten(train_spectra))
    raise ValueError(f"unknown input transform {kind!r}")


def mean_chain_baseline(train_targets: np.ndarray) -> np.ndarray:
    """The no-model reference: always predict the mean training chain."""
    return np.asarray(train_targets, dtype=np.float64).mean(axis=0)


# ---------------------------------------------------------------------------
# Hyperband plumbing: turn sampled config dicts into resumable trial runners.

def config_to_extractor(config: dict,
                        base: ExtractorConfig | None = None) -> ExtractorConfig:
    """Extractor settings from a sampled config; unsampled fields use the
    base architecture's values."""
    base = base or ExtractorConfig()
    n = len(base.channels)
    channel_keys = [f"channels_{i}" for i in range(1, n + 1)]
    if any(k in config for k in channel_keys):
        channels = tuple(int(config[k]) for k in channel_keys)
    else:
        channels = base.channels
    pools = {}
    if any(f"pool_after_{i}" in config for i in range(1, n + 1)):
        for i in range(1, n + 1):
            if config.get(f"pool_after_{i}"):
                pools[i] = int(config.get(f"pool_size_{i}", 2))
    else:
        pools = dict(base.pools)
    return ExtractorConfig(
        channels=channels,
        kernel_size=int(config.get("kernel_size", base.kernel_size)),
        pools=pools,
    )


def config_to_optimizer(config: dict) -> OptimizerConfig:
    return OptimizerConfig(
        kind=str(config.get("optimizer", "adamw")),
        learning_rate=float(config.get("learning_rate", 1e-3)),
        momentum=float(config.get("momentum", 0.0)),
        weight_decay=float(config.get("weight_decay", 0.0)),
        rho=float(config.get("rho", 0.9)),
    )


def config_to_composite(config: dict) -> CompositeLossParams:
    defaults = CompositeLossParams()
    return CompositeLossParams(
        alpha=float(config.get("alpha", defaults.alpha)),
        margin=float(config.get("margin", defaults.margin)),
        delta=float(config.get("delta", defaults.delta)),
    )


@dataclass
class _TrialState:
    model: nn.Module
    optimizer: Optimizer
    epochs_done: int


def make_regression_runner(spectra: np.ndarray, targets: np.ndarray,
                           split: Split, input_transform: str = "zscale1d",
                           output_method: str = "m4",
                           batch_size: int = 64,
                           extractor: ExtractorConfig | None = None) -> Callable:
    """Resumable trial runner for Hyperband over regression configs.

    Transforms are fitted once on the train split (identical for every
    trial); each trial's model/optimizer live in its opaque state and are
    trained for exactly the requested number of additional epochs, no
    early stopping. The objective is validation mean shape RMSE in mm.
    """
    base_extractor = extractor or ExtractorConfig()
    inputs = fit_input_pipeline(input_transform, spectra[split.train])
    outputs = fit_output(output_method, targets[split.train])
    x_all = inputs.apply(spectra)
    y_all = apply_output(targets, outputs).astype(np.float32)
    x_train, y_train = x_all[split.train], y_all[split.train]
    spectra_val, targets_val = spectra[split.val], targets[split.val]
    output_dim = outputs.output_dim

    def runner(config: dict, n_epochs: int, seed: int, state):
        if state is None:
            cfg = config_to_extractor(config, base_extractor)
            model = build_regression(cfg, output_dim,
                                     float(config.get("dropout_rate", 0.0)),
                                     seed=seed)
            optimizer = config_to_optimizer(config).build(model.parameters())
            state = _TrialState(model, optimizer, 0)
        loss_fn = STANDARD_LOSSES[str(config.get("loss", "mse"))]
        model, optimizer = state.model, state.optimizer
        for epoch in range(state.epochs_done, state.epochs_done + n_epochs):
            rng = np.random.default_rng([seed, epoch])
            order = rng.permutation(len(x_train))
            model.train()
            for b, lo in enumerate(range(0, len(order), batch_size)):
                idx = order[lo:lo + batch_size]
                optimizer.zero_grad()
                pred = model(Tensor(np.ascontiguousarray(x_train[idx])), rng=rng)
                loss_t = loss_fn(pred, Tensor(np.ascontiguousarray(y_train[idx])))
                _check_finite(loss_t, epoch, b)
                loss_t.backward()
                optimizer.step()
        state.epochs_done += n_epochs
        objective = _validation_rmse(model, spectra_val, targets_val,
                                     inputs, outputs, batch_size)
        return objective, state

    return runner


def make_siamese_runner(spectra: np.ndarray, targets: np.ndarray, split: Split,
                        input_transform: str = "zscale1d",
                        output_method: str = "m4", batch_size: int = 64,
                        extractor: ExtractorConfig | None = None,
                        pair_budget: int = 2_000_000,
                        pair_seed: int = 0,
                        learning_rate: float = 1e-4) -> Callable:
    """Resumable trial runner for Hyperband over twin-training configs.

    The architecture and pair labels are fixed; configs tune the loss
    weights (alpha, margin, delta) and the optimizer's momentum/rho. The
    objective is single-arm validation mean shape RMSE in mm.
    """
    extractor = extractor or ExtractorConfig()
    inputs = fit_input_pipeline(input_transform, spectra[split.train])
    outputs = fit_output(output_method, targets[split.train])
    x_all = inputs.apply(spectra)
    y_all = apply_output(targets, outputs).astype(np.float32)
    x_train, y_train = x_all[split.train], y_all[split.train]
    spectra_val, targets_val = spectra[split.val], targets[split.val]
    scores = pairwise_rmse(targets[split.train], budget=pair_budget,
                           seed=pair_seed)
    labeled = label_pairs(scores, compute_thresholds(scores))

    def runner(config: dict, n_epochs: int, seed: int, state):
        if state is None:
            model = build_siamese(extractor, seed=seed)
            optimizer = OptimizerConfig(
                "rmsprop", learning_rate=learning_rate,
                momentum=float(config.get("momentum", 0.0)),
                rho=float(config.get("rho", 0.9)),
            ).build(model.parameters())
            state = _TrialState(model, optimizer, 0)
        params = config_to_composite(config)
        model, optimizer = state.model, state.optimizer
        for epoch in range(state.epochs_done, state.epochs_done + n_epochs):
            batches = build_pair_epoch(labeled, _epoch_seed(seed, epoch),
                                       batch_size)
            model.train()
            for b, batch in enumerate(batches):
                optimizer.zero_grad()
                x_a = Tensor(np.ascontiguousarray(x_train[batch.index_a]))
                x_b = Tensor(np.ascontiguousarray(x_train[batch.index_b]))
                y_a, y_b, y_pred = model(x_a, x_b)
                loss_t = composite_loss(
                    batch.labels.astype(np.float32), y_pred,
                    np.ascontiguousarray(y_train[batch.index_a]), y_a,
                    np.ascontiguousarray(y_train[batch.index_b]), y_b,
                    params,
                )
                _check_finite(loss_t, epoch, b)
                loss_t.backward()
                optimizer.step()
        state.epochs_done += n_epochs
        objective = _validation_rmse(model, spectra_val, targets_val,
                                     inputs, outputs, batch_size)
        return objective, state

    return runner
