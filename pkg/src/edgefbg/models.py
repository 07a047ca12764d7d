"""The two network architectures: a regression CNN and a Siamese variant.

The shared feature extractor is seven same-padding conv1d blocks, each
conv -> sigmoid -> batchnorm, with ceil-mode max pools after blocks 2, 3,
5 and 7. On 125-long spectra the pools shrink the length 125 -> 63 -> 32
-> 16 -> 6, so the flattened feature vector has 224 * 6 = 1344 elements.

The regression model adds optional dropout and one linear dense layer on
top of the features. The Siamese model runs the extractor on two inputs
with the same weights, scores pair similarity through a distance head
(euclidean distance -> batchnorm -> dense -> sigmoid), and regresses both
arms through one shared branch (dense 1344 + sigmoid -> dense 60 linear).
Inference uses a single arm; the head exists only for the training signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError
from .geometry import MarkerChain
from .nn.tensor import Tensor
from .transforms import (
    OutputTransformParams,
    ZScale1DParams,
    WhitenParams,
    apply_whiten,
    apply_zscale1d,
    invert_output,
)

SELECTED_CHANNELS = (176, 120, 48, 96, 48, 232, 224)
SELECTED_KERNEL = 10
SELECTED_POOLS = {2: 2, 3: 2, 5: 2, 7: 3}  # pool size after these conv blocks
INPUT_CHANNELS = 3
INPUT_LENGTH = 125


def _pooled_length(length: int, pools: dict[int, int], n_layers: int) -> int:
    for layer in range(1, n_layers + 1):
        if layer in pools:
            length = -(-length // pools[layer])
    return length


@dataclass(frozen=True)
class ExtractorConfig:
    """Shape of the convolutional feature extractor."""

    channels: tuple[int, ...] = SELECTED_CHANNELS
    kernel_size: int = SELECTED_KERNEL
    pools: dict[int, int] = field(default_factory=lambda: dict(SELECTED_POOLS))
    input_channels: int = INPUT_CHANNELS
    input_length: int = INPUT_LENGTH

    def __post_init__(self):
        if not self.channels or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        n = len(self.channels)
        for layer, size in self.pools.items():
            if not 1 <= layer <= n:
                raise ConfigError(f"pool after layer {layer} outside 1..{n}")
            if size < 2:
                raise ConfigError(f"pool size must be >= 2, got {size}")
        if self.feature_length < 1:
            raise ConfigError("pooling consumes the whole sequence")

    @property
    def feature_length(self) -> int:
        return _pooled_length(self.input_length, self.pools, len(self.channels))

    @property
    def feature_dim(self) -> int:
        return self.channels[-1] * self.feature_length


class Extractor(nn.Module):
    """Conv -> sigmoid -> batchnorm blocks with interleaved max pools."""

    def __init__(self, cfg: ExtractorConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.convs: list[nn.Conv1d] = []
        self.norms: list[nn.BatchNorm1d] = []
        c_prev = cfg.input_channels
        for i, c in enumerate(cfg.channels, start=1):
            conv = nn.Conv1d(c_prev, c, cfg.kernel_size, rng)
            norm = nn.BatchNorm1d(c)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"norm{i}", norm)
            self.convs.append(conv)
            self.norms.append(norm)
            c_prev = c

    def forward(self, x: Tensor) -> Tensor:
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms), start=1):
            x = norm(conv(x).sigmoid())
            size = self.cfg.pools.get(i)
            if size:
                x = nn.maxpool1d(x, size)
        return x.flatten()


class RegressionModel(nn.Module):
    """Extractor -> optional dropout -> linear dense head."""

    def __init__(self, cfg: ExtractorConfig, output_dim: int, dropout_rate: float,
                 rng: np.random.Generator):
        super().__init__()
        if output_dim not in (60, 63):
            raise ConfigError(f"output_dim must be 60 or 63, got {output_dim}")
        self.cfg = cfg
        self.output_dim = output_dim
        self.extractor = Extractor(cfg, rng)
        self.drop = nn.Dropout(dropout_rate)
        self.head = nn.Dense(cfg.feature_dim, output_dim, rng)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return self.head(self.drop(self.extractor(x), rng))


def build_regression(cfg: ExtractorConfig, output_dim: int, dropout_rate: float = 0.0,
                     seed: int = 0) -> RegressionModel:
    """Regression network with deterministic Xavier init from the seed."""
    return RegressionModel(cfg, output_dim, dropout_rate, np.random.default_rng([seed, 0]))


class SiameseModel(nn.Module):
    """Twin extractor with a similarity head and a shared regression branch."""

    def __init__(self, cfg: ExtractorConfig, rng: np.random.Generator,
                 regression_dim: int = 60):
        super().__init__()
        self.cfg = cfg
        self.extractor = Extractor(cfg, rng)
        self.head_norm = nn.BatchNorm1d(1)
        self.head_dense = nn.Dense(1, 1, rng)
        self.branch_hidden = nn.Dense(cfg.feature_dim, cfg.feature_dim, rng)
        self.branch_out = nn.Dense(cfg.feature_dim, regression_dim, rng)

    def regress(self, features: Tensor) -> Tensor:
        return self.branch_out(self.branch_hidden(features).sigmoid())

    def forward(self, x_a: Tensor, x_b: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (y_a, y_b, y_pred): both arm regressions and the pair score."""
        f_a = self.extractor(x_a)
        f_b = self.extractor(x_b)
        dist = nn.euclid_dist(f_a, f_b)
        y_pred = self.head_dense(self.head_norm(dist)).sigmoid()
        return self.regress(f_a), self.regress(f_b), y_pred

    def forward_single(self, x: Tensor) -> Tensor:
        """One-arm inference: features -> shared regression branch."""
        return self.regress(self.extractor(x))


def build_siamese(cfg: ExtractorConfig, seed: int = 0) -> SiameseModel:
    return SiameseModel(cfg, np.random.default_rng([seed, 0]))


def forward_siamese(model: SiameseModel, x_a: Tensor, x_b: Tensor):
    return model(x_a, x_b)


@dataclass(frozen=True)
class InputPipeline:
    """The fitted input scaling a model was trained with."""

    kind: str  # "zscale1d" or "whiten"
    zscale: ZScale1DParams | None = None
    whiten: WhitenParams | None = None

    def __post_init__(self):
        if self.kind == "zscale1d":
            if self.zscale is None:
                raise ConfigError("zscale1d pipeline needs fitted parameters")
        elif self.kind == "whiten":
            if self.whiten is None:
                raise ConfigError("whiten pipeline needs fitted parameters")
        else:
            raise ConfigError(f"unknown input scaling {self.kind!r}")

    def apply(self, spectra: np.ndarray) -> np.ndarray:
        """Spectra (n, 3, 125) to network-ready float32 arrays."""
        x = np.asarray(spectra)
        if self.kind == "zscale1d":
            return apply_zscale1d(x, self.zscale).astype(np.float32)
        flat = apply_whiten(x, self.whiten)
        return flat.reshape(x.shape[0], x.shape[1], x.shape[2]).astype(np.float32)


def predict_flat(model: nn.Module, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Network outputs on preprocessed inputs, batched, in eval mode."""
    single = getattr(model, "forward_single", None)
    run = single if single is not None else model
    was_training = model.training
    model.eval()
    outs = []
    with nn.no_grad():
        for start in range(0, x.shape[0], batch_size):
            xb = Tensor(np.ascontiguousarray(x[start:start + batch_size]))
            outs.append(run(xb).data)
    if was_training:
        model.train()
    return np.concatenate(outs, axis=0)


def predict_chains(model: nn.Module, spectra: np.ndarray, inputs: InputPipeline,
                   outputs: OutputTransformParams,
                   anchors: np.ndarray | None = None,
                   batch_size: int = 256) -> np.ndarray:
    """Absolute marker chains (n, 21, 3) from raw spectra.

    For the relative method the anchors are the ground-truth first-marker
    positions, which the network does not predict.
    """
    flat = predict_flat(model, inputs.apply(spectra), batch_size)
    if flat.shape[1] != outputs.output_dim:
        raise ConfigError(
            f"model emits {flat.shape[1]} values but the output transform "
            f"expects {outputs.output_dim}"
        )
    return invert_output(flat, outputs, anchors)


def predict_shape(model: nn.Module, spectrum: np.ndarray, inputs: InputPipeline,
                  outputs: OutputTransformParams,
                  anchor: np.ndarray | None = None) -> MarkerChain:
    """Single-sample convenience wrapper over predict_chains."""
    anchors = None if anchor is None else np.asarray(anchor, dtype=np.float64)[None]
    positions = predict_chains(model, np.asarray(spectrum)[None], inputs, outputs,
                               anchors)[0]
    return MarkerChain(positions)
