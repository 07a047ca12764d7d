"""File formats: binary datasets, model checkpoints, JSON run configs.

Everything is little-endian and bit-reproducible: a rerun with the same
seed writes byte-identical files, and write -> read -> write is exact.

Dataset file layout (40-byte header, then samples):
    magic "EFBG" | version u32 | n_samples u32 | n_spectra u32 |
    n_wavelengths u32 | n_markers u32 | wavelength_start f64 |
    wavelength_end f64 | per sample: 3x125 f32 spectra, 21x3 f32 markers
A JSON sidecar (<file>.json) records the generator seed and settings.

Checkpoint layout: magic "EFCK" | version u32 | manifest_len u64 |
canonical-JSON manifest | concatenated f32 tensors in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .models import (
    ExtractorConfig,
    InputPipeline,
    RegressionModel,
    SiameseModel,
    build_regression,
    build_siamese,
)
from .optim import STANDARD_LOSSES
from .simulate import simulator_from_dict
from .transforms import (
    OUTPUT_METHODS,
    OutputTransformParams,
    WhitenParams,
    ZScale1DParams,
)

DATASET_MAGIC = b"EFBG"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIdd")  # 40 bytes

CHECKPOINT_MAGIC = b"EFCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQ")

N_SPECTRA = 3
N_WAVELENGTHS = 125
N_MARKERS = 21
WAVELENGTH_START = 812.0
WAVELENGTH_END = 871.0


def canonical_json(obj) -> str:
    """Sorted-key, no-whitespace JSON: the byte-stable serialization."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


@dataclass(frozen=True)
class Dataset:
    """In-memory dataset: spectra (n,3,125) f32, targets (n,21,3) f32."""

    spectra: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.spectra.shape[1:] != (N_SPECTRA, N_WAVELENGTHS):
            raise DataFormatError(f"spectra must be (n, 3, 125), got {self.spectra.shape}")
        if self.targets.shape != (self.spectra.shape[0], N_MARKERS, 3):
            raise DataFormatError(f"targets must be (n, 21, 3), got {self.targets.shape}")

    @property
    def n_samples(self) -> int:
        return self.spectra.shape[0]


def write_dataset(path, spectra: np.ndarray, targets: np.ndarray,
                  meta: dict | None = None) -> Dataset:
    """Write the binary dataset plus its JSON sidecar; returns the Dataset."""
    spectra = np.ascontiguousarray(spectra, dtype="<f4")
    targets = np.ascontiguousarray(targets, dtype="<f4")
    ds = Dataset(spectra, targets, dict(meta or {}))
    n = ds.n_samples
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, N_SPECTRA,
                          N_WAVELENGTHS, N_MARKERS, WAVELENGTH_START,
                          WAVELENGTH_END)
    body = np.concatenate(
        [spectra.reshape(n, -1), targets.reshape(n, -1)], axis=1)
    path = Path(path)
    path.write_bytes(header + body.tobytes())
    sidecar = dict(ds.meta)
    sidecar["dataset_sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    sidecar_path(path).write_text(canonical_json(sidecar) + "\n")
    return ds


def read_dataset(path) -> Dataset:
    """Load and validate a dataset file; sidecar metadata when present."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, n_spec, n_wl, n_mark, wl_lo, wl_hi = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if (n_spec, n_wl, n_mark) != (N_SPECTRA, N_WAVELENGTHS, N_MARKERS):
        raise DataFormatError(
            f"{path}: unexpected dimensions ({n_spec}, {n_wl}, {n_mark})")
    if (wl_lo, wl_hi) != (WAVELENGTH_START, WAVELENGTH_END):
        raise DataFormatError(f"{path}: unexpected wavelength range {wl_lo}..{wl_hi}")
    row = (N_SPECTRA * N_WAVELENGTHS + N_MARKERS * 3) * 4
    expected = _HEADER.size + n * row
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: size {len(raw)} does not match header ({expected} expected)")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, -1)
    spectra = body[:, : N_SPECTRA * N_WAVELENGTHS].reshape(n, N_SPECTRA, N_WAVELENGTHS)
    targets = body[:, N_SPECTRA * N_WAVELENGTHS:].reshape(n, N_MARKERS, 3)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return Dataset(spectra.copy(), targets.copy(), meta)


def _pipeline_to_json(inputs: InputPipeline) -> dict:
    if inputs.kind == "zscale1d":
        return {"kind": "zscale1d", "mu": inputs.zscale.mu, "sigma": inputs.zscale.sigma}
    return {
        "kind": "whiten",
        "mu": inputs.whiten.mu.tolist(),
        "eigvecs": inputs.whiten.eigvecs.tolist(),
        "eigvals": inputs.whiten.eigvals.tolist(),
    }


def _pipeline_from_json(doc: dict) -> InputPipeline:
    kind = doc.get("kind")
    if kind == "zscale1d":
        return InputPipeline("zscale1d", zscale=ZScale1DParams(doc["mu"], doc["sigma"]))
    if kind == "whiten":
        params = WhitenParams(np.array(doc["mu"]), np.array(doc["eigvecs"]),
                              np.array(doc["eigvals"]))
        return InputPipeline("whiten", whiten=params)
    raise DataFormatError(f"unknown input transform kind {kind!r}")


def _maybe_list(value):
    return None if value is None else np.asarray(value, dtype=np.float64)


def _output_to_json(params: OutputTransformParams) -> dict:
    return {
        "method": params.method,
        "n_markers": params.n_markers,
        "center": None if params.center is None else params.center.tolist(),
        "global_radius": params.global_radius,
        "radii": None if params.radii is None else params.radii.tolist(),
        "whiteners": None if params.whiteners is None else params.whiteners.tolist(),
        "dewhiteners": None if params.dewhiteners is None else params.dewhiteners.tolist(),
    }


def _output_from_json(doc: dict) -> OutputTransformParams:
    return OutputTransformParams(
        method=doc["method"],
        n_markers=doc["n_markers"],
        center=_maybe_list(doc.get("center")),
        global_radius=doc.get("global_radius"),
        radii=_maybe_list(doc.get("radii")),
        whiteners=_maybe_list(doc.get("whiteners")),
        dewhiteners=_maybe_list(doc.get("dewhiteners")),
    )


def _architecture_to_json(cfg: ExtractorConfig) -> dict:
    return {
        "channels": list(cfg.channels),
        "kernel_size": cfg.kernel_size,
        "pools": {str(k): v for k, v in sorted(cfg.pools.items())},
        "input_channels": cfg.input_channels,
        "input_length": cfg.input_length,
    }


def _architecture_from_json(doc: dict) -> ExtractorConfig:
    return ExtractorConfig(
        channels=tuple(doc["channels"]),
        kernel_size=doc["kernel_size"],
        pools={int(k): v for k, v in doc["pools"].items()},
        input_channels=doc["input_channels"],
        input_length=doc["input_length"],
    )


def save_checkpoint(path, model, inputs: InputPipeline,
                    outputs: OutputTransformParams,
                    extra: dict | None = None) -> None:
    """Serialize a model with its fitted transforms; bit-stable output."""
    if isinstance(model, RegressionModel):
        kind = "regression"
        output_dim = model.output_dim
        dropout_rate = model.drop.p
    elif isinstance(model, SiameseModel):
        kind = "siamese"
        output_dim = model.branch_out.weight.data.shape[1]
        dropout_rate = 0.0
    else:
        raise ConfigError(f"cannot checkpoint a {type(model).__name__}")
    state = model.state_dict()
    for name, tensor in state.items():
        if tensor.dtype != np.float32:
            raise DataFormatError(
                f"checkpoint tensors must be float32, {name} is {tensor.dtype}")
    manifest = {
        "kind": kind,
        "architecture": _architecture_to_json(model.cfg),
        "output_dim": output_dim,
        "dropout_rate": dropout_rate,
        "input_transform": _pipeline_to_json(inputs),
        "output_transform": _output_to_json(outputs),
        "extra": dict(extra or {}),
        "tensors": [{"name": name, "shape": list(tensor.shape)}
                    for name, tensor in state.items()],
    }
    blob = b"".join(np.ascontiguousarray(t, dtype="<f4").tobytes()
                    for t in state.values())
    text = canonical_json(manifest).encode()
    header = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(text))
    Path(path).write_bytes(header + text + blob)


@dataclass(frozen=True)
class Checkpoint:
    model: object
    inputs: InputPipeline
    outputs: OutputTransformParams
    manifest: dict

    @property
    def extra(self) -> dict:
        return self.manifest["extra"]


def load_checkpoint(path) -> Checkpoint:
    """Rebuild the model and transforms; forward passes are bit-identical."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    magic, version, manifest_len = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    start = _CKPT_HEADER.size
    try:
        manifest = json.loads(raw[start:start + manifest_len])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: corrupt manifest: {exc}") from exc
    cfg = _architecture_from_json(manifest["architecture"])
    if manifest["kind"] == "regression":
        model = build_regression(cfg, manifest["output_dim"],
                                 manifest["dropout_rate"])
    elif manifest["kind"] == "siamese":
        model = build_siamese(cfg)
    else:
        raise DataFormatError(f"{path}: unknown model kind {manifest['kind']!r}")
    blob = raw[start + manifest_len:]
    state = {}
    offset = 0
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise DataFormatError(f"{path}: tensor data truncated at {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        state[entry["name"]] = arr.reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model, _pipeline_from_json(manifest["input_transform"]),
                      _output_from_json(manifest["output_transform"]), manifest)


_OPTIMIZER_KEYS = {"kind", "learning_rate", "momentum", "weight_decay", "rho"}
_SIAMESE_KEYS = {"alpha", "margin", "delta", "pair_budget"}
_HYPERBAND_KEYS = {"max_epochs", "eta", "space"}
_TOP_KEYS = {
    "dataset", "seed", "model", "split", "input_transform", "output_method",
    "architecture", "optimizer", "loss", "dropout_rate", "batch_size",
    "max_epochs", "patience", "siamese", "hyperband", "simulator",
}
_ARCH_KEYS = {"channels", "kernel_size", "pools", "input_channels", "input_length"}


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings; every random choice flows from ``seed``."""

    dataset: str
    seed: int = 0
    model: str = "regression"
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    input_transform: str = "zscale1d"
    output_method: str = "m4"
    architecture: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=lambda: {"kind": "adamw", "learning_rate": 1e-3})
    loss: str = "mse"
    dropout_rate: float = 0.0
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 20
    siamese: dict = field(default_factory=dict)
    hyperband: dict = field(default_factory=dict)
    simulator: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in ("regression", "siamese"):
            raise ConfigError(f"model must be regression or siamese, got {self.model!r}")
        if self.model == "siamese" and self.output_method != "m4":
            raise ConfigError("the twin network regresses relative coordinates; "
                              "output_method must be m4")
        if self.input_transform not in ("zscale1d", "whiten"):
            raise ConfigError(f"input_transform must be zscale1d or whiten, "
                              f"got {self.input_transform!r}")
        if self.output_method not in OUTPUT_METHODS:
            raise ConfigError(f"output_method must be one of {OUTPUT_METHODS}, "
                              f"got {self.output_method!r}")
        if len(self.split) != 3 or any(f <= 0 for f in self.split):
            raise ConfigError(f"split needs three positive fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split}")
        if self.loss not in STANDARD_LOSSES:
            raise ConfigError(f"loss must be one of {sorted(STANDARD_LOSSES)}, "
                              f"got {self.loss!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        _reject_unknown(self.optimizer, _OPTIMIZER_KEYS, "optimizer")
        _reject_unknown(self.siamese, _SIAMESE_KEYS, "siamese")
        _reject_unknown(self.hyperband, _HYPERBAND_KEYS, "hyperband")
        _reject_unknown(self.architecture, _ARCH_KEYS, "architecture")
        simulator_from_dict(self.simulator)  # raises on unknown keys

    def extractor_config(self) -> ExtractorConfig:
        doc = dict(self.architecture)
        if "channels" in doc:
            doc["channels"] = tuple(doc["channels"])
        if "pools" in doc:
            doc["pools"] = {int(k): v for k, v in doc["pools"].items()}
        return ExtractorConfig(**doc)

    def output_dim(self) -> int:
        return 60 if self.output_method == "m4" else 63

    def digest(self) -> str:
        return config_digest(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "seed": self.seed,
            "model": self.model,
            "split": list(self.split),
            "input_transform": self.input_transform,
            "output_method": self.output_method,
            "architecture": self.architecture,
            "optimizer": self.optimizer,
            "loss": self.loss,
            "dropout_rate": self.dropout_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "siamese": self.siamese,
            "hyperband": self.hyperband,
            "simulator": self.simulator,
        }


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"run config must be a JSON object, got {type(doc).__name__}")
    _reject_unknown(doc, _TOP_KEYS, "run config")
    if "dataset" not in doc:
        raise ConfigError("run config needs a 'dataset' path")
    kwargs = dict(doc)
    if "split" in kwargs:
        kwargs["split"] = tuple(kwargs["split"])
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    return parse_run_config(doc)
