"""Input scalings and output rescalings, each with an exact inverse.

Inputs (spectra) support scalar z-scaling of the flattened values and
full whitening of the 375-dimensional flattened sample vectors. Targets
(marker chains) support four schemes: global-radius scaling (M1),
per-marker-radius scaling (M2), per-marker cloud whitening (M3), and
relative coordinates (M4). A "cloud" is one marker's positions across
the training samples.

Statistics are always fitted in float64 on the training split only, use
population (not sample) normalizers, and are frozen afterwards; apply
and invert are pure functions of the parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScaleError
from .geometry import MarkerChain

OUTPUT_METHODS = ("m1", "m2", "m3", "m4")

_EIG_CLAMP = 1e-10


# -- scalar z-scaling ---------------------------------------------------------


@dataclass(frozen=True)
class ZScale1DParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DegenerateScaleError(f"sigma must be > 0, got {self.sigma}")


def fit_zscale1d(train: np.ndarray) -> ZScale1DParams:
    """Scalar mean/std over every value of the training inputs."""
    flat = np.asarray(train, dtype=np.float64).reshape(-1)
    if flat.size < 2:
        raise ValueError("z-scaling needs at least 2 values")
    if not np.all(np.isfinite(flat)):
        raise ValueError("z-scaling input contains non-finite values")
    mu = float(flat.mean())
    sigma = float(flat.std())
    if sigma == 0.0:
        raise DegenerateScaleError("constant training data has no scale")
    return ZScale1DParams(mu, sigma)


def apply_zscale1d(x: np.ndarray, params: ZScale1DParams) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - params.mu) / params.sigma


def invert_zscale1d(z: np.ndarray, params: ZScale1DParams) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * params.sigma + params.mu


# -- full whitening -----------------------------------------------------------


@dataclass(frozen=True)
class WhitenParams:
    """Eigendecomposition of the training covariance.

    ``eigvals`` are already clamped from below, so the derived forward
    matrix U diag(d^-1/2) U^T and its inverse are both well conditioned
    and exact inverses of each other.
    """

    mu: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        u = np.asarray(self.eigvecs, dtype=np.float64)
        d = np.asarray(self.eigvals, dtype=np.float64)
        n = mu.shape[0]
        if u.shape != (n, n) or d.shape != (n,):
            raise ValueError(f"inconsistent shapes: mu {mu.shape}, U {u.shape}, d {d.shape}")
        if np.any(d <= 0):
            raise DegenerateScaleError("eigenvalues must be positive after clamping")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eigvecs", u)
        object.__setattr__(self, "eigvals", d)
        object.__setattr__(self, "_forward", (u * d ** -0.5) @ u.T)
        object.__setattr__(self, "_backward", (u * d ** 0.5) @ u.T)


def _flatten_samples(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(arr.shape[0], -1)


def fit_whiten(train: np.ndarray) -> WhitenParams:
    """Whitening statistics over the flattened per-sample vectors."""
    x = _flatten_samples(train)
    if not np.all(np.isfinite(x)):
        raise ValueError("whitening input contains non-finite values")
    n, dim = x.shape
    if n < 2:
        raise ValueError("whitening needs at least 2 samples")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = (xc.T @ xc) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = eigvals[-1]
    if top <= 0:
        raise DegenerateScaleError("training covariance has no positive eigenvalue")
    eigvals = np.maximum(eigvals, _EIG_CLAMP * top)
    return WhitenParams(mu, eigvecs, eigvals)


def apply_whiten(x: np.ndarray, params: WhitenParams) -> np.ndarray:
    return (_flatten_samples(x) - params.mu) @ params._forward


def invert_whiten(z: np.ndarray, params: WhitenParams) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) @ params._backward + params.mu


# -- output rescalings --------------------------------------------------------


@dataclass(frozen=True)
class OutputTransformParams:
    """Frozen statistics of one output rescaling method.

    Unused fields for a given method stay None. ``output_dim`` is the
    flattened per-sample target length the network must produce: 63 for
    the absolute methods on the standard 21-marker chain, 60 for the
    relative method (20 deltas).
    """

    method: str
    n_markers: int = 21
    center: np.ndarray | None = None  # (n_markers, 3) per-marker means
    global_radius: float | None = None  # m1
    radii: np.ndarray | None = None  # (n_markers,) m2
    whiteners: np.ndarray | None = None  # (n_markers, 3, 3) m3 forward
    dewhiteners: np.ndarray | None = None  # (n_markers, 3, 3) m3 inverse

    def __post_init__(self):
        if self.method not in OUTPUT_METHODS:
            raise ValueError(f"method must be one of {OUTPUT_METHODS}, got {self.method!r}")
        least = 2 if self.method == "m4" else 1
        if self.n_markers < least:
            raise ValueError(f"{self.method} needs >= {least} markers, got {self.n_markers}")

    @property
    def output_dim(self) -> int:
        if self.method == "m4":
            return 3 * (self.n_markers - 1)
        return 3 * self.n_markers


def _check_targets(targets: np.ndarray) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim != 3 or y.shape[2] != 3:
        raise ValueError(f"targets must be (n, markers, 3), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    return y


def fit_output(method: str, train_targets: np.ndarray) -> OutputTransformParams:
    """Fit one of the four target rescalings on the training chains."""
    method = method.lower()
    if method not in OUTPUT_METHODS:
        raise ValueError(f"method must be one of {OUTPUT_METHODS}, got {method!r}")
    y = _check_targets(train_targets)
    if method == "m4":
        return OutputTransformParams(method="m4", n_markers=y.shape[1])
    center = y.mean(axis=0)
    spread = y - center
    if method == "m1":
        # one global scale: mean over markers of each cloud's mean radius
        radii = np.linalg.norm(spread, axis=2).mean(axis=0)
        global_radius = float(radii.mean())
        if global_radius <= 0:
            raise DegenerateScaleError("all marker clouds are single points")
        return OutputTransformParams(method="m1", n_markers=y.shape[1],
                                     center=center, global_radius=global_radius)
    if method == "m2":
        radii = np.linalg.norm(spread, axis=2).mean(axis=0)
        if np.any(radii <= 0):
            bad = np.flatnonzero(radii <= 0)
            raise DegenerateScaleError(f"marker cloud(s) {bad.tolist()} have zero radius")
        return OutputTransformParams(method="m2", n_markers=y.shape[1],
                                     center=center, radii=radii)
    # m3: whiten each marker cloud with its own 3x3 covariance
    n_markers = y.shape[1]
    whiteners = np.empty((n_markers, 3, 3))
    dewhiteners = np.empty((n_markers, 3, 3))
    clamped = 0
    for k in range(n_markers):
        cov = spread[:, k, :].T @ spread[:, k, :] / y.shape[0]
        eigvals, eigvecs = np.linalg.eigh(cov)
        top = eigvals[-1]
        if top <= 0:
            raise DegenerateScaleError(f"marker cloud {k} is a single point")
        floor = _EIG_CLAMP * top
        if np.any(eigvals < floor):
            clamped += 1
        eigvals = np.maximum(eigvals, floor)
        whiteners[k] = (eigvecs * eigvals ** -0.5) @ eigvecs.T
        dewhiteners[k] = (eigvecs * eigvals ** 0.5) @ eigvecs.T
    if clamped:
        warnings.warn(f"m3: clamped near-singular covariance for {clamped} marker cloud(s)")
    return OutputTransformParams(method="m3", n_markers=n_markers, center=center,
                                 whiteners=whiteners, dewhiteners=dewhiteners)


def apply_output(targets: np.ndarray, params: OutputTransformParams) -> np.ndarray:
    """Marker chains (n, 21, 3) to flat network targets (n, 63) or (n, 60)."""
    y = _check_targets(targets)
    n = y.shape[0]
    if params.method == "m4":
        return np.diff(y, axis=1).reshape(n, -1)
    z = y - params.center
    if params.method == "m1":
        z = z / params.global_radius
    elif params.method == "m2":
        z = z / params.radii[None, :, None]
    else:
        z = np.einsum("kij,nkj->nki", params.whiteners, z)
    return z.reshape(n, -1)


def invert_output(values: np.ndarray, params: OutputTransformParams,
                  anchors: np.ndarray | None = None) -> np.ndarray:
    """Flat network outputs back to absolute chains (n, 21, 3).

    M4 carries no absolute position, so the caller must supply the
    ground-truth first-marker positions as ``anchors`` (n, 3).
    """
    z = np.asarray(values, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.output_dim:
        raise ValueError(f"expected (n, {params.output_dim}) values, got {z.shape}")
    n = z.shape[0]
    if params.method == "m4":
        if anchors is None:
            raise ValueError("m4 inversion needs the ground-truth anchor positions")
        anchors = np.asarray(anchors, dtype=np.float64)
        if anchors.shape != (n, 3):
            raise ValueError(f"anchors must be ({n}, 3), got {anchors.shape}")
        deltas = z.reshape(n, -1, 3)
        out = np.empty((n, deltas.shape[1] + 1, 3))
        out[:, 0] = anchors
        np.cumsum(deltas, axis=1, out=out[:, 1:])
        out[:, 1:] += anchors[:, None, :]
        return out
    y = z.reshape(n, -1, 3)
    if params.method == "m1":
        y = y * params.global_radius
    elif params.method == "m2":
        y = y * params.radii[None, :, None]
    else:
        y = np.einsum("kij,nkj->nki", params.dewhiteners, y)
    return y + params.center


def chain_to_flat(chain: MarkerChain, params: OutputTransformParams) -> np.ndarray:
    """Single-chain convenience wrapper over apply_output."""
    return apply_output(chain.positions[None], params)[0]


def flat_to_chain(values: np.ndarray, params: OutputTransformParams,
                  anchor: np.ndarray | None = None) -> MarkerChain:
    """Single-prediction convenience wrapper over invert_output."""
    anchors = None if anchor is None else np.asarray(anchor, dtype=np.float64)[None]
    positions = invert_output(np.asarray(values)[None], params, anchors)[0]
    return MarkerChain(positions)
