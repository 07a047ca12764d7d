"""Synthetic edge-FBG spectra from sensor shapes.

The forward model is deliberately phenomenological. Bending shifts the
guided mode towards the outside of the bend, so a grating sitting at edge
angle phi sees its reflected peak grow or shrink with the projection of
the local bend direction onto that edge. On top of the 15 Gaussian peaks
the model applies a curvature- and wavelength-dependent attenuation
envelope and a slow polarization ripple whose phase moves with curvature,
so curvature information is entangled across the whole spectrum rather
than sitting in isolated peak heights.

Amplitude rule per grating: A = A0 * (1 + g * kappa * cos(theta - phi)),
clipped from below at 0.05 * A0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError
from .geometry import (
    MAX_CURVATURE,
    MARKER_SPACING_MM,
    N_MARKERS,
    SENSOR_LENGTH_MM,
    MarkerChain,
    Segment,
    ShapeParams,
    integrate_shape,
)

GRID_POINTS = 125
GRID_START_NM = 812.0
GRID_END_NM = 871.0
N_PLANES = 5
N_SPECTRA = 3

AMPLITUDE_CLIP = 0.05
RIPPLE_PERIOD_NM = 30.0
RIPPLE_PHASE_GAIN = 200.0  # rad per (1/mm) of mean curvature


def wavelength_grid() -> np.ndarray:
    return np.linspace(GRID_START_NM, GRID_END_NM, GRID_POINTS)


def _default_plane_positions() -> np.ndarray:
    # midpoints of five equal sections, so each plane senses one segment
    # of the matching five-segment shape sampler
    step = SENSOR_LENGTH_MM / N_PLANES
    return (np.arange(N_PLANES) + 0.5) * step


def _default_bragg_centers() -> np.ndarray:
    return np.linspace(816.0, 867.0, 3 * N_PLANES)


@dataclass(frozen=True)
class SensorLayout:
    """Where the gratings sit, spectrally and along the fiber.

    Each of the five sensing planes carries three co-located gratings at
    the left, top and right edge of the core.
    """

    plane_positions: np.ndarray = field(default_factory=_default_plane_positions)
    bragg_centers: np.ndarray = field(default_factory=_default_bragg_centers)
    edge_angles: tuple[float, float, float] = (np.pi, np.pi / 2, 0.0)
    peak_width: float = 0.8  # Gaussian sigma, nm
    base_amplitude: float = 1.0
    coupling_gain: float = 30.0  # mm; scales curvature into amplitude change

    def __post_init__(self):
        planes = np.asarray(self.plane_positions, dtype=np.float64)
        centers = np.asarray(self.bragg_centers, dtype=np.float64)
        object.__setattr__(self, "plane_positions", planes)
        object.__setattr__(self, "bragg_centers", centers)
        if planes.shape != (N_PLANES,):
            raise ValueError(f"expected {N_PLANES} plane positions, got {planes.shape}")
        if centers.shape != (3 * N_PLANES,):
            raise ValueError(f"expected {3 * N_PLANES} Bragg centers, got {centers.shape}")
        if np.any(np.diff(centers) <= 0):
            raise ValueError("bragg_centers must be strictly increasing")
        if centers[0] < GRID_START_NM or centers[-1] > GRID_END_NM:
            raise ValueError("bragg_centers must lie inside the wavelength grid")
        if np.any(np.diff(centers) < 3.0 * self.peak_width):
            raise ValueError(
                f"adjacent Bragg centers closer than 3*peak_width={3 * self.peak_width} nm"
            )

    @property
    def grid(self) -> np.ndarray:
        return wavelength_grid()


@dataclass(frozen=True)
class NoiseModel:
    """Strengths of the simulated measurement imperfections.

    temporal_jitter_sigma perturbs the shape independently for each of the
    three consecutive spectra (relative on curvature, radians on bend
    direction). attenuation_coeff multiplies mean curvature (1/mm) times
    wavelength offset from the grid start (nm) inside a decaying
    exponential envelope.
    """

    additive_sigma: float = 0.01
    temporal_jitter_sigma: float = 0.01
    polarization_ripple_amp: float = 0.05
    attenuation_coeff: float = 0.5

    def __post_init__(self):
        for name in ("additive_sigma", "temporal_jitter_sigma",
                     "polarization_ripple_amp", "attenuation_coeff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.polarization_ripple_amp >= 1.0:
            raise ValueError("polarization_ripple_amp must be < 1 to keep spectra nonnegative")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SpectrumSample:
    """Three consecutive spectra plus the ground-truth marker chain."""

    intensities: np.ndarray  # (3, 125) float32, nonnegative
    shape_ref: MarkerChain

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float32)
        if arr.shape != (N_SPECTRA, GRID_POINTS):
            raise ValueError(f"intensities must be {(N_SPECTRA, GRID_POINTS)}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("intensities contain non-finite values")
        if np.any(arr < 0):
            raise ValueError("intensities must be nonnegative")
        object.__setattr__(self, "intensities", arr)


@dataclass(frozen=True)
class ShapeSampler:
    """Uniform random shapes: per segment, curvature ~ U[0, max], direction ~ U[0, 2pi)."""

    n_segments: int = N_PLANES
    total_length: float = SENSOR_LENGTH_MM
    max_curvature: float = MAX_CURVATURE

    def sample(self, rng: np.random.Generator) -> ShapeParams:
        seg_len = self.total_length / self.n_segments
        curvatures = rng.uniform(0.0, self.max_curvature, size=self.n_segments)
        directions = rng.uniform(0.0, 2.0 * np.pi, size=self.n_segments)
        return ShapeParams(tuple(
            Segment(seg_len, float(k), float(d)) for k, d in zip(curvatures, directions)
        ))


def edge_amplitudes(shape: ShapeParams, layout: SensorLayout) -> np.ndarray:
    """Peak amplitude of every grating, as a (planes, 3) array.

    This is the core directional response: the grating aligned with the
    local bend direction brightens, the opposite one dims, clipped at
    0.05 * A0 so amplitudes stay physical at extreme curvature.
    """
    amps = np.empty((N_PLANES, 3), dtype=np.float64)
    a0 = layout.base_amplitude
    for p, s_plane in enumerate(layout.plane_positions):
        kappa, theta = shape.curvature_at(float(s_plane))
        for e, phi in enumerate(layout.edge_angles):
            a = a0 * (1.0 + layout.coupling_gain * kappa * np.cos(theta - phi))
            amps[p, e] = max(a, AMPLITUDE_CLIP * a0)
    return amps


def _mean_curvature(shape: ShapeParams) -> float:
    total = shape.total_length
    return sum(seg.arc_length * seg.curvature for seg in shape.segments) / total


def _jitter_shape(shape: ShapeParams, sigma: float, max_curvature: float,
                  rng: np.random.Generator) -> ShapeParams:
    if sigma == 0.0:
        return shape
    segs = []
    for seg in shape.segments:
        k = seg.curvature * (1.0 + sigma * rng.standard_normal())
        k = min(max(k, 0.0), max_curvature)
        d = (seg.bend_direction + sigma * rng.standard_normal()) % (2.0 * np.pi)
        segs.append(replace(seg, curvature=k, bend_direction=d))
    return ShapeParams(tuple(segs))


def _single_spectrum(shape: ShapeParams, layout: SensorLayout, noise: NoiseModel,
                     rng: np.random.Generator) -> np.ndarray:
    grid = layout.grid
    amps = edge_amplitudes(shape, layout)
    centers = layout.bragg_centers
    # (15, 125) Gaussian comb weighted by the per-grating amplitudes
    peaks = np.exp(-0.5 * ((grid[None, :] - centers[:, None]) / layout.peak_width) ** 2)
    spectrum = amps.reshape(-1) @ peaks
    kbar = _mean_curvature(shape)
    offset = grid - GRID_START_NM
    envelope = np.exp(-noise.attenuation_coeff * kbar * offset)
    ripple = 1.0 + noise.polarization_ripple_amp * np.sin(
        2.0 * np.pi * offset / RIPPLE_PERIOD_NM + RIPPLE_PHASE_GAIN * kbar
    )
    spectrum = spectrum * envelope * ripple
    if noise.additive_sigma > 0:
        spectrum = spectrum + noise.additive_sigma * rng.standard_normal(grid.shape)
    return np.maximum(spectrum, 0.0)


def _simulate_with_rng(shape: ShapeParams, layout: SensorLayout, noise: NoiseModel,
                       rng: np.random.Generator, n_markers: int = N_MARKERS,
                       spacing: float = MARKER_SPACING_MM) -> SpectrumSample:
    max_curv = max(MAX_CURVATURE, shape.max_curvature())
    rows = []
    for _ in range(N_SPECTRA):
        jittered = _jitter_shape(shape, noise.temporal_jitter_sigma, max_curv, rng)
        rows.append(_single_spectrum(jittered, layout, noise, rng))
    chain = integrate_shape(shape, n_markers=n_markers, spacing=spacing,
                            max_curvature=max_curv)
    return SpectrumSample(np.stack(rows).astype(np.float32), chain)


def simulate_spectrum(shape: ShapeParams, layout: SensorLayout, noise: NoiseModel,
                      seed: int) -> SpectrumSample:
    """Deterministic sample for a given shape; the target chain is the
    unjittered shape's markers."""
    return _simulate_with_rng(shape, layout, noise, np.random.default_rng(seed))


def sample_stream(n: int, seed: int, sampler: ShapeSampler, layout: SensorLayout,
                  noise: NoiseModel):
    """Yield ``n`` samples; sample i is a pure function of (seed, i).

    Each index gets its own RNG stream, so any index subset can be
    generated independently (or in parallel) with identical results.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        shape = sampler.sample(rng)
        yield _simulate_with_rng(shape, layout, noise, rng)


def generate_arrays(n: int, seed: int, sampler: ShapeSampler | None = None,
                    layout: SensorLayout | None = None,
                    noise: NoiseModel | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Generate (spectra, targets) arrays: (n, 3, 125) f32 and (n, 21, 3) f32."""
    sampler = sampler or ShapeSampler()
    layout = layout or SensorLayout()
    noise = noise if noise is not None else NoiseModel()
    spectra = np.empty((n, N_SPECTRA, GRID_POINTS), dtype=np.float32)
    targets = np.empty((n, N_MARKERS, 3), dtype=np.float32)
    for i, sample in enumerate(sample_stream(n, seed, sampler, layout, noise)):
        spectra[i] = sample.intensities
        targets[i] = sample.shape_ref.positions.astype(np.float32)
    return spectra, targets


def _build_section(cls, overrides) -> object:
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(overrides) - allowed)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**dict(overrides))


def simulator_from_dict(config) -> tuple[ShapeSampler, SensorLayout, NoiseModel]:
    """Sampler/layout/noise overrides from a config mapping; strict keys."""
    unknown = sorted(set(config) - {"sampler", "layout", "noise"})
    if unknown:
        raise ConfigError(f"unknown simulator keys: {', '.join(unknown)}")
    layout_doc = dict(config.get("layout", {}))
    for key in ("plane_positions", "bragg_centers"):
        if key in layout_doc:
            layout_doc[key] = np.asarray(layout_doc[key], dtype=np.float64)
    if "edge_angles" in layout_doc:
        layout_doc["edge_angles"] = tuple(float(v) for v in layout_doc["edge_angles"])
    sampler = _build_section(ShapeSampler, config.get("sampler", {}))
    layout = _build_section(SensorLayout, layout_doc)
    noise = _build_section(NoiseModel, config.get("noise", {}))
    return sampler, layout, noise


def generate_dataset(path, n: int, seed: int, sampler: ShapeSampler | None = None,
                     layout: SensorLayout | None = None,
                     noise: NoiseModel | None = None,
                     extra_meta: dict | None = None):
    """Generate ``n`` samples and write them as a dataset file; returns the
    loaded-view Dataset."""
    from . import dataio

    sampler = sampler or ShapeSampler()
    layout = layout or SensorLayout()
    noise = noise if noise is not None else NoiseModel()
    spectra, targets = generate_arrays(n, seed, sampler, layout, noise)
    meta = {
        "seed": seed,
        "n_samples": n,
        "sampler": {
            "n_segments": sampler.n_segments,
            "total_length": sampler.total_length,
            "max_curvature": sampler.max_curvature,
        },
        "layout": {
            "plane_positions": list(map(float, layout.plane_positions)),
            "bragg_centers": list(map(float, layout.bragg_centers)),
            "edge_angles": list(map(float, layout.edge_angles)),
            "peak_width": layout.peak_width,
            "base_amplitude": layout.base_amplitude,
            "coupling_gain": layout.coupling_gain,
        },
        "noise": {
            "additive_sigma": noise.additive_sigma,
            "temporal_jitter_sigma": noise.temporal_jitter_sigma,
            "polarization_ripple_amp": noise.polarization_ripple_amp,
            "attenuation_coeff": noise.attenuation_coeff,
        },
    }
    if extra_meta:
        meta.update(extra_meta)
    return dataio.write_dataset(path, spectra, targets, meta)
