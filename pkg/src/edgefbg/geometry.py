"""Sensor shapes as piecewise-constant-curvature curves.

A shape is a sequence of segments, each with an arc length, a curvature
and a bending direction. The curve is integrated in a parallel-transport
frame: every segment is a circular arc (or a straight line) composed by a
rigid transform, so marker positions are closed-form and there is no
step-size error to reason about. Bending directions are angles in the
transverse plane measured against the transported frame axes, which stays
well defined when the curvature passes through zero.

Coordinates are millimetres. The standard sensor is 300 mm long and
carries 21 markers, i.e. 20 gaps of 15 mm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SENSOR_LENGTH_MM = 300.0
N_MARKERS = 21
MARKER_SPACING_MM = 15.0
MAX_CURVATURE = 0.02  # 1/mm, i.e. a 50 mm minimum bend radius


@dataclass(frozen=True)
class Segment:
    """One constant-curvature piece of the sensor."""

    arc_length: float  # mm, > 0
    curvature: float  # 1/mm, >= 0
    bend_direction: float  # rad, in [0, 2*pi)

    def __post_init__(self):
        if not self.arc_length > 0:
            raise ValueError(f"segment arc_length must be > 0, got {self.arc_length}")
        if self.curvature < 0:
            raise ValueError(f"segment curvature must be >= 0, got {self.curvature}")
        if not 0 <= self.bend_direction < 2 * np.pi:
            raise ValueError(
                f"bend_direction must lie in [0, 2*pi), got {self.bend_direction}"
            )


@dataclass(frozen=True)
class ShapeParams:
    """Piecewise-constant-curvature description of a sensor shape."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("shape needs at least one segment")

    @property
    def total_length(self) -> float:
        return float(sum(seg.arc_length for seg in self.segments))

    def max_curvature(self) -> float:
        return max(seg.curvature for seg in self.segments)

    def curvature_at(self, s: float) -> tuple[float, float]:
        """Local (curvature, bend_direction) at arc length ``s``.

        Segment boundaries belong to the following segment; ``s`` at the
        very end of the sensor returns the last segment's values.
        """
        if s < 0 or s > self.total_length + 1e-9:
            raise ValueError(f"arc length {s} outside [0, {self.total_length}]")
        start = 0.0
        for seg in self.segments:
            if s < start + seg.arc_length:
                return seg.curvature, seg.bend_direction
            start += seg.arc_length
        last = self.segments[-1]
        return last.curvature, last.bend_direction


def straight_shape(total_length: float = SENSOR_LENGTH_MM, n_segments: int = 5) -> ShapeParams:
    """Zero-curvature shape, handy as a reference in tests and demos."""
    seg_len = total_length / n_segments
    return ShapeParams(tuple(Segment(seg_len, 0.0, 0.0) for _ in range(n_segments)))


@dataclass(frozen=True)
class MarkerChain:
    """Ordered 3-D marker positions along the sensor, in mm.

    The physical sensor carries 21 markers spaced 15 mm apart; predicted
    chains share the layout. ``positions`` is an (n, 3) float array.
    """

    positions: np.ndarray
    marker_spacing: float = MARKER_SPACING_MM

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ValueError(f"positions must be (n>=2, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)

    @property
    def n_markers(self) -> int:
        return self.positions.shape[0]

    @property
    def tip(self) -> np.ndarray:
        return self.positions[-1]


@dataclass(frozen=True)
class RelativeChain:
    """Marker-to-marker deltas; one row fewer than the absolute chain."""

    deltas: np.ndarray
    marker_spacing: float = MARKER_SPACING_MM

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] < 1:
            raise ValueError(f"deltas must be (n>=1, 3), got {d.shape}")
        object.__setattr__(self, "deltas", d)


def _advance(p: np.ndarray, frame: np.ndarray, curvature: float, direction: float,
             ds: float) -> tuple[np.ndarray, np.ndarray]:
    """Move ``ds`` along a constant-curvature arc; returns new (point, frame).

    ``frame`` columns are (e1, e2, t) with t the tangent. The bend happens
    in the plane spanned by t and d = cos(dir)*e1 + sin(dir)*e2, and the
    whole frame is rotated rigidly about t x d, which transports e1/e2
    without introducing twist.
    """
    t = frame[:, 2]
    angle = curvature * ds
    # below 1e-150 rad the chord deviates from a straight step by < 1e-150*ds,
    # and denormal intermediates would wreck sin(angle)/curvature
    if angle < 1e-150:
        return p + ds * t, frame
    d = np.cos(direction) * frame[:, 0] + np.sin(direction) * frame[:, 1]
    # chord offsets; 2*sin^2(x/2) form avoids cancellation in 1-cos for tiny angles
    p_new = p + (np.sin(angle) / curvature) * t + (2.0 * np.sin(angle / 2.0) ** 2 / curvature) * d
    axis = np.cross(t, d)
    rot = _rotation_about(axis, angle)
    return p_new, rot @ frame


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def integrate_shape(params: ShapeParams, n_markers: int = N_MARKERS,
                    spacing: float = MARKER_SPACING_MM,
                    max_curvature: float = MAX_CURVATURE) -> MarkerChain:
    """Place ``n_markers`` markers at multiples of ``spacing`` along the curve.

    The base marker sits at the origin with the sensor initially pointing
    along +z. Raises if the markers do not fit on the curve or if any
    segment bends tighter than ``max_curvature``.
    """
    if n_markers < 2:
        raise ValueError(f"need at least 2 markers, got {n_markers}")
    needed = spacing * (n_markers - 1)
    if needed > params.total_length + 1e-9:
        raise ValueError(
            f"markers span {needed} mm but the shape is only {params.total_length} mm long"
        )
    for seg in params.segments:
        if seg.curvature > max_curvature:
            raise ValueError(
                f"curvature {seg.curvature} exceeds the {max_curvature} 1/mm bound"
            )

    positions = np.empty((n_markers, 3), dtype=np.float64)
    positions[0] = 0.0
    p = np.zeros(3)
    frame = np.eye(3)  # columns e1, e2, tangent; tangent starts along +z
    seg_iter = iter(params.segments)
    seg = next(seg_iter)
    seg_left = seg.arc_length
    for k in range(1, n_markers):
        to_go = spacing
        while to_go > seg_left + 1e-12:
            p, frame = _advance(p, frame, seg.curvature, seg.bend_direction, seg_left)
            to_go -= seg_left
            try:
                seg = next(seg_iter)
                seg_left = seg.arc_length
            except StopIteration:
                # float residue at the very end of the sensor; consume it in place
                if to_go > 1e-9:
                    raise ValueError(
                        f"ran out of arc length with {to_go} mm left to marker {k}"
                    ) from None
                seg_left = to_go
        p, frame = _advance(p, frame, seg.curvature, seg.bend_direction, to_go)
        seg_left -= to_go
        positions[k] = p
    return MarkerChain(positions, marker_spacing=spacing)


def to_relative(chain: MarkerChain) -> RelativeChain:
    """Consecutive-marker deltas: deltas[k] = positions[k+1] - positions[k]."""
    return RelativeChain(np.diff(chain.positions, axis=0), marker_spacing=chain.marker_spacing)


def from_relative(rel: RelativeChain, anchor) -> MarkerChain:
    """Rebuild absolute positions from deltas, anchored at the first marker."""
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    positions = np.empty((rel.deltas.shape[0] + 1, 3), dtype=np.float64)
    positions[0] = anchor
    np.cumsum(rel.deltas, axis=0, out=positions[1:])
    positions[1:] += anchor
    return MarkerChain(positions, marker_spacing=rel.marker_spacing)
