"""Shape integration against closed-form arcs and chain round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgefbg.geometry import (
    MARKER_SPACING_MM,
    MAX_CURVATURE,
    N_MARKERS,
    SENSOR_LENGTH_MM,
    MarkerChain,
    Segment,
    ShapeParams,
    from_relative,
    integrate_shape,
    straight_shape,
    to_relative,
)


def single_arc(curvature, direction):
    return ShapeParams((Segment(SENSOR_LENGTH_MM, curvature, direction),))


segments_st = st.lists(
    st.tuples(
        st.floats(30.0, 120.0),
        st.floats(0.0, MAX_CURVATURE),
        st.floats(0.0, 2 * np.pi, exclude_max=True),
    ),
    min_size=1,
    max_size=6,
).map(lambda rows: ShapeParams(tuple(Segment(*r) for r in rows)))


class TestStraight:
    def test_markers_on_z_axis(self):
        chain = integrate_shape(straight_shape())
        expected = np.zeros((N_MARKERS, 3))
        expected[:, 2] = MARKER_SPACING_MM * np.arange(N_MARKERS)
        np.testing.assert_array_equal(chain.positions, expected)

    def test_zero_curvature_any_direction(self):
        chain = integrate_shape(single_arc(0.0, 1.234))
        assert np.all(chain.positions[:, :2] == 0.0)


class TestConstantArc:
    """A single constant-curvature segment traces a circle of radius 1/kappa."""

    def test_chord_length_closed_form(self):
        # chord between arc-length-s apart points on a circle: 2 r sin(s / 2r)
        kappa = 0.01
        chain = integrate_shape(single_arc(kappa, 0.0))
        chords = np.linalg.norm(np.diff(chain.positions, axis=0), axis=1)
        expected = 2.0 / kappa * np.sin(MARKER_SPACING_MM * kappa / 2.0)
        np.testing.assert_allclose(chords, expected, rtol=0, atol=1e-9)

    def test_markers_equidistant_from_center(self):
        # bend towards +x: center at (1/kappa, 0, 0)
        kappa = 0.01
        chain = integrate_shape(single_arc(kappa, 0.0))
        center = np.array([1.0 / kappa, 0.0, 0.0])
        radii = np.linalg.norm(chain.positions - center, axis=1)
        np.testing.assert_allclose(radii, 1.0 / kappa, rtol=0, atol=1e-9)

    def test_planar_in_bend_plane(self):
        chain = integrate_shape(single_arc(0.015, 0.0))
        np.testing.assert_allclose(chain.positions[:, 1], 0.0, atol=1e-12)

    def test_direction_rotates_the_plane(self):
        kappa, theta = 0.012, 0.7
        base = integrate_shape(single_arc(kappa, 0.0)).positions
        rot = integrate_shape(single_arc(kappa, theta)).positions
        c, s = np.cos(theta), np.sin(theta)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(rot, base @ rz.T, atol=1e-9)

    def test_exact_positions_closed_form(self):
        # circle through origin, center (r,0,0), param by arc length s:
        # p(s) = (r(1-cos(s/r)), 0, r sin(s/r))
        kappa = 0.02
        r = 1.0 / kappa
        chain = integrate_shape(single_arc(kappa, 0.0))
        s = MARKER_SPACING_MM * np.arange(N_MARKERS)
        expected = np.stack(
            [r * (1 - np.cos(s / r)), np.zeros_like(s), r * np.sin(s / r)], axis=1
        )
        np.testing.assert_allclose(chain.positions, expected, atol=1e-9)


class TestMultiSegment:
    def test_two_segments_marker_count_and_spacing(self):
        shape = ShapeParams(
            (Segment(150.0, 0.01, 0.0), Segment(150.0, 0.02, np.pi / 2))
        )
        chain = integrate_shape(shape)
        assert chain.n_markers == N_MARKERS
        chords = np.linalg.norm(np.diff(chain.positions, axis=0), axis=1)
        assert np.all(chords <= MARKER_SPACING_MM + 1e-9)

    def test_marker_on_segment_boundary(self):
        # boundary at s=150 coincides with marker 10; straight second half
        # continues along the first arc's exit tangent
        shape = ShapeParams((Segment(150.0, 0.01, 0.0), Segment(150.0, 0.0, 0.0)))
        chain = integrate_shape(shape)
        tail = np.diff(chain.positions[10:], axis=0)
        np.testing.assert_allclose(
            tail, np.broadcast_to(tail[0], tail.shape), atol=1e-9
        )
        np.testing.assert_allclose(
            np.linalg.norm(tail, axis=1), MARKER_SPACING_MM, atol=1e-9
        )

    def test_too_short_shape_raises(self):
        with pytest.raises(ValueError):
            integrate_shape(ShapeParams((Segment(100.0, 0.0, 0.0),)))

    def test_float_residue_at_end_is_tolerated(self):
        # seven equal segments put marker 21 at the end up to float error
        seg = SENSOR_LENGTH_MM / 7
        shape = ShapeParams(tuple(Segment(seg, 0.005, 0.3) for _ in range(7)))
        chain = integrate_shape(shape)
        assert chain.n_markers == N_MARKERS

    def test_curvature_cap_enforced(self):
        with pytest.raises(ValueError):
            integrate_shape(single_arc(MAX_CURVATURE * 1.5, 0.0))
        chain = integrate_shape(
            single_arc(MAX_CURVATURE * 1.5, 0.0), max_curvature=MAX_CURVATURE * 2
        )
        assert chain.n_markers == N_MARKERS


class TestRelative:
    def test_round_trip(self):
        shape = ShapeParams(
            (Segment(120.0, 0.008, 1.0), Segment(180.0, 0.015, 4.0))
        )
        chain = integrate_shape(shape)
        rel = to_relative(chain)
        assert rel.deltas.shape == (N_MARKERS - 1, 3)
        back = from_relative(rel, chain.positions[0])
        np.testing.assert_allclose(back.positions, chain.positions, atol=1e-12)

    def test_deltas_telescope_to_tip(self):
        chain = integrate_shape(single_arc(0.01, 2.0))
        rel = to_relative(chain)
        np.testing.assert_allclose(
            chain.positions[0] + rel.deltas.sum(axis=0), chain.tip, atol=1e-12
        )

    def test_anchor_shift_translates_chain(self):
        chain = integrate_shape(single_arc(0.01, 2.0))
        rel = to_relative(chain)
        anchor = np.array([5.0, -3.0, 7.0])
        moved = from_relative(rel, anchor)
        np.testing.assert_allclose(
            moved.positions, chain.positions + anchor, atol=1e-12
        )


class TestValidation:
    def test_rejects_nonpositive_length(self):
        with pytest.raises(ValueError):
            Segment(0.0, 0.01, 0.0)

    def test_rejects_negative_curvature(self):
        with pytest.raises(ValueError):
            Segment(10.0, -0.01, 0.0)

    def test_rejects_direction_out_of_range(self):
        with pytest.raises(ValueError):
            Segment(10.0, 0.01, 2 * np.pi)
        with pytest.raises(ValueError):
            Segment(10.0, 0.01, -0.1)

    def test_rejects_empty_params(self):
        with pytest.raises(ValueError):
            ShapeParams(())

    def test_chain_rejects_nonfinite(self):
        bad = np.zeros((N_MARKERS, 3))
        bad[3, 1] = np.nan
        with pytest.raises(ValueError):
            MarkerChain(bad)

    def test_curvature_at(self):
        shape = ShapeParams((Segment(100.0, 0.01, 1.0), Segment(200.0, 0.02, 2.0)))
        assert shape.curvature_at(50.0) == (0.01, 1.0)
        assert shape.curvature_at(150.0) == (0.02, 2.0)
        assert shape.curvature_at(100.0) == (0.02, 2.0)  # right-continuous
        assert shape.curvature_at(300.0) == (0.02, 2.0)  # end clamps to last


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(segments_st)
    def test_chords_never_exceed_arc_spacing(self, shape):
        total = shape.total_length
        n = int(total // MARKER_SPACING_MM) + 1
        chain = integrate_shape(shape, n_markers=n)
        chords = np.linalg.norm(np.diff(chain.positions, axis=0), axis=1)
        assert np.all(chords <= MARKER_SPACING_MM * (1 + 1e-12))

    @settings(max_examples=100, deadline=None)
    @given(segments_st)
    def test_deterministic(self, shape):
        n = int(shape.total_length // MARKER_SPACING_MM) + 1
        a = integrate_shape(shape, n_markers=n)
        b = integrate_shape(shape, n_markers=n)
        np.testing.assert_array_equal(a.positions, b.positions)

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(1e-6, MAX_CURVATURE),
        st.floats(0.0, 2 * np.pi, exclude_max=True),
    )
    def test_arc_markers_lie_on_circle(self, kappa, theta):
        chain = integrate_shape(single_arc(kappa, theta))
        r = 1.0 / kappa
        center = r * np.array([np.cos(theta), np.sin(theta), 0.0])
        radii = np.linalg.norm(chain.positions - center, axis=1)
        np.testing.assert_allclose(radii, r, rtol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(segments_st, st.integers(0, 2**32 - 1))
    def test_relative_round_trip(self, shape, seed):
        n = int(shape.total_length // MARKER_SPACING_MM) + 1
        chain = integrate_shape(shape, n_markers=n)
        anchor = np.random.default_rng(seed).normal(size=3)
        back = from_relative(to_relative(chain), chain.positions[0])
        np.testing.assert_allclose(back.positions, chain.positions, atol=1e-9)
        moved = from_relative(to_relative(chain), anchor)
        np.testing.assert_allclose(
            moved.positions - moved.positions[0],
            chain.positions - chain.positions[0],
            atol=1e-9,
        )
