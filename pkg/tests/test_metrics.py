"""Metric tests against hand arithmetic and brute-force recomputation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgefbg.geometry import MarkerChain
from edgefbg.metrics import (
    BoxStats,
    marker_distances,
    per_marker_summary,
    report_table,
    shape_error_report,
    shape_rmse,
    summarize,
    tip_error,
)


def random_chain(seed: int, n: int = 21) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.normal(0, 5, size=(n, 3)), axis=0)


class TestTipError:
    def test_identical_chains(self):
        c = random_chain(0)
        assert tip_error(c, c) == 0.0

    def test_3_4_5_triangle_at_tip(self):
        c = random_chain(1)
        p = c.copy()
        p[-1] += np.array([3.0, 4.0, 0.0])
        assert tip_error(c, p) == pytest.approx(5.0, abs=1e-12)

    def test_non_tip_offsets_ignored(self):
        c = random_chain(2)
        p = c.copy()
        p[:-1] += 7.0
        assert tip_error(c, p) == 0.0

    def test_accepts_marker_chain_objects(self):
        c = random_chain(3)
        assert tip_error(MarkerChain(c), MarkerChain(c)) == 0.0

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            tip_error(random_chain(4), random_chain(4, n=20))


class TestShapeRmse:
    def test_identical_chains(self):
        c = random_chain(5)
        assert shape_rmse(c, c) == 0.0

    def test_uniform_offset(self):
        c = random_chain(6)
        p = c + np.array([0.6, 0.0, 0.8])
        assert shape_rmse(c, p) == pytest.approx(1.0, abs=1e-12)

    def test_one_marker_off_by_2_among_20(self):
        c = random_chain(7)
        p = c.copy()
        p[5] += np.array([2.0, 0.0, 0.0])
        assert shape_rmse(c, p, exclude_first=True) == pytest.approx(
            np.sqrt(4.0 / 20.0), abs=1e-12)

    def test_exclude_first_drops_first_marker(self):
        c = random_chain(8)
        p = c.copy()
        p[0] += 100.0
        assert shape_rmse(c, p, exclude_first=True) == 0.0
        assert shape_rmse(c, p, exclude_first=False) > 0.0

    def test_matches_brute_force(self):
        c, p = random_chain(9), random_chain(10)
        acc = sum(float(np.linalg.norm(a - b)) ** 2 for a, b in zip(c, p))
        assert shape_rmse(c, p) == pytest.approx(np.sqrt(acc / 21.0), rel=1e-12)

    @given(seed=st.integers(0, 100), dx=st.floats(-50, 50), dy=st.floats(-50, 50))
    @settings(max_examples=30, deadline=None)
    def test_translation_invariance(self, seed, dx, dy):
        c, p = random_chain(seed), random_chain(seed + 1000)
        shift = np.array([dx, dy, 1.5])
        assert shape_rmse(c + shift, p + shift) == pytest.approx(
            shape_rmse(c, p), abs=1e-12)
        assert tip_error(c + shift, p + shift) == pytest.approx(
            tip_error(c, p), abs=1e-12)


class TestSummarize:
    def test_values_1_to_5(self):
        stats = summarize(np.arange(1.0, 6.0))
        assert stats.median == 3.0
        assert stats.q1 == 2.0
        assert stats.q3 == 4.0
        assert stats.iqr == 2.0
        assert stats.whisker_low == 1.0
        assert stats.whisker_high == 5.0
        assert stats.outliers == 0

    def test_single_value(self):
        stats = summarize(np.array([7.5]))
        assert stats.median == 7.5
        assert stats.iqr == 0.0
        assert stats.whisker_low == stats.whisker_high == 7.5
        assert stats.outliers == 0

    def test_symmetric_data_median_equals_mean(self):
        v = np.concatenate([np.linspace(-3, 3, 101)])
        stats = summarize(v)
        assert stats.median == pytest.approx(v.mean(), abs=1e-12)

    def test_outlier_beyond_whisker(self):
        stats = summarize(np.array([1.0, 2.0, 3.0, 4.0, 100.0]))
        assert stats.q1 == 2.0
        assert stats.q3 == 4.0
        assert stats.whisker_high == 4.0  # most extreme point inside q3 + 1.5*iqr
        assert stats.whisker_low == 1.0
        assert stats.outliers == 1

    def test_empty_and_non_finite_rejected(self):
        with pytest.raises(ValueError):
            summarize(np.array([]))
        with pytest.raises(ValueError):
            summarize(np.array([1.0, np.nan]))


class TestReports:
    def test_report_invariants(self):
        c, p = random_chain(20), random_chain(21)
        report = shape_error_report(c, p)
        assert report.per_marker.shape == (21,)
        assert report.rmse <= report.per_marker.max() + 1e-12
        assert np.all(report.per_marker >= 0.0)
        assert report.tip_error == pytest.approx(report.per_marker[-1], abs=1e-12)

    def test_exclude_first_shrinks_per_marker(self):
        c, p = random_chain(22), random_chain(23)
        report = shape_error_report(c, p, exclude_first=True)
        assert report.per_marker.shape == (20,)

    def test_per_marker_summary_shape(self):
        true = np.stack([random_chain(s) for s in range(8)])
        pred = true + np.random.default_rng(1).normal(0, 1, true.shape)
        stats = per_marker_summary(true, pred)
        assert len(stats) == 21
        assert all(isinstance(s, BoxStats) for s in stats)
        stats20 = per_marker_summary(true, pred, exclude_first=True)
        assert len(stats20) == 20

    def test_marker_distances_brute_force(self):
        true = np.stack([random_chain(s) for s in range(5)])
        pred = np.stack([random_chain(s + 50) for s in range(5)])
        dist = marker_distances(true, pred)
        for i in range(5):
            for k in range(21):
                assert dist[i, k] == pytest.approx(
                    np.linalg.norm(true[i, k] - pred[i, k]), rel=1e-12)

    def test_report_table_layout(self):
        true = np.stack([random_chain(s) for s in range(4)])
        pred = true + 0.25
        text = report_table(true, pred)
        lines = text.strip().split("\n")
        assert lines[0] == "sample\ttip_error_mm\trmse_mm"
        assert len(lines) == 1 + 4 + 2  # header, rows, two aggregate footers
        assert lines[1].startswith("0\t")
        assert lines[-2].startswith("aggregate\ttip_error\tmedian=")
        assert lines[-1].startswith("aggregate\trmse\tmedian=")
        row = lines[1].split("\t")
        offset = float(np.linalg.norm([0.25, 0.25, 0.25]))
        assert float(row[1]) == pytest.approx(offset, abs=1e-6)
        assert float(row[2]) == pytest.approx(offset, abs=1e-6)
