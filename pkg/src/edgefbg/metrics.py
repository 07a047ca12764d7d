"""Shape evaluation metrics: tip error, chain RMSE, box-plot summaries.

All distances are Euclidean and reported in mm. Per-marker statistics can
exclude the first marker, which is appropriate when the prediction anchors
on the ground-truth first position (the relative output method) and its
error there is zero by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MarkerChain


def _chain_array(chain) -> np.ndarray:
    pos = chain.positions if isinstance(chain, MarkerChain) else chain
    pos = np.asarray(pos, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"chain must be (markers, 3), got {pos.shape}")
    return pos


def _paired(true_chain, pred_chain) -> tuple[np.ndarray, np.ndarray]:
    t = _chain_array(true_chain)
    p = _chain_array(pred_chain)
    if t.shape != p.shape:
        raise ValueError(f"marker count mismatch: {t.shape[0]} vs {p.shape[0]}")
    return t, p


def tip_error(true_chain, pred_chain) -> float:
    """Euclidean distance between the true and predicted last markers."""
    t, p = _paired(true_chain, pred_chain)
    return float(np.linalg.norm(t[-1] - p[-1]))


def shape_rmse(true_chain, pred_chain, exclude_first: bool = False) -> float:
    """Root-mean-square of per-marker Euclidean distances."""
    t, p = _paired(true_chain, pred_chain)
    if exclude_first:
        t, p = t[1:], p[1:]
    sq = np.square(t - p).sum(axis=1)
    return float(np.sqrt(sq.mean()))


def marker_distances(true_chains: np.ndarray, pred_chains: np.ndarray,
                     exclude_first: bool = False) -> np.ndarray:
    """Per-marker Euclidean distances for a batch: (n_samples, n_markers)."""
    t = np.asarray(true_chains, dtype=np.float64)
    p = np.asarray(pred_chains, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 3 or t.shape[2] != 3:
        raise ValueError(f"chains must match as (n, markers, 3), got {t.shape} vs {p.shape}")
    if exclude_first:
        t, p = t[:, 1:], p[:, 1:]
    return np.sqrt(np.square(t - p).sum(axis=2))


@dataclass(frozen=True)
class BoxStats:
    """Box-plot summary: quartiles, 1.5*IQR whiskers, outlier count."""

    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: int

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize(values: np.ndarray) -> BoxStats:
    """Box statistics with linear-interpolation percentiles.

    Whiskers sit on the most extreme data points still within 1.5*IQR of
    the quartiles; everything beyond counts as an outlier.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot summarize an empty value set")
    if not np.all(np.isfinite(v)):
        raise ValueError("values contain non-finite entries")
    q1, median, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return BoxStats(
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=int(v.size - inside.size),
    )


@dataclass(frozen=True)
class ShapeErrorReport:
    """Errors of one predicted chain against its ground truth."""

    tip_error: float
    rmse: float
    per_marker: np.ndarray
    aggregate: BoxStats

    def __post_init__(self):
        if self.per_marker.size and self.rmse > float(self.per_marker.max()) + 1e-12:
            raise ValueError("rmse cannot exceed the worst per-marker distance")


def shape_error_report(true_chain, pred_chain,
                       exclude_first: bool = False) -> ShapeErrorReport:
    t, p = _paired(true_chain, pred_chain)
    dist = marker_distances(t[None], p[None], exclude_first)[0]
    return ShapeErrorReport(
        tip_error=tip_error(t, p),
        rmse=shape_rmse(t, p, exclude_first),
        per_marker=dist,
        aggregate=summarize(dist),
    )


def per_marker_summary(true_chains: np.ndarray, pred_chains: np.ndarray,
                       exclude_first: bool = False) -> list[BoxStats]:
    """Box statistics of each marker's error across the sample set."""
    dist = marker_distances(true_chains, pred_chains, exclude_first)
    return [summarize(dist[:, k]) for k in range(dist.shape[1])]


def report_table(true_chains: np.ndarray, pred_chains: np.ndarray,
                 exclude_first: bool = False) -> str:
    """Tab-separated error table: one row per sample, aggregate footer."""
    t = np.asarray(true_chains, dtype=np.float64)
    p = np.asarray(pred_chains, dtype=np.float64)
    tips = np.array([tip_error(a, b) for a, b in zip(t, p)])
    rmses = np.array([shape_rmse(a, b, exclude_first) for a, b in zip(t, p)])
    lines = ["sample\ttip_error_mm\trmse_mm"]
    for k, (tip, rmse) in enumerate(zip(tips, rmses)):
        lines.append(f"{k}\t{tip:.6f}\t{rmse:.6f}")
    for name, stats in (("tip_error", summarize(tips)), ("rmse", summarize(rmses))):
        lines.append(
            f"aggregate\t{name}\tmedian={stats.median:.6f}"
            f"\tq1={stats.q1:.6f}\tq3={stats.q3:.6f}"
            f"\twhisker_low={stats.whisker_low:.6f}"
            f"\twhisker_high={stats.whisker_high:.6f}"
            f"\toutliers={stats.outliers}"
        )
    return "\n".join(lines) + "\n"
