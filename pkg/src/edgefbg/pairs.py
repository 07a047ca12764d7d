"""Mining genuine/imposter pairs for twin-network training.

Pairs of training samples are compared by the RMSE between their marker
chains. The 1st percentile of the pairwise RMSE distribution bounds the
"genuine" class (label 0: the two shapes are nearly the same) and pairs
within a relative band around the 25th percentile form the "imposter"
class (label 1: reliably different shapes). Everything else is discarded.

Full enumeration of all n*(n-1)/2 pairs is quadratic in the dataset, so
the default path samples a fixed budget of distinct pairs uniformly and
estimates the percentiles from the sample (error shrinks ~ 1/sqrt(budget)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_BUDGET = 2_000_000
DEFAULT_BAND = 0.01
_CHUNK = 1 << 18


@dataclass(frozen=True)
class PairThresholds:
    """RMSE cutoffs (mm) separating the two pair classes."""

    t_low: float
    t_high: float
    band: float = DEFAULT_BAND

    def __post_init__(self):
        if not (0.0 < self.t_low < self.t_high):
            raise ValueError(
                f"need 0 < t_low < t_high, got {self.t_low} and {self.t_high}"
            )
        if not 0.0 < self.band < 1.0:
            raise ValueError(f"band must be a fraction in (0, 1), got {self.band}")


@dataclass(frozen=True)
class LabeledPair:
    """One labeled training pair: 0 genuine, 1 imposter."""

    index_a: int
    index_b: int
    label: int

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise ValueError("a pair needs two distinct samples")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class PairSet:
    """Sampled unordered pairs (index_a < index_b) with their chain RMSE."""

    index_a: np.ndarray
    index_b: np.ndarray
    rmse: np.ndarray

    def __post_init__(self):
        if not (self.index_a.shape == self.index_b.shape == self.rmse.shape):
            raise ValueError("pair arrays must share one length")

    @property
    def size(self) -> int:
        return self.index_a.size


@dataclass(frozen=True)
class PairBatch:
    """One training batch of pair indices with contrastive labels."""

    index_a: np.ndarray
    index_b: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.size


def chain_rmse(chain_a: np.ndarray, chain_b: np.ndarray) -> float:
    """Root-mean-square of the per-marker Euclidean distances."""
    d = np.asarray(chain_a, dtype=np.float64) - np.asarray(chain_b, dtype=np.float64)
    return float(np.sqrt(np.square(d).sum(axis=-1).mean()))


def _row_offsets(n: int) -> np.ndarray:
    # rank of the first pair (i, i+1) for each row i of the i<j enumeration
    counts = n - 1 - np.arange(n - 1, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(counts[:-1])])


def _decode_ranks(ranks: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    offsets = _row_offsets(n)
    i = np.searchsorted(offsets, ranks, side="right") - 1
    j = ranks - offsets[i] + i + 1
    return i, j


def _sample_ranks(total: int, budget: int, rng: np.random.Generator) -> np.ndarray:
    """First ``budget`` distinct values of an iid uniform stream over range.

    Keeping the first occurrences in draw order makes the result a uniform
    without-replacement sample, and the retries cost little because the
    budget is far below the pair count whenever sampling happens at all.
    """
    ranks = np.empty(0, dtype=np.int64)
    missing = budget
    while missing > 0:
        draw = rng.integers(0, total, size=missing + missing // 8 + 16)
        merged = np.concatenate([ranks, draw])
        _, first = np.unique(merged, return_index=True)
        ranks = merged[np.sort(first)]
        missing = budget - ranks.size
    return ranks[:budget]


def _rmse_many(targets: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    out = np.empty(ia.size, dtype=np.float64)
    for s in range(0, ia.size, _CHUNK):
        sl = slice(s, s + _CHUNK)
        d = targets[ia[sl]].astype(np.float64) - targets[ib[sl]].astype(np.float64)
        out[sl] = np.sqrt(np.square(d).sum(axis=2).mean(axis=1))
    return out


def pairwise_rmse(targets: np.ndarray, budget: int = DEFAULT_BUDGET,
                  seed: int = 0) -> PairSet:
    """Distinct unordered sample pairs with their chain RMSE.

    Enumerates every pair when the budget covers them all; otherwise draws
    ``budget`` distinct pairs uniformly, deterministically from the seed.
    """
    targets = np.asarray(targets)
    if targets.ndim != 3 or targets.shape[2] != 3:
        raise ValueError(f"targets must be (n, markers, 3), got {targets.shape}")
    n = targets.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples to form pairs, got {n}")
    if budget < 1:
        raise ValueError(f"pair budget must be >= 1, got {budget}")
    total = n * (n - 1) // 2
    if budget >= total:
        ia, ib = np.triu_indices(n, k=1)
        ia = ia.astype(np.int64)
        ib = ib.astype(np.int64)
    else:
        rng = np.random.default_rng([seed])
        ia, ib = _decode_ranks(_sample_ranks(total, budget, rng), n)
    return PairSet(ia, ib, _rmse_many(targets, ia, ib))


def compute_thresholds(pairs: PairSet | np.ndarray,
                       band: float = DEFAULT_BAND) -> PairThresholds:
    """1st/25th percentile cutoffs (linear interpolation) of the RMSE values."""
    values = pairs.rmse if isinstance(pairs, PairSet) else np.asarray(pairs, dtype=np.float64)
    if values.size < 100:
        raise ValueError(
            f"need at least 100 rmse values for stable percentiles, got {values.size}"
        )
    t_low = float(np.percentile(values, 1.0))
    t_high = float(np.percentile(values, 25.0))
    return PairThresholds(t_low, t_high, band)


def label_pairs(pairs: PairSet, thresholds: PairThresholds) -> list[LabeledPair]:
    """Apply the threshold rule; pairs outside both classes are dropped.

    Genuine (0): rmse < t_low. Imposter (1): |rmse - t_high| <= band*t_high.
    """
    rmse = pairs.rmse
    genuine = rmse < thresholds.t_low
    imposter = np.abs(rmse - thresholds.t_high) <= thresholds.band * thresholds.t_high
    labeled = [
        LabeledPair(int(a), int(b), 0)
        for a, b in zip(pairs.index_a[genuine], pairs.index_b[genuine])
    ]
    labeled += [
        LabeledPair(int(a), int(b), 1)
        for a, b in zip(pairs.index_a[imposter], pairs.index_b[imposter])
    ]
    return labeled


def build_pair_epoch(pairs: Sequence[LabeledPair], seed: int,
                     batch_size: int = 64) -> list[PairBatch]:
    """Shuffled, class-balanced batches covering 2*min(class counts) pairs.

    The majority class is truncated after shuffling so every batch holds
    equal counts of both labels; order is deterministic in the seed.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"batch_size must be even and >= 2, got {batch_size}")
    genuine = [p for p in pairs if p.label == 0]
    imposter = [p for p in pairs if p.label == 1]
    if not genuine or not imposter:
        missing = "genuine" if not genuine else "imposter"
        raise ValueError(
            f"no {missing} pairs available; enlarge the pair budget so both "
            "classes are populated"
        )
    rng = np.random.default_rng([seed])
    keep = min(len(genuine), len(imposter))
    gen_order = rng.permutation(len(genuine))[:keep]
    imp_order = rng.permutation(len(imposter))[:keep]
    half = batch_size // 2
    batches = []
    for start in range(0, keep, half):
        chosen = [genuine[k] for k in gen_order[start:start + half]]
        chosen += [imposter[k] for k in imp_order[start:start + half]]
        order = rng.permutation(len(chosen))
        batches.append(PairBatch(
            index_a=np.array([chosen[k].index_a for k in order], dtype=np.int64),
            index_b=np.array([chosen[k].index_b for k in order], dtype=np.int64),
            labels=np.array([chosen[k].label for k in order], dtype=np.int64),
        ))
    return batches
