"""Calibrated bounds on the probability that a response lands in an interval.

This is the reverse of the usual conformal direction: instead of fixing a
coverage level and producing an interval, fix a target interval ``[lo, hi]``
and ask how likely the response is to fall inside it.  Calibration responses
are reduced to their conditional CDF levels ``F(y_i | x_i)``; the target's
endpoints are mapped to levels the same way, and counting how many
calibration levels the target's level band captures yields a pair
``(p_lower, p_upper)`` that brackets the marginal coverage probability of the
target.  The bracket width is exactly ``2 / (n + 1)`` before clamping to
``[0, 1]``.

Rank counting uses closed comparisons on sorted levels; an empty capture set
is well-defined (the bracket degrades gracefully to ``[0, 1/(n+1)]``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    check_fitted,
    check_matching_lengths,
    check_matrix,
    check_vector,
)

__all__ = [
    "TargetInterval",
    "CalibrationLevels",
    "CoverageBounds",
    "calibrate_levels",
    "interval_rank_stats",
    "coverage_bounds_from_levels",
    "coverage_bounds",
    "coverage_bounds_batch",
    "IntervalCoveragePredictor",
]


@dataclass(frozen=True)
class TargetInterval:
    """A closed response-space interval whose coverage is being assessed.

    Endpoints may be infinite (one-sided targets); NaN is rejected.
    """

    lo: float
    hi: float

    def __post_init__(self):
        lo = float(self.lo)
        hi = float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("target endpoints must not be NaN")
        if lo > hi:
            raise ValueError("target endpoints out of order")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, y) -> bool:
        return bool(self.lo <= y <= self.hi)

    def shifted(self, offset: float) -> "TargetInterval":
        """Translate both endpoints by ``-offset`` (infinite ends stay put)."""
        return TargetInterval(self.lo - offset, self.hi - offset)


@dataclass(frozen=True)
class CalibrationLevels:
    """Sorted CDF levels of a calibration set.

    Interior levels must be strictly increasing: an exact interior tie has
    probability zero for continuously distributed responses and signals
    missing tie-breaking noise upstream.  The boundary levels 0 and 1 are
    exempt — they are the shared, legitimate values of responses falling
    below / above their model's attained support, and the rank counting
    (non-strict comparisons) remains well-defined with them repeated.
    """

    levels: np.ndarray

    def __post_init__(self):
        levels = check_vector(self.levels, "levels", min_len=1)
        if np.any(levels < 0.0) or np.any(levels > 1.0):
            raise ValueError("CDF levels must lie in [0, 1]")
        levels = np.sort(levels)
        tied = (np.diff(levels) == 0.0) & (levels[:-1] != 0.0) & (levels[:-1] != 1.0)
        if np.any(tied):
            raise ValueError(
                "calibration CDF levels contain exact interior ties; "
                "calibration responses must be continuously distributed "
                "(add tie-breaking noise)")
        object.__setattr__(self, "levels", levels)

    @property
    def n(self) -> int:
        return int(self.levels.shape[0])

    def to_csv(self, path):
        from ._io import atomic_write_text

        lines = ["level"] + [repr(float(a)) for a in self.levels]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "level":
                raise ValueError(f"unexpected level file header {header!r}")
            vals = [float(line) for line in fh if line.strip()]
        return cls(np.asarray(vals, dtype=np.float64))


@dataclass(frozen=True)
class CoverageBounds:
    """Calibrated bracket on a coverage probability.

    ``rank_lo``/``rank_hi`` are the 1-based calibration ranks delimiting the
    captured levels (``rank_lo = n + 1`` and ``rank_hi = 0`` encode "none").
    """

    p_lower: float
    p_upper: float
    rank_lo: int
    rank_hi: int

    @property
    def width(self) -> float:
        return self.p_upper - self.p_lower


def calibrate_levels(forest, X, y) -> CalibrationLevels:
    """CDF levels of a calibration set under a fitted forest.

    Exact level ties raise ``ValueError`` for the same reason tied conformity
    scores do: the rank arithmetic needs strictly ordered calibration points.
    """
    X = check_matrix(X, "X", min_rows=1)
    y = check_vector(y, "y", min_len=1)
    check_matching_lengths(X, y)
    return CalibrationLevels(forest.predict_cdf(X, y))


def interval_rank_stats(levels, level_lo: float, level_hi: float):
    """1-based ranks of the calibration levels captured by a level band.

    Returns ``(rank_lo, rank_hi)`` where ``rank_lo`` is the smallest rank
    with level at or above ``level_lo`` (``n + 1`` when none) and ``rank_hi``
    the largest rank with level at or below ``level_hi`` (0 when none).
    """
    if isinstance(levels, CalibrationLevels):
        sorted_levels = levels.levels
    else:
        sorted_levels = check_vector(np.asarray(levels), "levels", min_len=1)
        if np.any(np.diff(sorted_levels) < 0.0):
            raise ValueError("levels must be sorted ascending")
    if math.isnan(level_lo) or math.isnan(level_hi):
        raise ValueError("level band must not contain NaN")
    if level_lo > level_hi:
        raise ValueError("level band out of order")
    rank_lo = int(np.searchsorted(sorted_levels, level_lo, side="left")) + 1
    rank_hi = int(np.searchsorted(sorted_levels, level_hi, side="right"))
    return rank_lo, rank_hi


def coverage_bounds_from_levels(levels, level_lo: float,
                                level_hi: float) -> CoverageBounds:
    """Coverage bracket from calibration levels and a target's level band.

    The unclamped bracket endpoints are ``gap / (n+1)`` and
    ``(gap + 2) / (n+1)`` with ``gap = rank_hi - rank_lo``; both are clamped
    into ``[0, 1]``.
    """
    if not (0.0 <= level_lo <= 1.0) or not (0.0 <= level_hi <= 1.0):
        raise ValueError("level band must lie in [0, 1]")
    rank_lo, rank_hi = interval_rank_stats(levels, level_lo, level_hi)
    n = levels.n if isinstance(levels, CalibrationLevels) else len(levels)
    gap = rank_hi - rank_lo
    p_lower = min(1.0, max(0.0, gap / (n + 1)))
    p_upper = min(1.0, max(0.0, (gap + 2) / (n + 1)))
    return CoverageBounds(p_lower=p_lower, p_upper=p_upper,
                          rank_lo=rank_lo, rank_hi=rank_hi)


def _target_levels(forest, X, target: TargetInterval, offsets=None):
    """Map (possibly shifted) target endpoints to CDF levels per query row.

    Infinite endpoints bypass the forest: their levels are exactly 0 / 1.
    """
    n_query = X.shape[0]
    if offsets is None:
        offsets = np.zeros(n_query, dtype=np.float64)
    else:
        offsets = check_vector(np.asarray(offsets), "offsets", min_len=1)
        if offsets.shape[0] != n_query:
            raise ValueError("offsets must have one entry per query row")
    ends = np.empty((n_query, 2), dtype=np.float64)
    ends[:, 0] = target.lo - offsets
    ends[:, 1] = target.hi - offsets
    finite = np.isfinite(ends)
    probe = np.where(finite, ends, 0.0)
    levels = forest.predict_cdf(X, probe)
    levels[~finite & (ends < 0)] = 0.0
    levels[~finite & (ends > 0)] = 1.0
    return levels


def coverage_bounds(forest, levels: CalibrationLevels, x,
                    target: TargetInterval) -> CoverageBounds:
    """Coverage bracket for one query point and a response-space target."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    band = _target_levels(forest, x, target)
    return coverage_bounds_from_levels(levels, float(band[0, 0]),
                                       float(band[0, 1]))


def coverage_bounds_batch(forest, levels: CalibrationLevels, X,
                          target: TargetInterval, offsets=None):
    """Vectorised coverage brackets; returns ``(p_lower, p_upper)`` arrays.

    ``offsets`` translates the target per row (used when the response is a
    remaining-return and the target was stated for the full return).
    """
    X = check_matrix(X, "X")
    band = _target_levels(forest, X, target, offsets)
    sorted_levels = levels.levels
    n = levels.n
    rank_lo = np.searchsorted(sorted_levels, band[:, 0], side="left") + 1
    rank_hi = np.searchsorted(sorted_levels, band[:, 1], side="right")
    gap = rank_hi - rank_lo
    p_lower = np.clip(gap / (n + 1), 0.0, 1.0)
    p_upper = np.clip((gap + 2) / (n + 1), 0.0, 1.0)
    return p_lower, p_upper


class IntervalCoveragePredictor(BaseEstimator):
    """Estimator facade: calibrate levels in :meth:`fit`, emit brackets.

    Parameters
    ----------
    forest : QuantileRegressionForest
        Fitted conditional-distribution model (fitted on rows disjoint from
        the calibration set).
    """

    def __init__(self, forest=None):
        self.forest = forest

    def fit(self, X, y):
        if self.forest is None:
            raise ValueError("a fitted forest is required")
        check_fitted(self.forest, "responses_")
        self.levels_ = calibrate_levels(self.forest, X, y)
        return self

    def predict_bounds(self, X, target: TargetInterval, offsets=None):
        """Per-row coverage brackets as ``(p_lower, p_upper)`` arrays."""
        check_fitted(self, "levels_")
        return coverage_bounds_batch(self.forest, self.levels_, X, target,
                                     offsets)
