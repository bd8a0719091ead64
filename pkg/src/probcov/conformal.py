"""Split-conformal prediction intervals in probability space.

The conformity score of a calibration pair ``(x, y)`` is the distance of the
conditional CDF level ``F(y | x)`` from 1/2, so scores live in ``[0, 1/2]``
and small scores mean the response fell near the conditional median.  An
interval is formed by reading a calibration order statistic ``s`` and mapping
the probability band ``[1/2 - s, 1/2 + s]`` back through the conditional
quantile function.  Choosing the order statistic by rounding ``(1 - delta) *
(n + 1)`` down or up yields intervals whose marginal coverage is bounded
above, respectively below, by ``1 - delta`` — and the two bounds are separated
by at most ``1 / (n + 1)``.

Index arithmetic is done with exact rationals on the binary value of
``delta``: floating-point rounding of ``(1 - delta) * (n + 1)`` can land on
the wrong side of an integer, which silently shifts the order statistic.

``cqr_interval`` implements the classical additive correction in response
space.  It is kept as plain interval arithmetic because it is not invertible:
distinct miscoverage levels can produce identical corrected intervals, so no
coverage level can be recovered from an interval (see the tests for a
concrete construction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    check_fitted,
    check_matching_lengths,
    check_matrix,
    check_vector,
)

__all__ = [
    "AT_LEAST",
    "AT_MOST",
    "ConformalScores",
    "PredictionInterval",
    "conformity_score",
    "calibrate_scores",
    "scores_from_levels",
    "score_order_index",
    "conformal_interval",
    "conformal_interval_batch",
    "cqr_interval",
    "ConformalIntervalRegressor",
]

# Guarantee directions: marginal coverage at least / at most ``1 - delta``.
AT_LEAST = "at_least"
AT_MOST = "at_most"


@dataclass(frozen=True)
class ConformalScores:
    """Sorted conformity scores from a calibration set.

    Interior scores must be strictly increasing: an exact interior tie means
    two responses hit the *same* CDF distance from the median, which has
    probability zero for continuously distributed responses and therefore
    signals missing tie-breaking noise upstream.  The maximal score 0.5 is
    exempt — it is the shared, legitimate value of every response falling
    outside its model's attained support, and the order statistics remain
    well-defined with it repeated.
    """

    scores: np.ndarray

    def __post_init__(self):
        scores = check_vector(self.scores, "scores", min_len=1)
        if np.any(scores < 0.0) or np.any(scores > 0.5):
            raise ValueError("conformity scores must lie in [0, 0.5]")
        scores = np.sort(scores)
        tied = (np.diff(scores) == 0.0) & (scores[:-1] != 0.5)
        if np.any(tied):
            raise ValueError(
                "conformity scores contain exact interior ties; calibration "
                "responses must be continuously distributed (add tie-breaking "
                "noise)")
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])

    def to_csv(self, path):
        from ._io import atomic_write_text

        lines = ["score"] + [repr(float(s)) for s in self.scores]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "score":
                raise ValueError(f"unexpected score file header {header!r}")
            vals = [float(line) for line in fh if line.strip()]
        return cls(np.asarray(vals, dtype=np.float64))


@dataclass(frozen=True)
class PredictionInterval:
    """A closed prediction interval with its coverage guarantee direction."""

    lo: float
    hi: float
    delta: float
    guarantee: str

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("interval endpoints out of order")

    def contains(self, y) -> bool:
        return bool(self.lo <= y <= self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def conformity_score(forest, X, y):
    """``|1/2 - F(y | x)|`` for each row; vectorised over rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    levels = forest.predict_cdf(X, y)
    return np.abs(0.5 - levels)


def calibrate_scores(forest, X, y) -> ConformalScores:
    """Score a calibration set against a fitted forest.

    Raises ``ValueError`` on exactly tied scores: ties break the strict
    ordering the finite-sample guarantees rely on, and with continuously
    distributed responses they occur with probability zero.
    """
    X = check_matrix(X, "X", min_rows=1)
    y = check_vector(y, "y", min_len=1)
    check_matching_lengths(X, y)
    return ConformalScores(conformity_score(forest, X, y))


def scores_from_levels(levels) -> ConformalScores:
    """Build scores from already-computed CDF levels ``F(y_i | x_i)``."""
    levels = check_vector(np.asarray(levels), "levels", min_len=1)
    if np.any(levels < 0.0) or np.any(levels > 1.0):
        raise ValueError("CDF levels must lie in [0, 1]")
    return ConformalScores(np.abs(0.5 - levels))


def score_order_index(n: int, delta: float, guarantee: str = AT_LEAST) -> int:
    """1-based calibration order statistic for a coverage target.

    ``AT_MOST`` rounds ``(1 - delta) * (n + 1)`` down (needs ``delta > 0``
    large enough that the floor is at least 1); ``AT_LEAST`` rounds up (needs
    ``delta >= 1 / (n + 1)`` so the index does not exceed ``n``).  Computed
    with exact rational arithmetic on the binary value of ``delta``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError("n must be a positive integer")
    if not (0.0 < float(delta) < 1.0):
        raise ValueError("delta must lie strictly between 0 and 1")
    target = (1 - Fraction(float(delta))) * (n + 1)
    if guarantee == AT_MOST:
        k = int(target)  # floor: target > 0
        if k < 1:
            raise ValueError(
                f"delta={delta} leaves no usable order statistic for n={n} "
                f"(floor((1-delta)(n+1)) < 1)")
    elif guarantee == AT_LEAST:
        if Fraction(float(delta)) * (n + 1) < 1:
            raise ValueError(
                f"delta={delta} is below 1/(n+1) for n={n}; the rounded-up "
                f"order statistic would fall outside the calibration set")
        k = int(-(-target // 1))  # ceil
        if k > n:  # unreachable after the validation above; kept defensively
            warnings.warn("order statistic clamped to n", RuntimeWarning)
            k = n
    else:
        raise ValueError(f"guarantee must be {AT_LEAST!r} or {AT_MOST!r}")
    return k


def conformal_interval(forest, scores: ConformalScores, x, delta: float,
                       guarantee: str = AT_LEAST) -> PredictionInterval:
    """Calibrated interval for a single query point."""
    k = score_order_index(scores.n, delta, guarantee)
    s = float(scores.scores[k - 1])
    lo = forest.quantile(x, 0.5 - s)
    hi = forest.quantile(x, 0.5 + s)
    return PredictionInterval(lo=lo, hi=hi, delta=float(delta),
                              guarantee=guarantee)


def conformal_interval_batch(forest, scores: ConformalScores, X, delta: float,
                             guarantee: str = AT_LEAST):
    """Vectorised :func:`conformal_interval`; returns ``(lo, hi)`` arrays."""
    X = check_matrix(X, "X")
    k = score_order_index(scores.n, delta, guarantee)
    s = float(scores.scores[k - 1])
    alphas = np.empty((X.shape[0], 2), dtype=np.float64)
    alphas[:, 0] = 0.5 - s
    alphas[:, 1] = 0.5 + s
    out = forest.predict_quantile(X, alphas)
    return out[:, 0], out[:, 1]


def cqr_interval(lower_quantile, upper_quantile, correction):
    """Classical additive conformal correction of a quantile pair.

    Widens (or shrinks, for negative ``correction``) both endpoints of
    ``[lower_quantile, upper_quantile]`` in response space and returns the
    ``(lo, hi)`` tuple.  Provided as a baseline only: the mapping from
    miscoverage level to interval is not injective, so it cannot be run in
    reverse to recover a coverage probability for a given interval.
    """
    lo = float(lower_quantile) - float(correction)
    hi = float(upper_quantile) + float(correction)
    if lo > hi:
        raise ValueError("corrected interval endpoints out of order")
    return lo, hi


class ConformalIntervalRegressor(BaseEstimator):
    """Estimator facade: calibrate scores in :meth:`fit`, emit intervals.

    Parameters
    ----------
    forest : QuantileRegressionForest
        A fitted conditional-distribution model (fitted on rows disjoint from
        the calibration set passed to :meth:`fit`).
    delta : float, default=0.2
        Miscoverage target.
    guarantee : str, default="at_least"
        Coverage guarantee direction, ``"at_least"`` or ``"at_most"``.
    """

    def __init__(self, forest=None, delta=0.2, guarantee=AT_LEAST):
        self.forest = forest
        self.delta = delta
        self.guarantee = guarantee

    def fit(self, X, y):
        if self.forest is None:
            raise ValueError("a fitted forest is required")
        check_fitted(self.forest, "responses_")
        self.scores_ = calibrate_scores(self.forest, X, y)
        # Fail fast on delta/n combinations with no valid order statistic.
        score_order_index(self.scores_.n, self.delta, self.guarantee)
        return self

    def predict_interval(self, X):
        """Per-row calibrated intervals as an ``(n, 2)`` array."""
        check_fitted(self, "scores_")
        lo, hi = conformal_interval_batch(self.forest, self.scores_, X,
                                          self.delta, self.guarantee)
        return np.column_stack([lo, hi])
