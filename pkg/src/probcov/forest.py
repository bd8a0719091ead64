"""Quantile regression forest with an interpolated conditional CDF.

The forest grows CART regression trees (variance-reduction splits) on
bootstrap samples, then routes *all* training rows down every tree so each
tree induces co-membership weights over the full training set.  Averaging
the per-tree weights yields, for a query point, a weighted empirical
distribution over training responses; linear interpolation between the
distinct weighted responses gives a continuous, strictly increasing CDF on
the attained support, which admits an exact analytic inverse.  That exact
invertibility is what the conformal layers in this package rely on.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import _tree_kernels as _tk
from ._validation import (
    as_query_matrix,
    check_fitted,
    check_matching_lengths,
    check_matrix,
    check_probability,
    check_vector,
)

__all__ = ["QuantileRegressionForest", "save_forest", "load_forest"]

_FOREST_FORMAT = "probcov-forest-v1"


def _spawn_generator(random_state, key):
    """Deterministic per-component generator from a base seed and a key."""
    ss = np.random.SeedSequence(entropy=random_state, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


class QuantileRegressionForest(BaseEstimator):
    """Forest-based conditional distribution estimator.

    Parameters
    ----------
    n_estimators : int, default=100
        Number of trees.
    min_samples_leaf : int, default=5
        Minimum in-bag rows per leaf; a node is split only if both children
        respect this.
    max_features : float, default=1/3
        Fraction (0, 1] of features examined per split; at least one feature
        is always examined.
    bootstrap : bool, default=True
        Grow each tree on a bootstrap resample of the training rows.  When
        False every tree sees all rows (trees then differ only through
        feature subsampling).
    random_state : int or None, default=None
        Seed for bootstrap draws and feature subsets.  Fits are bit-for-bit
        reproducible for a fixed seed; ``None`` draws fresh entropy.

    Attributes
    ----------
    responses_ : ndarray of shape (n_samples,)
        Training responses, as passed to :meth:`fit`.
    n_features_in_ : int
    n_samples_ : int
    """

    def __init__(self, n_estimators=100, min_samples_leaf=5,
                 max_features=1.0 / 3.0, bootstrap=True, random_state=None):
        self.n_estimators = n_estimators
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    # ------------------------------------------------------------------
    # Fitting
    # ------------------------------------------------------------------

    def fit(self, X, y):
        """Grow the forest and precompute per-leaf training-row membership.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features)
        y : array-like of shape (n_samples,)

        Returns
        -------
        self
        """
        X = check_matrix(X, "X", min_rows=2)
        y = check_vector(y, "y", min_len=2)
        check_matching_lengths(X, y)

        if not isinstance(self.n_estimators, (int, np.integer)) or self.n_estimators < 1:
            raise ValueError("n_estimators must be a positive integer")
        if not isinstance(self.min_samples_leaf, (int, np.integer)) or self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be a positive integer")
        if not (0.0 < float(self.max_features) <= 1.0):
            raise ValueError("max_features must be a fraction in (0, 1]")

        n, d = X.shape
        n_trees = int(self.n_estimators)
        min_leaf = int(self.min_samples_leaf)
        n_split_features = max(1, int(np.ceil(float(self.max_features) * d)))

        entropy = (np.random.SeedSequence().entropy
                   if self.random_state is None else int(self.random_state))

        cap = _tk.max_node_count(n, min_leaf)

        left_parts, right_parts, feat_parts, thr_parts, leaf_parts = [], [], [], [], []
        members_parts, offset_parts = [], []
        tree_roots = np.empty(n_trees, np.int64)
        node_base = 0
        slot_base = 0
        member_base = 0
        routed = np.empty(n, np.int64)

        for b in range(n_trees):
            rng = _spawn_generator(entropy, b)
            if self.bootstrap:
                sample_rows = rng.integers(0, n, size=n).astype(np.int64)
            else:
                sample_rows = np.arange(n, dtype=np.int64)
            feature_draws = rng.random((cap, n_split_features))

            children_left = np.full(cap, _tk.NO_NODE, np.int32)
            children_right = np.full(cap, _tk.NO_NODE, np.int32)
            split_feature = np.full(cap, -1, np.int32)
            split_threshold = np.zeros(cap, np.float64)
            leaf_id = np.full(cap, -1, np.int32)

            node_count, leaf_count = _tk.grow_tree(
                X, y, sample_rows, min_leaf, feature_draws, n_split_features,
                children_left, children_right, split_feature, split_threshold,
                leaf_id)

            # Route the full training set (not just the bootstrap rows) so
            # every leaf's weight pool covers all original responses.
            _tk.route_rows(X, 0, children_left, children_right, split_feature,
                           split_threshold, routed)
            local_slots = leaf_id[routed]
            counts = np.bincount(local_slots, minlength=leaf_count)
            if np.any(counts == 0):
                # A leaf no original row reaches would have an empty weight
                # pool; routing the full training set precludes this because
                # in-bag rows are original rows.
                raise RuntimeError("tree produced a leaf with no routed rows")
            members = np.argsort(local_slots, kind="stable").astype(np.int32)
            offsets = np.zeros(leaf_count + 1, np.int64)
            np.cumsum(counts, out=offsets[1:])

            # Shift local node ids / leaf slots / member positions into the
            # forest-wide flat arrays.
            internal = children_left[:node_count] != _tk.NO_NODE
            cl = children_left[:node_count].astype(np.int64)
            cr = children_right[:node_count].astype(np.int64)
            cl[internal] += node_base
            cr[internal] += node_base
            lid = leaf_id[:node_count].astype(np.int64)
            lid[~internal] += slot_base

            tree_roots[b] = node_base
            left_parts.append(cl)
            right_parts.append(cr)
            feat_parts.append(split_feature[:node_count].astype(np.int64))
            thr_parts.append(split_threshold[:node_count].copy())
            leaf_parts.append(lid)
            members_parts.append(members)
            offset_parts.append(offsets[:-1] + member_base)

            node_base += node_count
            slot_base += leaf_count
            member_base += n

        self._entropy = entropy
        self.n_features_in_ = d
        self.n_samples_ = n
        self.n_leaves_ = slot_base
        self.tree_roots_ = tree_roots
        self.children_left_ = np.concatenate(left_parts)
        self.children_right_ = np.concatenate(right_parts)
        self.split_feature_ = np.concatenate(feat_parts)
        self.split_threshold_ = np.concatenate(thr_parts)
        self.leaf_id_ = np.concatenate(leaf_parts)
        self.member_rows_ = np.concatenate(members_parts)
        offsets_flat = np.concatenate(offset_parts)
        self.member_offsets_ = np.append(offsets_flat, member_base)
        counts_all = np.diff(self.member_offsets_)
        self.member_inv_count_ = 1.0 / counts_all
        self.responses_ = y
        self.response_order_ = np.argsort(y, kind="stable").astype(np.int64)
        return self

    # ------------------------------------------------------------------
    # Prediction
    # ------------------------------------------------------------------

    def _kernel_args(self):
        return (int(self.tree_roots_.shape[0]), self.tree_roots_,
                self.children_left_, self.children_right_, self.split_feature_,
                self.split_threshold_, self.leaf_id_, self.member_rows_,
                self.member_offsets_, self.member_inv_count_)

    def _query_values(self, X, values, name):
        """Broadcast per-query evaluation points to shape (n_query, k)."""
        arr = np.asarray(values, dtype=np.float64)
        scalar = arr.ndim == 0
        if scalar:
            arr = np.full((X.shape[0], 1), float(arr))
        elif arr.ndim == 1:
            if arr.shape[0] != X.shape[0]:
                raise ValueError(
                    f"{name} has length {arr.shape[0]}, expected one entry "
                    f"per query row ({X.shape[0]})")
            arr = arr.reshape(-1, 1)
        elif arr.ndim == 2:
            if arr.shape[0] != X.shape[0]:
                raise ValueError(f"{name} rows must match query rows")
        else:
            raise ValueError(f"{name} must be scalar, 1-D, or 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")
        return np.ascontiguousarray(arr), scalar

    def leaf_weights(self, X):
        """Co-membership weights over training rows for each query row.

        Returns an array of shape (n_query, n_samples_); each row is
        non-negative and sums to 1 (within accumulated rounding).
        """
        check_fitted(self, "responses_")
        X = as_query_matrix(X, self.n_features_in_)
        return _tk.forest_weights(X, *self._kernel_args(), self.n_samples_)

    def predict_cdf(self, X, y):
        """Conditional CDF ``F(y | x)`` for each query row.

        ``y`` may be a scalar (applied to every row), a vector with one value
        per row, or a matrix of per-row evaluation points.  The CDF is 0
        strictly below the smallest weighted training response, 1 at and
        above the largest, and linearly interpolated in between.
        """
        check_fitted(self, "responses_")
        X = as_query_matrix(X, self.n_features_in_)
        Y, scalar = self._query_values(X, y, "y")
        out = _tk.forest_cdf(X, Y, *self._kernel_args(),
                             self.response_order_, self.responses_)
        if scalar or (np.asarray(y).ndim == 1):
            out = out[:, 0]
        return out

    def predict_quantile(self, X, alpha):
        """Exact inverse of :meth:`predict_cdf` on the attained support.

        Probabilities outside the attained CDF range clamp to the smallest /
        largest weighted training response; ``alpha=0`` and ``alpha=1`` map
        to those extremes.
        """
        check_fitted(self, "responses_")
        X = as_query_matrix(X, self.n_features_in_)
        A, scalar = self._query_values(X, alpha, "alpha")
        check_probability(A, "alpha")
        out = _tk.forest_quantile(X, A, *self._kernel_args(),
                                  self.response_order_, self.responses_)
        if scalar or (np.asarray(alpha).ndim == 1):
            out = out[:, 0]
        return out

    def predict(self, X):
        """Conditional median, i.e. ``predict_quantile(X, 0.5)``."""
        return self.predict_quantile(X, 0.5)

    def cdf(self, x, y):
        """Scalar convenience: ``F(y | x)`` for a single feature vector."""
        return float(self.predict_cdf(np.atleast_2d(x), float(y))[0])

    def quantile(self, x, alpha):
        """Scalar convenience: ``Q(alpha | x)`` for a single feature vector."""
        return float(self.predict_quantile(np.atleast_2d(x), float(alpha))[0])

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def _state_arrays(self):
        check_fitted(self, "responses_")
        return {
            "format": np.array(_FOREST_FORMAT),
            "params": np.array([
                float(self.n_estimators), float(self.min_samples_leaf),
                float(self.max_features), float(bool(self.bootstrap)),
            ]),
            "entropy": np.array(str(self._entropy)),
            "tree_roots": self.tree_roots_,
            "children_left": self.children_left_,
            "children_right": self.children_right_,
            "split_feature": self.split_feature_,
            "split_threshold": self.split_threshold_,
            "leaf_id": self.leaf_id_,
            "member_rows": self.member_rows_,
            "member_offsets": self.member_offsets_,
            "responses": self.responses_,
            "n_features_in": np.array(self.n_features_in_),
        }

    @classmethod
    def _from_state(cls, data, prefix=""):
        fmt = str(data[prefix + "format"])
        if fmt != _FOREST_FORMAT:
            raise ValueError(f"unrecognised forest format {fmt!r}")
        params = data[prefix + "params"]
        est = cls(n_estimators=int(params[0]), min_samples_leaf=int(params[1]),
                  max_features=float(params[2]), bootstrap=bool(params[3]))
        est._entropy = int(str(data[prefix + "entropy"]))
        est.random_state = est._entropy
        est.tree_roots_ = data[prefix + "tree_roots"]
        est.children_left_ = data[prefix + "children_left"]
        est.children_right_ = data[prefix + "children_right"]
        est.split_feature_ = data[prefix + "split_feature"]
        est.split_threshold_ = data[prefix + "split_threshold"]
        est.leaf_id_ = data[prefix + "leaf_id"]
        est.member_rows_ = data[prefix + "member_rows"]
        est.member_offsets_ = data[prefix + "member_offsets"]
        est.member_inv_count_ = 1.0 / np.diff(est.member_offsets_)
        est.responses_ = data[prefix + "responses"]
        est.response_order_ = np.argsort(est.responses_, kind="stable").astype(np.int64)
        est.n_features_in_ = int(data[prefix + "n_features_in"])
        est.n_samples_ = est.responses_.shape[0]
        est.n_leaves_ = est.member_offsets_.shape[0] - 1
        return est

    def save(self, path):
        """Serialise the fitted forest to an ``.npz`` archive."""
        save_forest(self, path)

    @classmethod
    def load(cls, path):
        """Restore a forest saved with :meth:`save`."""
        return load_forest(path)


def save_forest(forest, path):
    from ._io import atomic_savez

    atomic_savez(path, **forest._state_arrays())


def load_forest(path):
    with np.load(path, allow_pickle=False) as data:
        return QuantileRegressionForest._from_state(data)
