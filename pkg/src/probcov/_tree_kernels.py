"""Numba kernels for regression-tree growth and batched CDF/quantile queries.

The forest estimator keeps every tree in flat parallel arrays (scikit-learn
style) so a whole forest can be walked inside one jitted loop.  All kernels
are deterministic: randomness (bootstrap draws, per-node feature subsets) is
generated outside and passed in as arrays.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Sentinel for "no child" / "internal node" in the flat tree arrays.
NO_NODE = -1


def max_node_count(n_samples: int, min_samples_leaf: int) -> int:
    """Upper bound on nodes in a tree grown from ``n_samples`` rows.

    Every leaf keeps at least ``min_samples_leaf`` in-bag rows, so a binary
    tree has at most ``n_samples // min_samples_leaf`` leaves.
    """
    leaves = max(1, n_samples // max(1, min_samples_leaf))
    return 2 * leaves + 1


@njit(cache=True)
def grow_tree(X, y, sample_rows, min_samples_leaf, feature_draws, n_split_features,
              children_left, children_right, split_feature, split_threshold,
              leaf_id):
    """Grow one CART regression tree with variance-reduction splits.

    Parameters
    ----------
    sample_rows : int64[:]
        Rows of ``X``/``y`` the tree is grown on (bootstrap sample; may repeat).
        Reordered in place during partitioning.
    feature_draws : float64[:, :]
        Uniform(0,1) draws, one row per prospective node, used to pick the
        candidate-feature subset at that node.
    n_split_features : int
        Number of features examined per split.
    children_left, children_right, split_feature, split_threshold, leaf_id :
        Output arrays sized via ``max_node_count``.  ``leaf_id`` is -1 for
        internal nodes and a dense 0-based leaf index otherwise.

    Returns ``(node_count, leaf_count)``.

    Splitting rules: a node is split only if both children keep at least
    ``min_samples_leaf`` rows and the best split strictly reduces the sum of
    squared errors; candidate thresholds sit between consecutive distinct
    sorted values of a feature, placed so that ``value <= threshold`` routes
    left.  Ties in gain keep the first candidate encountered (feature order as
    drawn, then ascending threshold), which makes growth deterministic.
    """
    n_bag = sample_rows.shape[0]
    n_features = X.shape[1]
    cap = children_left.shape[0]

    stack_node = np.empty(cap, np.int32)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)

    feat_perm = np.empty(n_features, np.int64)
    left_buf = np.empty(n_bag, np.int64)
    right_buf = np.empty(n_bag, np.int64)

    node_count = 1
    leaf_count = 0
    top = 0
    stack_node[top] = 0
    stack_lo[top] = 0
    stack_hi[top] = n_bag
    top = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        n_node = hi - lo

        sum_y = 0.0
        sum_y2 = 0.0
        for i in range(lo, hi):
            v = y[sample_rows[i]]
            sum_y += v
            sum_y2 += v * v
        node_sse = sum_y2 - sum_y * sum_y / n_node

        best_gain = 0.0
        best_feature = -1
        best_threshold = 0.0
        min_gain = 1e-12 * max(1.0, abs(node_sse))

        if n_node >= 2 * min_samples_leaf and node_sse > min_gain:
            # Partial Fisher-Yates driven by the pre-drawn uniforms picks the
            # candidate-feature subset for this node.
            for j in range(n_features):
                feat_perm[j] = j
            for k in range(n_split_features):
                r = k + int(feature_draws[node, k] * (n_features - k))
                if r >= n_features:
                    r = n_features - 1
                tmp = feat_perm[k]
                feat_perm[k] = feat_perm[r]
                feat_perm[r] = tmp

            vals = np.empty(n_node, np.float64)
            for k in range(n_split_features):
                feat = feat_perm[k]
                for i in range(n_node):
                    vals[i] = X[sample_rows[lo + i], feat]
                order = np.argsort(vals, kind="mergesort")

                left_sum = 0.0
                left_sum2 = 0.0
                for p in range(n_node - 1):
                    row = sample_rows[lo + order[p]]
                    v = y[row]
                    left_sum += v
                    left_sum2 += v * v
                    n_left = p + 1
                    n_right = n_node - n_left
                    if n_right < min_samples_leaf:
                        break
                    if n_left < min_samples_leaf:
                        continue
                    a = vals[order[p]]
                    b = vals[order[p + 1]]
                    if not (a < b):
                        continue
                    right_sum = sum_y - left_sum
                    right_sum2 = sum_y2 - left_sum2
                    child_sse = (left_sum2 - left_sum * left_sum / n_left) + (
                        right_sum2 - right_sum * right_sum / n_right
                    )
                    gain = node_sse - child_sse
                    if gain > best_gain and gain > min_gain:
                        best_gain = gain
                        best_feature = feat
                        thr = a + 0.5 * (b - a)
                        if thr >= b:  # midpoint rounded up between adjacent floats
                            thr = a
                        best_threshold = thr

        if best_feature < 0:
            leaf_id[node] = leaf_count
            leaf_count += 1
            continue

        n_left = 0
        n_right = 0
        for i in range(lo, hi):
            row = sample_rows[i]
            if X[row, best_feature] <= best_threshold:
                left_buf[n_left] = row
                n_left += 1
            else:
                right_buf[n_right] = row
                n_right += 1
        for i in range(n_left):
            sample_rows[lo + i] = left_buf[i]
        for i in range(n_right):
            sample_rows[lo + n_left + i] = right_buf[i]

        left_node = node_count
        right_node = node_count + 1
        node_count += 2
        children_left[node] = left_node
        children_right[node] = right_node
        split_feature[node] = best_feature
        split_threshold[node] = best_threshold

        # Push right first so the left child is processed next (DFS order);
        # leaf ids then run left to right, independent of stack capacity.
        stack_node[top] = right_node
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        top += 1
        stack_node[top] = left_node
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        top += 1

    return node_count, leaf_count


@njit(cache=True)
def route_rows(X, root, children_left, children_right, split_feature,
               split_threshold, out):
    """Drop every row of ``X`` down the tree rooted at ``root``.

    Writes the terminal node index (global, not leaf id) into ``out``.
    """
    for i in range(X.shape[0]):
        node = root
        while children_left[node] != NO_NODE:
            if X[i, split_feature[node]] <= split_threshold[node]:
                node = children_left[node]
            else:
                node = children_right[node]
        out[i] = node


@njit(cache=True)
def _accumulate_weights(x_row, n_trees, tree_roots, children_left, children_right,
                        split_feature, split_threshold, leaf_id, member_rows,
                        member_offsets, member_inv_count, weight_buf):
    """Sum per-tree leaf co-membership weights for one query point.

    Each tree contributes total mass 1 spread uniformly over the training rows
    sharing the query's leaf; ``weight_buf`` receives the *unnormalised* sum
    (total mass ``n_trees``).
    """
    weight_buf[:] = 0.0
    for b in range(n_trees):
        node = tree_roots[b]
        while children_left[node] != NO_NODE:
            if x_row[split_feature[node]] <= split_threshold[node]:
                node = children_left[node]
            else:
                node = children_right[node]
        slot = leaf_id[node]
        inv = member_inv_count[slot]
        for m in range(member_offsets[slot], member_offsets[slot + 1]):
            weight_buf[member_rows[m]] += inv


@njit(cache=True)
def _build_knots(weight_buf, response_order, responses, knot_value, knot_cum):
    """Collapse per-row weights into CDF knots over distinct responses.

    Knots are (value, cumulative weight) pairs over the distinct training
    responses that received positive weight, normalised so the last cumulative
    value is exactly 1.  Returns the knot count.
    """
    n = response_order.shape[0]
    count = 0
    cum = 0.0
    for k in range(n):
        w = weight_buf[response_order[k]]
        if w <= 0.0:
            continue
        v = responses[response_order[k]]
        cum += w
        if count > 0 and knot_value[count - 1] == v:
            knot_cum[count - 1] = cum
        else:
            knot_value[count] = v
            knot_cum[count] = cum
            count += 1
    for k in range(count):
        knot_cum[k] = knot_cum[k] / cum
    return count


@njit(cache=True)
def _cdf_from_knots(y, knot_value, knot_cum, count):
    """Evaluate the interpolated weighted empirical CDF at ``y``.

    0 strictly below the smallest knot, 1 at and above the largest; linear
    between consecutive knots, with the step up to the first knot's mass
    happening exactly at that knot.
    """
    if y < knot_value[0]:
        return 0.0
    if y >= knot_value[count - 1]:
        return 1.0
    j = np.searchsorted(knot_value[:count], y, side="right") - 1
    v0 = knot_value[j]
    v1 = knot_value[j + 1]
    c0 = knot_cum[j]
    c1 = knot_cum[j + 1]
    return c0 + (y - v0) * (c1 - c0) / (v1 - v0)


@njit(cache=True)
def _quantile_from_knots(alpha, knot_value, knot_cum, count):
    """Invert the interpolated CDF; clamps to the attained support.

    Probabilities at or below the first knot's mass return the smallest knot
    value; alpha = 1 returns the largest.
    """
    if alpha <= knot_cum[0]:
        return knot_value[0]
    if alpha >= 1.0:
        return knot_value[count - 1]
    j = np.searchsorted(knot_cum[:count], alpha, side="left") - 1
    v0 = knot_value[j]
    v1 = knot_value[j + 1]
    c0 = knot_cum[j]
    c1 = knot_cum[j + 1]
    return v0 + (alpha - c0) * (v1 - v0) / (c1 - c0)


@njit(cache=True)
def forest_cdf(Xq, Yq, n_trees, tree_roots, children_left, children_right,
               split_feature, split_threshold, leaf_id, member_rows,
               member_offsets, member_inv_count, response_order, responses):
    """Batched CDF evaluation: result[i, j] = F(Yq[i, j] | Xq[i])."""
    n_query = Xq.shape[0]
    n_values = Yq.shape[1]
    n_train = responses.shape[0]
    out = np.empty((n_query, n_values), np.float64)
    weight_buf = np.empty(n_train, np.float64)
    knot_value = np.empty(n_train, np.float64)
    knot_cum = np.empty(n_train, np.float64)
    for i in range(n_query):
        _accumulate_weights(Xq[i], n_trees, tree_roots, children_left,
                            children_right, split_feature, split_threshold,
                            leaf_id, member_rows, member_offsets,
                            member_inv_count, weight_buf)
        count = _build_knots(weight_buf, response_order, responses,
                             knot_value, knot_cum)
        for j in range(n_values):
            out[i, j] = _cdf_from_knots(Yq[i, j], knot_value, knot_cum, count)
    return out


@njit(cache=True)
def forest_quantile(Xq, Aq, n_trees, tree_roots, children_left, children_right,
                    split_feature, split_threshold, leaf_id, member_rows,
                    member_offsets, member_inv_count, response_order, responses):
    """Batched quantile evaluation: result[i, j] = Q(Aq[i, j] | Xq[i])."""
    n_query = Xq.shape[0]
    n_values = Aq.shape[1]
    n_train = responses.shape[0]
    out = np.empty((n_query, n_values), np.float64)
    weight_buf = np.empty(n_train, np.float64)
    knot_value = np.empty(n_train, np.float64)
    knot_cum = np.empty(n_train, np.float64)
    for i in range(n_query):
        _accumulate_weights(Xq[i], n_trees, tree_roots, children_left,
                            children_right, split_feature, split_threshold,
                            leaf_id, member_rows, member_offsets,
                            member_inv_count, weight_buf)
        count = _build_knots(weight_buf, response_order, responses,
                             knot_value, knot_cum)
        for j in range(n_values):
            out[i, j] = _quantile_from_knots(Aq[i, j], knot_value, knot_cum,
                                             count)
    return out


@njit(cache=True)
def forest_weights(Xq, n_trees, tree_roots, children_left, children_right,
                   split_feature, split_threshold, leaf_id, member_rows,
                   member_offsets, member_inv_count, n_train):
    """Batched leaf-weight evaluation: result[i] sums to 1 over training rows."""
    n_query = Xq.shape[0]
    out = np.empty((n_query, n_train), np.float64)
    weight_buf = np.empty(n_train, np.float64)
    for i in range(n_query):
        _accumulate_weights(Xq[i], n_trees, tree_roots, children_left,
                            children_right, split_feature, split_threshold,
                            leaf_id, member_rows, member_offsets,
                            member_inv_count, weight_buf)
        for r in range(n_train):
            out[i, r] = weight_buf[r] / n_trees
    return out
