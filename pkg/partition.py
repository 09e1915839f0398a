#!/usr/bin/env python3
"""Assigning instances to at most K configuration modes.

Input matrices here are instance-by-configuration (N x M): row j holds how
instance j responded to every evaluated configuration. The exact solver
enumerates every size-K subset of configurations and keeps the one with the
smallest sum over instances of the best cost inside the subset; this is the
same objective as the 0-1 program with an "at most K configurations used"
constraint, since adding a configuration never increases the objective.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from evaluation import normalize_rows

logger = logging.getLogger('partition')

ENUMERATION_BUDGET = 5 * 10 ** 7
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
GREEDY_RESTARTS = 10
METHODS = ("exact", "greedy", "kmeans")


class CapacityError(RuntimeError):
    """Exact enumeration would exceed its budget"""


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray                  # partition id per instance
    representative_config_index: np.ndarray  # configuration (matrix column) per partition
    per_partition_cost: np.ndarray          # mean cost of each group, NaN when dropped
    total_cost: float

    @property
    def k(self) -> int:
        return len(self.representative_config_index)

    @property
    def dropped(self) -> List[bool]:
        counts = np.bincount(self.assignment, minlength=self.k)
        return [bool(c == 0) for c in counts]

    @property
    def k_effective(self) -> int:
        return self.k - sum(self.dropped)

    @property
    def mean_cost(self) -> float:
        return self.total_cost / len(self.assignment)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def config_per_instance(self) -> np.ndarray:
        return self.representative_config_index[self.assignment]


def _as_matrix(costs) -> np.ndarray:
    X = np.asarray(costs, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"cost matrix must be a non-empty N x M array, got shape {X.shape}")
    return X


def _check_k(K, M):
    if K < 1:
        raise ValueError(f"number of partitions must be positive, got {K}")
    if K > M:
        raise ValueError(f"cannot choose {K} partitions from {M} configurations")


def make_partition(costs, assignment, representatives) -> Partition:
    """Recompute per-partition and total costs for a given assignment"""
    X = _as_matrix(costs)
    assignment = np.asarray(assignment, dtype=int)
    reps = np.asarray(representatives, dtype=int)
    chosen = X[np.arange(X.shape[0]), reps[assignment]]
    per_partition = np.array([chosen[assignment == k].mean() if np.any(assignment == k) else np.nan
                              for k in range(len(reps))])
    return Partition(assignment=assignment, representative_config_index=reps,
                     per_partition_cost=per_partition, total_cost=float(chosen.sum()))


def assign_to_subset(costs, subset) -> Partition:
    """Give each instance its best configuration in the subset (ties to the lowest index)"""
    X = _as_matrix(costs)
    subset = np.array(sorted(subset), dtype=int)
    assignment = np.argmin(X[:, subset], axis=1)
    return make_partition(X, assignment, subset)


def _subset_total(X, subset) -> float:
    return float(X[:, subset].min(axis=1).sum())


def partition_exact(costs, K: int, budget: int = ENUMERATION_BUDGET) -> Partition:
    """Globally optimal partition into at most K groups by subset enumeration"""
    X = _as_matrix(costs)
    N, M = X.shape
    _check_k(K, M)
    n_subsets = math.comb(M, K)
    if N * n_subsets > budget:
        raise CapacityError(
            f"exact partition needs {N} x C({M},{K}) = {N * n_subsets} row evaluations, "
            f"budget is {budget}; use partition_greedy instead")

    chunk = max(1, (1 << 22) // (N * K))
    combos = itertools.combinations(range(M), K)
    best_total, best_subset = math.inf, None
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if block.size == 0:
            break
        totals = X[:, block].min(axis=2).sum(axis=0)
        i = int(np.argmin(totals))
        if totals[i] < best_total:
            best_total, best_subset = totals[i], block[i]
    if best_subset is None:
        best_subset = np.arange(K)
    return assign_to_subset(X, best_subset)


def _local_search(X, subset, tolerance=1e-12):
    N, M = X.shape
    subset = list(subset)
    current = _subset_total(X, subset)
    while True:
        best_move, best_value = None, current - tolerance * max(1.0, abs(current))
        for slot in range(len(subset)):
            others = subset[:slot] + subset[slot + 1:]
            base = X[:, others].min(axis=1) if others else np.full(N, np.inf)
            totals = np.minimum(base[:, None], X).sum(axis=0)
            totals[subset] = np.inf
            c = int(np.argmin(totals))
            if totals[c] < best_value:
                best_move, best_value = (slot, c), totals[c]
        if best_move is None:
            return sorted(subset), current
        slot, c = best_move
        subset[slot] = c
        current = _subset_total(X, subset)


def partition_greedy(costs, K: int, seed: int = 0, restarts: int = GREEDY_RESTARTS) -> Partition:
    """Swap-based local search from random initial subsets; never better than the exact optimum"""
    X = _as_matrix(costs)
    N, M = X.shape
    _check_k(K, M)
    if restarts < 1:
        raise ValueError(f"restarts must be positive, got {restarts}")
    rng = np.random.default_rng(seed)
    best_subset, best_total = None, math.inf
    for _ in range(restarts):
        start = rng.choice(M, size=K, replace=False)
        subset, total = _local_search(X, start)
        if best_subset is None or total < best_total:
            best_subset, best_total = subset, total
    return assign_to_subset(X, best_subset)


def _kmeans_plus_plus(X, K, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    min_sq = cdist(X, X[chosen[-1]][None, :], metric="sqeuclidean")[:, 0]
    for _ in range(1, K):
        total = min_sq.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=min_sq / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        min_sq = np.minimum(min_sq, cdist(X, X[nxt][None, :], metric="sqeuclidean")[:, 0])
    return X[chosen].copy()


def _lloyd(X, centers, max_iter=KMEANS_MAX_ITER):
    K = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d = cdist(X, centers, metric="sqeuclidean")
        new_labels = np.argmin(d, axis=1)
        point_d = d[np.arange(X.shape[0]), new_labels]
        for k in range(K):
            if not np.any(new_labels == k):
                # re-seed the empty cluster with the farthest point whose cluster keeps another member
                sizes = np.bincount(new_labels, minlength=K)
                movable = np.flatnonzero(sizes[new_labels] > 1)
                far = int(movable[np.argmax(point_d[movable])])
                new_labels[far] = k
                point_d[far] = -1.0
                centers[k] = X[far]
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for k in range(K):
            centers[k] = X[labels == k].mean(axis=0)
    wcss = float(cdist(X, centers, metric="sqeuclidean")[np.arange(X.shape[0]), labels].sum())
    return labels, wcss


def _relabel_by_first_occurrence(labels):
    mapping = {}
    for label in labels:
        if label not in mapping:
            mapping[label] = len(mapping)
    return np.array([mapping[label] for label in labels], dtype=int)


def kmeans_cluster(features, K: int, seed: int = 0, restarts: int = KMEANS_RESTARTS) -> np.ndarray:
    """k-means with k-means++ seeding; best within-cluster sum of squares over restarts"""
    X = _as_matrix(features)
    if K < 1:
        raise ValueError(f"number of clusters must be positive, got {K}")
    if K > X.shape[0]:
        raise ValueError(f"cannot form {K} clusters from {X.shape[0]} rows")
    rng = np.random.default_rng(seed)
    best_labels, best_wcss = None, math.inf
    for _ in range(restarts):
        labels, wcss = _lloyd(X, _kmeans_plus_plus(X, K, rng))
        if best_labels is None or wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    return _relabel_by_first_occurrence(best_labels)


def cluster_to_partition(costs, cluster_ids) -> Partition:
    """Pick, per cluster, the configuration with the lowest mean cost over its instances"""
    X = _as_matrix(costs)
    ids = np.asarray(cluster_ids, dtype=int)
    if ids.shape[0] != X.shape[0]:
        raise ValueError(f"{ids.shape[0]} cluster ids for {X.shape[0]} instances")
    K = int(ids.max()) + 1
    overall = X.mean(axis=0)
    reps = []
    for k in range(K):
        members = ids == k
        means = X[members].mean(axis=0) if np.any(members) else overall
        reps.append(int(np.argmin(means)))
    return make_partition(X, ids, reps)


def _finite_features(X):
    """Replace ineligible (+inf) entries by twice the row's worst finite cost before clustering"""
    X = X.copy()
    for row in X:
        bad = ~np.isfinite(row)
        if bad.any():
            finite = row[~bad]
            row[bad] = 2.0 * finite.max() if finite.size else 0.0
    return X


def partition_matrix(costs, K: int, method: str = "exact", seed: int = 0,
                     budget: int = ENUMERATION_BUDGET, restarts: Optional[int] = None) -> Partition:
    """Partition with the named method; exact falls back to greedy when over budget"""
    X = _as_matrix(costs)
    K = min(K, X.shape[1]) if method != "kmeans" else K
    if method == "exact":
        try:
            return partition_exact(X, K, budget=budget)
        except CapacityError as e:
            logger.warning(f"Fallback to greedy partitioning: {e}")
            return partition_greedy(X, K, seed=seed, restarts=restarts or GREEDY_RESTARTS)
    if method == "greedy":
        return partition_greedy(X, K, seed=seed, restarts=restarts or GREEDY_RESTARTS)
    if method == "kmeans":
        features = normalize_rows(_finite_features(X))
        labels = kmeans_cluster(features, K, seed=seed, restarts=restarts or KMEANS_RESTARTS)
        return cluster_to_partition(X, labels)
    raise ValueError(f"unknown partition method '{method}', expected one of {METHODS}")


def partition_accuracy(predicted, truth) -> float:
    """Fraction of matching labels under the best one-to-one relabeling"""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"label vectors differ in length: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        return 1.0
    p_labels, p_idx = np.unique(predicted, return_inverse=True)
    t_labels, t_idx = np.unique(truth, return_inverse=True)
    contingency = np.zeros((len(p_labels), len(t_labels)), dtype=int)
    np.add.at(contingency, (p_idx, t_idx), 1)
    rows, cols = linear_sum_assignment(contingency, maximize=True)
    return float(contingency[rows, cols].sum()) / predicted.size
