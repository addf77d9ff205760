"""Density-based clustering (DBSCAN) with deterministic border assignment.

Semantics: a core point has at least ``min_pts`` neighbors within ``eps``
(inclusive of itself, boundary inclusive d <= eps); clusters are maximal
density-connected sets of core points plus the border points they reach.
DBSCAN leaves border-point ownership implementation-defined; here clusters
are grown from seed points in ascending index order, so a border point
belongs to the first core cluster that reaches it. Output is therefore a
pure, deterministic function of the input ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractError
from .neighbors import GridIndex

__all__ = ["ClusterAssignment", "dbscan", "largest_cluster"]

_UNVISITED = -2
NOISE = -1


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    cluster_id: np.ndarray  # (M,) int64, -1 for noise
    num_clusters: int

    def members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_id == cid)

    def sizes(self) -> np.ndarray:
        """Cardinality of each cluster id 0..num_clusters-1."""
        valid = self.cluster_id[self.cluster_id >= 0]
        return np.bincount(valid, minlength=self.num_clusters)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> ClusterAssignment:
    """Cluster an (M, 3) point array; returns -1 ids for noise points."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    if min_pts < 1:
        raise ContractError("min_pts must be >= 1")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    labels = np.full(n, _UNVISITED, dtype=np.int64)
    if n == 0:
        return ClusterAssignment(cluster_id=labels, num_clusters=0)

    index = GridIndex(points, cell_size=eps)
    next_id = 0
    for i in range(n):
        if labels[i] != _UNVISITED:
            continue
        neighbors = index.query_ball_point(i, eps)
        if neighbors.size < min_pts:
            labels[i] = NOISE
            continue
        labels[i] = next_id
        queue = list(neighbors)
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] == NOISE:
                labels[j] = next_id  # border point claimed by this cluster
            if labels[j] != _UNVISITED:
                continue
            labels[j] = next_id
            j_neighbors = index.query_ball_point(j, eps)
            if j_neighbors.size >= min_pts:
                queue.extend(j_neighbors)
        next_id += 1

    return ClusterAssignment(cluster_id=labels, num_clusters=next_id)


def largest_cluster(assign: ClusterAssignment) -> int:
    """Id of the maximum-cardinality cluster; ties broken by smallest id."""
    if assign.num_clusters == 0:
        raise ContractError("no cluster: all points are noise")
    return int(np.argmax(assign.sizes()))
