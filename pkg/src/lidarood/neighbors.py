"""Grid-hash spatial index for fixed-radius neighbor queries.

Points are bucketed into cubic cells of side ``cell_size``; a ball query
scans the 3^3 (or more) cell neighborhood and filters by exact Euclidean
distance. Expected cost is O(k) per query for bounded point density. Queries
return indices in ascending order so downstream consumers are deterministic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["GridIndex"]


class GridIndex:
    """Fixed-radius neighbor index over an (M, 3) point array."""

    def __init__(self, points: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        keys = np.floor(self.points / self.cell_size).astype(np.int64)
        if len(keys):
            uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
            order = np.argsort(inverse, kind="stable")
            counts = np.bincount(inverse)
            bounds = np.concatenate([[0], np.cumsum(counts)])
            self._cells = {
                tuple(uniq[c]): order[bounds[c]:bounds[c + 1]]
                for c in range(len(uniq))
            }
        else:
            self._cells = {}

    def query_ball(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Indices of all points with Euclidean distance <= radius of center."""
        center = np.asarray(center, dtype=np.float64)
        reach = int(np.ceil(radius / self.cell_size))
        base = np.floor(center / self.cell_size).astype(np.int64)
        buckets = []
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for dz in range(-reach, reach + 1):
                    bucket = self._cells.get((base[0] + dx, base[1] + dy, base[2] + dz))
                    if bucket is not None:
                        buckets.append(bucket)
        if not buckets:
            return np.empty(0, dtype=np.int64)
        idx = np.concatenate(buckets)
        d2 = np.sum((self.points[idx] - center) ** 2, axis=1)
        hits = idx[d2 <= radius * radius]
        hits.sort()
        return hits

    def query_ball_point(self, index: int, radius: float) -> np.ndarray:
        """Ball query centered on one of the indexed points (self included)."""
        return self.query_ball(self.points[index], radius)

    def count_within(self, radius: float) -> np.ndarray:
        """Neighbor count (self inclusive) within radius, for every point."""
        counts, _ = self.ball_stats(radius)
        return counts

    def ball_stats(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-point neighbor count and population variance of neighbor z
        values within radius (self inclusive), fully vectorized.

        Requires radius <= cell_size so one ring of neighbor cells covers
        the ball.
        """
        if radius > self.cell_size:
            raise ValueError("ball_stats requires radius <= cell_size")
        pts = self.points
        n = len(pts)
        if n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)

        # dense integer cell codes, shifted so +-1 offsets stay in range
        keys = np.floor(pts / self.cell_size).astype(np.int64)
        keys = keys - keys.min(axis=0) + 1
        dims = keys.max(axis=0) + 2
        code = (keys[:, 0] * dims[1] + keys[:, 1]) * dims[2] + keys[:, 2]
        order = np.argsort(code, kind="stable")
        ucode, ustart = np.unique(code[order], return_index=True)
        uend = np.concatenate([ustart[1:], [n]])

        counts = np.zeros(n, dtype=np.int64)
        s1 = np.zeros(n)
        s2 = np.zeros(n)
        z = pts[:, 2]
        r2 = radius * radius
        point_ids = np.arange(n)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    target = code + (dx * dims[1] + dy) * dims[2] + dz
                    gi = np.minimum(np.searchsorted(ucode, target), len(ucode) - 1)
                    valid = ucode[gi] == target
                    starts = np.where(valid, ustart[gi], 0)
                    lens = np.where(valid, uend[gi] - ustart[gi], 0)
                    total = int(lens.sum())
                    if total == 0:
                        continue
                    pid = np.repeat(point_ids, lens)
                    cum = np.concatenate([[0], np.cumsum(lens[:-1])])
                    cand = order[np.arange(total) - np.repeat(cum, lens) + np.repeat(starts, lens)]
                    d2 = ((pts[pid] - pts[cand]) ** 2).sum(axis=1)
                    ok = d2 <= r2
                    pid, cand = pid[ok], cand[ok]
                    np.add.at(counts, pid, 1)
                    np.add.at(s1, pid, z[cand])
                    np.add.at(s2, pid, z[cand] ** 2)

        mean = s1 / counts
        zvar = np.maximum(s2 / counts - mean * mean, 0.0)
        return counts, zvar
