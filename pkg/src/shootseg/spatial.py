"""Radius-neighbor queries and neighborhood-mean aggregation matrices."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree


class SpatialIndex:
    """Immutable radius-query structure over a fixed coordinate array.

    Backed by a kd-tree; `cell_size` is recorded for bookkeeping and used as
    a leaf-size hint. Queries return exactly the points within Euclidean
    distance r (inclusive), ascending by index.
    """

    def __init__(self, coords: np.ndarray, cell_size: float = 2.0):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] == 0:
            raise ValueError(f"coords must be a non-empty (M, 3) array, got {coords.shape}")
        self.coords = coords.copy()
        self.coords.setflags(write=False)
        self.cell_size = float(cell_size)
        self._tree = cKDTree(self.coords, leafsize=16)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def radius_neighbors(self, query: np.ndarray, r: float) -> np.ndarray:
        if r <= 0:
            raise ValueError(f"radius must be positive, got {r}")
        idx = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def radius_neighbors_batch(self, queries: np.ndarray, r: float) -> list[np.ndarray]:
        if r <= 0:
            raise ValueError(f"radius must be positive, got {r}")
        out = self._tree.query_ball_point(np.asarray(queries, dtype=np.float64), r)
        return [np.sort(np.asarray(ii, dtype=np.int64)) for ii in out]

    def pairs_within(self, r: float) -> np.ndarray:
        """(P, 2) array of index pairs i<j at distance <= r."""
        pairs = self._tree.query_pairs(r, output_type="ndarray")
        return pairs.astype(np.int64)


def build_spatial_index(coords: np.ndarray, cell_size: float = 2.0) -> SpatialIndex:
    return SpatialIndex(coords, cell_size)


def radius_neighbors(index: SpatialIndex, query: np.ndarray, r: float) -> np.ndarray:
    return index.radius_neighbors(query, r)


def mean_aggregation_matrix(coords: np.ndarray, radius: float) -> sparse.csr_matrix:
    """Row-normalized adjacency over `radius`-balls (self included).

    A @ X averages each point's features over its radius neighborhood; a row
    always contains at least the point itself, so A has no empty rows.
    """
    m = coords.shape[0]
    pairs = SpatialIndex(coords).pairs_within(radius)
    ii = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(m)])
    jj = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(m)])
    deg = np.bincount(ii, minlength=m).astype(np.float64)
    vals = 1.0 / deg[ii]
    return sparse.csr_matrix((vals, (ii, jj)), shape=(m, m))
