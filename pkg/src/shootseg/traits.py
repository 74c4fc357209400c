"""Organ-level trait measurement: stem diameter, leaf length, leaf width.

Stem diameter: split the stem's z-range into 4 equal parts, fit a total
least squares line (first principal axis) through the lowest part, report
twice the median perpendicular distance to it. Leaf length: geodesic
(k-nearest-neighbor graph, Dijkstra) between the extreme points along the
first principal axis. Leaf width: bin the points into 5 equal intervals of
first-axis projection and take the longest geodesic between the per-bin
extreme pairs along the second and third axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree


class TraitError(ValueError):
    pass


def pca_axes(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal principal axes (rows, eigenvalues descending).

    Sign convention: each axis has its largest-magnitude component positive
    (first occurrence on exact ties), so results are reproducible.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise TraitError(f"pca needs >= 2 points of dim 3, got {pts.shape}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    if not np.any(cov):
        raise TraitError("degenerate point set: zero covariance")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    axes = evecs[:, order].T
    for i in range(3):
        k = int(np.argmax(np.abs(axes[i])))
        if axes[i, k] < 0:
            axes[i] = -axes[i]
    return axes, evals


def fit_line_tls(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total least squares 3D line: (centroid, unit direction = first axis)."""
    axes, _ = pca_axes(points)
    return np.asarray(points, dtype=np.float64).mean(axis=0), axes[0]


def _knn_graph(points: np.ndarray, k: int) -> sparse.csr_matrix:
    """Symmetric k-nearest-neighbor graph with Euclidean edge weights."""
    n = points.shape[0]
    kq = min(k + 1, n)
    dist, idx = cKDTree(points).query(points, k=kq)
    rows = np.repeat(np.arange(n), kq - 1)
    cols = idx[:, 1:].reshape(-1)
    vals = dist[:, 1:].reshape(-1)
    g = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return g.maximum(g.T)


def shortest_path(points: np.ndarray, i: int, j: int, k: int = 10) -> float:
    """Geodesic between two points on the kNN graph; inf when disconnected."""
    if i == j:
        return 0.0
    g = _knn_graph(np.asarray(points, dtype=np.float64), k)
    d = dijkstra(g, directed=False, indices=i)
    return float(d[j])


def stem_diameter(stem_points: np.ndarray) -> float:
    """Twice the median perpendicular distance of low-stem points to their axis.

    Uses only the lowest of 4 equal z-range parts; the line is a total least
    squares fit. Needs >= 8 points spanning a non-zero z range.
    """
    pts = np.asarray(stem_points, dtype=np.float64)
    if pts.shape[0] < 8:
        raise TraitError(f"stem diameter needs >= 8 points, got {pts.shape[0]}")
    z = pts[:, 2]
    zmin, zmax = z.min(), z.max()
    if zmax <= zmin:
        raise TraitError("stem points span no z range")
    part = np.clip((4 * (z - zmin) / (zmax - zmin)).astype(int), 0, 3)
    low = pts[part == 0]
    if low.shape[0] < 2 or np.allclose(low, low[0]):
        raise TraitError("lowest stem part is degenerate")
    point, direction = fit_line_tls(low)
    rel = low - point
    perp = rel - np.outer(rel @ direction, direction)
    return 2.0 * float(np.median(np.linalg.norm(perp, axis=1)))


@dataclass
class LeafMeasure:
    value_mm: float
    flags: tuple[str, ...] = ()


def _endpoints(proj: np.ndarray) -> tuple[int, int]:
    # argmin/argmax take the first occurrence: lowest index on exact ties
    return int(np.argmin(proj)), int(np.argmax(proj))


def leaf_length(leaf_points: np.ndarray, k: int = 10) -> LeafMeasure:
    """Geodesic between the two extreme points along the first principal axis.

    Falls back to the straight-line distance (flag "disconnected") when the
    endpoints do not share a graph component.
    """
    pts = np.asarray(leaf_points, dtype=np.float64)
    if pts.shape[0] < k + 1:
        raise TraitError(f"leaf length needs > {k} points, got {pts.shape[0]}")
    axes, _ = pca_axes(pts)
    proj = (pts - pts.mean(axis=0)) @ axes[0]
    i0, i1 = _endpoints(proj)
    g = _knn_graph(pts, k)
    d = float(dijkstra(g, directed=False, indices=i0)[i1])
    if np.isinf(d):
        return LeafMeasure(float(np.linalg.norm(pts[i1] - pts[i0])), ("disconnected",))
    return LeafMeasure(d)


def leaf_width(leaf_points: np.ndarray, k: int = 10, n_bins: int = 5) -> LeafMeasure:
    """Longest per-bin cross geodesic.

    Points are split into `n_bins` equal intervals of first-axis projection;
    in each bin with >= 3 points and non-degenerate cross spread, the extreme
    pairs along the second and third axes are connected on the whole-leaf
    graph; the maximum path is the width.
    """
    pts = np.asarray(leaf_points, dtype=np.float64)
    if pts.shape[0] < k + 1:
        raise TraitError(f"leaf width needs > {k} points, got {pts.shape[0]}")
    axes, _ = pca_axes(pts)
    centered = pts - pts.mean(axis=0)
    proj1 = centered @ axes[0]
    lo, hi = proj1.min(), proj1.max()
    if hi <= lo:
        raise TraitError("degenerate leaf: no spread along the first axis")
    # an end-point pair only carries width information if its axis actually
    # spreads the leaf; pairs along a near-degenerate axis (flat leaf, PC3)
    # would connect arbitrary in-plane points
    proj2_all = centered @ axes[1]
    spread_tol = 0.3 * (proj2_all.max() - proj2_all.min())
    binning = np.clip((n_bins * (proj1 - lo) / (hi - lo)).astype(int), 0, n_bins - 1)
    g = _knn_graph(pts, k)
    best = -np.inf
    flags: set[str] = set()
    for b in range(n_bins):
        rows = np.nonzero(binning == b)[0]
        if rows.size < 3:
            continue
        for axis in (axes[1], axes[2]):
            proj = centered[rows] @ axis
            if proj.max() - proj.min() <= spread_tol:
                continue
            e0, e1 = _endpoints(proj)
            i0, i1 = int(rows[e0]), int(rows[e1])
            if i0 == i1:
                continue
            d = float(dijkstra(g, directed=False, indices=i0)[i1])
            if np.isinf(d):
                d = float(np.linalg.norm(pts[i1] - pts[i0]))
                flags.add("disconnected")
            best = max(best, d)
    if not np.isfinite(best) or best <= 0:
        raise TraitError("all width bins degenerate")
    return LeafMeasure(best, tuple(sorted(flags)))


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


@dataclass
class LeafTraits:
    instance: int
    length_mm: float
    width_mm: float
    flags: tuple[str, ...] = ()


@dataclass
class TraitReport:
    cloud_id: str
    stem_diameter_mm: float | None
    leaves: list[LeafTraits] = field(default_factory=list)
    provenance: str = "ground-truth-labels"
    skipped: list[str] = field(default_factory=list)


def measure_traits(
    coords: np.ndarray,
    semantic: np.ndarray,
    instance: np.ndarray,
    cloud_id: str = "",
    min_leaf_points: int = 50,
    k: int = 10,
    provenance: str = "ground-truth-labels",
) -> TraitReport:
    """Measure every organ of a labeled cloud; leaves below min size skipped."""
    coords = np.asarray(coords, dtype=np.float64)
    semantic = np.asarray(semantic, dtype=np.int64)
    instance = np.asarray(instance, dtype=np.int64)
    report = TraitReport(cloud_id=cloud_id, stem_diameter_mm=None, provenance=provenance)
    stem_pts = coords[semantic == 0]
    if stem_pts.shape[0] >= 8:
        try:
            report.stem_diameter_mm = stem_diameter(stem_pts)
        except TraitError as e:
            report.skipped.append(f"stem: {e}")
    else:
        report.skipped.append("stem: too few points")
    leaf_ids = np.unique(instance[(semantic == 1) & (instance >= 0)])
    for inst in leaf_ids:
        pts = coords[(semantic == 1) & (instance == inst)]
        if pts.shape[0] < max(min_leaf_points, k + 1):
            report.skipped.append(f"leaf {int(inst)}: too few points ({pts.shape[0]})")
            continue
        try:
            length = leaf_length(pts, k)
            width = leaf_width(pts, k)
        except TraitError as e:
            report.skipped.append(f"leaf {int(inst)}: {e}")
            continue
        report.leaves.append(
            LeafTraits(
                instance=int(inst),
                length_mm=length.value_mm,
                width_mm=width.value_mm,
                flags=tuple(sorted(set(length.flags) | set(width.flags))),
            )
        )
    return report


def traits_csv(reports: list[TraitReport]) -> str:
    """CSV rows `cloud_id,trait,organ_id,value_mm,flags` (organ -1 = stem)."""
    lines = ["cloud_id,trait,organ_id,value_mm,flags"]
    for r in reports:
        if r.stem_diameter_mm is not None:
            lines.append(f"{r.cloud_id},stem_diameter,-1,{r.stem_diameter_mm!r},")
        for leaf in r.leaves:
            fl = ";".join(leaf.flags)
            lines.append(f"{r.cloud_id},leaf_length,{leaf.instance},{leaf.length_mm!r},{fl}")
            lines.append(f"{r.cloud_id},leaf_width,{leaf.instance},{leaf.width_mm!r},{fl}")
    return "\n".join(lines) + "\n"


def parse_traits_csv(text: str) -> dict[tuple[str, str, int], float]:
    """Map (cloud_id, trait, organ_id) -> value_mm from the CSV layout above."""
    out = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("cloud_id"):
        raise TraitError("traits CSV must start with the standard header")
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) < 4:
            raise TraitError(f"bad traits CSV row: {ln!r}")
        out[(parts[0], parts[1], int(parts[2]))] = float(parts[3])
    return out
