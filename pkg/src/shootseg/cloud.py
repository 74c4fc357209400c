"""Point-cloud container, file I/O and voxel-grid downsampling.

Coordinates are millimeters everywhere in this package. Label conventions:
semantic -1 = unlabeled, 0 = stem, 1 = leaf, 2 = soil; instance -1 = none,
otherwise a zero-based leaf id.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

SEM_UNLABELED = -1
SEM_STEM = 0
SEM_LEAF = 1
SEM_SOIL = 2


class CloudError(ValueError):
    """Invalid cloud construction or malformed cloud file."""


@dataclass
class PointCloud:
    """M points with mm coordinates, RGB colors and optional labels.

    coords: (M, 3) float64, mm. colors: (M, 3) float64 in [0, 1].
    semantic/instance: optional (M,) int64 arrays, -1 = unlabeled/none.
    """

    coords: np.ndarray
    colors: np.ndarray
    semantic: np.ndarray | None = None
    instance: np.ndarray | None = None
    source_id: str = ""

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise CloudError(f"coords must be (M, 3), got {self.coords.shape}")
        m = self.coords.shape[0]
        if m < 1:
            raise CloudError("a point cloud needs at least one point")
        if self.colors.shape != (m, 3):
            raise CloudError(f"colors must be ({m}, 3), got {self.colors.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise CloudError("coords contain NaN/Inf")
        for name in ("semantic", "instance"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.ascontiguousarray(arr, dtype=np.int64)
                if arr.shape != (m,):
                    raise CloudError(f"{name} must have length {m}, got {arr.shape}")
                setattr(self, name, arr)
        if self.instance is not None:
            sem = self.semantic if self.semantic is not None else np.full(m, -1, dtype=np.int64)
            bad = (self.instance >= 0) & (sem < 0)
            if np.any(bad):
                raise CloudError(
                    f"instance label without semantic label at index {int(np.nonzero(bad)[0][0])}"
                )

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.coords.mean(axis=0)

    def select(self, indices: np.ndarray, source_id: str | None = None) -> "PointCloud":
        """New cloud keeping the given point indices (labels carried, order follows indices)."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            coords=self.coords[idx],
            colors=self.colors[idx],
            semantic=None if self.semantic is None else self.semantic[idx],
            instance=None if self.instance is None else self.instance[idx],
            source_id=self.source_id if source_id is None else source_id,
        )

    def effective_semantic(self) -> np.ndarray:
        """Semantic labels with absent treated as all -1."""
        if self.semantic is None:
            return np.full(len(self), SEM_UNLABELED, dtype=np.int64)
        return self.semantic

    def effective_instance(self) -> np.ndarray:
        if self.instance is None:
            return np.full(len(self), -1, dtype=np.int64)
        return self.instance


# ---------------------------------------------------------------------------
# file formats
#
# xyzl text: one point per line `x y z r g b [sem inst]`, '#' comments ignored.
# PLY: ascii 1.0, float x/y/z, uchar red/green/blue (normalized to [0,1] on
# load), optional int properties `semantic` and `instance`.
# ---------------------------------------------------------------------------


def _detect_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    return "ply-ascii" if ext == ".ply" else "xyzl-text"


def load_cloud(path: str, fmt: str | None = None) -> PointCloud:
    """Load a point cloud from an xyzl text file or an ascii PLY file.

    Labels are populated iff label columns/properties are present in the file.
    Point order is preserved. Raises CloudError naming the offending line on
    malformed input, or on an empty file.
    """
    if not os.path.exists(path):
        raise CloudError(f"no such file: {path}")
    fmt = fmt or _detect_format(path)
    if fmt == "xyzl-text":
        return _load_xyzl(path)
    if fmt == "ply-ascii":
        return _load_ply(path)
    raise CloudError(f"unknown format {fmt!r}")


def save_cloud(cloud: PointCloud, path: str, fmt: str | None = None) -> None:
    """Write a cloud; round-trips labels exactly and coords within 1e-6 mm.

    xyzl files get 8 columns whenever any label array is present (the missing
    one written as -1). PLY colors are quantized to uchar.
    """
    fmt = fmt or _detect_format(path)
    try:
        if fmt == "xyzl-text":
            _save_xyzl(cloud, path)
        elif fmt == "ply-ascii":
            _save_ply(cloud, path)
        else:
            raise CloudError(f"unknown format {fmt!r}")
    except OSError as e:
        raise CloudError(f"cannot write {path}: {e}") from e


def _load_xyzl(path: str) -> PointCloud:
    coords, colors, sems, insts = [], [], [], []
    have_labels = None
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (6, 8):
                raise CloudError(
                    f"{path}:{lineno}: expected 6 or 8 fields, got {len(parts)}"
                )
            try:
                vals = [float(p) for p in parts[:6]]
            except ValueError as e:
                raise CloudError(f"{path}:{lineno}: bad number: {e}") from e
            labeled = len(parts) == 8
            if have_labels is None:
                have_labels = labeled
            elif have_labels != labeled:
                raise CloudError(f"{path}:{lineno}: inconsistent column count")
            coords.append(vals[:3])
            colors.append(vals[3:6])
            if labeled:
                try:
                    sems.append(int(parts[6]))
                    insts.append(int(parts[7]))
                except ValueError as e:
                    raise CloudError(f"{path}:{lineno}: bad label: {e}") from e
    if not coords:
        raise CloudError(f"{path}: empty point cloud file")
    source_id = os.path.splitext(os.path.basename(path))[0]
    return PointCloud(
        coords=np.array(coords),
        colors=np.array(colors),
        semantic=np.array(sems, dtype=np.int64) if have_labels else None,
        instance=np.array(insts, dtype=np.int64) if have_labels else None,
        source_id=source_id,
    )


def _save_xyzl(cloud: PointCloud, path: str) -> None:
    labeled = cloud.semantic is not None or cloud.instance is not None
    sem = cloud.effective_semantic()
    inst = cloud.effective_instance()
    with open(path, "w") as f:
        f.write("# x y z r g b" + (" sem inst\n" if labeled else "\n"))
        for i in range(len(cloud)):
            x, y, z = cloud.coords[i]
            r, g, b = cloud.colors[i]
            row = f"{x:.8f} {y:.8f} {z:.8f} {r:.6f} {g:.6f} {b:.6f}"
            if labeled:
                row += f" {sem[i]} {inst[i]}"
            f.write(row + "\n")


def _load_ply(path: str) -> PointCloud:
    with open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudError(f"{path}:1: not a PLY file")
    props: list[str] = []
    n_vertex = None
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise CloudError(f"{path}:{lineno}: only ascii 1.0 PLY supported")
        elif tok[0] == "element":
            if tok[1] == "vertex":
                n_vertex = int(tok[2])
            elif n_vertex is not None and tok[1] != "vertex":
                raise CloudError(f"{path}:{lineno}: unsupported element {tok[1]!r}")
        elif tok[0] == "property" and n_vertex is not None:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = lineno
            break
    if n_vertex is None or body_start is None:
        raise CloudError(f"{path}: missing vertex element or end_header")
    if n_vertex == 0:
        raise CloudError(f"{path}: empty point cloud file")
    needed = ["x", "y", "z", "red", "green", "blue"]
    if any(p not in props for p in needed):
        raise CloudError(f"{path}: PLY must carry {needed}, got {props}")
    col = {p: i for i, p in enumerate(props)}
    rows = []
    for lineno in range(body_start + 1, body_start + 1 + n_vertex):
        if lineno > len(lines):
            raise CloudError(f"{path}:{lineno}: truncated vertex data")
        parts = lines[lineno - 1].split()
        if len(parts) != len(props):
            raise CloudError(
                f"{path}:{lineno}: expected {len(props)} values, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise CloudError(f"{path}:{lineno}: bad number: {e}") from e
    data = np.array(rows)
    coords = data[:, [col["x"], col["y"], col["z"]]]
    colors = data[:, [col["red"], col["green"], col["blue"]]] / 255.0
    sem = data[:, col["semantic"]].astype(np.int64) if "semantic" in col else None
    inst = data[:, col["instance"]].astype(np.int64) if "instance" in col else None
    source_id = os.path.splitext(os.path.basename(path))[0]
    return PointCloud(coords, colors, sem, inst, source_id)


def _save_ply(cloud: PointCloud, path: str) -> None:
    m = len(cloud)
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.int64)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {m}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if cloud.semantic is not None:
        header.append("property int semantic")
    if cloud.instance is not None:
        header.append("property int instance")
    header.append("end_header")
    with open(path, "w") as f:
        f.write("\n".join(header) + "\n")
        for i in range(m):
            x, y, z = cloud.coords[i]
            row = f"{x:.8f} {y:.8f} {z:.8f} {rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]}"
            if cloud.semantic is not None:
                row += f" {cloud.semantic[i]}"
            if cloud.instance is not None:
                row += f" {cloud.instance[i]}"
            f.write(row + "\n")


# ---------------------------------------------------------------------------
# voxel grid
# ---------------------------------------------------------------------------


@dataclass
class VoxelMap:
    """Partition of point indices into voxels of edge `voxel_size` mm.

    Voxel key = floor(coord / voxel_size) componentwise; every original index
    belongs to exactly one voxel. Voxel rows are ordered by lexicographic key.
    """

    keys: np.ndarray            # (V, 3) int64, lexicographically sorted
    voxel_of_point: np.ndarray  # (M,) int64 voxel row per original point
    voxel_size: float
    _order: np.ndarray = field(repr=False, default=None)   # points grouped by voxel
    _starts: np.ndarray = field(repr=False, default=None)  # (V+1,) run offsets

    @property
    def n_voxels(self) -> int:
        return self.keys.shape[0]

    def members(self, voxel_row: int) -> np.ndarray:
        """Original point indices inside one voxel (ascending)."""
        return self._order[self._starts[voxel_row]:self._starts[voxel_row + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self._starts)


def build_voxel_map(coords: np.ndarray, voxel_size: float) -> VoxelMap:
    if voxel_size <= 0:
        raise CloudError(f"voxel_size must be positive, got {voxel_size}")
    keys = np.floor(np.asarray(coords, dtype=np.float64) / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((np.arange(len(inverse)), inverse))
    starts = np.searchsorted(inverse[order], np.arange(uniq.shape[0] + 1))
    return VoxelMap(uniq, inverse, float(voxel_size), order, starts)


def _majority_per_voxel(inverse: np.ndarray, labels: np.ndarray, n_voxels: int) -> np.ndarray:
    """Most frequent label per voxel; ties resolved to the lowest label value."""
    pairs, counts = np.unique(np.stack([inverse, labels], axis=1), axis=0, return_counts=True)
    # primary voxel, then count desc, then label asc
    order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
    pairs = pairs[order]
    _, first = np.unique(pairs[:, 0], return_index=True)
    out = np.empty(n_voxels, dtype=np.int64)
    out[pairs[first, 0]] = pairs[first, 1]
    return out


def voxel_downsample(
    cloud: PointCloud, voxel_size: float, vm: VoxelMap | None = None
) -> tuple[PointCloud, np.ndarray]:
    """Collapse the cloud to one point per occupied voxel.

    Output coords are member centroids, colors their mean, labels the majority
    label among members (ties to the lowest label value). Returns the
    downsampled cloud plus an index map giving, per output point, the member
    original index nearest the centroid (ties to the lowest index).
    """
    if vm is None:
        vm = build_voxel_map(cloud.coords, voxel_size)
    v = vm.n_voxels
    inv = vm.voxel_of_point
    cnt = np.bincount(inv, minlength=v).astype(np.float64)
    centroids = np.zeros((v, 3))
    colors = np.zeros((v, 3))
    for a in range(3):
        centroids[:, a] = np.bincount(inv, weights=cloud.coords[:, a], minlength=v) / cnt
        colors[:, a] = np.bincount(inv, weights=cloud.colors[:, a], minlength=v) / cnt
    sem = None if cloud.semantic is None else _majority_per_voxel(inv, cloud.semantic, v)
    inst = None if cloud.instance is None else _majority_per_voxel(inv, cloud.instance, v)
    # representative: member closest to the centroid, lowest index on ties
    d2 = np.sum((cloud.coords - centroids[inv]) ** 2, axis=1)
    order = np.lexsort((np.arange(len(cloud)), d2, inv))
    _, first = np.unique(inv[order], return_index=True)
    index_map = np.asarray(order[first], dtype=np.int64)
    down = PointCloud(centroids, colors, sem, inst, source_id=cloud.source_id)
    return down, index_map
