"""Procedural labeled plants with closed-form trait ground truth.

The stem is a (possibly tilted, gently curved) tube; each leaf is a ruled
sheet over a constant-turn-rate midrib arc with an elliptical planform, so
the midrib arc length and the widest cross chord are exact by construction
and independent of any measurement code. Surface noise is a smooth Gaussian
field applied along local normals after ground truth is fixed; optional
hole punching deletes points inside random balls on each leaf.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud


@dataclass
class StemSpec:
    height: float = 100.0        # mm
    radius: float = 2.0          # mm
    tilt: float = 0.0            # radians off vertical
    curvature: float = 0.0       # horizontal bow as a fraction of height


@dataclass
class LeafSpec:
    attach_height: float = 50.0  # mm along the stem
    azimuth: float = 0.0         # radians
    length: float = 40.0         # mm midrib arc length
    width: float = 15.0          # mm widest cross chord
    droop: float = 0.3           # radians of downward turn over the midrib
    elevation: float = 0.25      # initial midrib elevation above horizontal


@dataclass
class PlantSpec:
    stem: StemSpec = field(default_factory=StemSpec)
    leaves: list[LeafSpec] = field(default_factory=list)
    density: float = 5.0         # points per mm^2 of surface
    noise_sigma: float = 0.0     # mm, smooth field along normals
    seed: int = 0
    holes_per_leaf: int = 0      # hole punching (leaf gaps), off by default
    hole_radius: float = 0.8     # mm
    color_contrast: float = 1.0  # 0 = stem/leaf share one color distribution

    def __post_init__(self):
        if min(self.stem.height, self.stem.radius, self.density) <= 0:
            raise ValueError("stem dimensions and density must be positive")
        for leaf in self.leaves:
            if min(leaf.length, leaf.width) <= 0:
                raise ValueError("leaf dimensions must be positive")
            if not 0 <= leaf.attach_height <= self.stem.height:
                raise ValueError("leaf attach height outside the stem")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class LeafGroundTruth:
    instance: int
    length_mm: float
    width_mm: float


@dataclass
class GroundTruth:
    stem_diameter_mm: float
    leaves: list[LeafGroundTruth] = field(default_factory=list)


# geometry helpers -----------------------------------------------------------


def _tilt_matrix(tilt: float, about: float) -> np.ndarray:
    c, s = np.cos(tilt), np.sin(tilt)
    axis = np.array([np.cos(about), np.sin(about), 0.0])
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def _stem_centerline(spec: StemSpec, t: np.ndarray, bend_azimuth: float, tilt_about: float):
    """Centerline points and unit tangents at parameters t in [0, 1].

    The bow grows quadratically so the base stays straight and the fitted
    low-stem axis matches the tube axis.
    """
    h = spec.height
    bend_dir = np.array([np.cos(bend_azimuth), np.sin(bend_azimuth), 0.0])
    pos = np.outer(t * h, np.array([0.0, 0.0, 1.0])) + np.outer(
        spec.curvature * h * t**2, bend_dir
    )
    tan = np.tile(np.array([0.0, 0.0, h]), (t.size, 1)) + np.outer(
        2 * spec.curvature * h * t, bend_dir
    )
    rot = _tilt_matrix(spec.tilt, tilt_about)
    pos = pos @ rot.T
    tan = tan @ rot.T
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    return pos, tan


def _frame(tangents: np.ndarray):
    """Orthonormal (u, v) perpendicular to each tangent."""
    ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(tangents, ref)
    small = np.linalg.norm(u, axis=1) < 1e-8
    if np.any(small):
        u[small] = np.cross(tangents[small], np.array([0.0, 1.0, 0.0]))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(tangents, u)
    return u, v


def midrib_point(
    attach: np.ndarray, azimuth: float, elevation: float, droop: float, length: float, s
):
    """Closed-form midrib position(s) at arc length s (unit-speed curve).

    The tangent elevation decreases linearly from `elevation` to
    `elevation - droop` over the arc, so the total arc length is exactly
    `length`; a quadrature of the tangent speed reproduces it.
    """
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    dh = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    e0 = elevation
    if abs(droop) < 1e-12:
        horiz = s * np.cos(e0)
        vert = s * np.sin(e0)
    else:
        rate = droop / length
        horiz = (np.sin(e0) - np.sin(e0 - rate * s)) / rate
        vert = (np.cos(e0 - rate * s) - np.cos(e0)) / rate
    return attach[None, :] + np.outer(horiz, dh) + np.outer(vert, np.array([0.0, 0.0, 1.0]))


def _midrib_tangent(azimuth: float, elevation: float, droop: float, length: float, s):
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    e = elevation - (droop / length) * s
    dh = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    return np.outer(np.cos(e), dh) + np.outer(np.sin(e), np.array([0.0, 0.0, 1.0]))


def _grid_jitter(
    rng, lo: float, hi: float, spacing: float, jitter: float = 0.35, pin_ends: bool = False
) -> np.ndarray:
    """1-D jittered grid covering [lo, hi]; quasi-uniform like scan output.

    `pin_ends` keeps the first and last samples exactly on the interval ends
    (sharp organ boundaries).
    """
    n = max(2, int(np.round((hi - lo) / spacing)) + 1)
    base = np.linspace(lo, hi, n)
    pts = base + rng.uniform(-jitter, jitter, n) * (hi - lo) / (n - 1)
    pts = np.clip(pts, lo, hi)
    if pin_ends:
        pts[0], pts[-1] = lo, hi
    return pts


def _smooth_field(rng, points: np.ndarray, waves: int = 10) -> np.ndarray:
    """Unit-variance smooth random field evaluated at the points.

    Wavevectors are predominantly vertical: the field cycles several times
    over any organ's height (so medians of fitted distances stay unbiased)
    while varying slowly along horizontal crossings (so surface geodesics
    are not artificially lengthened by waviness).
    """
    phi = rng.uniform(0, 2 * np.pi, waves)
    rho = 0.35 * rng.uniform(0.2, 1.0, waves)
    sign = rng.choice([-1.0, 1.0], waves)
    dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), sign], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    wavelengths = rng.uniform(4.0, 9.0, waves)
    phases = rng.uniform(0.0, 2 * np.pi, waves)
    k = dirs * (2 * np.pi / wavelengths)[:, None]
    return np.sqrt(2.0 / waves) * np.sin(points @ k.T + phases).sum(axis=1)


# stem and leaf colors overlap heavily: segmentation has to lean on geometry
STEM_COLOR = np.array([0.30, 0.45, 0.20])
LEAF_COLOR = np.array([0.24, 0.50, 0.23])
COLOR_JITTER = 0.07


def generate_plant(spec: PlantSpec) -> tuple[PointCloud, GroundTruth]:
    """Sample a fully labeled plant; ground truth is analytic, not measured."""
    rng = np.random.default_rng(spec.seed)
    stem_color = LEAF_COLOR + spec.color_contrast * (STEM_COLOR - LEAF_COLOR)
    stem = spec.stem
    bend_azimuth = float(rng.uniform(0, 2 * np.pi))
    tilt_about = float(rng.uniform(0, 2 * np.pi))

    # stem tube, a jittered grid over (arc position, circumference)
    grid = np.linspace(0.0, 1.0, 512)
    pos_grid, _ = _stem_centerline(stem, grid, bend_azimuth, tilt_about)
    seg = np.linalg.norm(np.diff(pos_grid, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    stem_len = float(arc[-1])
    spacing = 1.0 / np.sqrt(spec.density)
    rows = _grid_jitter(rng, 0.0, stem_len, spacing)
    n_ring = max(4, int(np.round(2 * np.pi * stem.radius / spacing)))
    t_of_arc = np.interp(rows, arc, grid)
    ring_phase = rng.uniform(0, 2 * np.pi, rows.size)
    t_list, theta_list = [], []
    for ti, ph in zip(t_of_arc, ring_phase):
        th = ph + np.arange(n_ring) * (2 * np.pi / n_ring)
        th = th + rng.uniform(-0.3, 0.3, n_ring) * (2 * np.pi / n_ring)
        t_list.append(np.full(n_ring, ti))
        theta_list.append(th)
    t = np.concatenate(t_list)
    theta = np.concatenate(theta_list)
    n_stem = t.size
    centers, tangents = _stem_centerline(stem, t, bend_azimuth, tilt_about)
    u, v = _frame(tangents)
    radial = u * np.cos(theta)[:, None] + v * np.sin(theta)[:, None]
    coords = [centers + stem.radius * radial]
    normals = [radial]
    sem = [np.zeros(n_stem, dtype=np.int64)]
    inst = [np.full(n_stem, -1, dtype=np.int64)]
    colors = [
        np.clip(stem_color + rng.normal(0, COLOR_JITTER, (n_stem, 3)), 0, 1)
    ]

    gt = GroundTruth(stem_diameter_mm=2.0 * stem.radius)
    leaf_slices = []
    offset = n_stem
    for li, leaf in enumerate(spec.leaves):
        t_attach = leaf.attach_height / stem.height
        c, tangent = _stem_centerline(
            stem, np.array([t_attach]), bend_azimuth, tilt_about
        )
        uu, vv = _frame(tangent)
        out_dir = uu[0] * np.cos(leaf.azimuth) + vv[0] * np.sin(leaf.azimuth)
        attach = c[0] + stem.radius * out_dir
        azim = float(np.arctan2(out_dir[1], out_dir[0]))
        cross = np.array([-np.sin(azim), np.cos(azim), 0.0])

        # jittered grid in unrolled (arc length, cross offset) coordinates,
        # masked to the elliptical planform
        s_rows = _grid_jitter(rng, 0.0, leaf.length, spacing, pin_ends=True)
        s_parts, v_parts = [], []
        for sv in s_rows:
            w_here = 0.5 * leaf.width * np.sqrt(
                max(0.0, 1.0 - (2 * sv / leaf.length - 1.0) ** 2)
            )
            if w_here < spacing / 4:
                s_parts.append(np.array([sv]))
                v_parts.append(np.array([0.0]))
                continue
            vv = _grid_jitter(rng, -w_here, w_here, spacing, pin_ends=True)
            s_parts.append(np.full(vv.size, sv))
            v_parts.append(vv)
        s = np.concatenate(s_parts)
        vv_off = np.concatenate(v_parts)
        n_leaf = s.size
        mid = midrib_point(attach, azim, leaf.elevation, leaf.droop, leaf.length, s)
        pts = mid + np.outer(vv_off, cross)
        tang = _midrib_tangent(azim, leaf.elevation, leaf.droop, leaf.length, s)
        nrm = np.cross(tang, cross)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)

        base = np.clip(LEAF_COLOR + rng.normal(0, 0.04, 3), 0, 1)
        coords.append(pts)
        normals.append(nrm)
        sem.append(np.ones(n_leaf, dtype=np.int64))
        inst.append(np.full(n_leaf, li, dtype=np.int64))
        colors.append(np.clip(base + rng.normal(0, COLOR_JITTER, (n_leaf, 3)), 0, 1))
        chord = midrib_point(attach, azim, leaf.elevation, leaf.droop, leaf.length, leaf.length)[0] - attach
        leaf_slices.append((offset, offset + n_leaf, chord / np.linalg.norm(chord)))
        offset += n_leaf
        gt.leaves.append(LeafGroundTruth(li, leaf.length, leaf.width))

    coords = np.vstack(coords)
    normals = np.vstack(normals)
    sem = np.concatenate(sem)
    inst = np.concatenate(inst)
    colors = np.vstack(colors)

    if spec.noise_sigma > 0:
        coords = coords + (spec.noise_sigma * _smooth_field(rng, coords))[:, None] * normals

    keep = np.ones(coords.shape[0], dtype=bool)
    if spec.holes_per_leaf > 0:
        for lo, hi, _chord in leaf_slices:
            centers = rng.integers(lo, hi, size=spec.holes_per_leaf)
            for ci in centers:
                d = np.linalg.norm(coords[lo:hi] - coords[ci], axis=1)
                keep[lo:hi] &= d > spec.hole_radius
    coords, colors, sem, inst = coords[keep], colors[keep], sem[keep], inst[keep]

    cloud = PointCloud(coords, colors, sem, inst, source_id=f"plant{spec.seed:05d}")
    return cloud, gt


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def random_plant_spec(
    seed: int,
    n_leaves: tuple[int, int] = (4, 7),
    density: float = 5.0,
    noise_sigma: float = 0.0,
    holes_per_leaf: int = 0,
    hole_radius: float = 0.8,
    color_contrast: float = 1.0,
) -> PlantSpec:
    """A varied but well-separated plant: leaves spread in height and azimuth."""
    rng = np.random.default_rng((seed, 9173))
    stem = StemSpec(
        height=float(rng.uniform(80.0, 140.0)),
        radius=float(rng.uniform(1.8, 3.0)),
        tilt=float(rng.uniform(0.0, 0.12)),
        curvature=float(rng.uniform(0.0, 0.03)),
    )
    k = int(rng.integers(n_leaves[0], n_leaves[1] + 1))
    lo, hi = 0.35 * stem.height, 0.95 * stem.height
    heights = np.linspace(lo, hi, k) + rng.uniform(-0.3, 0.3, k) * (hi - lo) / max(k, 2) / 2
    start = rng.uniform(0, 2 * np.pi)
    leaves = []
    for i in range(k):
        leaves.append(
            LeafSpec(
                attach_height=float(np.clip(heights[i], 0.0, stem.height)),
                azimuth=float(start + i * GOLDEN_ANGLE + rng.uniform(-0.2, 0.2)),
                length=(length := float(rng.uniform(28.0, 55.0))),
                width=float(length / rng.uniform(1.7, 2.6)),
                droop=float(rng.uniform(0.1, np.pi / 6)),
                elevation=float(rng.uniform(0.15, 0.4)),
            )
        )
    return PlantSpec(
        stem=stem,
        leaves=leaves,
        density=density,
        noise_sigma=noise_sigma,
        seed=seed,
        holes_per_leaf=holes_per_leaf,
        hole_radius=hole_radius,
        color_contrast=color_contrast,
    )


def ground_truth_csv(entries: list[tuple[str, GroundTruth]]) -> str:
    """Same layout as the measured-trait CSV so the two line up row-for-row."""
    lines = ["cloud_id,trait,organ_id,value_mm,flags"]
    for cloud_id, gt in entries:
        lines.append(f"{cloud_id},stem_diameter,-1,{gt.stem_diameter_mm!r},")
        for leaf in gt.leaves:
            lines.append(f"{cloud_id},leaf_length,{leaf.instance},{leaf.length_mm!r},")
            lines.append(f"{cloud_id},leaf_width,{leaf.instance},{leaf.width_mm!r},")
    return "\n".join(lines) + "\n"


def generate_dataset(
    out_dir: str,
    n_plants: int,
    seed: int = 0,
    val_fraction: float = 0.33,
    density: float = 5.0,
    noise_sigma: float = 0.0,
    holes_per_leaf: int = 0,
    hole_radius: float = 0.8,
    color_contrast: float = 1.0,
) -> tuple[list[str], list[str]]:
    """Write xyzl clouds, a ground-truth CSV and a train/val manifest.

    Returns (train paths, val paths). The split assigns the last
    ceil(val_fraction * n) plants to validation, deterministically.
    """
    from .cloud import save_cloud

    os.makedirs(out_dir, exist_ok=True)
    gt_entries = []
    paths = []
    for i in range(n_plants):
        spec = random_plant_spec(
            seed + i,
            density=density,
            noise_sigma=noise_sigma,
            holes_per_leaf=holes_per_leaf,
            hole_radius=hole_radius,
            color_contrast=color_contrast,
        )
        cloud, gt = generate_plant(spec)
        path = os.path.join(out_dir, f"{cloud.source_id}.xyzl")
        save_cloud(cloud, path)
        paths.append(path)
        gt_entries.append((cloud.source_id, gt))
    with open(os.path.join(out_dir, "ground_truth.csv"), "w") as f:
        f.write(ground_truth_csv(gt_entries))
    n_val = int(np.ceil(val_fraction * n_plants))
    train, val = paths[: n_plants - n_val], paths[n_plants - n_val :]
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("# path split\n")
        for p in train:
            f.write(f"{os.path.basename(p)} train\n")
        for p in val:
            f.write(f"{os.path.basename(p)} val\n")
    return train, val
