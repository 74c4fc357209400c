"""Farthest point sampling and sparse (k-point) supervision sets."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .cloud import CloudError, PointCloud


def farthest_point_sample(coords: np.ndarray, count: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    First pick is `start`; each subsequent pick maximizes the minimum distance
    to the already-picked set, ties broken by lowest index. Works on squared
    distances, which preserves order and exact ties. Returns min(count, M)
    indices in pick order.
    """
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if m == 0:
        raise ValueError("cannot sample from empty coords")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0 <= start < m:
        raise ValueError(f"start index {start} out of range for {m} points")
    count = min(count, m)
    picked = np.empty(count, dtype=np.int64)
    picked[0] = start
    mind2 = np.sum((coords - coords[start]) ** 2, axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(mind2))  # argmax takes the first occurrence: lowest index on ties
        picked[i] = nxt
        d2 = np.sum((coords - coords[nxt]) ** 2, axis=1)
        np.minimum(mind2, d2, out=mind2)
    return picked


@dataclass
class WeakLabels:
    """Sparse supervision: point index -> (semantic, instance) label."""

    entries: dict[int, tuple[int, int]]
    k: int
    seed: int
    source_id: str = ""

    def __post_init__(self):
        for idx, (sem, inst) in self.entries.items():
            if sem < 0:
                raise ValueError(f"weak label at {idx} has no semantic class")

    def __len__(self) -> int:
        return len(self.entries)

    def indices(self) -> np.ndarray:
        return np.array(sorted(self.entries), dtype=np.int64)

    def semantic_array(self, m: int) -> np.ndarray:
        """Dense (M,) semantic array, -1 outside the supervision set."""
        out = np.full(m, -1, dtype=np.int64)
        for idx, (sem, _) in self.entries.items():
            out[idx] = sem
        return out

    def instance_array(self, m: int) -> np.ndarray:
        out = np.full(m, -1, dtype=np.int64)
        for idx, (_, inst) in self.entries.items():
            out[idx] = inst
        return out


def make_weak_labels(
    cloud: PointCloud, k: int, seed: int, stratified: bool = False
) -> WeakLabels:
    """Draw k labeled points uniformly without replacement, keeping their labels.

    Only points with a semantic label are candidates; if fewer than k exist,
    all of them are taken. `stratified` switches to per-class proportional
    draws (an experiment knob, never the default).
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if cloud.semantic is None:
        raise CloudError("weak labels need a semantically labeled cloud")
    labeled = np.nonzero(cloud.semantic >= 0)[0]
    if labeled.size == 0:
        raise CloudError("cloud has no labeled points")
    rng = np.random.default_rng(seed)
    take = min(k, labeled.size)
    if stratified:
        chosen: list[np.ndarray] = []
        classes = np.unique(cloud.semantic[labeled])
        for c in classes:
            pool = labeled[cloud.semantic[labeled] == c]
            n_c = max(1, int(round(take * pool.size / labeled.size)))
            chosen.append(rng.choice(pool, size=min(n_c, pool.size), replace=False))
        idx = np.unique(np.concatenate(chosen))[:take]
    else:
        idx = rng.choice(labeled, size=take, replace=False)
    inst = cloud.effective_instance()
    entries = {int(i): (int(cloud.semantic[i]), int(inst[i])) for i in sorted(idx)}
    return WeakLabels(entries, k=k, seed=seed, source_id=cloud.source_id)


def random_subsample(cloud: PointCloud, ratio: float, seed: int) -> PointCloud:
    """Keep ceil(ratio*M) points uniformly without replacement (order preserved)."""
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    m = len(cloud)
    take = int(np.ceil(ratio * m))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(m, size=take, replace=False))
    return cloud.select(idx)


def strip_class(cloud: PointCloud, semantic_class: int) -> PointCloud:
    """Remove every point of one semantic class; other points kept in order."""
    if cloud.semantic is None:
        return cloud
    keep = np.nonzero(cloud.semantic != semantic_class)[0]
    return cloud.select(keep)


# weak-label file: header `#weaklabels k=<k> seed=<seed> cloud=<id>`,
# then one `index sem inst` line per entry.


def save_weak_labels(weak: WeakLabels, path: str) -> None:
    with open(path, "w") as f:
        f.write(f"#weaklabels k={weak.k} seed={weak.seed} cloud={weak.source_id}\n")
        for idx in sorted(weak.entries):
            sem, inst = weak.entries[idx]
            f.write(f"{idx} {sem} {inst}\n")


def load_weak_labels(path: str) -> WeakLabels:
    if not os.path.exists(path):
        raise CloudError(f"no such file: {path}")
    with open(path, "r") as f:
        header = f.readline().strip()
        if not header.startswith("#weaklabels"):
            raise CloudError(f"{path}:1: missing #weaklabels header")
        meta = dict(tok.split("=", 1) for tok in header.split()[1:])
        entries: dict[int, tuple[int, int]] = {}
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CloudError(f"{path}:{lineno}: expected `index sem inst`")
            entries[int(parts[0])] = (int(parts[1]), int(parts[2]))
    return WeakLabels(
        entries,
        k=int(meta.get("k", len(entries))),
        seed=int(meta.get("seed", 0)),
        source_id=meta.get("cloud", ""),
    )
