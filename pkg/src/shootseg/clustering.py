"""Ball-graph connected-component clustering and the dual-set union."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .spatial import SpatialIndex


@dataclass
class InstancePrediction:
    """One predicted organ instance: a point-index set with class and score."""

    indices: np.ndarray          # sorted unique int64
    semantic: int
    score: float
    provenance: str              # "original" | "shifted" | "both"

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        if self.indices.size == 0:
            raise ValueError("an instance needs at least one point")

    def __len__(self) -> int:
        return self.indices.size


def ball_cluster(
    coords: np.ndarray, candidate_mask: np.ndarray, radius: float, min_size: int = 1
) -> list[np.ndarray]:
    """Connected components of masked points linked within `radius` (inclusive).

    Components smaller than `min_size` are dropped. Output is ordered by each
    component's smallest member index; indices refer to the full coords array.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    mask = np.asarray(candidate_mask, dtype=bool)
    cand = np.nonzero(mask)[0]
    if cand.size == 0:
        return []
    sub = np.asarray(coords, dtype=np.float64)[cand]
    pairs = SpatialIndex(sub).pairs_within(radius)
    n = cand.size
    adj = sparse.coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, labels = connected_components(adj, directed=False)
    comps: dict[int, list[int]] = {}
    for local, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(local)
    out = [np.sort(cand[np.array(members)]) for members in comps.values()]
    out.sort(key=lambda c: int(c[0]))
    return [c for c in out if c.size >= min_size]


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.intersect1d(a, b, assume_unique=True).size
    if inter == 0:
        return 0.0
    return inter / (a.size + b.size - inter)


def dual_set_union(
    cc: list[np.ndarray],
    cs: list[np.ndarray],
    merge_iou: float,
    leaf_prob: np.ndarray,
    semantic_class: int = 1,
) -> list[InstancePrediction]:
    """Concatenate original-space and shifted-space clusters, merging duplicates.

    Any pair with point-set IoU strictly above `merge_iou` is merged to the
    union of its indices (transitively); merged clusters carry provenance
    "both". Scores are the mean leaf probability over member points and the
    result is sorted by descending score (ties by smallest member index).
    Set merge_iou > 1 to disable merging and keep the raw union.
    """
    tagged = [(c, "original") for c in cc] + [(c, "shifted") for c in cs]
    if not tagged:
        return []
    n = len(tagged)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if _iou(tagged[i][0], tagged[j][0]) > merge_iou:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    preds = []
    for members in groups.values():
        idx = np.unique(np.concatenate([tagged[i][0] for i in members]))
        provs = {tagged[i][1] for i in members}
        prov = provs.pop() if len(provs) == 1 else "both"
        preds.append(
            InstancePrediction(
                indices=idx,
                semantic=semantic_class,
                score=float(leaf_prob[idx].mean()),
                provenance=prov,
            )
        )
    preds.sort(key=lambda p: (-p.score, int(p.indices[0]), len(p)))
    return preds


# instance dump: JSON manifest + flat little-endian uint32 index file


def save_instances(preds: list[InstancePrediction], json_path: str) -> None:
    idx_path = os.path.splitext(json_path)[0] + ".indices.u32"
    manifest = []
    offset = 0
    with open(idx_path, "wb") as f:
        for i, p in enumerate(preds):
            blob = p.indices.astype("<u4").tobytes()
            f.write(blob)
            manifest.append(
                {
                    "id": i,
                    "class": p.semantic,
                    "score": p.score,
                    "size": int(p.indices.size),
                    "offset": offset,
                    "provenance": p.provenance,
                }
            )
            offset += len(blob)
    with open(json_path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


def load_instances(json_path: str) -> list[InstancePrediction]:
    idx_path = os.path.splitext(json_path)[0] + ".indices.u32"
    with open(json_path) as f:
        manifest = json.load(f)
    with open(idx_path, "rb") as f:
        blob = f.read()
    preds = []
    for entry in manifest:
        start = entry["offset"]
        idx = np.frombuffer(blob, dtype="<u4", count=entry["size"], offset=start)
        preds.append(
            InstancePrediction(
                indices=idx.astype(np.int64),
                semantic=entry["class"],
                score=entry["score"],
                provenance=entry.get("provenance", "original"),
            )
        )
    return preds
