"""HTTP annotation service: browse clouds, edit sparse labels, region-grow,
export merged labels.

Label edits live in per-cloud session files (the source clouds are never
mutated) guarded by an optimistic revision counter: writers must present the
revision they saw; a stale revision gets 409. Big clouds are served
view-decimated with an index map so edits land on original indices.
"""

from __future__ import annotations

import glob
import json
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .cloud import CloudError, PointCloud, load_cloud, save_cloud, voxel_downsample
from .spatial import SpatialIndex


def label_schema() -> list[dict]:
    """The 70-category palette: stem plus 69 leaf slots, fixed colors."""
    schema = [{"name": "stem", "semantic": 0, "instance": -1, "color": "#8a6d3b"}]
    golden = 0.618033988749895
    for i in range(1, 70):
        hue = (i * golden) % 1.0
        r, g, b = _hsv_to_rgb(hue, 0.65, 0.95)
        schema.append(
            {
                "name": f"leaf_{i:02d}",
                "semantic": 1,
                "instance": i - 1,
                "color": f"#{r:02x}{g:02x}{b:02x}",
            }
        )
    return schema


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    r, g, b = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return int(r * 255), int(g * 255), int(b * 255)


@dataclass
class LabelSession:
    """Sparse edits over one cloud with a strictly increasing revision."""

    cloud_id: str
    revision: int = 0
    edits: dict[int, tuple[int, int]] = field(default_factory=dict)
    author: str = ""
    created: float = 0.0
    updated: float = 0.0

    def to_json(self) -> dict:
        return {
            "cloud_id": self.cloud_id,
            "revision": self.revision,
            "edits": {str(k): list(v) for k, v in self.edits.items()},
            "author": self.author,
            "created": self.created,
            "updated": self.updated,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LabelSession":
        return cls(
            cloud_id=doc["cloud_id"],
            revision=doc["revision"],
            edits={int(k): (int(v[0]), int(v[1])) for k, v in doc["edits"].items()},
            author=doc.get("author", ""),
            created=doc.get("created", 0.0),
            updated=doc.get("updated", 0.0),
        )


class EditItem(BaseModel):
    index: int
    sem: int
    inst: int


class LabelPost(BaseModel):
    revision: int
    edits: list[EditItem]
    author: str = ""


class RegionPost(BaseModel):
    seed_index: int
    radius_mm: float
    max_points: int = 100000


class CloudStore:
    """Loads clouds lazily, caches spatial indexes and sessions per cloud."""

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        self.session_dir = os.path.join(data_dir, "sessions")
        os.makedirs(self.session_dir, exist_ok=True)
        self.paths: dict[str, str] = {}
        skip = {"config.txt", "manifest.txt"}
        for pattern in ("*.xyzl", "*.txt", "*.ply"):
            for path in sorted(glob.glob(os.path.join(data_dir, pattern))):
                if os.path.basename(path) in skip:
                    continue
                cid = os.path.splitext(os.path.basename(path))[0]
                self.paths.setdefault(cid, path)
        self._clouds: dict[str, PointCloud] = {}
        self._indexes: dict[str, SpatialIndex] = {}
        self._sessions: dict[str, LabelSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()

    def ids(self) -> list[str]:
        return sorted(self.paths)

    def lock(self, cid: str) -> threading.Lock:
        with self._global:
            return self._locks.setdefault(cid, threading.Lock())

    def cloud(self, cid: str) -> PointCloud:
        if cid not in self.paths:
            raise KeyError(cid)
        if cid not in self._clouds:
            self._clouds[cid] = load_cloud(self.paths[cid])
        return self._clouds[cid]

    def index(self, cid: str) -> SpatialIndex:
        if cid not in self._indexes:
            self._indexes[cid] = SpatialIndex(self.cloud(cid).coords)
        return self._indexes[cid]

    def session_path(self, cid: str) -> str:
        return os.path.join(self.session_dir, f"{cid}.session.json")

    def session(self, cid: str) -> LabelSession:
        if cid not in self._sessions:
            path = self.session_path(cid)
            if os.path.exists(path):
                with open(path) as f:
                    self._sessions[cid] = LabelSession.from_json(json.load(f))
            else:
                self._sessions[cid] = LabelSession(cloud_id=cid, created=time.time())
        return self._sessions[cid]

    def save_session(self, session: LabelSession) -> None:
        with open(self.session_path(session.cloud_id), "w") as f:
            json.dump(session.to_json(), f, sort_keys=True)

    def merged_labels(self, cid: str) -> tuple[np.ndarray, np.ndarray]:
        """Source labels with session edits applied on top (edits win)."""
        cloud = self.cloud(cid)
        sem = cloud.effective_semantic().copy()
        inst = cloud.effective_instance().copy()
        for idx, (s, i) in self.session(cid).edits.items():
            sem[idx] = s
            inst[idx] = i
        return sem, inst


def create_app(data_dir: str, budget_default: int = 300000, ui_dir: str | None = None) -> FastAPI:
    store = CloudStore(data_dir)
    app = FastAPI(title="shootseg annotation service")

    def get_cloud_or_404(cid: str) -> PointCloud:
        try:
            return store.cloud(cid)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown cloud {cid!r}")

    @app.get("/api/clouds")
    def list_clouds():
        out = []
        for cid in store.ids():
            try:
                cloud = store.cloud(cid)
            except CloudError:
                continue  # stray non-cloud file in the data directory
            labeled = cloud.semantic is not None or bool(store.session(cid).edits)
            out.append({"id": cid, "points": len(cloud), "labeled": labeled})
        return out

    @app.get("/api/schema")
    def schema():
        return label_schema()

    @app.get("/api/clouds/{cid}")
    def get_cloud(cid: str, budget: int = 0):
        cloud = get_cloud_or_404(cid)
        budget = budget or budget_default
        sem, inst = store.merged_labels(cid)
        if len(cloud) > budget:
            # view decimation: voxel size bisected to roughly 2x the budget
            lo, hi = 1e-3, 100.0
            down, index_map = None, None
            for _ in range(24):
                mid = (lo + hi) / 2
                down, index_map = voxel_downsample(cloud, mid)
                if len(down) > 2 * budget:
                    lo = mid
                elif len(down) < budget:
                    hi = mid
                else:
                    break
            coords = down.coords
            colors = down.colors
        else:
            index_map = np.arange(len(cloud))
            coords = cloud.coords
            colors = cloud.colors
        return {
            "id": cid,
            "revision": store.session(cid).revision,
            "coords": [[round(float(x), 4) for x in row] for row in coords],
            "colors": [[round(float(x), 4) for x in row] for row in colors],
            "index_map": [int(i) for i in index_map],
            "semantic": [int(sem[i]) for i in index_map],
            "instance": [int(inst[i]) for i in index_map],
        }

    @app.post("/api/clouds/{cid}/labels")
    def post_labels(cid: str, body: LabelPost):
        cloud = get_cloud_or_404(cid)
        with store.lock(cid):
            session = store.session(cid)
            if body.revision != session.revision:
                raise HTTPException(
                    status_code=409,
                    detail=f"stale revision {body.revision}, current is {session.revision}",
                )
            for edit in body.edits:
                if not 0 <= edit.index < len(cloud):
                    raise HTTPException(status_code=400, detail=f"index {edit.index} out of range")
                if edit.sem < -1 or edit.inst < -1 or (edit.inst >= 0 and edit.sem < 0):
                    raise HTTPException(status_code=400, detail=f"bad labels at {edit.index}")
            for edit in body.edits:
                session.edits[edit.index] = (edit.sem, edit.inst)
            session.revision += 1
            session.updated = time.time()
            if body.author:
                session.author = body.author
            store.save_session(session)
            return {"revision": session.revision}

    @app.post("/api/clouds/{cid}/region")
    def region_grow(cid: str, body: RegionPost):
        cloud = get_cloud_or_404(cid)
        if not 0 <= body.seed_index < len(cloud):
            raise HTTPException(status_code=400, detail="seed index out of range")
        if body.radius_mm <= 0:
            raise HTTPException(status_code=400, detail="radius must be positive")
        index = store.index(cid)
        seen = {int(body.seed_index)}
        frontier = [int(body.seed_index)]
        ordered = [int(body.seed_index)]
        while frontier and len(ordered) < body.max_points:
            nxt = []
            for i in sorted(frontier):
                for j in index.radius_neighbors(cloud.coords[i], body.radius_mm):
                    j = int(j)
                    if j not in seen:
                        seen.add(j)
                        nxt.append(j)
            nxt.sort()
            take = nxt[: max(0, body.max_points - len(ordered))]
            ordered.extend(take)
            frontier = take
        return {"indices": ordered}

    @app.get("/api/clouds/{cid}/export", response_class=PlainTextResponse)
    def export(cid: str):
        cloud = get_cloud_or_404(cid)
        sem, inst = store.merged_labels(cid)
        merged = PointCloud(cloud.coords, cloud.colors, sem, inst, cloud.source_id)
        import tempfile

        with tempfile.NamedTemporaryFile("r", suffix=".xyzl", delete=False) as tmp:
            path = tmp.name
        try:
            save_cloud(merged, path, fmt="xyzl-text")
            with open(path) as f:
                return f.read()
        finally:
            os.unlink(path)

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
