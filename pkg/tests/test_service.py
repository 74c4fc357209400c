import numpy as np
import pytest

pytest.importorskip("httpx")
from fastapi.testclient import TestClient

from shootseg.cloud import PointCloud, load_cloud, save_cloud
from shootseg.clustering import ball_cluster
from shootseg.service import create_app, label_schema


@pytest.fixture()
def served(tmp_path):
    rng = np.random.default_rng(0)
    blob_a = rng.normal(0, 0.8, (60, 3))
    blob_b = rng.normal(0, 0.8, (60, 3)) + [30.0, 0, 0]
    coords = np.vstack([blob_a, blob_b])
    cloud = PointCloud(coords, rng.uniform(0, 1, (120, 3)), source_id="demo")
    save_cloud(cloud, str(tmp_path / "demo.xyzl"))
    app = create_app(str(tmp_path), budget_default=1000)
    return TestClient(app), cloud, tmp_path


class TestCloudEndpoints:
    def test_list(self, served):
        client, cloud, _ = served
        out = client.get("/api/clouds").json()
        assert out == [{"id": "demo", "points": 120, "labeled": False}]

    def test_get_full_cloud(self, served):
        client, cloud, _ = served
        doc = client.get("/api/clouds/demo").json()
        assert doc["revision"] == 0
        assert len(doc["coords"]) == 120
        assert doc["index_map"] == list(range(120))
        assert doc["semantic"] == [-1] * 120

    def test_get_decimated(self, served):
        client, cloud, _ = served
        doc = client.get("/api/clouds/demo?budget=30").json()
        assert len(doc["coords"]) <= 60
        assert max(doc["index_map"]) < 120

    def test_unknown_cloud_404(self, served):
        client, _, _ = served
        assert client.get("/api/clouds/nope").status_code == 404

    def test_schema_palette(self, served):
        client, _, _ = served
        schema = client.get("/api/schema").json()
        assert len(schema) == 70
        assert schema[0]["name"] == "stem"
        assert schema[1] == {
            "name": "leaf_01",
            "semantic": 1,
            "instance": 0,
            "color": schema[1]["color"],
        }
        assert len({entry["color"] for entry in schema}) == 70


class TestLabelEdits:
    def test_edit_roundtrip(self, served):
        client, _, _ = served
        post = {"revision": 0, "edits": [{"index": 3, "sem": 1, "inst": 0}]}
        out = client.post("/api/clouds/demo/labels", json=post).json()
        assert out["revision"] == 1
        doc = client.get("/api/clouds/demo").json()
        assert doc["semantic"][3] == 1
        assert doc["instance"][3] == 0

    def test_stale_revision_conflict(self, served):
        client, _, _ = served
        post = {"revision": 0, "edits": [{"index": 1, "sem": 0, "inst": -1}]}
        assert client.post("/api/clouds/demo/labels", json=post).status_code == 200
        again = client.post("/api/clouds/demo/labels", json=post)
        assert again.status_code == 409

    def test_bad_index_400(self, served):
        client, _, _ = served
        post = {"revision": 0, "edits": [{"index": 999, "sem": 0, "inst": -1}]}
        assert client.post("/api/clouds/demo/labels", json=post).status_code == 400

    def test_instance_without_semantic_400(self, served):
        client, _, _ = served
        post = {"revision": 0, "edits": [{"index": 1, "sem": -1, "inst": 4}]}
        assert client.post("/api/clouds/demo/labels", json=post).status_code == 400

    def test_sessions_persist_and_sources_untouched(self, served):
        client, cloud, tmp_path = served
        before = (tmp_path / "demo.xyzl").read_bytes()
        post = {"revision": 0, "edits": [{"index": 0, "sem": 0, "inst": -1}]}
        client.post("/api/clouds/demo/labels", json=post)
        assert (tmp_path / "demo.xyzl").read_bytes() == before
        assert (tmp_path / "sessions" / "demo.session.json").exists()


class TestRegionGrow:
    def test_matches_ball_cluster_component(self, served):
        client, cloud, _ = served
        out = client.post(
            "/api/clouds/demo/region",
            json={"seed_index": 5, "radius_mm": 1.5, "max_points": 100000},
        ).json()
        comps = ball_cluster(cloud.coords, np.ones(len(cloud), bool), 1.5, min_size=1)
        want = next(c for c in comps if 5 in c)
        assert sorted(out["indices"]) == want.tolist()

    def test_max_points_caps(self, served):
        client, _, _ = served
        out = client.post(
            "/api/clouds/demo/region",
            json={"seed_index": 5, "radius_mm": 1.5, "max_points": 7},
        ).json()
        assert len(out["indices"]) == 7

    def test_bad_seed(self, served):
        client, _, _ = served
        resp = client.post(
            "/api/clouds/demo/region", json={"seed_index": -1, "radius_mm": 1.0}
        )
        assert resp.status_code == 400


class TestExport:
    def test_export_merges_edits_and_loads(self, served, tmp_path):
        client, cloud, _ = served
        client.post(
            "/api/clouds/demo/labels",
            json={"revision": 0, "edits": [{"index": 2, "sem": 1, "inst": 3}]},
        )
        text = client.get("/api/clouds/demo/export").text
        out = tmp_path / "export.xyzl"
        out.write_text(text)
        back = load_cloud(str(out))
        assert len(back) == len(cloud)
        assert back.semantic[2] == 1 and back.instance[2] == 3
        assert back.semantic[1] == -1
        assert np.allclose(back.coords, cloud.coords, atol=1e-6)

    def test_edits_win_over_source_labels(self, tmp_path):
        rng = np.random.default_rng(1)
        cloud = PointCloud(
            rng.uniform(0, 5, (10, 3)),
            rng.uniform(0, 1, (10, 3)),
            semantic=np.zeros(10, dtype=np.int64),
            source_id="lab",
        )
        save_cloud(cloud, str(tmp_path / "lab.xyzl"))
        client = TestClient(create_app(str(tmp_path)))
        client.post(
            "/api/clouds/lab/labels",
            json={"revision": 0, "edits": [{"index": 4, "sem": 1, "inst": 0}]},
        )
        text = client.get("/api/clouds/lab/export").text
        out = tmp_path / "e.xyzl"
        out.write_text(text)
        back = load_cloud(str(out))
        assert back.semantic[4] == 1
        assert back.semantic[0] == 0
