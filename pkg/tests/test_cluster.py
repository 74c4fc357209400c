import numpy as np
import pytest

from shootseg.clustering import InstancePrediction, ball_cluster, dual_set_union, load_instances, save_instances


def components_oracle(coords, mask, radius):
    """Union-find over the full O(M^2) distance matrix."""
    cand = np.nonzero(mask)[0]
    parent = {int(i): int(i) for i in cand}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a in range(len(cand)):
        for b in range(a + 1, len(cand)):
            i, j = int(cand[a]), int(cand[b])
            if np.linalg.norm(coords[i] - coords[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups = {}
    for i in cand:
        groups.setdefault(find(int(i)), []).append(int(i))
    out = [np.array(sorted(g)) for g in groups.values()]
    out.sort(key=lambda c: c[0])
    return out


class TestBallCluster:
    def test_two_separated_blobs(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 0.5, (100, 3))
        b = rng.normal(0, 0.5, (100, 3)) + [50.0, 0, 0]
        coords = np.vstack([a, b])
        out = ball_cluster(coords, np.ones(200, bool), 1.5, min_size=1)
        assert len(out) == 2
        assert np.array_equal(out[0], np.arange(100))

    def test_chain_links_transitively(self):
        coords = np.stack([np.arange(20) * 1.4, np.zeros(20), np.zeros(20)], axis=1)
        out = ball_cluster(coords, np.ones(20, bool), 1.5, min_size=1)
        assert len(out) == 1

    def test_empty_mask(self):
        assert ball_cluster(np.zeros((5, 3)), np.zeros(5, bool), 1.0) == []

    def test_min_size_filter(self):
        coords = np.array([[0, 0, 0], [0.5, 0, 0], [30, 0, 0]], dtype=float)
        out = ball_cluster(coords, np.ones(3, bool), 1.0, min_size=2)
        assert len(out) == 1 and len(out[0]) == 2

    def test_matches_union_find_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(60):
            m = int(rng.integers(5, 120))
            coords = rng.uniform(0, 15, (m, 3))
            mask = rng.random(m) < 0.8
            if not mask.any():
                continue
            r = float(rng.uniform(0.5, 5.0))
            got = ball_cluster(coords, mask, r, min_size=1)
            want = components_oracle(coords, mask, r)
            assert len(got) == len(want)
            for g, w in zip(got, want):
                assert np.array_equal(g, w)

    def test_partition_and_order_invariance(self):
        rng = np.random.default_rng(2)
        coords = rng.uniform(0, 10, (80, 3))
        mask = np.ones(80, bool)
        out = ball_cluster(coords, mask, 2.0, min_size=1)
        all_idx = np.concatenate(out)
        assert np.array_equal(np.sort(all_idx), np.arange(80))
        perm = rng.permutation(80)
        out_p = ball_cluster(coords[perm], mask, 2.0, min_size=1)
        sets = {frozenset(perm[c]) for c in out_p}
        assert sets == {frozenset(c) for c in out}

    def test_cluster_count_monotone_in_radius(self):
        rng = np.random.default_rng(3)
        coords = rng.uniform(0, 20, (100, 3))
        mask = np.ones(100, bool)
        prev = np.inf
        for r in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
            n = len(ball_cluster(coords, mask, r, min_size=1))
            assert n <= prev
            prev = n


class TestDualSetUnion:
    def test_empty_shifted_returns_original(self):
        prob = np.ones(10)
        cc = [np.array([0, 1, 2]), np.array([5, 6, 7])]
        out = dual_set_union(cc, [], 0.75, prob)
        assert [set(p.indices) for p in out] == [{0, 1, 2}, {5, 6, 7}]
        assert all(p.provenance == "original" for p in out)

    def test_identical_clusters_merge(self):
        prob = np.ones(10)
        c = [np.array([1, 2, 3])]
        out = dual_set_union(c, c, 0.75, prob)
        assert len(out) == 1
        assert out[0].provenance == "both"

    def test_disjoint_sets_concatenate(self):
        prob = np.ones(10)
        cc = [np.array([0, 1])]
        cs = [np.array([5, 6])]
        out = dual_set_union(cc, cs, 0.75, prob)
        assert len(out) == 2

    def test_merge_is_transitive(self):
        prob = np.ones(30)
        a = np.arange(0, 10)
        b = np.arange(1, 11)   # iou(a,b) = 9/11 > 0.75
        c = np.arange(2, 12)   # iou(b,c) > 0.75, iou(a,c) = 8/12 < 0.75
        out = dual_set_union([a, c], [b], 0.75, prob)
        assert len(out) == 1
        assert set(out[0].indices) == set(range(12))

    def test_merge_disabled_above_one(self):
        prob = np.ones(10)
        c = [np.array([1, 2, 3])]
        out = dual_set_union(c, c, 1.1, prob)
        assert len(out) == 2

    def test_scores_sorted_descending(self):
        prob = np.zeros(20)
        prob[:5] = 1.0
        prob[10:15] = 0.4
        out = dual_set_union([np.arange(5), np.arange(10, 15)], [], 0.75, prob)
        assert out[0].score == 1.0 and out[1].score == pytest.approx(0.4)

    def test_dump_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        preds = [
            InstancePrediction(np.sort(rng.choice(1000, 40, replace=False)), 1, 0.9, "both"),
            InstancePrediction(np.sort(rng.choice(1000, 60, replace=False)), 1, 0.5, "shifted"),
        ]
        path = str(tmp_path / "inst.json")
        save_instances(preds, path)
        back = load_instances(path)
        assert len(back) == 2
        for p, q in zip(preds, back):
            assert np.array_equal(p.indices, q.indices)
            assert p.score == pytest.approx(q.score)
            assert p.provenance == q.provenance
