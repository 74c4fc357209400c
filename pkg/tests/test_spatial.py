import numpy as np
import pytest

from shootseg.spatial import SpatialIndex, build_spatial_index, mean_aggregation_matrix, radius_neighbors


def brute_force(coords, query, r):
    d = np.linalg.norm(coords - query, axis=1)
    return np.nonzero(d <= r)[0]


def test_point_sees_itself():
    coords = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    idx = build_spatial_index(coords)
    assert 0 in radius_neighbors(idx, coords[0], 0.001)


def test_two_points_2mm_apart_radius_1_5():
    coords = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    idx = build_spatial_index(coords)
    assert np.array_equal(radius_neighbors(idx, coords[0], 1.5), [0])
    assert np.array_equal(radius_neighbors(idx, coords[1], 1.5), [1])


def test_matches_brute_force_oracle():
    # >= 1000 queries across random clouds and radii
    rng = np.random.default_rng(0)
    queries = 0
    while queries < 1000:
        m = int(rng.integers(2, 200))
        coords = rng.uniform(-10, 10, (m, 3))
        idx = SpatialIndex(coords)
        for _ in range(25):
            q = rng.uniform(-12, 12, 3)
            r = float(rng.uniform(0.1, 8.0))
            assert np.array_equal(idx.radius_neighbors(q, r), brute_force(coords, q, r))
            queries += 1


def test_inclusive_boundary():
    coords = np.array([[0.0, 0.0, 0.0], [1.5, 0.0, 0.0]])
    idx = SpatialIndex(coords)
    assert np.array_equal(idx.radius_neighbors(coords[0], 1.5), [0, 1])


def test_rejects_empty_and_bad_radius():
    with pytest.raises(ValueError):
        SpatialIndex(np.zeros((0, 3)))
    idx = SpatialIndex(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        idx.radius_neighbors(np.zeros(3), 0.0)


def test_aggregation_matrix_rows_average_neighborhoods():
    rng = np.random.default_rng(1)
    coords = rng.uniform(0, 5, (40, 3))
    a = mean_aggregation_matrix(coords, 2.0)
    x = rng.normal(size=(40, 4))
    out = a @ x
    for i in range(40):
        nbrs = brute_force(coords, coords[i], 2.0)
        assert np.allclose(out[i], x[nbrs].mean(axis=0))
