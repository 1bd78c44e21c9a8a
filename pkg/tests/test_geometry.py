import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlstokes.geometry import (
    INTERIOR,
    LAYER,
    DegeneratePartitionError,
    EmptyCloudError,
    PointCloud,
    brute_force_neighbors,
    iter_pairs,
    make_domain,
    neighbors,
    partition,
    read_cloud_csv,
    sample_grid,
    unit_ball,
    unit_disk,
    unit_square,
    write_cloud_csv,
)


def test_unit_square_lattice():
    cloud = sample_grid(unit_square(), 0.25)
    assert len(cloud) == 16
    assert np.all(cloud.weights == 0.0625)
    assert sorted(set(np.round(cloud.points[:, 0], 12))) == [0.125, 0.375, 0.625, 0.875]


def test_disk_area_and_containment():
    d = unit_disk()
    cloud = sample_grid(d, 0.02)
    assert abs(cloud.weights.sum() - math.pi) <= 0.01
    assert np.all(d.signed_distance(cloud.points) < 0)


def test_ball_volume():
    cloud = sample_grid(unit_ball(), 0.05)
    assert cloud.weights.sum() == pytest.approx(4 / 3 * math.pi, rel=0.01)


@pytest.mark.parametrize("h", [0.0, -0.1, 5.0])
def test_bad_spacing(h):
    with pytest.raises(EmptyCloudError):
        sample_grid(unit_disk(), h)


def test_partition_example():
    cloud = partition(sample_grid(unit_disk(), 0.05), 0.1)
    origin = np.argmin(np.linalg.norm(cloud.points, axis=1))
    assert cloud.tags[origin] == INTERIOR
    r = np.linalg.norm(cloud.points, axis=1)
    assert np.all(cloud.tags[r > 0.8] == LAYER)
    assert np.all(cloud.tags[r < 0.8] == INTERIOR)


def test_degenerate_partition():
    with pytest.raises(DegeneratePartitionError):
        partition(sample_grid(unit_disk(), 0.05), 0.6)


def test_partition_layer_width():
    d = unit_disk()
    for delta in (0.05, 0.1, 0.2):
        cloud = partition(sample_grid(d, 0.02), delta)
        depth = -d.signed_distance(cloud.points)
        assert np.all(depth[cloud.layer] <= 2 * delta)
        assert np.all(depth[cloud.interior] > 2 * delta)


def test_partition_monotone_in_delta():
    base = sample_grid(unit_disk(), 0.03)
    prev = None
    for delta in (0.05, 0.1, 0.15, 0.2):
        interior = set(partition(base, delta).interior)
        if prev is not None:
            assert interior <= prev
        prev = interior


def test_neighbor_count_near_centre():
    cloud = partition(sample_grid(unit_disk(), 0.02), 0.1)
    i = int(np.argmin(np.linalg.norm(cloud.points, axis=1)))
    nb = neighbors(cloud, i)
    assert abs(len(nb) - math.pi * 0.2**2 / 0.02**2) <= 40
    # lattice points can sit exactly on the sphere; allow for rounding there
    assert np.all(np.linalg.norm(cloud.points[nb] - cloud.points[i], axis=1) < 0.2 + 1e-12)


def test_hash_matches_brute_force(disk_cloud):
    for i in range(0, len(disk_cloud), 37):
        assert np.array_equal(neighbors(disk_cloud, i), brute_force_neighbors(disk_cloud, i, 0.4))


def test_neighbor_relation_symmetric(disk_cloud):
    sets = {}
    for i, j, _ in iter_pairs(disk_cloud, 0.4):
        for a, b in zip(i, j):
            sets.setdefault(int(a), set()).add(int(b))
    for a, nb in sets.items():
        for b in nb:
            assert a in sets[b]


def test_iter_pairs_sorted_and_chunk_independent(disk_cloud):
    big = [np.concatenate(x) for x in zip(*iter_pairs(disk_cloud, 0.4))]
    small = [np.concatenate(x) for x in zip(*iter_pairs(disk_cloud, 0.4, chunk=5000))]
    for a, b in zip(big, small):
        assert np.array_equal(a, b)
    i, j, _ = big
    key = i.astype(np.int64) * len(disk_cloud) + j
    assert np.all(np.diff(key) > 0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(5, 200),
    st.floats(0.01, 0.7),
    st.sampled_from([1, 2, 3]),
    st.integers(0, 2**31 - 1),
)
def test_hash_property_random_clouds(npts, radius, dim, seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((npts, dim))
    cloud = PointCloud(pts, np.ones(npts), 0.1)
    for i in range(0, npts, max(1, npts // 7)):
        assert np.array_equal(neighbors(cloud, i, radius), brute_force_neighbors(cloud, i, radius))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_signed_distance_is_1_lipschitz(c):
    x, y = np.array([c[:2]]), np.array([c[2:]])
    for d in (unit_disk(), unit_square()):
        gap = abs(d.signed_distance(x)[0] - d.signed_distance(y)[0])
        assert gap <= np.linalg.norm(x - y) + 1e-12


def test_square_signed_distance_values():
    sq = unit_square()
    assert sq.signed_distance(np.array([[0.5, 0.5]]))[0] == pytest.approx(-0.5)
    assert sq.signed_distance(np.array([[0.1, 0.5]]))[0] == pytest.approx(-0.1)
    assert sq.signed_distance(np.array([[2.0, 0.5]]))[0] == pytest.approx(1.0)


def test_make_domain():
    assert make_domain("unit-disk", radius=2.0).volume == pytest.approx(4 * math.pi)
    with pytest.raises(KeyError):
        make_domain("torus")


def test_csv_round_trip(tmp_path, disk_cloud):
    path = tmp_path / "cloud.csv"
    write_cloud_csv(disk_cloud, path)
    back = read_cloud_csv(path, disk_cloud.h, disk_cloud.delta)
    assert np.array_equal(back.points, disk_cloud.points)
    assert np.array_equal(back.weights, disk_cloud.weights)
    assert np.array_equal(back.tags, disk_cloud.tags)


def test_untagged_cloud_has_no_partition():
    cloud = sample_grid(unit_disk(), 0.2)
    with pytest.raises(ValueError):
        cloud.interior
