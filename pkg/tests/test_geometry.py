import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regiongrasp import autodiff as ad
from regiongrasp import geometry as geo

from conftest import box_mesh


def _cloud(n, seed):
    return geo.PointCloud(np.random.default_rng(seed).uniform(-1, 1, (n, 3)))


# ---------------------------------------------------------------------------
# brute-force oracles (deliberately independent, quadratic implementations)


def fps_oracle(pts, g, seed):
    start = int(np.random.default_rng(seed).integers(len(pts)))
    chosen = [start]
    for _ in range(g - 1):
        best, best_d = -1, -1.0
        for i in range(len(pts)):
            d = min(float(((pts[i] - pts[j]) ** 2).sum()) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return np.array(chosen)


def knn_oracle(queries, ref, k):
    out = []
    for q in queries:
        pairs = sorted((float(((q - r) ** 2).sum()), i)
                       for i, r in enumerate(ref))
        out.append([i for _, i in pairs[:k]])
    return np.array(out)


def chamfer_oracle(a, b):
    fwd = np.mean([min(float(((p - q) ** 2).sum()) for q in b) for p in a])
    bwd = np.mean([min(float(((q - p) ** 2).sum()) for p in a) for q in b])
    return fwd + bwd


def region_oracle(patches, p_c, r):
    pairs = sorted((float(((c - p_c) ** 2).sum()), i)
                   for i, c in enumerate(patches.centers))
    return sorted(i for _, i in pairs[:r])


# ---------------------------------------------------------------------------


def test_fps_matches_oracle():
    for seed in range(20):
        n = int(np.random.default_rng(seed + 500).integers(4, 40))
        pts = _cloud(n, seed).points
        g = max(1, n // 3)
        np.testing.assert_array_equal(
            geo.farthest_point_sampling(pts, g, seed), fps_oracle(pts, g, seed))


def test_knn_matches_oracle():
    for seed in range(20):
        q = _cloud(6, seed).points
        ref = _cloud(25, seed + 1000).points
        np.testing.assert_array_equal(geo.knn(q, ref, 7), knn_oracle(q, ref, 7))


def test_knn_tie_breaks_by_smallest_index():
    ref = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    got = geo.knn(np.array([[1.0, 0, 0]]), ref, 3)
    np.testing.assert_array_equal(got, [[1, 2, 0]])


def test_chamfer_matches_oracle_and_tensor_path():
    for seed in range(10):
        a = _cloud(15, seed).points
        b = _cloud(11, seed + 50).points
        ref = chamfer_oracle(a, b)
        assert abs(geo.chamfer_distance(a, b) - ref) < 1e-12
        t = geo.chamfer_distance(ad.Tensor(a), ad.Tensor(b))
        assert abs(t.item() - ref) < 1e-9


def test_chamfer_tensor_gradients():
    rng = np.random.default_rng(3)
    a = ad.Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(5, 3)) + 5.0, requires_grad=True)
    report = ad.grad_check(lambda: geo.chamfer_distance(a, b), [a, b],
                           tol=1e-5)
    assert report.passed, report


def test_select_condition_region_matches_oracle():
    for seed in range(10):
        cloud = _cloud(40, seed)
        patches = geo.group_patches(cloud, 10, 4, seed)
        p_c = np.random.default_rng(seed + 7).uniform(-1, 1, 3)
        region = geo.select_condition_region(patches, p_c, 3)
        np.testing.assert_array_equal(np.flatnonzero(region.mask),
                                      region_oracle(patches, p_c, 3))
        assert region.size == 3
        assert len(region.member_points) == 3 * patches.s


def test_group_patches_invariants():
    cloud = _cloud(50, 2)
    patches = geo.group_patches(cloud, 8, 5, 2)
    np.testing.assert_array_equal(patches.centers,
                                  cloud.points[patches.center_indices])
    np.testing.assert_allclose(
        patches.world_patches(), cloud.points[patches.member_indices],
        atol=1e-15)
    # the patch center itself is always its own nearest neighbor
    np.testing.assert_array_equal(patches.member_indices[:, 0],
                                  patches.center_indices)


def test_resample_mesh_statistics():
    mesh = box_mesh(half=(0.5, 0.5, 0.5))
    pc = geo.resample_mesh(mesh, 20000, 0)
    assert np.all(np.abs(pc.points) <= 0.5 + 1e-12)
    # area-uniform sampling of a symmetric box: mean near the center
    assert np.linalg.norm(pc.points.mean(axis=0)) < 0.02
    # all six faces hit
    for ax in range(3):
        for side in (-0.5, 0.5):
            on = np.isclose(pc.points[:, ax], side)
            assert on.mean() > 0.1


def test_validation_errors():
    cloud = _cloud(10, 0)
    with pytest.raises(ValueError):
        geo.farthest_point_sampling(cloud.points, 11, 0)
    with pytest.raises(ValueError):
        geo.knn(cloud.points, cloud.points, 0)
    with pytest.raises(ValueError):
        geo.group_patches(cloud, 4, 11, 0)
    patches = geo.group_patches(cloud, 4, 3, 0)
    with pytest.raises(ValueError):
        geo.select_condition_region(patches, np.array([np.nan, 0, 0]), 2)
    with pytest.raises(ValueError):
        geo.select_condition_region(patches, np.zeros(3), 5)
    with pytest.raises(ValueError):
        geo.PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        geo.TriMesh(vertices=np.zeros((3, 3)), faces=np.array([[0, 1, 1]]))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 20), st.integers(2, 20), st.integers(0, 10 ** 6))
def test_chamfer_properties(na, nb, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(na, 3))
    b = rng.normal(size=(nb, 3))
    d_ab = geo.chamfer_distance(a, b)
    assert d_ab >= 0
    assert abs(d_ab - geo.chamfer_distance(b, a)) < 1e-12
    assert geo.chamfer_distance(a, a) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 30), st.integers(0, 10 ** 6))
def test_fps_indices_distinct_and_spread(n, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    g = max(2, n // 2)
    idx = geo.farthest_point_sampling(pts, g, seed)
    assert len(set(idx.tolist())) == g
