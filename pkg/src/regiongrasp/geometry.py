"""Point-cloud kernels: surface resampling, FPS, KNN, patch grouping,
condition-region selection and Chamfer distance.

All operations are pure functions; ties (FPS, KNN, region selection) break
toward the smallest index so results are bit-exact against brute-force
oracles. Coordinates are meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class TriMesh:
    """Triangle mesh: vertices (V,3) meters, faces (F,3) vertex indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        v = len(self.vertices)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= v:
                raise ValueError("face index out of range")
            degen = (self.faces[:, 0] == self.faces[:, 1]) | \
                    (self.faces[:, 1] == self.faces[:, 2]) | \
                    (self.faces[:, 0] == self.faces[:, 2])
            if degen.any():
                raise ValueError("face with repeated vertex index")

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        return n / lens


@dataclass
class PointCloud:
    """N x 3 point set in meters."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise ValueError(f"point cloud must be N x 3 with N >= 1, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class PatchSet:
    """Grouped point cloud: patch centers plus center-relative neighbor sets."""

    centers: np.ndarray          # (G, 3)
    patches: np.ndarray          # (G, S, 3), relative to centers
    center_indices: np.ndarray   # (G,) indices into the source cloud
    member_indices: np.ndarray   # (G, S) indices into the source cloud

    @property
    def g(self) -> int:
        return len(self.centers)

    @property
    def s(self) -> int:
        return self.patches.shape[1]

    def world_patches(self) -> np.ndarray:
        """Patches de-normalized back to world coordinates, (G, S, 3)."""
        return self.patches + self.centers[:, None, :]


@dataclass
class ConditionRegion:
    """Selected contact region: center, size R, per-patch mask, member points."""

    center: np.ndarray           # (3,)
    size: int                    # R
    mask: np.ndarray             # (G,) binary
    member_points: np.ndarray    # (R*S, 3), world coordinates
    member_indices: np.ndarray = field(default=None)  # (R*S,) cloud indices

    def __post_init__(self):
        if int(self.mask.sum()) != self.size:
            raise ValueError("condition mask must have exactly R ones")


def _points_of(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


def resample_mesh(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Sample ``n`` points area-uniformly on the mesh surface.

    A face is chosen with probability proportional to its area, then a point
    uniformly inside it via barycentric folding. Deterministic per seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    fidx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a = mesh.vertices[mesh.faces[fidx, 0]]
    b = mesh.vertices[mesh.faces[fidx, 1]]
    c = mesh.vertices[mesh.faces[fidx, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(pts)


def farthest_point_sampling(cloud, g: int, seed: int) -> np.ndarray:
    """Greedy max-min selection of ``g`` indices; start uniform by seed,
    ties broken by smallest index."""
    pts = _points_of(cloud)
    n = len(pts)
    if not 1 <= g <= n:
        raise ValueError(f"g must be in [1, {n}], got {g}")
    rng = np.random.default_rng(seed)
    start = int(rng.integers(n))
    chosen = np.empty(g, dtype=np.int64)
    chosen[0] = start
    mind = ((pts - pts[start]) ** 2).sum(axis=1)
    for i in range(1, g):
        nxt = int(np.argmax(mind))  # argmax returns the first (smallest) index on ties
        chosen[i] = nxt
        d = ((pts - pts[nxt]) ** 2).sum(axis=1)
        mind = np.minimum(mind, d)
    return chosen


def knn(queries, reference, k: int) -> np.ndarray:
    """Indices of the k nearest reference points per query row, sorted by
    ascending distance, ties by smallest index."""
    q = _points_of(queries)
    ref = _points_of(reference)
    n = len(ref)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def group_patches(cloud: PointCloud, g: int, s: int, seed: int) -> PatchSet:
    """Group a cloud into ``g`` patches of ``s`` nearest neighbors around FPS
    centers; patches are stored relative to their centers."""
    pts = _points_of(cloud)
    if s > len(pts):
        raise ValueError(f"s must be <= cloud size, got {s} > {len(pts)}")
    cidx = farthest_point_sampling(pts, g, seed)
    centers = pts[cidx]
    member = knn(centers, pts, s)
    patches = pts[member] - centers[:, None, :]
    return PatchSet(centers=centers, patches=patches,
                    center_indices=cidx, member_indices=member)


def select_condition_region(patches: PatchSet, p_c, r: int) -> ConditionRegion:
    """Flag the ``r`` patches whose centers are nearest to ``p_c``."""
    p_c = np.asarray(p_c, dtype=np.float64)
    if not np.all(np.isfinite(p_c)):
        raise ValueError("region center must be finite")
    g = patches.g
    if not 1 <= r <= g:
        raise ValueError(f"r must be in [1, {g}], got {r}")
    d2 = ((patches.centers - p_c) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")
    sel = np.sort(order[:r])
    mask = np.zeros(g, dtype=np.int64)
    mask[sel] = 1
    world = patches.world_patches()[sel].reshape(-1, 3)
    midx = patches.member_indices[sel].reshape(-1)
    return ConditionRegion(center=p_c, size=r, mask=mask,
                           member_points=world, member_indices=midx)


def chamfer_distance(a, b):
    """Symmetric mean-of-min squared-L2 distance between two point sets.

    Accepts PointCloud / ndarray (returns float) or autodiff Tensors
    (returns a Tensor recorded on the current tape).
    """
    if isinstance(a, ad.Tensor) or isinstance(b, ad.Tensor):
        return _chamfer_tensor(a if isinstance(a, ad.Tensor) else ad.Tensor(_points_of(a)),
                               b if isinstance(b, ad.Tensor) else ad.Tensor(_points_of(b)))
    pa, pb = _points_of(a), _points_of(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer_distance: empty cloud")
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def _pairwise_sq_t(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    # ||x-y||^2 = |x|^2 + |y|^2 - 2 x.y, assembled from broadcastable terms
    a2 = ad.sum_(ad.mul(a, a), axis=1, keepdims=True)           # (Na, 1)
    b2 = ad.sum_(ad.mul(b, b), axis=1)                          # (Nb,)
    abt = ad.matmul(a, ad.transpose(b, (1, 0)))                 # (Na, Nb)
    return ad.add(ad.add(a2, b2), ad.mul(abt, -2.0))


def _chamfer_tensor(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer_distance: empty cloud")
    d2 = _pairwise_sq_t(a, b)
    # clamp tiny negative round-off from the expanded form
    d2 = ad.clip(d2, 0.0, np.inf)
    return ad.add(ad.mean_(ad.min_(d2, axis=1)), ad.mean_(ad.min_(d2, axis=0)))
