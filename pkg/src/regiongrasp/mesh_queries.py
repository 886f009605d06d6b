"""Vectorized mesh proximity and inside/outside queries.

Used by the contact/interpenetration metrics and the rigid-body simulator.
Clouds and meshes are small (<= a few thousand elements) so brute-force
point-triangle sweeps, chunked to bound memory, are the right tool.
"""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh

_CHUNK = 4096
# fixed slightly-irrational ray direction avoids edge-grazing degeneracies
_RAY_DIR = np.array([0.8320502943378437, 0.5547001962252291, 0.0016641005886757])
_RAY_DIR = _RAY_DIR / np.linalg.norm(_RAY_DIR)


def is_watertight(mesh: TriMesh) -> bool:
    """Every undirected edge is shared by exactly two faces."""
    e = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                        mesh.faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def _closest_on_triangles(p: np.ndarray, a, b, c):
    """Closest point on each triangle (M,3,3 split as a/b/c) for each point
    p (N,3). Returns squared distances (N,M) and closest points (N,M,3).
    Ericson's region test, fully vectorized."""
    ab = b - a
    ac = c - a
    ap = p[:, None, :] - a[None, :, :]
    d1 = np.einsum("mj,nmj->nm", ab, ap)
    d2 = np.einsum("mj,nmj->nm", ac, ap)
    bp = p[:, None, :] - b[None, :, :]
    d3 = np.einsum("mj,nmj->nm", ab, bp)
    d4 = np.einsum("mj,nmj->nm", ac, bp)
    cp = p[:, None, :] - c[None, :, :]
    d5 = np.einsum("mj,nmj->nm", ab, cp)
    d6 = np.einsum("mj,nmj->nm", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    # interior barycentric
    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = vb / denom
    w = vc / denom
    interior = a[None] + v[..., None] * ab[None] + w[..., None] * ac[None]

    closest = interior
    # region: vertex A
    cond_a = (d1 <= 0) & (d2 <= 0)
    # vertex B
    cond_b = (d3 >= 0) & (d4 <= d3)
    # vertex C
    cond_c = (d6 >= 0) & (d5 <= d6)
    # edge AB
    t_ab = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1.0, d1 - d3), 0.0)
    cond_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    pt_ab = a[None] + np.clip(t_ab, 0, 1)[..., None] * ab[None]
    # edge AC
    t_ac = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1.0, d2 - d6), 0.0)
    cond_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    pt_ac = a[None] + np.clip(t_ac, 0, 1)[..., None] * ac[None]
    # edge BC
    num_bc = d4 - d3
    den_bc = (d4 - d3) + (d5 - d6)
    t_bc = np.where(den_bc != 0, num_bc / np.where(den_bc == 0, 1.0, den_bc), 0.0)
    cond_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    pt_bc = b[None] + np.clip(t_bc, 0, 1)[..., None] * (c - b)[None]

    closest = np.where(cond_bc[..., None], pt_bc, closest)
    closest = np.where(cond_ac[..., None], pt_ac, closest)
    closest = np.where(cond_ab[..., None], pt_ab, closest)
    closest = np.where(cond_c[..., None], np.broadcast_to(c[None], closest.shape), closest)
    closest = np.where(cond_b[..., None], np.broadcast_to(b[None], closest.shape), closest)
    closest = np.where(cond_a[..., None], np.broadcast_to(a[None], closest.shape), closest)
    diff = p[:, None, :] - closest
    return np.einsum("nmj,nmj->nm", diff, diff), closest


def closest_point_on_mesh(points, mesh: TriMesh):
    """Per point: (distance, closest surface point, triangle index)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    n = len(points)
    dist = np.empty(n)
    closest = np.empty((n, 3))
    tri = np.empty(n, dtype=np.int64)
    step = max(1, _CHUNK // max(1, len(a) // 64 + 1))
    for s in range(0, n, step):
        d2, cp = _closest_on_triangles(points[s:s + step], a, b, c)
        arg = np.argmin(d2, axis=1)
        rows = np.arange(len(arg))
        dist[s:s + step] = np.sqrt(d2[rows, arg])
        closest[s:s + step] = cp[rows, arg]
        tri[s:s + step] = arg
    return dist, closest, tri


def _ray_hits(points: np.ndarray, mesh: TriMesh, direction: np.ndarray) -> np.ndarray:
    """Number of triangle crossings along +direction per point."""
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    e1 = b - a
    e2 = c - a
    d = direction
    pvec = np.cross(d, e2)                       # (M,3)
    det = np.einsum("mj,mj->m", e1, pvec)        # (M,)
    ok = np.abs(det) > 1e-14
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    counts = np.zeros(len(points), dtype=np.int64)
    for s in range(0, len(points), _CHUNK):
        p = points[s:s + _CHUNK]
        tvec = p[:, None, :] - a[None, :, :]
        u = np.einsum("nmj,mj->nm", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("nmj,j->nm", qvec, d) * inv_det
        t = np.einsum("nmj,mj->nm", qvec, e2) * inv_det
        hit = ok[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        counts[s:s + _CHUNK] = hit.sum(axis=1)
    return counts


def inside_mesh(points, mesh: TriMesh) -> np.ndarray:
    """Parity ray-cast inside test (expects a closed mesh)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _ray_hits(points, mesh, _RAY_DIR) % 2 == 1


def signed_distance(points, mesh: TriMesh):
    """Distance to the surface, negative inside; also returns the outward
    push direction (from closest surface point toward the query, flipped
    when inside)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dist, closest, _ = closest_point_on_mesh(points, mesh)
    inside = inside_mesh(points, mesh)
    vec = points - closest
    norm = np.linalg.norm(vec, axis=1, keepdims=True)
    safe = np.where(norm > 1e-12, norm, 1.0)
    direction = vec / safe
    direction[inside] = -direction[inside]
    sd = np.where(inside, -dist, dist)
    return sd, direction
