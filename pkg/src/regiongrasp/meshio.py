"""Mesh and point-cloud file I/O: OBJ, ASCII PLY, and xyz text clouds."""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, TriMesh


def load_obj(path) -> TriMesh:
    """Read vertices and (triangulated) faces from a Wavefront OBJ file."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for i in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[i], idx[i + 1]])
    if not verts:
        raise ValueError(f"{path}: no vertices found")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_ply(path) -> TriMesh:
    """Read an ASCII PLY mesh (vertex x/y/z properties, triangular faces)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vert = n_face = 0
    i = 1
    ascii_fmt = False
    while i < len(lines) and lines[i] != "end_header":
        parts = lines[i].split()
        if parts[:2] == ["format", "ascii"]:
            ascii_fmt = True
        elif parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        i += 1
    if not ascii_fmt:
        raise ValueError(f"{path}: only ASCII PLY is supported")
    if i == len(lines):
        raise ValueError(f"{path}: missing end_header")
    i += 1
    verts = np.array([[float(x) for x in lines[i + j].split()[:3]]
                      for j in range(n_vert)])
    i += n_vert
    faces = []
    for j in range(n_face):
        parts = [int(x) for x in lines[i + j].split()]
        count, idx = parts[0], parts[1:]
        if count != len(idx):
            raise ValueError(f"{path}: malformed face row {j}")
        for k in range(1, count - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def load_xyz(path) -> PointCloud:
    """Read a point cloud with one 'x y z' triple per line."""
    pts = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                pts.append([float(x) for x in parts[:3]])
    if not pts:
        raise ValueError(f"{path}: empty point cloud")
    return PointCloud(np.array(pts))


def save_xyz(path, cloud: PointCloud) -> None:
    with open(path, "w") as fh:
        for p in cloud.points:
            fh.write(f"{p[0]:.9f} {p[1]:.9f} {p[2]:.9f}\n")
