"""Procedural desk-scale hand-object data.

Objects are composites of 1-3 watertight primitives (box, sphere, cylinder,
capsule) attached tangentially and scaled to a graspable diameter. Grasp
labels come from a geometric closure heuristic: the thumb pulp is placed on
the requested region and the remaining fingers are flexed until they meet
the surface. Labels are screened with the same CR/IV metrics used at
evaluation time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import hand as handmod
from .mesh_queries import closest_point_on_mesh, is_watertight
from .metrics import cr_rate, interpenetration_volume
from .meshio import save_obj
from .seeding import derive_seed, rng_for

N_CLOUD = 2048
REGION_SIZE = 16
_DIAMETER_RANGE = (0.08, 0.20)   # m, bounding-box diagonal
_LATHE_SEGS = 16

# grasp heuristic knobs
_PULP_STANDOFF = 1e-3            # m above the region center
_TIP_TOLERANCE = 3e-3            # stop flexing when the tip is this close
_FLEX_STEP = 0.05                # rad per iteration, split over 3 joints
_FLEX_LIMIT = 1.7                # rad per joint
_MAX_ATTEMPTS = 20
_MIN_CR = 0.5
_MAX_IV_CM3 = 5.0


class GraspRejected(RuntimeError):
    """No acceptable grasp found within the attempt budget."""


@dataclass
class ObjectSpec:
    """Recipe for one composite object: primitive list + final uniform scale."""

    primitives: list             # dicts: kind, dims, center
    scale: float
    seed: int

    def to_dict(self) -> dict:
        return {"primitives": self.primitives, "scale": self.scale,
                "seed": self.seed}


@dataclass
class DatasetManifest:
    version: int
    samples: list = field(default_factory=list)
    rejected: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"version": self.version, "samples": self.samples,
                "rejected": self.rejected}


# ---------------------------------------------------------------------------
# primitive meshes


def _orient_outward(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    vol = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
    return faces[:, [0, 2, 1]] if vol < 0 else faces


def _lathe(profile, bottom, top, segs=_LATHE_SEGS):
    """Closed surface of revolution about z: apex, rings of (radius, z),
    apex. Convex/star-shaped about the origin by construction."""
    verts = [np.array([0.0, 0.0, bottom])]
    for r, z in profile:
        for k in range(segs):
            ph = 2 * math.pi * k / segs
            verts.append(np.array([r * math.cos(ph), r * math.sin(ph), z]))
    verts.append(np.array([0.0, 0.0, top]))
    verts = np.array(verts)
    faces = []
    last = len(verts) - 1
    ring = lambda i, k: 1 + i * segs + (k % segs)
    for k in range(segs):
        faces.append([0, ring(0, k + 1), ring(0, k)])
        faces.append([last, ring(len(profile) - 1, k),
                      ring(len(profile) - 1, k + 1)])
    for i in range(len(profile) - 1):
        for k in range(segs):
            faces.append([ring(i, k), ring(i + 1, k), ring(i + 1, k + 1)])
            faces.append([ring(i, k), ring(i + 1, k + 1), ring(i, k + 1)])
    faces = np.asarray(faces, dtype=np.int64)
    return verts, _orient_outward(verts, faces)


def _prim_box(dims):
    hx, hy, hz = dims
    v = np.array([[sx * hx, sy * hy, sz * hz]
                  for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                 dtype=np.float64)
    f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
                  [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
                  [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]], dtype=np.int64)
    return v, f


def _prim_sphere(dims, lat=8):
    r = dims[0]
    profile = [(r * math.sin(math.pi * i / lat), -r * math.cos(math.pi * i / lat))
               for i in range(1, lat)]
    return _lathe(profile, -r, r)


def _prim_cylinder(dims):
    r, hh = dims[0], dims[1]
    return _lathe([(r, -hh), (r, hh)], -hh, hh)


def _prim_capsule(dims, lat=4):
    r, hh = dims[0], dims[1]
    profile = []
    for i in range(1, lat + 1):
        th = 0.5 * math.pi * i / lat
        profile.append((r * math.sin(th), -hh - r * math.cos(th)))
    for i in range(lat, 0, -1):
        th = 0.5 * math.pi * i / lat
        profile.append((r * math.sin(th), hh + r * math.cos(th)))
    return _lathe(profile, -hh - r, hh + r)


_BUILDERS = {"box": _prim_box, "sphere": _prim_sphere,
             "cylinder": _prim_cylinder, "capsule": _prim_capsule}


def _support(kind: str, dims, d: np.ndarray) -> float:
    """Support function h(d) of the primitive about its own center."""
    if kind == "box":
        return float(np.abs(d) @ np.asarray(dims))
    if kind == "sphere":
        return float(dims[0])
    if kind == "cylinder":
        return float(dims[0] * math.hypot(d[0], d[1]) + dims[1] * abs(d[2]))
    if kind == "capsule":
        return float(dims[0] + dims[1] * abs(d[2]))
    raise ValueError(f"unknown primitive kind {kind!r}")


def _draw_primitive(rng):
    kind = ("box", "sphere", "cylinder", "capsule")[rng.integers(0, 4)]
    if kind == "box":
        dims = rng.uniform(0.015, 0.045, 3)
    elif kind == "sphere":
        dims = np.array([rng.uniform(0.02, 0.05)])
    else:
        dims = np.array([rng.uniform(0.012, 0.03), rng.uniform(0.02, 0.05)])
    return kind, dims


def gen_object(seed: int):
    """Deterministic watertight composite; returns (TriMesh, ObjectSpec)."""
    rng = np.random.default_rng(seed)
    n_prims = int(rng.integers(1, 4))
    prims = []
    for i in range(n_prims):
        kind, dims = _draw_primitive(rng)
        if i == 0:
            center = np.zeros(3)
        else:
            anchor = prims[int(rng.integers(0, len(prims)))]
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            dist = _support(anchor["kind"], anchor["dims"], d) + \
                _support(kind, dims, -d)
            center = np.asarray(anchor["center"]) + dist * d
        prims.append({"kind": kind, "dims": dims.tolist(),
                      "center": center.tolist()})

    all_v, all_f = [], []
    offset = 0
    for p in prims:
        v, f = _BUILDERS[p["kind"]](p["dims"])
        all_v.append(v + np.asarray(p["center"]))
        all_f.append(f + offset)
        offset += len(v)
    verts = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    # weld exact duplicate vertices (tangent shells rarely share any)
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    if len(uniq) < len(verts):
        faces = inverse[faces]
        verts = uniq

    lo, hi = verts.min(axis=0), verts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    target = rng.uniform(*_DIAMETER_RANGE)
    scale = target / diag
    center = (lo + hi) / 2.0
    verts = (verts - center) * scale
    mesh = geo.TriMesh(vertices=verts, faces=faces)
    if not is_watertight(mesh):
        raise RuntimeError(f"gen_object produced a leaky mesh (seed {seed})")
    return mesh, ObjectSpec(primitives=prims, scale=scale, seed=seed)


# ---------------------------------------------------------------------------
# heuristic grasp labels


def _align_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector a to unit vector b."""
    c = float(a @ b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # opposite: rotate pi about any perpendicular
        perp = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            perp = np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, perp)
        axis /= np.linalg.norm(axis)
        return _axis_angle_matrix(axis, math.pi)
    axis /= s
    return _axis_angle_matrix(axis, math.atan2(s, c))


def _axis_angle_matrix(axis, angle):
    return handmod._rodrigues_np(np.asarray(axis) * angle)


def _matrix_to_axis_angle(r: np.ndarray) -> np.ndarray:
    angle = math.acos(min(1.0, max(-1.0, (np.trace(r) - 1.0) / 2.0)))
    if angle < 1e-12:
        return np.zeros(3)
    if math.pi - angle < 1e-6:
        # extract axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        k = int(np.argmax(axis))
        axis = m[:, k] / max(axis[k], 1e-12)
        axis /= np.linalg.norm(axis)
        return axis * angle
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    axis /= 2.0 * math.sin(angle)
    return axis * angle


def _flex_axes(model: handmod.HandModel):
    """Per-finger flexion axis in the rest frame (curls toward the palm)."""
    axes = []
    for _, base, direction, _, _ in handmod._FINGER_SPECS:
        d = np.asarray(direction, dtype=np.float64)
        d /= np.linalg.norm(d)
        u = np.cross([0.0, 0.0, 1.0], d)
        axes.append(u / np.linalg.norm(u))
    return axes


def _fingertip_indices():
    palm = 1 + handmod._PALM_LAT * handmod._PALM_LON + 1
    per_finger = 1 + len(handmod._RING_STATIONS) * handmod._RING_VERTS + 1
    return [palm + per_finger * fi + per_finger - 1 for fi in range(5)]


def gen_grasp(model: handmod.HandModel, object_mesh: geo.TriMesh,
              cloud: geo.PointCloud, region: geo.ConditionRegion,
              seed: int) -> handmod.HandParams:
    """Heuristic region-conditioned closure.

    The thumb pulp is aimed along the inward surface normal at the region
    center with a seeded roll, then index..pinky flex in fixed increments
    until each tip is near the surface. Candidates failing the CR/IV gates
    are re-rolled, up to the attempt budget.
    """
    rng = rng_for(seed, "grasp")
    p_c = region.center
    _, closest, tri = closest_point_on_mesh(p_c, object_mesh)
    normal = object_mesh.face_normals()[tri[0]]
    pulp = model.thumb_pulp_indices
    t0 = model.template[pulp].mean(axis=0)
    axes = _flex_axes(model)
    tips = _fingertip_indices()

    last = None
    for attempt in range(_MAX_ATTEMPTS):
        roll = rng.uniform(0.0, 2.0 * math.pi)
        standoff = _PULP_STANDOFF + 1e-3 * attempt
        rot = _axis_angle_matrix(normal, roll) @ \
            _align_rotation(np.array([0.0, 0.0, 1.0]), normal)
        params = handmod.HandParams.zeros()
        params.global_rot = _matrix_to_axis_angle(rot)
        params.transl = p_c + standoff * normal - rot @ t0

        # curl index..pinky until the tips meet the surface
        flex = np.zeros(5)
        for fi in range(1, 5):
            while flex[fi] < _FLEX_LIMIT:
                for j in range(3):
                    params.joint_rot[3 * fi + j] = flex[fi] * axes[fi]
                mesh = handmod.hand_forward(model, params)
                tip = mesh.vertices[tips[fi]]
                dist, _, _ = closest_point_on_mesh(tip, object_mesh)
                if dist[0] <= _TIP_TOLERANCE:
                    break
                flex[fi] += _FLEX_STEP
        for fi in range(1, 5):
            for j in range(3):
                params.joint_rot[3 * fi + j] = min(flex[fi], _FLEX_LIMIT) * axes[fi]

        mesh = handmod.hand_forward(model, params)
        cr, _ = cr_rate(mesh, cloud, region, model)
        if cr < _MIN_CR:
            last = f"CR {cr:.2f} < {_MIN_CR}"
            continue
        hand_tm = geo.TriMesh(vertices=mesh.vertices, faces=model.faces)
        iv = interpenetration_volume(hand_tm, object_mesh)
        if iv > _MAX_IV_CM3:
            last = f"IV {iv:.2f} cm^3 > {_MAX_IV_CM3}"
            continue
        return params
    raise GraspRejected(f"no grasp within {_MAX_ATTEMPTS} attempts "
                        f"(seed {seed}, last failure: {last})")


# ---------------------------------------------------------------------------
# hand-params text records


def save_hand_params(path, params: handmod.HandParams) -> None:
    lines = ["# hand params v1",
             "global_rot: " + " ".join(repr(float(x)) for x in params.global_rot),
             "transl: " + " ".join(repr(float(x)) for x in params.transl),
             "joint_rot: " + " ".join(repr(float(x))
                                      for x in params.joint_rot.reshape(-1))]
    Path(path).write_text("\n".join(lines) + "\n")


def load_hand_params(path) -> handmod.HandParams:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(":")
        fields[key.strip()] = np.array([float(t) for t in rest.split()])
    try:
        return handmod.HandParams(global_rot=fields["global_rot"],
                                  transl=fields["transl"],
                                  joint_rot=fields["joint_rot"].reshape(15, 3))
    except KeyError as e:
        raise ValueError(f"{path}: missing hand-params field {e}") from None


# ---------------------------------------------------------------------------
# dataset assembly


def build_dataset(n_objects: int, grasps_per_object: int, seed: int,
                  out_dir, n_cloud: int = N_CLOUD, g: int = 128, s: int = 16,
                  region_size: int = REGION_SIZE,
                  log_fn=None) -> DatasetManifest:
    """Write objects, grasps, regions and a manifest under ``out_dir``.

    Objects split 80/10/10 into train/val/test by seeded shuffle. Aborts
    when more than half of the attempted grasps are rejected.
    """
    out = Path(out_dir)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    (out / "grasps").mkdir(parents=True, exist_ok=True)

    shuffled = rng_for(seed, "split").permutation(n_objects)
    n_train = int(round(0.8 * n_objects))
    n_val = int(round(0.1 * n_objects))
    split_of = {}
    for rank, oi in enumerate(shuffled):
        split_of[int(oi)] = ("train" if rank < n_train else
                             "val" if rank < n_train + n_val else "test")

    manifest = DatasetManifest(version=1)
    model = handmod.load_hand_model()
    attempted = 0
    for oi in range(n_objects):
        obj_seed = derive_seed(seed, f"object-{oi}")
        mesh, spec = gen_object(obj_seed)
        obj_path = out / "objects" / f"obj_{oi:04d}.obj"
        save_obj(obj_path, mesh)
        cloud_seed = derive_seed(seed, f"cloud-{oi}")
        cloud = geo.resample_mesh(mesh, n_cloud, cloud_seed)
        patch_seed = derive_seed(seed, f"patches-{oi}")
        patches = geo.group_patches(cloud, g, s, patch_seed)
        pick = rng_for(seed, f"regions-{oi}")
        for gi in range(grasps_per_object):
            attempted += 1
            center = patches.centers[int(pick.integers(0, g))]
            region = geo.select_condition_region(patches, center, region_size)
            grasp_seed = derive_seed(seed, f"grasp-{oi}-{gi}")
            try:
                params = gen_grasp(model, mesh, cloud, region, grasp_seed)
            except GraspRejected as e:
                manifest.rejected.append({"object": oi, "grasp": gi,
                                          "reason": str(e)})
                if log_fn:
                    log_fn({"event": "rejected", "object": oi, "grasp": gi})
                continue
            gpath = out / "grasps" / f"obj_{oi:04d}_grasp_{gi:02d}.txt"
            save_hand_params(gpath, params)
            manifest.samples.append({
                "object_file": str(obj_path.relative_to(out)),
                "params_file": str(gpath.relative_to(out)),
                "object_index": oi,
                "region_center": center.tolist(),
                "region_size": region_size,
                "split": split_of[oi],
                "seeds": {"object": obj_seed, "cloud": cloud_seed,
                          "patches": patch_seed, "grasp": grasp_seed},
            })
            if log_fn:
                log_fn({"event": "sample", "object": oi, "grasp": gi})
        if len(manifest.rejected) * 2 > attempted:
            raise RuntimeError(
                f"excessive grasp rejection rate: {len(manifest.rejected)} of "
                f"{attempted} attempts failed")

    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
    (out / "manifest.json").write_text(text + "\n")
    return manifest
