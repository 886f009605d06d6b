"""Differentiable parametric hand.

Loads a MANO-format model file when given one; otherwise builds a bundled
synthetic articulated hand with the same interface: 778 surface vertices,
16 joints (wrist + 3 per finger) in a tree, linear-blend-skinning weights and
a fixed thumb-pulp vertex set.

Template frame: +y toward the fingers, -z is the volar (palm) side, +x the
thumb side. Units are meters.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint

N_VERTS = 778
N_JOINTS = 16
PARAM_DIM = 6 + (N_JOINTS - 1) * 3  # 51


@dataclass
class HandModel:
    """Immutable hand rig: template surface, skeleton and skinning weights."""

    template: np.ndarray        # (778, 3)
    faces: np.ndarray           # (F, 3)
    joints: np.ndarray          # (16, 3) rest positions
    parents: np.ndarray         # (16,), -1 for the wrist root
    weights: np.ndarray         # (778, 16), rows sum to 1
    thumb_pulp_indices: np.ndarray

    def __post_init__(self):
        if self.template.shape != (N_VERTS, 3):
            raise ValueError(f"template must be {N_VERTS} x 3, got {self.template.shape}")
        if self.joints.shape != (N_JOINTS, 3) or self.parents.shape != (N_JOINTS,):
            raise ValueError("joint arrays must have 16 entries")
        rows = self.weights.sum(axis=1)
        if self.weights.min() < 0 or np.abs(rows - 1.0).max() > 1e-9:
            raise ValueError("skinning weight rows must be nonnegative and sum to 1")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the wrist root")
        for j in range(1, N_JOINTS):
            p = self.parents[j]
            if not 0 <= p < j:
                raise ValueError("joint parents must form a tree rooted at the wrist")
        if len(self.thumb_pulp_indices) == 0 or self.thumb_pulp_indices.max() >= N_VERTS:
            raise ValueError("thumb_pulp_indices must be non-empty and < 778")
        self.edges = _edges_from_faces(self.faces)


@dataclass
class HandParams:
    """Pose: global axis-angle rotation, translation, per-joint axis-angles."""

    global_rot: np.ndarray      # (3,) radians
    transl: np.ndarray          # (3,) meters
    joint_rot: np.ndarray       # (15, 3) radians

    @classmethod
    def zeros(cls) -> "HandParams":
        return cls(np.zeros(3), np.zeros(3), np.zeros((15, 3)))

    @classmethod
    def from_vector(cls, vec) -> "HandParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(PARAM_DIM)
        return cls(vec[:3].copy(), vec[3:6].copy(), vec[6:].reshape(15, 3).copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.global_rot, self.transl, self.joint_rot.reshape(-1)])


@dataclass
class HandMesh:
    """Posed hand surface plus its fixed-topology edge vectors."""

    vertices: np.ndarray        # (778, 3)
    edges: np.ndarray           # (E, 3) difference vectors


def _edges_from_faces(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges (i < j), lexicographically sorted."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def edge_vectors(vertices, model: HandModel):
    """Per-edge difference vectors v_j - v_i over the fixed edge list.

    Accepts plain arrays or autodiff Tensors.
    """
    i, j = model.edges[:, 0], model.edges[:, 1]
    if isinstance(vertices, ad.Tensor):
        return ad.sub(ad.gather(vertices, j), ad.gather(vertices, i))
    vertices = np.asarray(vertices)
    if vertices.shape != (N_VERTS, 3):
        raise ValueError(f"expected {N_VERTS} x 3 vertices, got {vertices.shape}")
    return vertices[j] - vertices[i]


# ---------------------------------------------------------------------------
# forward kinematics + linear blend skinning


def _rodrigues_np(w: np.ndarray) -> np.ndarray:
    theta = math.sqrt(float(w @ w) + 1e-16)
    theta_c = min(theta, math.pi)
    k = w * (theta_c / theta)
    K = np.array([[0.0, -k[2], k[1]],
                  [k[2], 0.0, -k[0]],
                  [-k[1], k[0], 0.0]])
    a = math.sin(theta_c) / theta_c
    b = (1.0 - math.cos(theta_c)) / (theta_c * theta_c)
    return np.eye(3) + a * K + b * (K @ K)


def _joint_transforms_np(model: HandModel, joint_rot: np.ndarray):
    rots = [np.eye(3)]
    pos = [model.joints[0].copy()]
    for j in range(1, N_JOINTS):
        p = model.parents[j]
        rl = _rodrigues_np(joint_rot[j - 1])
        rots.append(rots[p] @ rl)
        pos.append(pos[p] + rots[p] @ (model.joints[j] - model.joints[p]))
    return rots, pos


def hand_forward(model: HandModel, params: HandParams) -> HandMesh:
    """Forward kinematics over the joint tree, linear blend skinning, then
    the global rotation and translation."""
    params = HandParams(np.nan_to_num(params.global_rot),
                        np.nan_to_num(params.transl),
                        np.nan_to_num(params.joint_rot))
    rots, pos = _joint_transforms_np(model, params.joint_rot)
    skinned = np.zeros((N_VERTS, 3))
    for j in range(N_JOINTS):
        wj = model.weights[:, j]
        if not wj.any():
            continue
        local = (model.template - model.joints[j]) @ rots[j].T + pos[j]
        skinned += wj[:, None] * local
    rg = _rodrigues_np(params.global_rot)
    verts = skinned @ rg.T + params.transl
    return HandMesh(vertices=verts, edges=edge_vectors(verts, model))


_EX = np.array([[0.0, 0, 0], [0, 0, -1], [0, 1, 0]])
_EY = np.array([[0.0, 0, 1], [0, 0, 0], [-1, 0, 0]])
_EZ = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 0]])


def _rodrigues_t(w: ad.Tensor) -> ad.Tensor:
    theta = ad.pow_const(ad.add(ad.sum_(ad.mul(w, w)), 1e-16), 0.5)
    theta_c = ad.clip(theta, 0.0, math.pi)
    k = ad.mul(w, ad.div(theta_c, theta))
    kx, ky, kz = (ad.gather(k, [i]) for i in range(3))
    K = ad.add(ad.add(ad.mul(kx, ad.Tensor(_EX)), ad.mul(ky, ad.Tensor(_EY))),
               ad.mul(kz, ad.Tensor(_EZ)))
    a = ad.div(ad.sin(theta_c), theta_c)
    b = ad.div(ad.sub(1.0, ad.cos(theta_c)), ad.mul(theta_c, theta_c))
    return ad.add(ad.add(ad.Tensor(np.eye(3)), ad.mul(K, a)),
                  ad.mul(ad.matmul(K, K), b))


def skin_vertices(model: HandModel, theta: ad.Tensor) -> ad.Tensor:
    """Differentiable pose-to-vertices map for a flat 51-vector parameter
    tensor; mirrors :func:`hand_forward` bit-for-bit in structure."""
    if theta.shape != (PARAM_DIM,):
        raise ValueError(f"theta must be shape ({PARAM_DIM},), got {theta.shape}")
    w_glob = ad.narrow(theta, 0, 0, 3)
    transl = ad.narrow(theta, 0, 3, 3)
    joint_w = ad.reshape(ad.narrow(theta, 0, 6, 45), (15, 3))
    rots: list = [ad.Tensor(np.eye(3))]
    pos: list = [ad.Tensor(model.joints[0])]
    for j in range(1, N_JOINTS):
        p = model.parents[j]
        rl = _rodrigues_t(ad.reshape(ad.gather(joint_w, [j - 1]), (3,)))
        rots.append(ad.matmul(rots[p], rl))
        off = (model.joints[j] - model.joints[p]).reshape(3, 1)
        step = ad.reshape(ad.matmul(rots[p], ad.Tensor(off)), (3,))
        pos.append(ad.add(pos[p], step))
    skinned = None
    for j in range(N_JOINTS):
        wj = model.weights[:, j:j + 1]
        if not wj.any():
            continue
        base = model.template - model.joints[j]
        local = ad.add(ad.matmul(ad.Tensor(base), ad.transpose(rots[j], (1, 0))),
                       pos[j])
        term = ad.mul(ad.Tensor(wj), local)
        skinned = term if skinned is None else ad.add(skinned, term)
    rg = _rodrigues_t(w_glob)
    return ad.add(ad.matmul(skinned, ad.transpose(rg, (1, 0))), transl)


# ---------------------------------------------------------------------------
# bundled synthetic hand

_RING_VERTS = 8
_RING_STATIONS = (0.02, 0.15, 0.30, 0.45, 0.55, 0.68, 0.80, 0.90, 0.98)
_PALM_LAT, _PALM_LON = 14, 29

# name, base point, direction, segment lengths, tube radius
_FINGER_SPECS = (
    ("thumb",  (0.040, 0.010, -0.002), (0.75, 0.66, 0.0), (0.030, 0.022, 0.018), 0.0085),
    ("index",  (0.026, 0.049, 0.0),    (0.08, 1.0, 0.0),  (0.030, 0.021, 0.016), 0.0065),
    ("middle", (0.008, 0.052, 0.0),    (0.0, 1.0, 0.0),   (0.033, 0.023, 0.017), 0.0070),
    ("ring",   (-0.010, 0.050, 0.0),   (-0.06, 1.0, 0.0), (0.030, 0.021, 0.016), 0.0065),
    ("pinky",  (-0.028, 0.045, 0.0),   (-0.12, 1.0, 0.0), (0.024, 0.017, 0.014), 0.0055),
)

_PALM_CENTER = np.array([0.0, 0.005, 0.0])
_PALM_SEMI = np.array([0.042, 0.050, 0.013])
_WRIST = np.array([0.0, -0.040, 0.0])
_BLEND_W = 0.006


def _orient_outward(verts: np.ndarray, faces: list) -> list:
    faces = np.asarray(faces, dtype=np.int64)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    vol = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
    if vol < 0:
        faces = faces[:, [0, 2, 1]]
    return faces.tolist()


def _build_palm():
    verts = [np.array([0.0, 1.0, 0.0])]
    for i in range(1, _PALM_LAT + 1):
        th = math.pi * i / (_PALM_LAT + 1)
        for j in range(_PALM_LON):
            ph = 2 * math.pi * j / _PALM_LON
            verts.append(np.array([math.sin(th) * math.cos(ph),
                                   math.cos(th),
                                   math.sin(th) * math.sin(ph)]))
    verts.append(np.array([0.0, -1.0, 0.0]))
    verts = np.array(verts) * _PALM_SEMI + _PALM_CENTER
    faces = []
    last = len(verts) - 1
    ring = lambda i, j: 1 + i * _PALM_LON + (j % _PALM_LON)
    for j in range(_PALM_LON):
        faces.append([0, ring(0, j), ring(0, j + 1)])
        faces.append([last, ring(_PALM_LAT - 1, j + 1), ring(_PALM_LAT - 1, j)])
    for i in range(_PALM_LAT - 1):
        for j in range(_PALM_LON):
            faces.append([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)])
            faces.append([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)])
    return verts, _orient_outward(verts, faces)


def _build_finger(base, direction, seg_lengths, radius):
    base = np.asarray(base, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    u = np.cross([0.0, 0.0, 1.0], d)
    u = u / np.linalg.norm(u)
    v = np.cross(d, u)  # points dorsal (+z side)
    total = sum(seg_lengths)
    verts = [base - 0.001 * d]
    volar = [False]
    for t in _RING_STATIONS:
        c = base + t * total * d
        r = radius * (1.05 - 0.35 * t)
        for k in range(_RING_VERTS):
            ph = 2 * math.pi * k / _RING_VERTS
            verts.append(c + r * (math.cos(ph) * u + math.sin(ph) * v))
            volar.append(math.sin(ph) < -0.5)
    verts.append(base + total * d)
    volar.append(False)
    verts = np.array(verts)
    faces = []
    tip = len(verts) - 1
    ring = lambda i, k: 1 + i * _RING_VERTS + (k % _RING_VERTS)
    for k in range(_RING_VERTS):
        faces.append([0, ring(0, k + 1), ring(0, k)])
        faces.append([tip, ring(len(_RING_STATIONS) - 1, k),
                      ring(len(_RING_STATIONS) - 1, k + 1)])
    for i in range(len(_RING_STATIONS) - 1):
        for k in range(_RING_VERTS):
            faces.append([ring(i, k), ring(i + 1, k), ring(i + 1, k + 1)])
            faces.append([ring(i, k), ring(i + 1, k + 1), ring(i, k + 1)])
    return verts, _orient_outward(verts, faces), np.array(volar)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@functools.lru_cache(maxsize=1)
def _synthetic_hand() -> HandModel:
    palm_v, palm_f = _build_palm()
    all_v = [palm_v]
    all_f = [np.asarray(palm_f, dtype=np.int64)]
    offset = len(palm_v)

    joints = [_WRIST]
    parents = [-1]
    weight_blocks = [np.zeros((len(palm_v), N_JOINTS))]
    weight_blocks[0][:, 0] = 1.0  # palm rides the wrist

    thumb_pulp = []
    for fi, (name, base, direction, segs, radius) in enumerate(_FINGER_SPECS):
        fv, ff, volar = _build_finger(base, direction, segs, radius)
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        base = np.asarray(base, dtype=np.float64)
        mcp, pip, dip = 1 + 3 * fi, 2 + 3 * fi, 3 + 3 * fi
        joints += [base, base + segs[0] * d, base + (segs[0] + segs[1]) * d]
        parents += [0, mcp, pip]
        s = (fv - base) @ d
        f1 = _sigmoid((s - 0.002) / _BLEND_W)
        f2 = _sigmoid((s - segs[0]) / _BLEND_W)
        f3 = _sigmoid((s - segs[0] - segs[1]) / _BLEND_W)
        wb = np.zeros((len(fv), N_JOINTS))
        wb[:, 0] = 1.0 - f1
        wb[:, mcp] = f1 - f2
        wb[:, pip] = f2 - f3
        wb[:, dip] = f3
        weight_blocks.append(wb)
        if name == "thumb":
            pulp_local = np.nonzero(volar & (f3 > 0.5))[0]
            thumb_pulp = (pulp_local + offset).tolist()
        all_v.append(fv)
        all_f.append(np.asarray(ff, dtype=np.int64) + offset)
        offset += len(fv)

    template = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    weights = np.concatenate(weight_blocks)
    weights /= weights.sum(axis=1, keepdims=True)
    assert template.shape[0] == N_VERTS, template.shape
    return HandModel(template=template, faces=faces,
                     joints=np.array(joints), parents=np.array(parents, dtype=np.int64),
                     weights=weights,
                     thumb_pulp_indices=np.array(sorted(thumb_pulp), dtype=np.int64))


def load_hand_model(path=None) -> HandModel:
    """Bundled synthetic hand when ``path`` is None, otherwise a model loaded
    from the named-array container format."""
    if path is None:
        return _synthetic_hand()
    ck = load_checkpoint(path)
    required = {"template", "faces", "joints", "parents", "weights", "thumb_pulp"}
    missing = required - set(ck.arrays)
    if missing:
        raise ValueError(f"{path}: missing entries {sorted(missing)}")
    weights = ck.arrays["weights"]
    rows = weights.sum(axis=1)
    if np.abs(rows - 1.0).max() > 1e-5:
        raise ValueError(f"{path}: skinning weight rows do not sum to 1")
    weights = weights / rows[:, None]
    return HandModel(
        template=ck.arrays["template"],
        faces=np.rint(ck.arrays["faces"]).astype(np.int64),
        joints=ck.arrays["joints"],
        parents=np.rint(ck.arrays["parents"]).astype(np.int64),
        weights=weights,
        thumb_pulp_indices=np.rint(ck.arrays["thumb_pulp"]).astype(np.int64),
    )


def save_hand_model(path, model: HandModel) -> None:
    save_checkpoint(path, {
        "template": model.template,
        "faces": model.faces.astype(np.float64),
        "joints": model.joints,
        "parents": model.parents.astype(np.float64),
        "weights": model.weights,
        "thumb_pulp": model.thumb_pulp_indices.astype(np.float64),
    })
