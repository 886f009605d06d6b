"""Grasp evaluation metrics.

Condition hit rate (CR), contact area (CA), interpenetration volume (IV),
the aggregate CCA/IV ratio, simulated grasp displacement (GD) with its
generated-to-reference ratio (GDR), and sample diversity (DivDist).

Geometry is in meters internally; reported units are cm^2 (CA), cm^3 (IV),
cm^-1 (CCA/IV), meters (GD) and millimeters (DivDist).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import hand as handmod
from . import model as mdl
from .mesh_queries import closest_point_on_mesh, inside_mesh, is_watertight
from .seeding import derive_seed, rng_for
from .simulation import SimConfig, grasp_displacement as _simulate


@dataclass
class ContactAssignment:
    """Thumb-pulp to object-point nearest assignment behind the CR rate."""

    p_thb: np.ndarray     # (K, 3) thumb-pulp vertex positions
    p_o2t: np.ndarray     # sorted unique object-point indices hit by the pulp
    p_cr: np.ndarray      # subset of p_o2t inside the condition region

    def __post_init__(self):
        if not np.all(np.isin(self.p_cr, self.p_o2t)):
            raise ValueError("P_CR must be a subset of P_o2t")


@dataclass
class MetricsReport:
    cr_rate: float
    contact_area: float              # cm^2
    interpenetration_volume: float   # cm^3
    cca_over_iv: float               # cm^-1
    grasp_displacement: float        # m
    gdr: float
    div_dist: float                  # mm
    n_objects: int
    n_regions: int
    n_samples: int
    per_sample: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregate": {
                "cr_rate": self.cr_rate,
                "contact_area_cm2": self.contact_area,
                "interpenetration_volume_cm3": self.interpenetration_volume,
                "cca_over_iv_cm-1": self.cca_over_iv,
                "grasp_displacement_m": self.grasp_displacement,
                "gdr": self.gdr,
                "div_dist_mm": self.div_dist,
            },
            "counts": {"objects": self.n_objects, "regions": self.n_regions,
                       "samples": self.n_samples},
            "per_sample": self.per_sample,
            "flags": self.flags,
        }


_CSV_COLUMNS = ("object", "region", "sample", "cr", "contact_area_cm2",
                "iv_cm3", "gd_m")


def report_to_csv(report: MetricsReport) -> str:
    lines = [",".join(_CSV_COLUMNS)]
    for row in report.per_sample:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float)
                              else str(row[k]) for k in _CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def cr_rate(grasp, cloud: geo.PointCloud, region: geo.ConditionRegion,
            model: handmod.HandModel):
    """Fraction of pulp-assigned nearest object points inside the region.

    Each thumb-pulp vertex claims its nearest object point (squared L2,
    ties to the smallest index); P_o2t is the deduplicated set of claimed
    indices, and CR = |P_o2t intersect region| / |P_o2t|.
    """
    verts = grasp.vertices if isinstance(grasp, handmod.HandMesh) else \
        np.asarray(grasp, dtype=np.float64)
    pulp = verts[model.thumb_pulp_indices]
    if len(pulp) == 0:
        raise ValueError("thumb-pulp vertex set is empty")
    if region.member_indices is None:
        raise ValueError("region lacks member_indices into the object cloud")
    pts = cloud.points
    d2 = ((pulp[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)          # ties resolve to smallest index
    p_o2t = np.unique(nearest)
    p_cr = p_o2t[np.isin(p_o2t, region.member_indices)]
    assign = ContactAssignment(p_thb=pulp, p_o2t=p_o2t, p_cr=p_cr)
    return len(p_cr) / len(p_o2t), assign


def contact_area(vertices, faces, object_mesh: geo.TriMesh,
                 threshold: float = 5e-3) -> float:
    """Contact area in cm^2: one third of each incident triangle's area,
    summed over hand vertices within ``threshold`` of the object surface."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces)
    hand = geo.TriMesh(vertices=vertices, faces=faces)
    if np.any(hand.face_areas() <= 0) and np.all(object_mesh.face_areas() <= 0):
        raise ValueError("degenerate object mesh")
    dist, _, _ = closest_point_on_mesh(vertices, object_mesh)
    touching = dist <= threshold
    if not np.any(touching):
        return 0.0
    areas = hand.face_areas()
    per_vertex = np.zeros(len(vertices))
    for k in range(3):
        np.add.at(per_vertex, faces[:, k], areas / 3.0)
    return float(per_vertex[touching].sum() * 1e4)


def interpenetration_volume(hand_mesh: geo.TriMesh, object_mesh: geo.TriMesh,
                            pitch: float = 5e-3) -> float:
    """Voxelized overlap volume in cm^3.

    Voxel centers on the object's bounding grid that fall inside both
    meshes (parity ray-cast), times pitch^3. Non-watertight inputs degrade
    to a best-effort parity test with a warning.
    """
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    for name, mesh in (("hand", hand_mesh), ("object", object_mesh)):
        if not is_watertight(mesh):
            warnings.warn(f"{name} mesh is not watertight; "
                          "interpenetration volume is best-effort")
    lo = object_mesh.vertices.min(axis=0)
    hi = object_mesh.vertices.max(axis=0)
    axes = [np.arange(lo[k] + pitch / 2.0, hi[k], pitch) for k in range(3)]
    if any(len(a) == 0 for a in axes):
        return 0.0
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    # voxels outside the hand's bounding box cannot intersect it
    hlo = hand_mesh.vertices.min(axis=0)
    hhi = hand_mesh.vertices.max(axis=0)
    keep = np.all((centers >= hlo) & (centers <= hhi), axis=1)
    centers = centers[keep]
    if len(centers) == 0:
        return 0.0
    both = inside_mesh(centers, object_mesh)
    if np.any(both):
        both[both] = inside_mesh(centers[both], hand_mesh)
    return float(both.sum() * pitch ** 3 * 1e6)


def cca_iv(rows) -> float:
    """(mean CR x mean CA) / mean IV over report rows, in cm^-1.

    Rows carry ``cr``, ``contact_area_cm2`` and ``iv_cm3`` fields. Mean IV
    of zero returns an infinite-quality sentinel.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("need at least one row")
    cr = float(np.mean([r["cr"] for r in rows]))
    ca = float(np.mean([r["contact_area_cm2"] for r in rows]))
    iv = float(np.mean([r["iv_cm3"] for r in rows]))
    if iv == 0.0:
        return math.inf
    return cr * ca / iv


def gdr(generated, reference) -> float:
    """mean(generated GD) / mean(reference GD)."""
    gen = np.asarray(generated, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if len(gen) == 0 or len(ref) == 0:
        raise ValueError("displacement lists must be non-empty")
    ref_mean = ref.mean()
    if ref_mean <= 0:
        raise ValueError("reference mean displacement must be positive")
    return float(gen.mean() / ref_mean)


def grasp_displacement(grasp, object_mesh: geo.TriMesh,
                       model: handmod.HandModel,
                       sim: SimConfig | None = None, seed: int = 0) -> float:
    """Simulated object displacement (m) with the hand as static collider."""
    verts = grasp.vertices if isinstance(grasp, handmod.HandMesh) else \
        np.asarray(grasp, dtype=np.float64)
    collider = geo.TriMesh(vertices=verts, faces=model.faces)
    result = _simulate(object_mesh, collider, sim or SimConfig(), seed=seed)
    if result.aborted:
        raise RuntimeError(f"simulation aborted: {result.abort_reason}")
    return result.displacement


def div_dist(samples, seed: int) -> float:
    """Diversity over exactly 20 samples of one (object, region), in mm.

    Seeded split into two groups of 10; pair i-with-i across groups; per
    pair take the root of the mean squared per-vertex distance; report the
    mean over pairs.
    """
    verts = [s.mesh.vertices if isinstance(s, mdl.GraspSample)
             else np.asarray(s, dtype=np.float64) for s in samples]
    if len(verts) != 20:
        raise ValueError(f"div_dist needs exactly 20 samples, got {len(verts)}")
    perm = rng_for(seed, "divdist-split").permutation(20)
    a, b = perm[:10], perm[10:]
    total = 0.0
    for i, j in zip(a, b):
        sq = ((verts[i] - verts[j]) ** 2).sum(axis=1)
        total += math.sqrt(sq.mean())
    return total / 10.0 * 1e3


def evaluate(params: dict, config: mdl.ModelConfig, hand_model: handmod.HandModel,
             objects: list, seed: int, n_regions: int = 5, n_samples: int = 20,
             sim: SimConfig | None = None, reference_displacements=None,
             log_fn=None) -> MetricsReport:
    """Full evaluation protocol over test objects.

    Per object: ``n_regions`` seeded condition-region draws (centers drawn
    uniformly from the cloud), ``n_samples`` generations each. CR is
    aggregated as the mean of per-region means; other metrics average over
    all samples. GD/GDR require a sim config and (for GDR) reference
    displacements; both are NaN-free sentinels (0 / 1) when skipped.
    """
    rows = []
    flags = []
    region_cr_means = []
    div_values = []
    displacements = []
    for oi, obj in enumerate(objects):
        cloud = geo.resample_mesh(obj, config.n, derive_seed(seed, f"cloud-{oi}"))
        patches = geo.group_patches(cloud, config.g, config.s,
                                    derive_seed(seed, f"patch-{oi}"))
        for ri in range(n_regions):
            idx = rng_for(seed, f"region-{oi}-{ri}").integers(0, config.n)
            region = geo.select_condition_region(patches, cloud.points[idx],
                                                 config.r)
            group = []
            for si in range(n_samples):
                sample = mdl.generate(params, config, hand_model, patches,
                                      region,
                                      derive_seed(seed, f"gen-{oi}-{ri}-{si}"))
                group.append(sample)
                cr, _ = cr_rate(sample.mesh, cloud, region, hand_model)
                ca = contact_area(sample.mesh.vertices, hand_model.faces, obj)
                hand_tm = geo.TriMesh(vertices=sample.mesh.vertices,
                                      faces=hand_model.faces)
                iv = interpenetration_volume(hand_tm, obj,
                                             (sim or SimConfig()).pitch)
                gd = 0.0
                if sim is not None:
                    result = _simulate(obj, hand_tm, sim,
                                       seed=derive_seed(seed, f"sim-{oi}-{ri}-{si}"))
                    if result.aborted:
                        flags.append(f"sim aborted obj {oi} region {ri} "
                                     f"sample {si}: {result.abort_reason}")
                    gd = result.displacement
                    displacements.append(gd)
                rows.append({"object": oi, "region": ri, "sample": si,
                             "cr": cr, "contact_area_cm2": ca, "iv_cm3": iv,
                             "gd_m": gd})
            region_cr_means.append(float(np.mean(
                [r["cr"] for r in rows[-n_samples:]])))
            if n_samples == 20:
                div_values.append(div_dist(group,
                                           derive_seed(seed, f"div-{oi}-{ri}")))
            if log_fn:
                log_fn({"object": oi, "region": ri,
                        "cr_mean": region_cr_means[-1]})
    mean_gd = float(np.mean(displacements)) if displacements else 0.0
    ratio = 1.0
    if displacements and reference_displacements is not None:
        ratio = gdr(displacements, reference_displacements)
    return MetricsReport(
        cr_rate=float(np.mean(region_cr_means)),
        contact_area=float(np.mean([r["contact_area_cm2"] for r in rows])),
        interpenetration_volume=float(np.mean([r["iv_cm3"] for r in rows])),
        cca_over_iv=cca_iv(rows),
        grasp_displacement=mean_gd,
        gdr=ratio,
        div_dist=float(np.mean(div_values)) if div_values else 0.0,
        n_objects=len(objects), n_regions=n_regions, n_samples=n_samples,
        per_sample=rows, flags=flags)
