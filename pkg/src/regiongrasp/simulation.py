"""Rigid-body drop test for grasp stability.

The object is a single rigid body under gravity; the hand is a static
collider. Contacts between seeded surface sample points of the object and
the hand mesh are resolved with sequential impulses (restitution, Coulomb
friction, Baumgarte positional bias). Semi-implicit Euler integration.

The headline output is the displacement of the object's center of mass
over the simulated horizon, used downstream as the grasp displacement
statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, TriMesh, resample_mesh
from .mesh_queries import closest_point_on_mesh, inside_mesh, is_watertight
from .seeding import derive_seed


class SimulationError(RuntimeError):
    """Numerical blow-up or invalid simulation input."""


@dataclass
class SimConfig:
    gravity: float = 9.81          # m/s^2, along -z
    timestep: float = 1.0 / 240.0  # s
    duration: float = 0.5          # s
    restitution: float = 0.0
    friction: float = 0.8
    density: float = 500.0         # kg/m^3
    baumgarte: float = 0.2         # positional correction gain
    slop: float = 5e-4             # allowed penetration, m
    contact_margin: float = 5e-3   # proximity cutoff for contact tests, m
    pitch: float = 5e-3            # voxel pitch for volume queries, m
    n_contact_points: int = 256
    solver_iterations: int = 8
    energy_abort_factor: float = 10.0

    def __post_init__(self):
        for name in ("gravity", "timestep", "duration", "friction", "density",
                     "baumgarte", "slop", "contact_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")
        if self.timestep <= 0 or self.pitch <= 0:
            raise ValueError("timestep and pitch must be positive")
        if self.duration < self.timestep:
            raise ValueError("duration must be at least one timestep")
        if self.n_contact_points < 4 or self.solver_iterations < 1:
            raise ValueError("need >=4 contact points and >=1 solver iteration")


@dataclass
class SimResult:
    displacement: float            # |x_com(T) - x_com(0)|, m
    final_offset: np.ndarray       # x_com(T) - x_com(0)
    steps: int
    aborted: bool = False
    abort_reason: str = ""
    trajectory: np.ndarray | None = field(default=None, repr=False)


def mass_properties(mesh: TriMesh, density: float):
    """Exact mass, center of mass and inertia tensor (about the COM) of a
    closed triangle mesh with uniform density, via signed tetrahedra."""
    p0 = mesh.vertices[mesh.faces[:, 0]]
    p1 = mesh.vertices[mesh.faces[:, 1]]
    p2 = mesh.vertices[mesh.faces[:, 2]]
    d = np.einsum("ij,ij->i", p0, np.cross(p1, p2))   # 6 * signed tet volume
    vol = d.sum() / 6.0
    if vol <= 0:
        raise SimulationError(f"non-positive mesh volume ({vol:.3e} m^3); "
                              "faces must be oriented outward")
    com = (d[:, None] * (p0 + p1 + p2)).sum(axis=0) / (24.0 * vol)
    # second moments S_ij = integral of x_i x_j over the solid
    s = np.zeros((3, 3))
    psum = p0 + p1 + p2
    for i in range(3):
        for j in range(3):
            terms = psum[:, i] * psum[:, j] \
                + p0[:, i] * p0[:, j] + p1[:, i] * p1[:, j] + p2[:, i] * p2[:, j]
            s[i, j] = (d * terms).sum() / 120.0
    mass = density * vol
    s *= density
    inertia = np.trace(s) * np.eye(3) - s
    # shift to the center of mass
    inertia -= mass * ((com @ com) * np.eye(3) - np.outer(com, com))
    return mass, com, inertia


def _quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                     w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                     w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                     w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2])


def _quat_to_mat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def grasp_displacement(object_mesh: TriMesh, collider: TriMesh | None,
                       config: SimConfig | None = None, seed: int = 0,
                       record_trajectory: bool = False) -> SimResult:
    """Drop the object under gravity against a static collider mesh.

    ``collider=None`` simulates free fall (useful for calibration). Surface
    contact points are an area-weighted seeded resample of the object mesh.
    """
    cfg = config or SimConfig()
    if not is_watertight(object_mesh):
        raise SimulationError("object mesh is not watertight")
    mass, com0, inertia = mass_properties(object_mesh, cfg.density)
    inv_mass = 1.0 / mass
    inv_inertia_body = np.linalg.inv(inertia)

    local_pts = resample_mesh(object_mesh, cfg.n_contact_points,
                              derive_seed(seed, "contact-points")).points - com0

    grav = np.array([0.0, 0.0, -cfg.gravity])
    x = com0.copy()
    q = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.zeros(3)
    w = np.zeros(3)
    n_steps = int(round(cfg.duration / cfg.timestep))
    dt = cfg.timestep
    # hard ceiling on recoverable mechanical energy: initial kinetic energy
    # plus the largest possible free-fall drop over the horizon
    e_ref = max(0.5 * mass * (v @ v)
                + mass * cfg.gravity * 0.5 * cfg.gravity * cfg.duration ** 2,
                1e-9)
    traj = [x.copy()] if record_trajectory else None

    for step in range(n_steps):
        v = v + grav * dt
        if collider is not None:
            rot = _quat_to_mat(q)
            world = local_pts @ rot.T + x
            dist, closest, _ = closest_point_on_mesh(world, collider)
            near = np.flatnonzero(dist < cfg.contact_margin)
            if near.size:
                inner = inside_mesh(world[near], collider)
                pen = np.where(inner, dist[near], -dist[near])  # >0 when inside
                normal = world[near] - closest[near]
                nn = np.linalg.norm(normal, axis=1, keepdims=True)
                normal = normal / np.where(nn > 1e-12, nn, 1.0)
                normal[inner] = -normal[inner]  # outward push on the object
                active = pen > -cfg.slop
                ids = near[active]
                pens = pen[active]
                norms = normal[active]
                if ids.size:
                    inv_inertia = rot @ inv_inertia_body @ rot.T
                    r = world[ids] - x
                    bias = cfg.baumgarte / dt * np.maximum(pens - cfg.slop, 0.0)
                    for _ in range(cfg.solver_iterations):
                        for k in range(len(ids)):
                            n = norms[k]
                            rk = r[k]
                            u = v + np.cross(w, rk)
                            un = u @ n
                            k_n = inv_mass + n @ np.cross(
                                inv_inertia @ np.cross(rk, n), rk)
                            jn = (-(1.0 + cfg.restitution) * un + bias[k]) / k_n
                            if jn <= 0.0:
                                continue
                            imp = jn * n
                            v = v + inv_mass * imp
                            w = w + inv_inertia @ np.cross(rk, imp)
                            # Coulomb friction along the tangential slip
                            u = v + np.cross(w, rk)
                            ut = u - (u @ n) * n
                            speed = np.linalg.norm(ut)
                            if speed > 1e-9:
                                t_dir = ut / speed
                                k_t = inv_mass + t_dir @ np.cross(
                                    inv_inertia @ np.cross(rk, t_dir), rk)
                                jt = min(speed / k_t, cfg.friction * jn)
                                imp_t = -jt * t_dir
                                v = v + inv_mass * imp_t
                                w = w + inv_inertia @ np.cross(rk, imp_t)
        x = x + v * dt
        dq = 0.5 * dt * _quat_mul(np.array([0.0, *w]), q)
        q = q + dq
        q = q / np.linalg.norm(q)

        rot_now = _quat_to_mat(q)
        inv_inertia_now = rot_now @ inv_inertia_body @ rot_now.T
        inertia_now = np.linalg.inv(inv_inertia_now)
        ke = 0.5 * mass * (v @ v) + 0.5 * w @ (inertia_now @ w)
        if not np.isfinite(ke) or ke > cfg.energy_abort_factor * e_ref:
            return SimResult(
                displacement=float(np.linalg.norm(x - com0)),
                final_offset=x - com0, steps=step + 1, aborted=True,
                abort_reason=(f"kinetic energy {ke:.3e} J exceeded "
                              f"{cfg.energy_abort_factor:.0f}x budget "
                              f"{e_ref:.3e} J at step {step + 1}"),
                trajectory=np.asarray(traj) if traj is not None else None)
        if traj is not None:
            traj.append(x.copy())

    return SimResult(displacement=float(np.linalg.norm(x - com0)),
                     final_offset=x - com0, steps=n_steps,
                     trajectory=np.asarray(traj) if traj is not None else None)
