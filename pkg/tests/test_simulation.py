import numpy as np
import pytest

from regiongrasp import simulation as sim
from regiongrasp.geometry import TriMesh

from conftest import box_mesh


def test_mass_properties_match_analytic_box():
    a, b, c = 0.3, 0.2, 0.1
    center = np.array([0.05, -0.02, 0.11])
    mesh = box_mesh(center=center, half=(a / 2, b / 2, c / 2))
    density = 750.0
    mass, com, inertia = sim.mass_properties(mesh, density)
    vol = a * b * c
    assert abs(mass - density * vol) < 1e-12
    np.testing.assert_allclose(com, center, atol=1e-12)
    expect = mass / 12.0 * np.diag([b * b + c * c, a * a + c * c,
                                    a * a + b * b])
    np.testing.assert_allclose(inertia, expect, atol=1e-12)


def test_mass_properties_reject_inverted_mesh():
    mesh = box_mesh()
    flipped = TriMesh(vertices=mesh.vertices, faces=mesh.faces[:, ::-1].copy())
    with pytest.raises(sim.SimulationError):
        sim.mass_properties(flipped, 500.0)


def test_config_validation():
    sim.SimConfig()  # defaults are valid
    with pytest.raises(ValueError):
        sim.SimConfig(timestep=0.0)
    with pytest.raises(ValueError):
        sim.SimConfig(restitution=1.5)
    with pytest.raises(ValueError):
        sim.SimConfig(duration=1e-4, timestep=1e-3)
    with pytest.raises(ValueError):
        sim.SimConfig(friction=-0.1)
    with pytest.raises(ValueError):
        sim.SimConfig(n_contact_points=2)


def test_free_fall_matches_kinematics():
    mesh = box_mesh(half=(0.02, 0.02, 0.02))
    for duration in (0.5, 1.0, 2.0):
        cfg = sim.SimConfig(duration=duration)
        res = sim.grasp_displacement(mesh, None, cfg, seed=0)
        expect = 0.5 * cfg.gravity * duration ** 2
        assert abs(res.displacement - expect) / expect < 0.02
        assert res.final_offset[2] < 0
        assert not res.aborted
        assert res.steps == int(round(duration / cfg.timestep))


def test_free_fall_trajectory_recorded():
    mesh = box_mesh(half=(0.02, 0.02, 0.02))
    cfg = sim.SimConfig(duration=0.1)
    res = sim.grasp_displacement(mesh, None, cfg, seed=0,
                                 record_trajectory=True)
    assert res.trajectory.shape == (res.steps + 1, 3)
    # monotone descent from rest
    assert np.all(np.diff(res.trajectory[:, 2]) < 0)


def test_rest_on_floor_barely_moves():
    obj = box_mesh(center=(0, 0, 0.021), half=(0.02, 0.02, 0.02))
    floor = box_mesh(center=(0, 0, -0.05), half=(0.5, 0.5, 0.05))
    res = sim.grasp_displacement(obj, floor, seed=0)
    assert not res.aborted
    assert res.displacement < 1e-3


def test_caged_object_barely_moves():
    # small box inside a snug box cavity: five walls plus a lid
    obj = box_mesh(half=(0.02, 0.02, 0.02))
    walls = []
    for axis in range(3):
        for side in (-1, 1):
            center = np.zeros(3)
            center[axis] = side * 0.0305
            half = np.full(3, 0.05)
            half[axis] = 0.01
            walls.append(box_mesh(center=center, half=half))
    verts = np.concatenate([w.vertices for w in walls])
    faces = np.concatenate([w.faces + 8 * i for i, w in enumerate(walls)])
    cage = TriMesh(vertices=verts, faces=faces)
    res = sim.grasp_displacement(obj, cage, seed=0)
    assert not res.aborted
    assert res.displacement < 1e-3


def test_settling_displacement_converges_with_timestep():
    # drop across a 5 mm gap onto a wide floor: displacement is dominated by
    # the gap, so halving the timestep should barely change it
    obj = box_mesh(center=(0, 0, 0.026), half=(0.02, 0.02, 0.02))
    floor = box_mesh(center=(0, 0, -0.05), half=(0.5, 0.5, 0.05))
    coarse = sim.grasp_displacement(obj, floor, sim.SimConfig(), seed=0)
    fine = sim.grasp_displacement(
        obj, floor, sim.SimConfig(timestep=1.0 / 480.0), seed=0)
    assert not coarse.aborted and not fine.aborted
    assert abs(coarse.displacement - 0.005) < 2e-3
    assert abs(fine.displacement - coarse.displacement) < 1e-3


def test_non_watertight_object_rejected():
    mesh = box_mesh()
    open_mesh = TriMesh(vertices=mesh.vertices, faces=mesh.faces[:-1].copy())
    with pytest.raises(sim.SimulationError):
        sim.grasp_displacement(open_mesh, None)


def test_energy_blow_up_aborts():
    # deep initial penetration with an aggressive positional gain injects
    # energy far beyond the free-fall budget
    obj = box_mesh(center=(0, 0, -0.15), half=(0.02, 0.02, 0.02))
    floor = box_mesh(center=(0, 0, -0.2), half=(0.5, 0.5, 0.2))
    cfg = sim.SimConfig(baumgarte=1.0, contact_margin=0.5)
    res = sim.grasp_displacement(obj, floor, cfg, seed=0)
    assert res.aborted
    assert "kinetic energy" in res.abort_reason
    assert res.steps < int(round(cfg.duration / cfg.timestep))
