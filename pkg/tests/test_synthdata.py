import json

import numpy as np
import pytest

from regiongrasp import geometry as geo
from regiongrasp import hand as handmod
from regiongrasp import metrics as met
from regiongrasp import synthdata as syn
from regiongrasp.mesh_queries import is_watertight


def test_gen_object_deterministic_watertight_and_sized():
    for seed in range(30):
        mesh, spec = syn.gen_object(seed)
        assert is_watertight(mesh)
        assert spec.seed == seed
        assert 1 <= len(spec.primitives) <= 3
        diag = np.linalg.norm(mesh.vertices.max(axis=0)
                              - mesh.vertices.min(axis=0))
        assert 0.08 - 1e-9 <= diag <= 0.20 + 1e-9
    a, _ = syn.gen_object(3)
    b, _ = syn.gen_object(3)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.faces, b.faces)


def test_gen_object_positive_volume():
    from regiongrasp.simulation import mass_properties
    for seed in range(10):
        mesh, _ = syn.gen_object(seed)
        mass, _, _ = mass_properties(mesh, 1.0)
        assert mass > 0


def test_gen_grasp_meets_quality_gates(hand_model):
    mesh, _ = syn.gen_object(0)
    cloud = geo.resample_mesh(mesh, syn.N_CLOUD, 0)
    patches = geo.group_patches(cloud, 128, 16, 0)
    region = geo.select_condition_region(patches, patches.centers[0],
                                         syn.REGION_SIZE)
    params = syn.gen_grasp(hand_model, mesh, cloud, region, seed=0)
    grasp = handmod.hand_forward(hand_model, params)
    cr, _ = met.cr_rate(grasp, cloud, region, hand_model)
    assert cr >= 0.5
    hand_tm = geo.TriMesh(vertices=grasp.vertices, faces=hand_model.faces)
    assert met.interpenetration_volume(hand_tm, mesh) <= 5.0


def test_hand_params_text_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    params = handmod.HandParams(global_rot=rng.normal(size=3),
                                transl=rng.normal(size=3),
                                joint_rot=rng.normal(size=(15, 3)))
    path = tmp_path / "p.txt"
    syn.save_hand_params(path, params)
    loaded = syn.load_hand_params(path)
    np.testing.assert_array_equal(loaded.global_rot, params.global_rot)
    np.testing.assert_array_equal(loaded.transl, params.transl)
    np.testing.assert_array_equal(loaded.joint_rot, params.joint_rot)
    (tmp_path / "bad.txt").write_text("# hand params v1\nglobal_rot: 0 0 0\n")
    with pytest.raises(ValueError):
        syn.load_hand_params(tmp_path / "bad.txt")


def test_build_dataset_manifest_and_split(tmp_path):
    manifest = syn.build_dataset(5, 2, seed=0, out_dir=tmp_path / "d1",
                                 n_cloud=512, g=32, s=16, region_size=4)
    assert manifest.version == 1
    assert len(manifest.samples) + len(manifest.rejected) == 10
    on_disk = json.loads((tmp_path / "d1" / "manifest.json").read_text())
    assert on_disk == manifest.to_dict()
    splits = {}
    for s in manifest.samples:
        obj = tmp_path / "d1" / s["object_file"]
        grasp = tmp_path / "d1" / s["params_file"]
        assert obj.exists() and grasp.exists()
        syn.load_hand_params(grasp)  # parses cleanly
        splits.setdefault(s["object_index"], set()).add(s["split"])
    # each object lives in exactly one split
    assert all(len(v) == 1 for v in splits.values())
    assert sum(1 for v in splits.values() if v == {"train"}) == 4


def test_build_dataset_rerun_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        syn.build_dataset(3, 1, seed=7, out_dir=tmp_path / d,
                          n_cloud=512, g=32, s=16, region_size=4)
    for rel in sorted(p.relative_to(tmp_path / "a")
                      for p in (tmp_path / "a").rglob("*") if p.is_file()):
        assert (tmp_path / "a" / rel).read_bytes() == \
            (tmp_path / "b" / rel).read_bytes(), rel
