import numpy as np
import pytest

from regiongrasp import autodiff as ad
from regiongrasp import hand as handmod
from regiongrasp.mesh_queries import is_watertight
from regiongrasp.geometry import TriMesh


def _random_params(seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return handmod.HandParams(global_rot=rng.normal(scale=scale, size=3),
                              transl=rng.normal(scale=0.05, size=3),
                              joint_rot=rng.normal(scale=scale, size=(15, 3)))


def test_model_dimensions(hand_model):
    assert hand_model.template.shape == (778, 3)
    assert hand_model.joints.shape == (16, 3)
    assert hand_model.weights.shape == (778, 16)
    np.testing.assert_allclose(hand_model.weights.sum(axis=1), 1.0, atol=1e-12)
    assert hand_model.weights.min() >= 0
    assert hand_model.parents[0] == -1
    assert np.all(hand_model.parents[1:] < np.arange(1, 16))


def test_surface_is_closed(hand_model):
    # every undirected edge shared by exactly two faces, per component
    assert is_watertight(TriMesh(vertices=hand_model.template,
                                 faces=hand_model.faces))


def test_zero_pose_is_template(hand_model):
    mesh = handmod.hand_forward(hand_model, handmod.HandParams.zeros())
    np.testing.assert_allclose(mesh.vertices, hand_model.template, atol=1e-12)


def test_translation_is_exact(hand_model):
    p = handmod.HandParams.zeros()
    p.transl = np.array([0.1, -0.2, 0.05])
    mesh = handmod.hand_forward(hand_model, p)
    np.testing.assert_allclose(mesh.vertices, hand_model.template + p.transl,
                               atol=1e-12)


def test_global_rotation_is_rigid(hand_model):
    p = _random_params(0)
    p.joint_rot[:] = 0.0
    mesh = handmod.hand_forward(hand_model, p)
    ref = handmod.hand_forward(hand_model, handmod.HandParams.zeros())
    d_ref = np.linalg.norm(ref.vertices[::50, None] - ref.vertices[None, ::50],
                           axis=2)
    d_new = np.linalg.norm(mesh.vertices[::50, None] - mesh.vertices[None, ::50],
                           axis=2)
    np.testing.assert_allclose(d_new, d_ref, atol=1e-10)


def test_numpy_and_tensor_paths_agree(hand_model):
    for seed in range(3):
        p = _random_params(seed)
        fast = handmod.hand_forward(hand_model, p).vertices
        slow = handmod.skin_vertices(hand_model, ad.Tensor(p.to_vector())).data
        np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_skin_vertices_gradients(hand_model):
    theta = ad.Tensor(_random_params(1, scale=0.2).to_vector(),
                      requires_grad=True)
    target = handmod.hand_forward(hand_model, _random_params(2)).vertices

    def f():
        v = handmod.skin_vertices(hand_model, theta)
        return ad.l1_distance(v, ad.Tensor(target))

    report = ad.grad_check(f, [theta], tol=1e-5, probes_per_param=10)
    assert report.passed, report


def test_thumb_pulp_is_on_distal_thumb(hand_model):
    pulp = hand_model.thumb_pulp_indices
    assert len(pulp) > 0
    # dominant weight is the thumb DIP joint (joint index 3)
    assert np.all(hand_model.weights[pulp, 3] > 0.5)
    # volar side of the template
    assert np.all(hand_model.template[pulp][:, 2] < 0.0)


def test_edge_vectors_paths_agree(hand_model):
    verts = handmod.hand_forward(hand_model, _random_params(4)).vertices
    e_np = handmod.edge_vectors(verts, hand_model)
    e_t = handmod.edge_vectors(ad.Tensor(verts), hand_model)
    np.testing.assert_allclose(e_np, e_t.data, atol=0)


def test_params_vector_round_trip():
    p = _random_params(5)
    q = handmod.HandParams.from_vector(p.to_vector())
    np.testing.assert_array_equal(p.global_rot, q.global_rot)
    np.testing.assert_array_equal(p.transl, q.transl)
    np.testing.assert_array_equal(p.joint_rot, q.joint_rot)
    with pytest.raises(ValueError):
        handmod.HandParams.from_vector(np.zeros(50))


def test_save_load_round_trip(tmp_path, hand_model):
    path = tmp_path / "hand.ckpt"
    handmod.save_hand_model(path, hand_model)
    loaded = handmod.load_hand_model(path)
    # storage is 32-bit; geometry survives to float32 precision
    np.testing.assert_allclose(loaded.template, hand_model.template, atol=1e-6)
    np.testing.assert_array_equal(loaded.faces, hand_model.faces)
    np.testing.assert_array_equal(loaded.parents, hand_model.parents)
    np.testing.assert_array_equal(loaded.thumb_pulp_indices,
                                  hand_model.thumb_pulp_indices)
    np.testing.assert_allclose(loaded.weights.sum(axis=1), 1.0, atol=1e-12)


def test_invalid_model_rejected(hand_model):
    bad = hand_model.weights.copy()
    bad[0, 0] += 0.5
    with pytest.raises(ValueError):
        handmod.HandModel(template=hand_model.template, faces=hand_model.faces,
                          joints=hand_model.joints, parents=hand_model.parents,
                          weights=bad,
                          thumb_pulp_indices=hand_model.thumb_pulp_indices)
