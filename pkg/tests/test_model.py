import numpy as np
import pytest

from regiongrasp import autodiff as ad
from regiongrasp import geometry as geo
from regiongrasp import model as mdl

CFG = mdl.toy_config()


def _patches(seed, cfg=CFG):
    pts = np.random.default_rng(seed).uniform(-0.05, 0.05, (cfg.n, 3))
    return geo.group_patches(geo.PointCloud(pts), cfg.g, cfg.s, seed)


def _tokens(seed, cfg=CFG):
    return mdl.patch_embed(mdl.init_model_params(cfg, 0), "embed.obj.",
                           _patches(seed, cfg), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        mdl.ModelConfig(d=15, heads=4)
    with pytest.raises(ValueError):
        mdl.ModelConfig(mask_ratio=1.5)
    with pytest.raises(ValueError):
        mdl.ModelConfig(g=0)
    cfg = mdl.ModelConfig.from_dict(CFG.to_dict())
    assert cfg == CFG


def test_init_params_deterministic():
    a = mdl.init_model_params(CFG, 3)
    b = mdl.init_model_params(CFG, 3)
    c = mdl.init_model_params(CFG, 4)
    assert set(a) == set(b) == set(c)
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_oenc_names_shared_with_pretrain():
    model_names = {k for k in mdl.init_model_params(CFG, 0)
                   if k.startswith(("embed.obj.", "oenc."))}
    pre_names = {k for k in mdl.init_pretrain_params(CFG, 0)
                 if k.startswith(("embed.obj.", "oenc."))}
    assert model_names == pre_names


def test_transfer_oenc_weights():
    params = mdl.init_model_params(CFG, 0)
    donor = mdl.init_pretrain_params(CFG, 9)
    arrays = {k: p.data for k, p in donor.items()}
    moved = mdl.transfer_oenc_weights(params, arrays)
    assert moved
    for name in moved:
        np.testing.assert_array_equal(params[name].data, arrays[name])
    bad = {moved[0]: np.zeros((1, 1))}
    with pytest.raises(ValueError):
        mdl.transfer_oenc_weights(params, bad)


def test_condition_region_encode_rejects_empty_mask():
    params = mdl.init_model_params(CFG, 0)
    tokens = mdl.o_enc(params, _tokens(0), CFG)
    with pytest.raises(ValueError):
        mdl.condition_region_encode(params, tokens, np.zeros(CFG.g), CFG)


def test_condition_vector_depends_on_region():
    params = mdl.init_model_params(CFG, 0)
    patches = _patches(0)
    r_a = geo.select_condition_region(patches, patches.centers[0], CFG.r)
    r_b = geo.select_condition_region(patches, patches.centers[5], CFG.r)
    z_a = mdl.condition_vector(params, CFG, patches, r_a)
    z_b = mdl.condition_vector(params, CFG, patches, r_b)
    assert not np.allclose(z_a.data, z_b.data)


def test_ablated_condition_vector_ignores_region():
    cfg = mdl.toy_config(ablate_condition_mask=True)
    params = mdl.init_model_params(cfg, 0)
    patches = _patches(0, cfg)
    r_a = geo.select_condition_region(patches, patches.centers[0], cfg.r)
    r_b = geo.select_condition_region(patches, patches.centers[5], cfg.r)
    z_a = mdl.condition_vector(params, cfg, patches, r_a)
    z_b = mdl.condition_vector(params, cfg, patches, r_b)
    np.testing.assert_array_equal(z_a.data, z_b.data)


def test_region_pooling_is_permutation_invariant():
    # max-pool over masked tokens must not care about token order
    params = mdl.init_model_params(CFG, 0)
    tokens = mdl.o_enc(params, _tokens(1), CFG)
    mask = np.zeros(CFG.g)
    mask[[1, 4, 6]] = 1
    z = mdl.condition_region_encode(params, tokens, mask, CFG)
    perm = np.random.default_rng(0).permutation(CFG.g)
    shuffled = mdl.TokenSeq(tokens=ad.gather(tokens.tokens, perm),
                            centers=tokens.centers[perm])
    z_p = mdl.condition_region_encode(params, shuffled, mask[perm], CFG)
    np.testing.assert_allclose(z.data, z_p.data, atol=1e-12)


def test_ga_mhca_routes_gradients_to_both_sides():
    cfg = CFG
    params = mdl.init_model_params(cfg, 0)
    hand_pts = np.random.default_rng(2).uniform(-0.05, 0.05, (cfg.g_h, 3))
    obj_pts = np.random.default_rng(3).uniform(-0.05, 0.05, (cfg.g, 3))
    hand_tok = ad.Tensor(np.random.default_rng(4).normal(size=(cfg.g_h, cfg.d)),
                         requires_grad=True)
    obj_tok = ad.Tensor(np.random.default_rng(5).normal(size=(cfg.g, cfg.d)),
                        requires_grad=True)
    with ad.Tape():
        out = mdl.ga_mhca(params, "hoi.0.ca.",
                          mdl.TokenSeq(tokens=hand_tok, centers=hand_pts),
                          mdl.TokenSeq(tokens=obj_tok, centers=obj_pts), cfg)
        ad.backward(ad.sum_(ad.mul(out.tokens, out.tokens)))
    assert hand_tok.grad is not None and np.any(hand_tok.grad != 0)
    assert obj_tok.grad is not None and np.any(obj_tok.grad != 0)


def test_kl_divergence_properties():
    zero = mdl.Posterior(mu=ad.Tensor(np.zeros(8)),
                         logvar=ad.Tensor(np.zeros(8)))
    assert mdl.kl_divergence(zero).item() == 0.0
    rng = np.random.default_rng(0)
    for _ in range(5):
        post = mdl.Posterior(mu=ad.Tensor(rng.normal(size=8)),
                             logvar=ad.Tensor(rng.normal(size=8)))
        assert mdl.kl_divergence(post).item() >= 0.0


def test_reparameterize_seeded_and_distributed():
    post = mdl.Posterior(mu=ad.Tensor(np.full(8, 2.0)),
                         logvar=ad.Tensor(np.full(8, np.log(0.25))))
    a = mdl.reparameterize(post, 7)
    b = mdl.reparameterize(post, 7)
    c = mdl.reparameterize(post, 8)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    draws = np.stack([mdl.reparameterize(post, s).data for s in range(3000)])
    assert abs(draws.mean() - 2.0) < 0.05
    assert abs(draws.std() - 0.5) < 0.05


def test_generate_deterministic_per_seed(hand_model):
    params = mdl.init_model_params(CFG, 0)
    patches = _patches(0)
    region = geo.select_condition_region(patches, patches.centers[0], CFG.r)
    a = mdl.generate(params, CFG, hand_model, patches, region, 11)
    b = mdl.generate(params, CFG, hand_model, patches, region, 11)
    c = mdl.generate(params, CFG, hand_model, patches, region, 12)
    np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
    assert not np.array_equal(a.mesh.vertices, c.mesh.vertices)
    fixed = mdl.generate(params, CFG, hand_model, patches, region, 11,
                         fix_latent_to_mean=True)
    np.testing.assert_array_equal(fixed.z, np.zeros(CFG.d_z))


def test_logvar_is_clipped():
    params = mdl.init_model_params(CFG, 0)
    f_i = ad.Tensor(np.full(CFG.d_h, 1e4))
    z_c = ad.Tensor(np.full(CFG.d_c, -1e4))
    post = mdl.vae_encode(params, f_i, z_c, CFG)
    assert post.logvar.data.min() >= -10.0
    assert post.logvar.data.max() <= 10.0
