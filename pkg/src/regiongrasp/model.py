"""The grasp-generation network: patch embedding, object/hand encoders,
condition region encoder, geometric-aware interaction blocks, and the
CVAE encoder/decoder with its training loss.

All forward functions are pure: they take a flat name->Tensor parameter
dict plus a config, so the same weights serve pretraining, training and
generation, and transfer between stages by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import hand as handmod
from .seeding import rng_for


@dataclass
class ModelConfig:
    """Operating hyperparameters. Defaults are the paper-scale operating
    point; tests use :func:`toy_config`."""

    g: int = 128            # object patch count
    s: int = 32             # patch size
    n: int = 2048           # object cloud size
    r: int = 16             # condition region size (patches)
    g_h: int = 32           # hand patch count
    s_h: int = 24           # hand patch size
    d: int = 256            # token width
    d_c: int = 256          # condition vector width
    d_h: int = 512          # interaction feature width
    d_z: int = 64           # latent width
    b_o: int = 6            # object encoder depth
    b_h: int = 3            # hand encoder depth
    b_hoi: int = 3          # interaction encoder depth
    b_dec: int = 2          # pretrain decoder depth
    heads: int = 4
    knn_k: int = 8
    lambda_v: float = 1.0
    lambda_e: float = 1.0
    lambda_kld: float = 5e-3
    mask_ratio: float = 0.6
    lr: float = 5e-4
    samples_per_region: int = 20
    region_groups: int = 5
    ablate_condition_mask: bool = False

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"token width {self.d} not divisible by {self.heads} heads")
        for name in ("g", "s", "n", "r", "g_h", "s_h", "d", "d_c", "d_h", "d_z", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in [0, 1)")
        for name in ("lambda_v", "lambda_e", "lambda_kld"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def toy_config(**overrides) -> ModelConfig:
    """Small profile for gradient checks and fast tests."""
    base = dict(g=8, s=4, n=64, r=2, g_h=8, s_h=6, d=16, d_c=16, d_h=16,
                d_z=8, b_o=1, b_h=1, b_hoi=1, b_dec=1, heads=2, knn_k=4)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class TokenSeq:
    tokens: ad.Tensor        # (G, d)
    centers: np.ndarray      # (G, 3), carried for geometric queries


@dataclass
class Posterior:
    mu: ad.Tensor            # (d_z,)
    logvar: ad.Tensor        # (d_z,), clamped to [-10, 10]


@dataclass
class GraspSample:
    params: handmod.HandParams
    mesh: handmod.HandMesh
    z: np.ndarray
    region: geo.ConditionRegion
    seed: int


# ---------------------------------------------------------------------------
# parameter initialization


def _xavier(rng, fan_in, fan_out):
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal((fan_in, fan_out)) * std


def _init_embed(p, rng, prefix, d):
    p[prefix + "w1"] = _xavier(rng, 3, d)
    p[prefix + "b1"] = np.zeros(d)
    p[prefix + "w2"] = _xavier(rng, d, d)
    p[prefix + "b2"] = np.zeros(d)
    p[prefix + "wpos"] = _xavier(rng, 3, d)
    p[prefix + "bpos"] = np.zeros(d)


def _init_block(p, rng, prefix, d):
    for nm in ("ln1", "ln2"):
        p[prefix + nm + ".gain"] = np.ones(d)
        p[prefix + nm + ".bias"] = np.zeros(d)
    for nm in ("wq", "wk", "wv", "wo"):
        p[prefix + "attn." + nm] = _xavier(rng, d, d)
    for nm in ("bq", "bk", "bv", "bo"):
        p[prefix + "attn." + nm] = np.zeros(d)
    p[prefix + "ffn.w1"] = _xavier(rng, d, 4 * d)
    p[prefix + "ffn.b1"] = np.zeros(4 * d)
    p[prefix + "ffn.w2"] = _xavier(rng, 4 * d, d)
    p[prefix + "ffn.b2"] = np.zeros(d)


def _init_ga(p, rng, prefix, d, cross: bool):
    lns = ("lnq", "lnkv", "out_ln") if cross else ("ln", "out_ln")
    for nm in lns:
        p[prefix + nm + ".gain"] = np.ones(d)
        p[prefix + nm + ".bias"] = np.zeros(d)
    for nm in ("wq", "wk", "wv"):
        p[prefix + "attn." + nm] = _xavier(rng, d, d)
    for nm in ("bq", "bk", "bv"):
        p[prefix + "attn." + nm] = np.zeros(d)
    p[prefix + "spatial.w1"] = _xavier(rng, 3, d)
    p[prefix + "spatial.b1"] = np.zeros(d)
    p[prefix + "spatial.w2"] = _xavier(rng, d, d)
    p[prefix + "spatial.b2"] = np.zeros(d)
    p[prefix + "proj.w"] = _xavier(rng, 2 * d, d)
    p[prefix + "proj.b"] = np.zeros(d)


def init_oenc_params(config: ModelConfig, rng) -> dict:
    """Object embedding + O-Enc weights (the pretrain-transferable subset)."""
    p: dict = {}
    _init_embed(p, rng, "embed.obj.", config.d)
    for i in range(config.b_o):
        _init_block(p, rng, f"oenc.{i}.", config.d)
    return p


def init_pretrain_params(config: ModelConfig, seed: int) -> dict:
    rng = rng_for(seed, "init-pretrain")
    p = init_oenc_params(config, rng)
    d = config.d
    for i in range(config.b_dec):
        _init_block(p, rng, f"dec.{i}.", d)
    p["dec.mask_token"] = rng.standard_normal(d) * 0.02
    p["dec.pos.w"] = _xavier(rng, 3, d)
    p["dec.pos.b"] = np.zeros(d)
    p["dec.head.w"] = _xavier(rng, d, config.s * 3)
    p["dec.head.b"] = np.zeros(config.s * 3)
    return {k: ad.Tensor(v, requires_grad=True) for k, v in p.items()}


def init_model_params(config: ModelConfig, seed: int) -> dict:
    rng = rng_for(seed, "init-model")
    p = init_oenc_params(config, rng)
    d = config.d
    p["cre.w1"] = _xavier(rng, d, config.d_c)
    p["cre.b1"] = np.zeros(config.d_c)
    p["cre.w2"] = _xavier(rng, config.d_c, config.d_c)
    p["cre.b2"] = np.zeros(config.d_c)
    _init_embed(p, rng, "embed.hand.", d)
    for i in range(config.b_h):
        _init_block(p, rng, f"henc.{i}.", d)
    for i in range(config.b_hoi):
        _init_ga(p, rng, f"hoi.{i}.sa.", d, cross=False)
        _init_ga(p, rng, f"hoi.{i}.ca.", d, cross=True)
    p["fi.w"] = _xavier(rng, d, config.d_h)
    p["fi.b"] = np.zeros(config.d_h)
    enc_in = config.d_h + config.d_c
    p["venc.w1"] = _xavier(rng, enc_in, config.d_h)
    p["venc.b1"] = np.zeros(config.d_h)
    p["venc.w2"] = _xavier(rng, config.d_h, 2 * config.d_z)
    p["venc.b2"] = np.zeros(2 * config.d_z)
    dec_in = config.d_z + config.d_c
    p["vdec.w1"] = _xavier(rng, dec_in, config.d_h)
    p["vdec.b1"] = np.zeros(config.d_h)
    p["vdec.w2"] = _xavier(rng, config.d_h, config.d_h)
    p["vdec.b2"] = np.zeros(config.d_h)
    # small final layer keeps the initial pose near the template
    p["vdec.w3"] = _xavier(rng, config.d_h, handmod.PARAM_DIM) * 0.1
    p["vdec.b3"] = np.zeros(handmod.PARAM_DIM)
    return {k: ad.Tensor(v, requires_grad=True) for k, v in p.items()}


def transfer_oenc_weights(params: dict, arrays: dict) -> list:
    """Copy pretrained object-encoder arrays into a model parameter dict by
    name; returns the transferred names."""
    moved = []
    for name, arr in arrays.items():
        if name.startswith(("embed.obj.", "oenc.")) and name in params:
            if params[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{params[name].shape} vs {arr.shape}")
            params[name].data = np.asarray(arr, dtype=np.float64)
            moved.append(name)
    return moved


# ---------------------------------------------------------------------------
# forward blocks


def _linear(x, params, wname, bname):
    return ad.add(ad.matmul(x, params[wname]), params[bname])


def patch_embed(params: dict, prefix: str, patches: geo.PatchSet,
                config: ModelConfig) -> TokenSeq:
    """Shared per-point MLP + max-pool over the patch, plus a linear
    positional embedding of the patch center."""
    g, s, _ = patches.patches.shape
    flat = ad.Tensor(patches.patches.reshape(g * s, 3))
    h = ad.relu(_linear(flat, params, prefix + "w1", prefix + "b1"))
    pooled = ad.max_(ad.reshape(h, (g, s, config.d)), axis=1)
    feat = _linear(pooled, params, prefix + "w2", prefix + "b2")
    pos = _linear(ad.Tensor(patches.centers), params, prefix + "wpos", prefix + "bpos")
    return TokenSeq(tokens=ad.add(feat, pos), centers=patches.centers)


def _attention(params, prefix, q_in, kv_in, heads):
    d = q_in.shape[-1]
    dk = d // heads
    nq, nk = q_in.shape[0], kv_in.shape[0]
    q = _linear(q_in, params, prefix + "wq", prefix + "bq")
    k = _linear(kv_in, params, prefix + "wk", prefix + "bk")
    v = _linear(kv_in, params, prefix + "wv", prefix + "bv")
    q = ad.transpose(ad.reshape(q, (nq, heads, dk)), (1, 0, 2))
    k = ad.transpose(ad.reshape(k, (nk, heads, dk)), (1, 0, 2))
    v = ad.transpose(ad.reshape(v, (nk, heads, dk)), (1, 0, 2))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dk))
    att = ad.softmax(scores, axis=-1)
    out = ad.matmul(att, v)
    return ad.reshape(ad.transpose(out, (1, 0, 2)), (nq, d))


def _transformer_block(params, prefix, x, config):
    xn = ad.layer_norm(x, params[prefix + "ln1.gain"], params[prefix + "ln1.bias"])
    a = _attention(params, prefix + "attn.", xn, xn, config.heads)
    a = _linear(a, params, prefix + "attn.wo", prefix + "attn.bo")
    x = ad.add(x, a)
    xn = ad.layer_norm(x, params[prefix + "ln2.gain"], params[prefix + "ln2.bias"])
    h = ad.gelu(_linear(xn, params, prefix + "ffn.w1", prefix + "ffn.b1"))
    h = _linear(h, params, prefix + "ffn.w2", prefix + "ffn.b2")
    return ad.add(x, h)


def o_enc(params: dict, tokens: TokenSeq, config: ModelConfig,
          depth: int | None = None) -> TokenSeq:
    """Pre-norm transformer stack over object tokens."""
    x = tokens.tokens
    for i in range(config.b_o if depth is None else depth):
        x = _transformer_block(params, f"oenc.{i}.", x, config)
    return TokenSeq(tokens=x, centers=tokens.centers)


def h_enc(params: dict, tokens: TokenSeq, config: ModelConfig) -> TokenSeq:
    x = tokens.tokens
    for i in range(config.b_h):
        x = _transformer_block(params, f"henc.{i}.", x, config)
    return TokenSeq(tokens=x, centers=tokens.centers)


def condition_region_encode(params: dict, tokens: TokenSeq, mask,
                            config: ModelConfig) -> ad.Tensor:
    """Mask the enhanced object tokens row-wise, max-pool over patches, and
    project to the condition vector."""
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.shape[0] != tokens.tokens.shape[0]:
        raise ValueError(f"mask length {mask.shape[0]} != token count "
                         f"{tokens.tokens.shape[0]}")
    if not mask.any():
        raise ValueError("condition mask is all-zero: no region information")
    masked = ad.mul(tokens.tokens, ad.Tensor(mask[:, None]))
    pooled = ad.reshape(ad.max_(masked, axis=0), (1, config.d))
    h = ad.relu(_linear(pooled, params, "cre.w1", "cre.b1"))
    return ad.reshape(_linear(h, params, "cre.w2", "cre.b2"), (config.d_c,))


def _spatial_features(params, prefix, rel: np.ndarray, config) -> ad.Tensor:
    """Shared MLP over relative coordinates; rel is (M, K, 3)."""
    m, k, _ = rel.shape
    h = ad.relu(_linear(ad.Tensor(rel.reshape(m * k, 3)), params,
                        prefix + "spatial.w1", prefix + "spatial.b1"))
    h = _linear(h, params, prefix + "spatial.w2", prefix + "spatial.b2")
    return ad.reshape(h, (m, k, config.d))


def ga_mhsa(params: dict, prefix: str, hand_tokens: TokenSeq,
            config: ModelConfig) -> TokenSeq:
    """Self-attention branch concatenated with a KNN spatial branch over the
    hand centers, projected back to width d, residual + norm."""
    x = hand_tokens.tokens
    centers = hand_tokens.centers
    if config.knn_k > len(centers):
        raise ValueError(f"knn_k {config.knn_k} exceeds token count {len(centers)}")
    xn = ad.layer_norm(x, params[prefix + "ln.gain"], params[prefix + "ln.bias"])
    sem = _attention(params, prefix + "attn.", xn, xn, config.heads)
    nbr = geo.knn(centers, centers, config.knn_k)
    rel = centers[nbr] - centers[:, None, :]
    spat = ad.max_(_spatial_features(params, prefix, rel, config), axis=1)
    h = ad.matmul(ad.concat([sem, spat], axis=1), params[prefix + "proj.w"])
    h = ad.add(h, params[prefix + "proj.b"])
    out = ad.layer_norm(ad.add(x, h), params[prefix + "out_ln.gain"],
                        params[prefix + "out_ln.bias"])
    return TokenSeq(tokens=out, centers=centers)


def ga_mhca(params: dict, prefix: str, hand_tokens: TokenSeq,
            obj_tokens: TokenSeq, config: ModelConfig) -> TokenSeq:
    """Cross-attention (hand queries, object keys/values) concatenated with a
    cross-KNN spatial branch that links each object center to its top-k
    nearest hand centers and aggregates back onto the hand tokens."""
    x = hand_tokens.tokens
    hc, oc = hand_tokens.centers, obj_tokens.centers
    if config.knn_k > len(hc):
        raise ValueError(f"knn_k {config.knn_k} exceeds hand token count {len(hc)}")
    xn = ad.layer_norm(x, params[prefix + "lnq.gain"], params[prefix + "lnq.bias"])
    on = ad.layer_norm(obj_tokens.tokens, params[prefix + "lnkv.gain"],
                       params[prefix + "lnkv.bias"])
    sem = _attention(params, prefix + "attn.", xn, on, config.heads)
    idx = geo.knn(oc, hc, config.knn_k)                   # (G_o, k)
    rel = oc[:, None, :] - hc[idx]                        # (G_o, k, 3)
    feats = _spatial_features(params, prefix, rel, config)
    feats = ad.reshape(feats, (idx.size, config.d))
    agg = np.zeros((len(hc), idx.size))
    flat = idx.reshape(-1)
    agg[flat, np.arange(idx.size)] = 1.0
    counts = np.maximum(agg.sum(axis=1, keepdims=True), 1.0)
    spat = ad.matmul(ad.Tensor(agg / counts), feats)
    h = ad.matmul(ad.concat([sem, spat], axis=1), params[prefix + "proj.w"])
    h = ad.add(h, params[prefix + "proj.b"])
    out = ad.layer_norm(ad.add(x, h), params[prefix + "out_ln.gain"],
                        params[prefix + "out_ln.bias"])
    return TokenSeq(tokens=out, centers=hc)


def hoi_encode(params: dict, hand_tokens: TokenSeq, obj_tokens: TokenSeq,
               config: ModelConfig) -> ad.Tensor:
    """Stacked GA-MHSA/GA-MHCA blocks over the hand-token stream, max-pooled
    and projected to the interaction feature."""
    x = hand_tokens
    for i in range(config.b_hoi):
        x = ga_mhsa(params, f"hoi.{i}.sa.", x, config)
        x = ga_mhca(params, f"hoi.{i}.ca.", x, obj_tokens, config)
    pooled = ad.reshape(ad.max_(x.tokens, axis=0), (1, config.d))
    return ad.reshape(_linear(pooled, params, "fi.w", "fi.b"), (config.d_h,))


def vae_encode(params: dict, f_i: ad.Tensor, z_c: ad.Tensor,
               config: ModelConfig) -> Posterior:
    joint = ad.concat([f_i, z_c], axis=0)
    h = ad.relu(_linear(ad.reshape(joint, (1, joint.shape[0])), params,
                        "venc.w1", "venc.b1"))
    out = ad.reshape(_linear(h, params, "venc.w2", "venc.b2"), (2 * config.d_z,))
    mu = ad.narrow(out, 0, 0, config.d_z)
    logvar = ad.clip(ad.narrow(out, 0, config.d_z, config.d_z), -10.0, 10.0)
    return Posterior(mu=mu, logvar=logvar)


def reparameterize(post: Posterior, seed: int) -> ad.Tensor:
    """z = mu + exp(logvar/2) * eps with seeded standard-normal eps; the
    gradient flows to mu and logvar only."""
    eps = rng_for(seed, "reparam").standard_normal(post.mu.shape[0])
    std = ad.exp(ad.mul(post.logvar, 0.5))
    return ad.add(post.mu, ad.mul(std, ad.Tensor(eps)))


def vae_decode(params: dict, z: ad.Tensor, z_c: ad.Tensor) -> ad.Tensor:
    joint = ad.concat([z, z_c], axis=0)
    h = ad.reshape(joint, (1, joint.shape[0]))
    h = ad.relu(_linear(h, params, "vdec.w1", "vdec.b1"))
    h = ad.relu(_linear(h, params, "vdec.w2", "vdec.b2"))
    out = _linear(h, params, "vdec.w3", "vdec.b3")
    return ad.reshape(out, (handmod.PARAM_DIM,))


def kl_divergence(post: Posterior) -> ad.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) = 0.5 * sum(exp(logvar)+mu^2-1-logvar)."""
    term = ad.sub(ad.add(ad.exp(post.logvar), ad.mul(post.mu, post.mu)),
                  ad.add(1.0, post.logvar))
    return ad.mul(ad.sum_(term), 0.5)


def loss_train(recon: handmod.HandMesh, target: handmod.HandMesh,
               post: Posterior, config: ModelConfig) -> ad.Tensor:
    """lambda_v * mean|V'-V| + lambda_e * mean|e'-e| + lambda_KLD * KL."""
    l_v = ad.l1_distance(recon.vertices, np.asarray(target.vertices))
    l_e = ad.l1_distance(recon.edges, np.asarray(target.edges))
    return ad.add(ad.add(ad.mul(l_v, config.lambda_v), ad.mul(l_e, config.lambda_e)),
                  ad.mul(kl_divergence(post), config.lambda_kld))


def condition_vector(params: dict, config: ModelConfig, patches: geo.PatchSet,
                     region: geo.ConditionRegion) -> ad.Tensor:
    """Full ConditionNet path: embed, encode, mask, pool."""
    tokens = o_enc(params, patch_embed(params, "embed.obj.", patches, config), config)
    mask = np.ones(patches.g) if config.ablate_condition_mask else region.mask
    return condition_region_encode(params, tokens, mask, config)


def generate(params: dict, config: ModelConfig, hand_model: handmod.HandModel,
             patches: geo.PatchSet, region: geo.ConditionRegion,
             seed: int, fix_latent_to_mean: bool = False) -> GraspSample:
    """Sample one grasp: z ~ N(0, I) by seed (or the prior mean), decode to
    hand parameters, pose the hand."""
    z = np.zeros(config.d_z) if fix_latent_to_mean else \
        rng_for(seed, "gen-z").standard_normal(config.d_z)
    z_c = condition_vector(params, config, patches, region)
    theta = vae_decode(params, ad.Tensor(z), z_c).data
    hp = handmod.HandParams.from_vector(theta)
    mesh = handmod.hand_forward(hand_model, hp)
    return GraspSample(params=hp, mesh=mesh, z=z, region=region, seed=seed)
