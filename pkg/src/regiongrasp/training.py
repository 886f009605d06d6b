"""CVAE training loop over prepared hand-object samples."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import hand as handmod
from . import model as mdl
from .optim import AdamW, cosine_lr
from .pretrain import NumericFailure
from .seeding import derive_seed, rng_for


@dataclass
class TrainSample:
    """Fully prepared training record (geometry precomputed once)."""

    patches: geo.PatchSet
    region: geo.ConditionRegion
    target: handmod.HandMesh
    hand_patches: geo.PatchSet


def prepare_sample(cloud: geo.PointCloud, region: geo.ConditionRegion,
                   target_params: handmod.HandParams, hand_model,
                   config: mdl.ModelConfig, seed: int,
                   patches: geo.PatchSet | None = None) -> TrainSample:
    if patches is None:
        patches = geo.group_patches(cloud, config.g, config.s,
                                    derive_seed(seed, "obj-patches"))
    target = handmod.hand_forward(hand_model, target_params)
    hand_patches = geo.group_patches(geo.PointCloud(target.vertices),
                                     config.g_h, config.s_h,
                                     derive_seed(seed, "hand-patches"))
    return TrainSample(patches=patches, region=region, target=target,
                       hand_patches=hand_patches)


def cvae_loss(params: dict, config: mdl.ModelConfig, hand_model,
              sample: TrainSample, z_seed: int):
    """Posterior path: full forward to the training loss."""
    obj = mdl.o_enc(params, mdl.patch_embed(params, "embed.obj.",
                                            sample.patches, config), config)
    mask = np.ones(sample.patches.g) if config.ablate_condition_mask \
        else sample.region.mask
    z_c = mdl.condition_region_encode(params, obj, mask, config)
    ht = mdl.h_enc(params, mdl.patch_embed(params, "embed.hand.",
                                           sample.hand_patches, config), config)
    f_i = mdl.hoi_encode(params, ht, obj, config)
    post = mdl.vae_encode(params, f_i, z_c, config)
    z = mdl.reparameterize(post, z_seed)
    theta = mdl.vae_decode(params, z, z_c)
    verts = handmod.skin_vertices(hand_model, theta)
    recon = handmod.HandMesh(vertices=verts,
                             edges=handmod.edge_vectors(verts, hand_model))
    return mdl.loss_train(recon, sample.target, post, config)


def train_cvae(params: dict, config: mdl.ModelConfig, hand_model,
               samples: list, epochs: int, seed: int,
               lr: float | None = None, log_fn=None):
    """Single-threaded per-sample optimization with cosine LR decay.

    Returns per-epoch records dict(epoch, train_loss, wall_ms).
    """
    if not samples:
        raise ValueError("training set is empty")
    lr = config.lr if lr is None else lr
    opt = AdamW(params, lr=lr)
    total_steps = epochs * len(samples)
    records = []
    step = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        perm = rng_for(seed, f"order-{epoch}").permutation(len(samples))
        epoch_loss = 0.0
        for idx in perm:
            opt.zero_grad()
            with ad.Tape():
                loss = cvae_loss(params, config, hand_model, samples[idx],
                                 derive_seed(seed, f"z-{epoch}-{idx}"))
                ad.backward(loss)
            val = loss.item()
            if not np.isfinite(val):
                raise NumericFailure(
                    f"non-finite training loss at epoch {epoch}, sample {idx}")
            epoch_loss += val
            opt.step(lr=cosine_lr(step, total_steps, lr))
            step += 1
        rec = {"epoch": epoch, "train_loss": epoch_loss / len(samples),
               "wall_ms": (time.perf_counter() - t0) * 1e3}
        records.append(rec)
        if log_fn:
            log_fn(rec)
    return records


def eval_cvae_loss(params: dict, config: mdl.ModelConfig, hand_model,
                   samples: list, seed: int) -> float:
    """Deterministic mean training loss (fixed per-sample z seeds); used for
    the checkpoint reload-replay check."""
    total = 0.0
    for i, sample in enumerate(samples):
        loss = cvae_loss(params, config, hand_model, sample,
                         derive_seed(seed, f"replay-{i}"))
        total += loss.item()
    return total / len(samples)
