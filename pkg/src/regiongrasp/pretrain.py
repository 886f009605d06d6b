"""Mask-autoencoding pretraining of the object encoder.

A random subset of point patches is masked off; the encoder sees only the
visible tokens, and a shallower decoder (visible tokens + learned mask
tokens carrying the masked centers' positional embeddings) regresses the
masked patch coordinates under a per-patch symmetric Chamfer objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import model as mdl
from .optim import AdamW, cosine_lr
from .seeding import derive_seed, rng_for


class NumericFailure(RuntimeError):
    """Non-finite loss encountered during optimization."""


@dataclass
class MaskSplit:
    """Disjoint visible/masked partition of a patch set."""

    visible_ids: np.ndarray
    masked_ids: np.ndarray
    visible: geo.PatchSet      # P_v
    masked: geo.PatchSet       # P_m
    ratio: float               # applied r_m

    def __post_init__(self):
        union = np.sort(np.concatenate([self.visible_ids, self.masked_ids]))
        if not np.array_equal(union, np.arange(len(union))):
            raise ValueError("visible/masked ids must partition the patch index range")


def mask_patches(patches: geo.PatchSet, r_m: float, seed: int) -> MaskSplit:
    """Uniformly random masked subset of size round(r_m * G), half-up."""
    if not 0.0 < r_m < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {r_m}")
    g = patches.g
    n_masked = int(np.floor(r_m * g + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g)
    masked = np.sort(perm[:n_masked])
    visible = np.sort(perm[n_masked:])

    def subset(ids):
        return geo.PatchSet(centers=patches.centers[ids],
                            patches=patches.patches[ids],
                            center_indices=patches.center_indices[ids],
                            member_indices=patches.member_indices[ids])

    return MaskSplit(visible_ids=visible, masked_ids=masked,
                     visible=subset(visible), masked=subset(masked), ratio=r_m)


def mae_forward(params: dict, split: MaskSplit, config: mdl.ModelConfig) -> ad.Tensor:
    """Predict masked patch coordinates (center-relative), (n_masked, S, 3)."""
    enc = mdl.o_enc(params, mdl.patch_embed(params, "embed.obj.", split.visible, config),
                    config)
    n_vis = len(split.visible_ids)
    n_mask = len(split.masked_ids)
    pos = ad.add(ad.matmul(ad.Tensor(split.masked.centers), params["dec.pos.w"]),
                 params["dec.pos.b"])
    mask_tok = ad.add(pos, params["dec.mask_token"])
    x = ad.concat([enc.tokens, mask_tok], axis=0)
    for i in range(config.b_dec):
        x = mdl._transformer_block(params, f"dec.{i}.", x, config)
    masked_out = ad.narrow(x, 0, n_vis, n_mask)
    pred = ad.add(ad.matmul(masked_out, params["dec.head.w"]), params["dec.head.b"])
    return ad.reshape(pred, (n_mask, config.s, 3))


def loss_pretrain(pred: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    """Per-patch symmetric Chamfer in center-relative coordinates, averaged
    over the masked patches."""
    if pred.shape[0] != target.shape[0]:
        raise ValueError(f"masked patch count mismatch: {pred.shape[0]} vs "
                         f"{target.shape[0]}")
    n = pred.shape[0]
    total = None
    for i in range(n):
        p = ad.reshape(ad.narrow(pred, 0, i, 1), pred.shape[1:])
        c = geo.chamfer_distance(p, ad.Tensor(target[i]))
        total = c if total is None else ad.add(total, c)
    return ad.mul(total, 1.0 / n)


def masked_chamfer(params: dict, patchsets: list, config: mdl.ModelConfig,
                   ratio: float, seed: int) -> float:
    """Mean masked-patch Chamfer over a set of objects with fixed seeded
    masks; the common evaluation protocol for comparing runs."""
    total = 0.0
    for i, ps in enumerate(patchsets):
        split = mask_patches(ps, ratio, derive_seed(seed, f"eval-mask-{i}"))
        pred = mae_forward(params, split, config)
        total += loss_pretrain(pred, split.masked.patches).item()
    return total / len(patchsets)


def pretrain_run(clouds: list, config: mdl.ModelConfig, seed: int,
                 epochs: int, lr: float | None = None,
                 heldout_frac: float = 0.1, log_fn=None):
    """Epochs of mask -> encode -> decode -> Chamfer -> AdamW step.

    Returns (params, records, init_heldout). ``records`` holds one entry per
    epoch: dict(epoch, train_loss, heldout_loss, wall_ms).
    """
    if not clouds:
        raise ValueError("pretrain dataset is empty")
    lr = config.lr if lr is None else lr
    patchsets = [geo.group_patches(c, config.g, config.s,
                                   derive_seed(seed, f"patch-{i}"))
                 for i, c in enumerate(clouds)]
    n_held = max(1, int(round(heldout_frac * len(patchsets)))) \
        if len(patchsets) > 1 else 0
    order = rng_for(seed, "split").permutation(len(patchsets))
    held = [patchsets[i] for i in order[:n_held]]
    train = [patchsets[i] for i in order[n_held:]]
    if not train:
        train, held = held, []

    params = mdl.init_pretrain_params(config, seed)
    opt = AdamW(params, lr=lr)
    total_steps = epochs * len(train)
    eval_ratio = config.mask_ratio
    init_heldout = masked_chamfer(params, held or train, config, eval_ratio, seed)

    records = []
    step = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        perm = rng_for(seed, f"order-{epoch}").permutation(len(train))
        epoch_loss = 0.0
        for idx in perm:
            split = mask_patches(train[idx], config.mask_ratio,
                                 derive_seed(seed, f"mask-{epoch}-{idx}"))
            opt.zero_grad()
            with ad.Tape():
                pred = mae_forward(params, split, config)
                loss = loss_pretrain(pred, split.masked.patches)
                ad.backward(loss)
            val = loss.item()
            if not np.isfinite(val):
                raise NumericFailure(
                    f"non-finite pretrain loss at epoch {epoch}, object {idx}")
            epoch_loss += val
            opt.step(lr=cosine_lr(step, total_steps, lr))
            step += 1
        rec = {"epoch": epoch,
               "train_loss": epoch_loss / len(train),
               "heldout_loss": masked_chamfer(params, held or train, config,
                                              eval_ratio, seed),
               "wall_ms": (time.perf_counter() - t0) * 1e3}
        records.append(rec)
        if log_fn:
            log_fn(rec)
    return params, records, init_heldout
