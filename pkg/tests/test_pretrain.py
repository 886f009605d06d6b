import numpy as np
import pytest

from regiongrasp import autodiff as ad
from regiongrasp import geometry as geo
from regiongrasp import model as mdl
from regiongrasp import pretrain as pre

CFG = mdl.toy_config()


def _patchset(seed, cfg=CFG):
    pts = np.random.default_rng(seed).uniform(-0.05, 0.05, (cfg.n, 3))
    return geo.group_patches(geo.PointCloud(pts), cfg.g, cfg.s, seed)


def test_mask_partition_and_count():
    ps = _patchset(0)
    for ratio, expect in [(0.6, 5), (0.2, 2), (0.8, 6), (0.5, 4)]:
        split = pre.mask_patches(ps, ratio, 3)
        assert len(split.masked_ids) == expect  # round(r*8), half-up
        union = np.sort(np.concatenate([split.visible_ids, split.masked_ids]))
        np.testing.assert_array_equal(union, np.arange(ps.g))
        assert len(np.intersect1d(split.visible_ids, split.masked_ids)) == 0


def test_mask_deterministic_and_validated():
    ps = _patchset(1)
    a = pre.mask_patches(ps, 0.6, 5)
    b = pre.mask_patches(ps, 0.6, 5)
    np.testing.assert_array_equal(a.masked_ids, b.masked_ids)
    assert not np.array_equal(a.masked_ids,
                              pre.mask_patches(ps, 0.6, 6).masked_ids)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            pre.mask_patches(ps, bad, 0)


def test_mae_forward_shape():
    params = mdl.init_pretrain_params(CFG, 0)
    split = pre.mask_patches(_patchset(2), 0.6, 0)
    out = pre.mae_forward(params, split, CFG)
    assert out.shape == (len(split.masked_ids), CFG.s, 3)


def test_loss_pretrain_zero_at_perfect_prediction():
    split = pre.mask_patches(_patchset(3), 0.6, 0)
    perfect = ad.Tensor(split.masked.patches)
    assert pre.loss_pretrain(perfect, split.masked.patches).item() < 1e-12
    wrong = ad.Tensor(split.masked.patches + 0.1)
    assert pre.loss_pretrain(wrong, split.masked.patches).item() > 0.0
    with pytest.raises(ValueError):
        pre.loss_pretrain(perfect, split.masked.patches[:-1])


def test_pretrain_run_learns_and_logs():
    clouds = [geo.PointCloud(np.random.default_rng(s).uniform(0, 0.1, (CFG.n, 3)))
              for s in range(8)]
    logged = []
    params, records, init_heldout = pre.pretrain_run(
        clouds, CFG, seed=0, epochs=4, log_fn=logged.append)
    assert len(records) == 4 and logged == records
    for i, rec in enumerate(records, start=1):
        assert rec["epoch"] == i
        assert set(rec) == {"epoch", "train_loss", "heldout_loss", "wall_ms"}
    assert records[-1]["heldout_loss"] < init_heldout
    assert all(np.all(np.isfinite(p.data)) for p in params.values())


def test_pretrain_run_deterministic():
    clouds = [geo.PointCloud(np.random.default_rng(s).uniform(0, 0.1, (CFG.n, 3)))
              for s in range(4)]
    p1, r1, _ = pre.pretrain_run(clouds, CFG, seed=5, epochs=2)
    p2, r2, _ = pre.pretrain_run(clouds, CFG, seed=5, epochs=2)
    for k in p1:
        np.testing.assert_array_equal(p1[k].data, p2[k].data)
    assert [r["train_loss"] for r in r1] == [r["train_loss"] for r in r2]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        pre.pretrain_run([], CFG, seed=0, epochs=1)
