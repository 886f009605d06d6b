"""Command-line entry point.

Subcommands: synth, pretrain, train, generate, evaluate. A single --seed
fans out to per-component streams via the documented (seed, tag) splitting
rule. Config precedence: built-in defaults < --config file (JSON object or
key=value lines) < explicit flags. The effective config is serialized next
to every run's outputs.

Exit codes: 0 ok, 2 usage, 3 data/corruption, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import hand as handmod
from . import metrics as met
from . import model as mdl
from . import synthdata as sd
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .meshio import load_obj, save_obj
from .pretrain import NumericFailure, pretrain_run
from .seeding import derive_seed
from .simulation import SimConfig, SimulationError
from .training import eval_cvae_loss, prepare_sample, train_cvae


def _threads() -> int:
    """Worker-parallelism cap from RGK_THREADS (modules are currently
    single-threaded; the cap is plumbing for their concurrency contracts)."""
    raw = os.environ.get("RGK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RGK_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError("RGK_THREADS must be >= 1")
    return n


def _load_config_file(path) -> dict:
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"bad config line (want key=value): {line!r}")
        try:
            out[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError:
            out[key.strip()] = value.strip()
    return out


def _model_config(args, extra_overrides=None) -> mdl.ModelConfig:
    base = mdl.ModelConfig().to_dict()
    if getattr(args, "config", None):
        base.update(_load_config_file(args.config))
    if extra_overrides:
        base.update(extra_overrides)
    return mdl.ModelConfig.from_dict(base)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _append_jsonl(path, record) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text())


def _manifest_objects(data_dir, manifest, split=None) -> list:
    seen = {}
    for rec in manifest["samples"]:
        if split and rec["split"] != split:
            continue
        seen.setdefault(rec["object_index"], rec["object_file"])
    return [(oi, load_obj(Path(data_dir) / f)) for oi, f in sorted(seen.items())]


def _digest(seed: int) -> str:
    return hashlib.sha256(f"rgk-seed-{seed}".encode()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = Path(args.out)
    log = out / "synth_log.jsonl"
    out.mkdir(parents=True, exist_ok=True)
    log.unlink(missing_ok=True)
    sd.build_dataset(args.objects, args.grasps, args.seed, out,
                     log_fn=lambda rec: _append_jsonl(log, rec))
    return 0


def cmd_pretrain(args) -> int:
    config = _model_config(args, {"mask_ratio": args.mask_ratio,
                                  "lr": args.lr})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(args.data)
    objects = _manifest_objects(args.data, manifest, split="train") or \
        _manifest_objects(args.data, manifest)
    clouds = [geo.resample_mesh(obj, config.n, derive_seed(args.seed, f"cloud-{oi}"))
              for oi, obj in objects]
    log = out / "log.jsonl"
    log.unlink(missing_ok=True)
    params, records, init_heldout = pretrain_run(
        clouds, config, args.seed, args.epochs,
        log_fn=lambda rec: _append_jsonl(log, rec))
    save_checkpoint(out / "oenc.ckpt", {k: p.data for k, p in params.items()},
                    config=config.to_dict(), rng_digest=_digest(args.seed))
    _write_json(out / "config.json", config.to_dict())
    _write_json(out / "summary.json",
                {"init_heldout_loss": init_heldout,
                 "final_heldout_loss": records[-1]["heldout_loss"],
                 "epochs": args.epochs, "seed": args.seed})
    return 0


def _train_samples(args, config, hand_model):
    manifest = _load_manifest(args.data)
    data_dir = Path(args.data)
    meshes = {}
    samples = []
    for i, rec in enumerate(r for r in manifest["samples"]
                            if r["split"] == "train"):
        oi = rec["object_index"]
        if oi not in meshes:
            obj = load_obj(data_dir / rec["object_file"])
            cloud = geo.resample_mesh(obj, config.n,
                                      derive_seed(args.seed, f"cloud-{oi}"))
            patches = geo.group_patches(cloud, config.g, config.s,
                                        derive_seed(args.seed, f"patch-{oi}"))
            meshes[oi] = patches
        patches = meshes[oi]
        region = geo.select_condition_region(patches, rec["region_center"],
                                             config.r)
        params = sd.load_hand_params(data_dir / rec["params_file"])
        samples.append(prepare_sample(None, region, params, hand_model, config,
                                      derive_seed(args.seed, f"sample-{i}"),
                                      patches=patches))
    return samples


def cmd_train(args) -> int:
    overrides = {"lr": args.lr} if args.lr is not None else {}
    if args.ablate_condition_mask:
        overrides["ablate_condition_mask"] = True
    config = _model_config(args, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hand_model = handmod.load_hand_model()
    samples = _train_samples(args, config, hand_model)
    params = mdl.init_model_params(config, args.seed)
    if args.init_oenc:
        ck = load_checkpoint(args.init_oenc)
        moved = mdl.transfer_oenc_weights(params, ck.arrays)
        if not moved:
            raise CheckpointError(f"{args.init_oenc}: no transferable "
                                  "object-encoder entries")
    log = out / "log.jsonl"
    log.unlink(missing_ok=True)
    train_cvae(params, config, hand_model, samples, args.epochs, args.seed,
               log_fn=lambda rec: _append_jsonl(log, rec))
    ckpt_path = out / "model.ckpt"
    save_checkpoint(ckpt_path, {k: p.data for k, p in params.items()},
                    config=config.to_dict(), rng_digest=_digest(args.seed))
    # the logged final loss is recomputed from the quantized stored weights
    # so a reload replays it exactly
    ck = load_checkpoint(ckpt_path)
    replay = {k: mdl.ad.Tensor(v, requires_grad=False)
              for k, v in ck.arrays.items()}
    final_loss = eval_cvae_loss(replay, config, hand_model, samples, args.seed)
    _write_json(out / "config.json", config.to_dict())
    _write_json(out / "summary.json",
                {"final_loss": final_loss, "epochs": args.epochs,
                 "seed": args.seed, "n_samples": len(samples),
                 "init_oenc": bool(args.init_oenc)})
    return 0


def cmd_generate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    config = mdl.ModelConfig.from_dict(ck.config)
    params = {k: mdl.ad.Tensor(v, requires_grad=False)
              for k, v in ck.arrays.items()}
    hand_model = handmod.load_hand_model()
    obj = load_obj(args.object)
    cloud = geo.resample_mesh(obj, config.n, derive_seed(args.seed, "cloud"))
    patches = geo.group_patches(cloud, config.g, config.s,
                                derive_seed(args.seed, "patches"))
    if args.center is not None:
        center = np.array([float(t) for t in args.center.split(",")])
        if center.shape != (3,):
            raise ValueError("--center must be x,y,z")
    elif args.point_index is not None:
        if not 0 <= args.point_index < config.n:
            raise ValueError(f"--point-index out of range [0, {config.n})")
        center = cloud.points[args.point_index]
    else:
        raise ValueError("one of --center or --point-index is required")
    r = args.r if args.r is not None else config.r
    region = geo.select_condition_region(patches, center, r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# hand params v1 (multi-record)"]
    for si in range(args.samples):
        sample = mdl.generate(params, config, hand_model, patches, region,
                              derive_seed(args.seed, f"gen-{si}"))
        mesh = geo.TriMesh(vertices=sample.mesh.vertices, faces=hand_model.faces)
        save_obj(out / f"hand_{si:03d}.obj", mesh)
        vec = sample.params
        lines += [f"sample: {si}",
                  "global_rot: " + " ".join(repr(float(x)) for x in vec.global_rot),
                  "transl: " + " ".join(repr(float(x)) for x in vec.transl),
                  "joint_rot: " + " ".join(repr(float(x))
                                           for x in vec.joint_rot.reshape(-1))]
    (out / "params.txt").write_text("\n".join(lines) + "\n")
    _write_json(out / "config.json",
                {"model": config.to_dict(), "seed": args.seed, "r": r,
                 "center": center.tolist(), "samples": args.samples})
    return 0


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    config = mdl.ModelConfig.from_dict(ck.config)
    params = {k: mdl.ad.Tensor(v, requires_grad=False)
              for k, v in ck.arrays.items()}
    hand_model = handmod.load_hand_model()
    manifest = _load_manifest(args.data)
    objects = _manifest_objects(args.data, manifest, split="test") or \
        _manifest_objects(args.data, manifest)
    if args.objects is not None:
        objects = objects[:args.objects]
    if not objects:
        raise FileNotFoundError("no objects to evaluate")
    sim = SimConfig() if args.sim else None
    report = met.evaluate(params, config, hand_model,
                          [m for _, m in objects], args.seed,
                          n_regions=args.regions, n_samples=args.samples,
                          sim=sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    (out / "report.csv").write_text(met.report_to_csv(report))
    _write_json(out / "config.json", config.to_dict())
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="regiongrasp",
                                  description=__doc__.split("\n")[0])
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--objects", type=int, required=True)
    p.add_argument("--grasps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="mask-autoencode the object encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.6)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the grasp CVAE")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--init-oenc")
    p.add_argument("--ablate-condition-mask", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample grasps for a region")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--center")
    p.add_argument("--point-index", type=int)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="run the metric suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--regions", type=int, default=5)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--sim", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads()
        return args.func(args)
    except (NumericFailure, SimulationError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except (FileNotFoundError, CheckpointError, json.JSONDecodeError,
            sd.GraspRejected) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
