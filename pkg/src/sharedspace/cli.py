"""Command-line surface: gen-data, train, eval, infer.

Every command resolves its full configuration (preset -> config file ->
--set overrides), echoes it to <outdir>/run_config.json before doing any
work, and exits with a stable code: 0 success, 2 usage/config error,
3 I/O error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .datagen import (
    REAL_PROXY,
    CameraRig,
    DatasetConfig,
    StyleParams,
    build_dataset,
    load_manifest,
    read_png,
    write_f32,
    write_png,
)
from .exceptions import ConfigurationError, DataIOError, TrainingDiverged
from .losses import LossWeights
from .metrics import compare_runs, report_from_json, report_to_json
from .networks import CriticConfig, GeneratorConfig, TaskConfig, load_checkpoint, save_checkpoint
from .presets import preset_config
from .trainer import (
    ToyData,
    TrainConfig,
    evaluate_depth_model,
    evaluate_sfs_model,
    pretrain_generator,
    pretrain_task,
    select_best,
    train_joint,
)
from .viz import depth_to_falsecolor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def default_out_root() -> Path:
    return Path(os.environ.get("SHARINGAN_OUT", "runs"))


# ---------------------------------------------------------------------------
# RunConfig resolution (flat dotted keys)


def _parse_set(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def resolve_run_config(args) -> dict:
    cfg = preset_config(args.preset, args.task)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            overrides = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigurationError(f"config file {path} must hold a flat JSON object")
        cfg.update(overrides)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key] = _parse_set(value)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    cfg["preset"] = args.preset
    cfg["task"] = args.task
    if getattr(args, "data_root", None):
        cfg["data.root"] = args.data_root
    return cfg


def _echo_run_config(cfg: dict, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "run_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))


def _rig_from(cfg: dict) -> CameraRig:
    if cfg["task"] == "sfs":
        res = int(cfg["face.resolution"])
        return CameraRig(focal_px=50.0, baseline_m=0.54, width=max(res, 16),
                         height=max(res, 16))
    return CameraRig(
        focal_px=float(cfg["rig.focal_px"]),
        baseline_m=float(cfg["rig.baseline_m"]),
        width=int(cfg["rig.width"]),
        height=int(cfg["rig.height"]),
        camera_height_m=float(cfg["rig.camera_height_m"]),
    )


def style_params_from(cfg: dict) -> StyleParams:
    base = StyleParams()
    kwargs = {}
    for field in ("texture_amp", "light_azimuth_shift_deg", "light_jitter_deg",
                  "ambient_scale", "diffuse_scale", "noise_sigma"):
        key = f"style.{field}"
        kwargs[field] = float(cfg[key]) if key in cfg else getattr(base, field)
    if "style.gamma_range" in cfg:
        kwargs["gamma_range"] = tuple(float(g) for g in cfg["style.gamma_range"])
    return StyleParams(**kwargs)


def dataset_config_from(cfg: dict, overwrite: bool = False) -> DatasetConfig:
    if "data.root" not in cfg:
        raise ConfigurationError("config must provide data.root")
    return DatasetConfig(
        root=str(cfg["data.root"]),
        kind=cfg["data.kind"],
        train_per_domain=int(cfg["data.train_per_domain"]),
        val_per_domain=int(cfg["data.val_per_domain"]),
        test_per_domain=int(cfg["data.test_per_domain"]),
        seed=int(cfg["seed"]),
        rig=_rig_from(cfg),
        style=style_params_from(cfg),
        face_resolution=int(cfg.get("face.resolution", 64)),
        overwrite=overwrite,
    )


def loss_weights_from(cfg: dict) -> LossWeights:
    base = LossWeights.mde_defaults() if cfg["task"] == "depth" else LossWeights.fne_defaults()
    kwargs = {}
    for field in ("lambda_gp", "eta", "mu", "beta1", "beta2", "beta3",
                  "alpha1", "alpha2", "alpha3",
                  "sfs_recon", "sfs_normal", "sfs_albedo", "sfs_light"):
        key = f"loss.{field}"
        kwargs[field] = float(cfg[key]) if key in cfg else getattr(base, field)
    return LossWeights(**kwargs)


def train_config_from(cfg: dict, checkpoint_dir: Path, ablation: str = "none",
                      float64: bool = False) -> TrainConfig:
    task = cfg["task"]
    if task == "sfs":
        hw = (int(cfg["face.resolution"]), int(cfg["face.resolution"]))
    else:
        hw = (int(cfg["rig.height"]), int(cfg["rig.width"]))
    gen_config = GeneratorConfig(
        base_width=int(cfg["model.gen_base_width"]),
        n_res_blocks=int(cfg["model.gen_res_blocks"]),
    )
    critic_config = CriticConfig(
        stage_widths=tuple(int(w) for w in cfg["model.critic_widths"]),
        k_extra=int(cfg["model.critic_k"]),
        use_batchnorm=bool(cfg["model.critic_batchnorm"]),
        input_hw=hw,
    )
    if task == "depth":
        task_config = TaskConfig(
            variant="depth",
            base_width=int(cfg["model.task_width"]),
            encoder_depth=int(cfg["model.task_encoder_depth"]),
            d_min=float(cfg["model.d_min"]),
            d_max=float(cfg["model.d_max"]),
        )
    else:
        task_config = TaskConfig(
            variant="sfs",
            base_width=int(cfg["model.task_width"]),
            encoder_depth=int(cfg["model.task_encoder_depth"]),
        )
    return TrainConfig(
        task_variant=task,
        g_pretrain_iterations=int(cfg["train.g_pretrain_iterations"]),
        t_pretrain_iterations=int(cfg["train.t_pretrain_iterations"]),
        joint_iterations=int(cfg["train.joint_iterations"]),
        batch_size=int(cfg["train.batch_size"]),
        lr_pretrain=float(cfg["train.lr_pretrain"]),
        lr_joint=float(cfg["train.lr_joint"]),
        lr_critic=float(cfg["train.lr_critic"]),
        n_critic=int(cfg["train.n_critic"]),
        critic_inner_repeats=int(cfg["train.critic_inner_repeats"]),
        gen_steps_per_critic_cycle=int(cfg["train.gen_steps_per_critic_cycle"]),
        seed=int(cfg["seed"]),
        val_interval=int(cfg["train.val_interval"]),
        checkpoint_dir=str(checkpoint_dir),
        weights=loss_weights_from(cfg),
        gen_config=gen_config,
        critic_config=critic_config,
        task_config=task_config,
        ablation=ablation,
        eval_cap_m=float(cfg.get("eval.cap_m", 80.0)),
        eval_min_m=float(cfg.get("eval.min_m", 1e-3)),
        float64=float64,
    )


def _load_data(cfg: dict) -> ToyData:
    root = cfg.get("data.root")
    if not root or not (Path(root) / "manifest.json").exists():
        raise ConfigurationError(
            f"dataset not found at {root!r}; run gen-data first or pass --data-root")
    return ToyData(root)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(args) -> int:
    cfg = resolve_run_config(args)
    dconfig = dataset_config_from(cfg, overwrite=args.force)
    _echo_run_config(cfg, Path(dconfig.root))
    manifest = build_dataset(dconfig)
    sizes = manifest.split_sizes[REAL_PROXY]
    print(f"dataset written to {dconfig.root}")
    print(f"  kind={manifest.kind} samples={len(manifest.entries)} "
          f"per-domain splits train={sizes['train']} val={sizes['val']} test={sizes['test']}")
    return EXIT_OK


def _stage_list(stage: str, ablation: str):
    if stage != "all":
        return [stage]
    if ablation == "no-sharingan":
        return ["pretrain-t", "joint"]  # no generator to pretrain
    return ["pretrain-g", "pretrain-t", "joint"]


def cmd_train(args) -> int:
    cfg = resolve_run_config(args)
    outdir = Path(args.out) if args.out else (
        default_out_root() / f"{cfg['task']}_{args.preset}_{args.ablation}_seed{cfg['seed']}")
    cfg["out_dir"] = str(outdir)
    cfg["ablation"] = args.ablation
    _echo_run_config(cfg, outdir)
    data = _load_data(cfg)
    expected_kind = "stereo" if cfg["task"] == "depth" else "face"
    if data.kind != expected_kind:
        raise ConfigurationError(
            f"task {cfg['task']} needs a {expected_kind} dataset, found {data.kind}")
    tconfig = train_config_from(cfg, outdir / "joint", ablation=args.ablation,
                                float64=args.float64)

    lock = outdir / ".lock"
    if lock.exists():
        print(f"warning: {lock} exists; another run may be using this directory",
              file=sys.stderr)
    lock.write_text(str(os.getpid()))
    try:
        bundle = None
        for stage in _stage_list(args.stage, args.ablation):
            if stage == "pretrain-g":
                print(f"[stage pretrain-g] {tconfig.g_pretrain_iterations} iterations")
                bundle = pretrain_generator(data, tconfig)
                save_checkpoint(bundle, outdir / "pretrain_g")
            elif stage == "pretrain-t":
                if bundle is None and (outdir / "pretrain_g.pt").exists():
                    bundle = load_checkpoint(outdir / "pretrain_g")
                print(f"[stage pretrain-t] {tconfig.t_pretrain_iterations} iterations")
                bundle = pretrain_task(data, tconfig, init=bundle)
                save_checkpoint(bundle, outdir / "pretrain_t")
            elif stage == "joint":
                if bundle is None:
                    if not (outdir / "pretrain_t.pt").exists():
                        raise ConfigurationError(
                            "joint stage needs pretrain-t first (or --stage all)")
                    bundle = load_checkpoint(outdir / "pretrain_t")
                print(f"[stage joint] {tconfig.joint_iterations} iterations "
                      f"(ablation={args.ablation})")
                resume = args.resume if args.resume else None
                state = train_joint(data, bundle, tconfig, resume_from=resume)
                best = select_best(state)
                (outdir / "best.json").write_text(json.dumps({
                    "checkpoint": best,
                    "metric": state.best_metric,
                    "iteration": state.best_iteration,
                }, indent=1))
                print(f"best checkpoint: {best} (val metric {state.best_metric:.4f} "
                      f"@ iter {state.best_iteration})")
            else:
                raise ConfigurationError(f"unknown stage {stage!r}")
    finally:
        lock.unlink(missing_ok=True)
    return EXIT_OK


def _load_bundle_for(args):
    ckpt = Path(args.checkpoint)
    if ckpt.suffix == ".pt":
        ckpt = ckpt.with_suffix("")
    if not ckpt.with_suffix(".pt").exists():
        raise ConfigurationError(f"checkpoint not found: {ckpt}.pt")
    return load_checkpoint(ckpt)


def cmd_eval(args) -> int:
    bundle = _load_bundle_for(args)
    data = ToyData(args.data_root) if args.data_root else None
    if data is None:
        raise ConfigurationError("eval needs --data-root")
    variant = bundle.task_config.variant
    expected_kind = "stereo" if variant == "depth" else "face"
    if data.kind != expected_kind:
        raise ConfigurationError(
            f"{variant} checkpoint cannot be evaluated on a {data.kind} dataset")
    if args.raw:
        bundle.generator = None
    outdir = Path(args.out).parent if args.out else Path(args.checkpoint).parent
    _echo_run_config({"command": "eval", "checkpoint": str(args.checkpoint),
                      "domain": args.domain, "split": args.split,
                      "cap": args.cap, "min_depth": args.min_depth,
                      "raw": args.raw}, outdir)
    if variant == "depth":
        report = evaluate_depth_model(bundle, data, domain=args.domain, split=args.split,
                                      cap_m=args.cap, min_m=args.min_depth)
    else:
        report = evaluate_sfs_model(bundle, data, domain=args.domain, split=args.split)
    text = report_to_json(report, extra={"domain": args.domain, "split": args.split})
    out_path = Path(args.out) if args.out else outdir / f"eval_{args.domain}_{args.split}.json"
    out_path.write_text(text)
    print(text)
    if args.compare:
        baseline = report_from_json(Path(args.compare).read_text())
        deltas = compare_runs(baseline, report)
        delta_path = out_path.with_name(out_path.stem + "_vs_baseline.json")
        delta_path.write_text(json.dumps(deltas, indent=1))
        print("delta vs baseline:")
        for key, d in deltas.items():
            pct = "n/a" if d["pct_change"] is None else f"{d['pct_change']:+.1f}%"
            print(f"  {key}: {d['diff']:+.4f} ({pct})")
    return EXIT_OK


def _infer_inputs(path: Path):
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise ConfigurationError(f"no .png inputs in {path}")
        return files
    if not path.exists():
        raise ConfigurationError(f"input not found: {path}")
    return [path]


def cmd_infer(args) -> int:
    bundle = _load_bundle_for(args)
    outdir = Path(args.out)
    _echo_run_config({"command": "infer", "checkpoint": str(args.checkpoint),
                      "input": str(args.input), "show_shared": args.show_shared},
                     outdir)
    variant = bundle.task_config.variant
    for path in _infer_inputs(Path(args.input)):
        try:
            img = read_png(path)
        except DataIOError as exc:
            raise ConfigurationError(f"unreadable input {path}: {exc}") from exc
        if img.ndim != 3 or img.shape[2] < 3:
            raise ConfigurationError(f"{path} is not an RGB image")
        img = img[:, :, :3]
        x = torch.from_numpy(img.transpose(2, 0, 1))[None].float()
        stem = outdir / path.stem
        with torch.no_grad():
            shared = bundle.generator(x) if bundle.generator is not None else x
            if variant == "depth":
                rig_here = CameraRig(focal_px=args.focal, baseline_m=args.baseline,
                                     width=max(img.shape[1], 16), height=max(img.shape[0], 16))
                depth = bundle.task(shared, rig_here)[0, 0].numpy()
                vmin, vmax = float(depth.min()), float(depth.max())
                write_f32(f"{stem}_depth.f32", depth)
                write_png(f"{stem}_depth.png",
                          depth_to_falsecolor(depth, vmin, vmax).astype(np.float32) / 255.0)
                Path(f"{stem}_depth.json").write_text(
                    json.dumps({"vmin": vmin, "vmax": vmax}, indent=1))
            else:
                normals, albedo, light = bundle.task(shared)
                n = normals[0].permute(1, 2, 0).numpy()
                write_f32(f"{stem}_normal.f32", n)
                write_png(f"{stem}_normal.png", (n + 1.0) / 2.0)
                write_png(f"{stem}_albedo.png", albedo[0].permute(1, 2, 0).numpy())
                write_f32(f"{stem}_light.f32", light[0].numpy())
            if args.show_shared and bundle.generator is not None:
                shared_img = shared[0].permute(1, 2, 0).numpy()
                write_png(f"{stem}_shared.png", np.clip(shared_img, 0.0, 1.0))
                write_png(f"{stem}_diff.png",
                          np.clip(np.abs(shared_img - img), 0.0, 1.0))
        print(f"wrote outputs for {path.name} to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sharedspace",
        description="Shared-domain adaptation for monocular geometry estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--task", choices=["depth", "sfs"], default="depth")
        p.add_argument("--preset", choices=["desk", "accept", "smoke"], default="desk")
        p.add_argument("--config", help="JSON file of flat dotted-key overrides")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--data-root", dest="data_root", help="dataset root directory")

    p = sub.add_parser("gen-data", help="render and persist the two-domain dataset")
    add_common(p)
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run pretraining and joint training stages")
    add_common(p)
    p.add_argument("--stage", choices=["pretrain-g", "pretrain-t", "joint", "all"],
                   default="all")
    p.add_argument("--ablation", choices=["none", "no-recon", "no-sharingan"],
                   default="none")
    p.add_argument("--out", help="output directory (default under $SHARINGAN_OUT)")
    p.add_argument("--resume", help="resume_state.pt to continue a joint run")
    p.add_argument("--float64", action="store_true",
                   help="train in float64 (bitwise-reproducible mode)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write an EvalReport")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", dest="data_root", required=True)
    p.add_argument("--domain", default=REAL_PROXY)
    p.add_argument("--split", default="test")
    p.add_argument("--cap", type=float, default=80.0)
    p.add_argument("--min-depth", dest="min_depth", type=float, default=1e-3)
    p.add_argument("--raw", action="store_true",
                   help="feed raw images to the task network (skip the generator)")
    p.add_argument("--out", help="report path (JSON)")
    p.add_argument("--compare", help="baseline report to diff against")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict depth or normals for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input image or directory of .png")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--show-shared", dest="show_shared", action="store_true",
                   help="also write the shared-domain image and |G(x) - x|")
    p.add_argument("--focal", type=float, default=100.0,
                   help="focal length in px for disparity-to-depth conversion")
    p.add_argument("--baseline", type=float, default=0.54)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
