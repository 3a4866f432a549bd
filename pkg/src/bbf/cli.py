"""Command-line entry point.

Subcommands: gen-data, train, interpolate, analyze-flow, evaluate, ablate.
Every command is deterministic given the resolved config and seed, writes
the resolved config (or argument echo) next to its outputs, and exits
nonzero with a one-line machine-parsable error on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import container, evalkit, synthdata
from .backbone import BlockConfig
from .config import RunConfig, config_to_dict, load_config, save_config
from .diffusion import InterpolationPipeline, TrainSchedule, smoothed_loss, train
from .flow_baseline import curvature_report, interpolate_classical, minimize_trajectory
from .latent_codec import LatentCodec, pretrain_codec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbf", description="Boundary-pinned video frame interpolation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    _add_config_args(p)
    p.add_argument("--out", help="dataset path (default: <out_dir>/dataset.bbft)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the interpolation model")
    _add_config_args(p)
    p.add_argument("--dataset", help="existing dataset file (default: generate)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpolate", help="sample in-between frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="take boundary frames/audio from this dataset")
    p.add_argument("--index", type=int, default=0, help="dataset sample index")
    p.add_argument("--start", help="start frame PNG (alternative to --dataset)")
    p.add_argument("--end", help="end frame PNG")
    p.add_argument("--caption", default=None)
    p.add_argument("--no-audio", action="store_true")
    p.add_argument("--frames", type=int, default=None, help="output frame count")
    p.add_argument("--steps", type=int, default=50, help="sampler steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("analyze-flow", help="curvature and baseline report")
    p.add_argument("dataset")
    p.add_argument("--smoothness", type=float, default=1.0)
    p.add_argument("--out", help="write the JSON report here too")
    p.set_defaults(func=cmd_analyze_flow)

    p = sub.add_parser("evaluate", help="metric table for a checkpoint")
    p.add_argument("--checkpoint", required=True, action="append",
                   help="may be given multiple times")
    p.add_argument("--dataset", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None, help="evaluate first N clips")
    p.add_argument("--out", help="write the JSON report here too")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare conditioning/schedule variants")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="run-config JSON path")
    p.add_argument("--config", dest="config_opt", help="run-config JSON path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")


def _resolve_config(args) -> RunConfig:
    path = args.config_opt or args.config
    cfg = load_config(path) if path else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    save_config(cfg, out_dir / "config.resolved.json")


def _echo_args(args, out_dir: Path) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_args.json", "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _generate(cfg: RunConfig):
    d = cfg.data
    return synthdata.generate_scenes(
        d.n_clips, cfg.seed, height=d.height, width=d.width, n_frames=d.n_frames,
        fps=d.fps, motion_kinds=d.motion_kinds, mouth_gain=d.mouth_gain,
    )


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(args.out) if args.out else out_dir / "dataset.bbft"
    scenes = _generate(cfg)
    manifest = synthdata.write_dataset(scenes, path)
    _echo_config(cfg, out_dir)
    print(f"wrote {manifest['count']} records to {path}")
    return 0


def _build_pipeline(cfg: RunConfig, scenes) -> InterpolationPipeline:
    codec = LatentCodec(
        mode=cfg.codec.mode, spatial_stride=cfg.codec.spatial_stride,
        temporal_stride=cfg.codec.temporal_stride, seed=cfg.seed,
    )
    if codec.mode == "learned":
        pretrain_codec(
            codec, [sc.clip for sc in scenes], steps=cfg.codec.pretrain_steps,
            lr=cfg.codec.pretrain_lr, seed=cfg.seed,
        )
    return InterpolationPipeline(cfg.model, codec, seed=cfg.seed)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)
    scenes = synthdata.read_dataset(args.dataset) if args.dataset else _generate(cfg)
    pipeline = _build_pipeline(cfg, scenes)
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w") as log_fh:
        def log_fn(record):
            log_fh.write(json.dumps(record) + "\n")
            if record["s"] % 100 == 0:
                print(f"step {record['s']} loss {record['loss']:.5f}", file=sys.stderr)

        history = train(
            pipeline, scenes, cfg.schedule, seed=cfg.seed,
            conditions=cfg.conditions, ckpt_dir=out_dir / "checkpoints",
            log_fn=log_fn,
        )
    first, last = smoothed_loss(history)
    print(f"trained {cfg.schedule.total_steps} steps; "
          f"smoothed loss {first:.5f} -> {last:.5f}")
    return 0


def _load_png(path) -> np.ndarray:
    from PIL import Image

    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def _save_png(frame: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(frame) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def cmd_interpolate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_args(args, out_dir)
    pipe = InterpolationPipeline.load(args.checkpoint)
    audio = None
    caption = args.caption or ""
    if args.dataset:
        scenes = synthdata.read_dataset(args.dataset)
        if not 0 <= args.index < len(scenes):
            raise ValueError(f"index {args.index} outside dataset of {len(scenes)}")
        sc = scenes[args.index]
        start, end = sc.clip.frames[0], sc.clip.frames[-1]
        audio = None if args.no_audio else sc.audio
        caption = sc.caption if args.caption is None else args.caption
        n_frames = args.frames or sc.clip.n_frames
        fps = sc.clip.fps
    elif args.start and args.end:
        start, end = _load_png(args.start), _load_png(args.end)
        n_frames = args.frames or 17
        fps = 16.0
    else:
        raise ValueError("provide either --dataset/--index or --start/--end")
    clip = pipe.sample(
        start, end, caption=caption, audio=audio, n_frames=n_frames,
        steps=args.steps, seed=args.seed, fps=fps,
        use_audio=audio is not None,
    )
    container.write_archive(
        out_dir / "clip.bbft", {"clip": clip.frames},
        {"kind": "bbf-clip", "fps": clip.fps},
    )
    for t in range(clip.n_frames):
        _save_png(clip.frames[t], out_dir / f"frame_{t:03d}.png")
    print(f"wrote {clip.n_frames} frames to {out_dir}")
    return 0


def cmd_analyze_flow(args) -> int:
    scenes = synthdata.read_dataset(args.dataset)
    per_scene = []
    for sc in scenes:
        spec = sc.spec
        steps = spec.n_frames - 1
        gt_max, gt_mean = curvature_report(sc.traj)
        p0, p_end = sc.traj.points[0], sc.traj.points[-1]
        mini = minimize_trajectory(
            p0, p_end, (p_end - p0) / steps, args.smoothness, steps
        )
        min_max, min_mean = curvature_report(mini)
        t_mid = steps // 2
        alpha = t_mid / steps
        f01, f10 = synthdata.flow_between(spec, 0, steps)
        pred = interpolate_classical(
            sc.clip.frames[0], sc.clip.frames[-1], f01, f10, alpha
        )
        valid = ~synthdata.interp_exclusion(spec, 0, steps, t_mid)
        base_psnr = evalkit.psnr_masked(
            pred[None], sc.clip.frames[t_mid][None], valid[None]
        )
        per_scene.append(
            {
                "motion_kind": spec.motion_kind,
                "gt_max_accel": gt_max,
                "gt_mean_accel": gt_mean,
                "minimized_max_accel": min_max,
                "minimized_mean_accel": min_mean,
                "baseline_mid_psnr_db": base_psnr,
            }
        )
    report = {
        "dataset": str(args.dataset),
        "smoothness": args.smoothness,
        "n_scenes": len(per_scene),
        "max_minimized_accel": max(s["minimized_max_accel"] for s in per_scene),
        "mean_baseline_psnr_db": float(
            np.mean([s["baseline_mid_psnr_db"] for s in per_scene])
        ),
        "scenes": per_scene,
    }
    text = json.dumps(report, indent=1)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_evaluate(args) -> int:
    scenes = synthdata.read_dataset(args.dataset)
    if args.limit is not None:
        scenes = scenes[: args.limit]
    rows = {}
    for ckpt in args.checkpoint:
        pipe = InterpolationPipeline.load(ckpt)
        reports = []
        for i, sc in enumerate(scenes):
            clip = pipe.sample(
                sc.clip.frames[0], sc.clip.frames[-1], caption=sc.caption,
                audio=sc.audio, n_frames=sc.clip.n_frames, steps=args.steps,
                seed=args.seed + i, fps=sc.clip.fps,
            )
            reports.append(evalkit.evaluate_clip(clip, sc.clip, sc.masks, sc.audio))
        rows[str(ckpt)] = {
            "status": "ok",
            "psnr_db": float(np.mean([r.psnr_db for r in reports])),
            "ssim": float(np.mean([r.ssim for r in reports])),
            "sync_r": float(np.mean([r.sync_r for r in reports])),
        }
    print(evalkit.format_table(rows))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, indent=1) + "\n")
    return 0


ABLATION_TARGETS = (
    ("staged_sync_best", ("staged", "fixed30", "sync_r"), ("staged", "fixed10", "sync_r")),
    ("audio_beats_text", ("audio_only", "text_only", "sync_r"), ("staged", "text_only", "sync_r")),
    ("text_audio_beats_audio", ("staged", "audio_only", "sync_r"),),
)


def run_ablation_suite(cfg: RunConfig, out_dir: Path) -> dict:
    """Train every variant for every seed, evaluate, and vote on orderings."""
    ab = cfg.ablation
    variants = {
        "staged": {"phases": ((0.5, 0.3), (0.5, 0.1)), "conditions": ("text", "image", "audio")},
        "fixed30": {"phases": ((1.0, 0.3),), "conditions": ("text", "image", "audio")},
        "fixed10": {"phases": ((1.0, 0.1),), "conditions": ("text", "image", "audio")},
        "text_only": {"phases": ((0.5, 0.3), (0.5, 0.1)), "conditions": ("text", "image")},
        "audio_only": {"phases": ((0.5, 0.3), (0.5, 0.1)), "conditions": ("image", "audio")},
    }
    model_cfg = BlockConfig(
        depth=ab.depth, d_model=ab.d_model, heads=ab.heads, d_cond=ab.d_cond,
        patch=cfg.model.patch,
    )
    scene_kwargs = dict(
        height=ab.height, width=ab.width, n_frames=ab.n_frames, fps=cfg.data.fps,
        motion_kinds=("linear",), face_size=ab.face_size,
        mouth_width=ab.mouth_width, speed=ab.ball_speed,
    )
    per_seed = {}
    for seed in ab.seeds:
        train_scenes = synthdata.generate_scenes(
            ab.n_train_clips, seed=cfg.seed + 1000 * seed + 1, **scene_kwargs
        )
        eval_scenes = synthdata.generate_scenes(
            ab.n_eval_clips, seed=cfg.seed + 1000 * seed + 2, **scene_kwargs
        )
        checkpoints = {}
        for name, v in variants.items():
            sched = TrainSchedule(
                total_steps=ab.total_steps, audio_mask_phases=v["phases"],
                lr=ab.lr, batch_size=ab.batch_size,
                lambda_lip=((0.0, 0.5), (1.0, ab.lambda_lip_end)),
                checkpoint_every=max(ab.total_steps, 1),
            )
            codec = LatentCodec(
                mode=cfg.codec.mode, spatial_stride=cfg.codec.spatial_stride,
                seed=cfg.seed,
            )
            pipe = InterpolationPipeline(model_cfg, codec, seed=seed)
            train(pipe, train_scenes, sched, seed=seed, conditions=v["conditions"])
            ckpt = out_dir / f"seed{seed}" / f"{name}.bbft"
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            pipe.save(ckpt, {"conditions": list(v["conditions"]), "variant": name})
            checkpoints[name] = ckpt
        per_seed[seed] = evalkit.run_ablation(
            checkpoints, eval_scenes, sampler_steps=ab.sampler_steps, seed=seed
        )
    verdicts = {}
    for entry in ABLATION_TARGETS:
        name, pairs = entry[0], entry[1:]
        votes = []
        for seed in ab.seeds:
            rows = per_seed[seed]["rows"]
            votes.append(all(rows[a][m] >= rows[b][m] for a, b, m in pairs))
        verdicts[name] = {
            "votes": votes,
            "majority": sum(votes) * 2 > len(votes),
        }
    return {"per_seed": {str(k): v for k, v in per_seed.items()}, "verdicts": verdicts}


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)
    result = run_ablation_suite(cfg, out_dir)
    for seed, table in result["per_seed"].items():
        print(f"seed {seed}")
        print(evalkit.format_table(table["rows"]))
    print(json.dumps(result["verdicts"], indent=1))
    with open(out_dir / "ablation_report.json", "w") as fh:
        json.dump(result, fh, indent=1, default=str)
        fh.write("\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
