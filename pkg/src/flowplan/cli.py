"""Command-line entry point.

Subcommands: gen-scene, train-diffusion, sample-video, plan, run-benchmark,
convert, inspect. Exit codes: 0 success, 1 domain error, 2 usage error.
Logs go to stderr (level from FLOWPLAN_LOG); machine output goes to stdout
or to the requested files. Every stochastic subcommand requires --seed, and
every JSON output echoes the run configuration that produced it.

A key=value config file can preset any long option; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, diffusion
from .benchmark import rows_to_csv, run_benchmark
from .errors import FlowPlanError
from .geometry import PartMask, RigidTransform
from .grasp import GraspCandidate
from .planner import EpisodeConfig, PlanConfig, plan
from .sceneflow import TrackSet
from .simulator import generate_scene, sample_scene
from . import io as fio

log = logging.getLogger("flowplan")


def _setup_logging():
    level = os.environ.get("FLOWPLAN_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_config_file(path):
    """TOML-style key=value lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _apply_config_file(args, subparser):
    """Fill options from the key=value file; explicitly passed flags win."""
    if getattr(args, "config", None):
        presets = _parse_config_file(args.config)
        for key, val in presets.items():
            if not hasattr(args, key):
                raise ValueError(f"unknown config key {key!r}")
            default = subparser.get_default(key)
            if getattr(args, key) == default:  # flag not given: preset applies
                caster = type(default) if default is not None else str
                if caster is bool:
                    setattr(args, key, val.lower() in ("1", "true", "yes"))
                elif caster is Path or default is None:
                    setattr(args, key, Path(val))
                else:
                    setattr(args, key, caster(val))
    return args


def _run_config_dict(args):
    skip = {"func", "config"}
    out = {}
    for key, val in sorted(vars(args).items()):
        if key in skip or callable(val):
            continue
        out[key] = str(val) if isinstance(val, Path) else val
    return out


def cmd_gen_scene(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = sample_scene(args.seed, width=args.width, height=args.height,
                         n_steps=args.steps)
    frames, gt = generate_scene(scene)

    fio.write_rgbdv(out / "frames.rgbdv", frames)
    for i, mask in enumerate(gt.masks):
        fio.write_mask_pgm(out / f"mask_{i:03d}.pgm", mask)
    fio.write_tracks(out / "frames.trks", gt.tracks.positions, gt.tracks.visible)
    fio.write_flow(out / "flow.sflw", gt.flow.displacements, gt.flow.valid)
    fio.write_manifest(out / "manifest.json", "frames.rgbdv", scene.intrinsics,
                       task="scripted part motion",
                       mask_file="mask_000.pgm", tracks_file="frames.trks",
                       extra={"run_config": _run_config_dict(args)})
    fio.write_json(out / "ground_truth.json", {
        "transforms": [fio.matrix_to_list(t.as_matrix()) for t in gt.transforms],
        "goal_pose": fio.matrix_to_list(gt.goal_pose.as_matrix()),
        "masks": [f"mask_{i:03d}.pgm" for i in range(len(gt.masks))],
        "tracks": "frames.trks",
        "flow": "flow.sflw",
        "run_config": _run_config_dict(args),
    })
    log.info("wrote scene with %d frames to %s", len(frames), out)
    return 0


def cmd_train_diffusion(args):
    items, config = diffusion.build_clip_dataset(args.clips, seed=args.seed,
                                                 height=args.size, width=args.size,
                                                 frames=args.frames)
    rng = np.random.default_rng(np.random.SeedSequence([0x7E41, args.seed]))
    params = diffusion.init_params(config, rng)
    schedule = diffusion.NoiseSchedule.linear(args.denoise_steps)
    losses = diffusion.train_model(params, config, items, schedule, rng,
                                   steps=args.steps, batch_size=args.batch_size,
                                   lr=args.lr, mode=args.mode,
                                   log=log.info)
    diffusion.save_model(args.out, config, params)
    fio.write_json(str(args.out) + ".meta.json", {
        "initial_loss": float(np.mean(losses[:10])),
        "final_smoothed_loss": float(np.mean(losses[-50:])),
        "steps": args.steps,
        "corruption_mode": args.mode,
        "denoise_steps": args.denoise_steps,
        "run_config": _run_config_dict(args),
    })
    log.info("trained %d steps; loss %.2f -> %.2f", args.steps,
             np.mean(losses[:10]), np.mean(losses[-50:]))
    return 0


def cmd_sample_video(args):
    config, params = diffusion.load_model(args.model)
    obs_frames = fio.read_rgbdv(args.obs)
    obs = diffusion.frame_channels(obs_frames[0], config.depth_min, config.depth_max)
    schedule = diffusion.NoiseSchedule.linear(args.denoise_steps)
    rng = np.random.default_rng(np.random.SeedSequence([0x5A3F, args.seed]))
    video = diffusion.sample_video(params, config, obs, args.task_id, schedule,
                                   rng, mode=args.mode)
    frames = diffusion.tensor_to_frames(video, config.depth_min, config.depth_max)
    fio.write_rgbdv(args.out, frames)
    fio.write_json(str(args.out) + ".meta.json", {
        "sampler_mode": args.mode,
        "task_id": args.task_id,
        "denoise_steps": args.denoise_steps,
        "run_config": _run_config_dict(args),
    })
    return 0


def _load_tracker(args, n_frames):
    if args.tracker == "blockmatch":
        return "blockmatch"
    if args.tracker == "external":
        if not args.tracks:
            raise FlowPlanError("--tracker external requires --tracks")
        positions, visible = fio.read_tracks(args.tracks)
        return TrackSet(positions, visible)
    if args.tracker == "oracle":
        tracks_path = args.tracks or Path(args.frames).with_suffix(".trks")
        if not Path(tracks_path).exists():
            raise FlowPlanError(
                f"oracle tracker needs the ground-truth track file {tracks_path} "
                f"(written by gen-scene) or an explicit --tracks")
        positions, visible = fio.read_tracks(tracks_path)
        return TrackSet(positions, visible)
    raise FlowPlanError(f"unknown tracker {args.tracker!r}")


def cmd_plan(args):
    from .geometry import CameraIntrinsics

    frames = fio.read_rgbdv(args.frames)
    mask = fio.read_mask_pgm(args.mask)
    doc = fio.read_json(args.intrinsics)  # plain dict or a manifest
    intr = CameraIntrinsics.from_dict(doc["intrinsics"] if "intrinsics" in doc else doc)

    candidates = None
    if args.grasp_candidates:
        candidates = [
            GraspCandidate(RigidTransform.from_matrix(fio.matrix_from_list(c["matrix"])),
                           c["width"], c["score"])
            for c in fio.read_json(args.grasp_candidates)
        ]
    config = PlanConfig(
        intrinsics=intr, robust=args.robust, seed=args.seed,
        max_width=args.max_width, voxel_size=args.voxel_size,
        external_candidates=candidates,
        block_window=args.block_window, block_radius=args.search_radius,
        zncc_threshold=args.zncc_threshold,
        dump_dir=Path(args.dump_intermediates) if args.dump_intermediates else None,
        mask_source=str(args.mask),
    )
    tracker = _load_tracker(args, len(frames))
    trajectory = plan(frames[0], mask, frames[1:], tracker, config)
    doc = trajectory.to_dict()
    doc["run_config"] = _run_config_dict(args)
    fio.write_json(args.out, doc)
    log.info("wrote trajectory with %d poses to %s", len(trajectory), args.out)
    return 0


def cmd_run_benchmark(args):
    episode_config = EpisodeConfig(
        max_replans=args.max_replans,
        tracker=args.tracker,
        track_noise_px=args.track_noise,
        robust=args.robust or args.track_noise > 0,
    )
    rows = run_benchmark(args.episodes, args.seed, n_steps=args.steps,
                         width=args.width, height=args.height,
                         episode_config=episode_config, threads=args.threads)
    csv_text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
        fio.write_json(str(args.out) + ".meta.json", {"run_config": _run_config_dict(args)})
    else:
        sys.stdout.write(csv_text)
    successes = sum(r["success"] for r in rows)
    log.info("benchmark: %d/%d episodes succeeded", successes, len(rows))
    return 0


def cmd_convert(args):
    src = Path(getattr(args, "in"))
    out = Path(args.out)
    if src.suffix == ".rgbdv":
        from PIL import Image

        frames = fio.read_rgbdv(src)
        out.mkdir(parents=True, exist_ok=True)
        for i, fr in enumerate(frames):
            h, w = fr.shape
            # float path: raw float32 bytes packed into an 8-bit grayscale
            # PNG row-for-row; lossless and bit-exact by construction
            rgb32 = fr.rgb.astype("<f4")
            d32 = fr.depth.astype("<f4")
            Image.frombytes("L", (w * 12, h), rgb32.tobytes()).save(out / f"frame_{i:03d}.rgb.f32.png")
            Image.frombytes("L", (w * 4, h), d32.tobytes()).save(out / f"frame_{i:03d}.depth.f32.png")
            Image.fromarray(np.where(fr.valid, 255, 0).astype(np.uint8), "L").save(
                out / f"frame_{i:03d}.valid.png")
            if args.allow_lossy:
                Image.fromarray((np.clip(fr.rgb, 0, 1) * 255).astype(np.uint8), "RGB").save(
                    out / f"frame_{i:03d}.rgb.png")
                dmax = fr.depth.max() or 1.0
                Image.fromarray((np.clip(fr.depth / dmax, 0, 1) * 255).astype(np.uint8), "L").save(
                    out / f"frame_{i:03d}.depth.png")
        fio.write_json(out / "convert.json", {
            "source": str(src), "frames": len(frames),
            "height": frames[0].shape[0], "width": frames[0].shape[1],
            "lossy_previews": bool(args.allow_lossy),
            "run_config": _run_config_dict(args),
        })
        return 0
    if src.is_dir():
        from PIL import Image
        from .geometry import RgbdFrame

        meta = fio.read_json(src / "convert.json")
        h, w = meta["height"], meta["width"]
        frames = []
        for i in range(meta["frames"]):
            rgb_img = Image.open(src / f"frame_{i:03d}.rgb.f32.png")
            rgb = np.frombuffer(rgb_img.tobytes(), dtype="<f4").reshape(h, w, 3)
            d_img = Image.open(src / f"frame_{i:03d}.depth.f32.png")
            depth = np.frombuffer(d_img.tobytes(), dtype="<f4").reshape(h, w)
            v_img = Image.open(src / f"frame_{i:03d}.valid.png")
            valid = np.asarray(v_img) > 0
            frames.append(RgbdFrame(rgb.astype(np.float64), depth.astype(np.float64), valid))
        fio.write_rgbdv(out, frames)
        return 0
    raise FlowPlanError(f"cannot convert {src}: expected an .rgbdv file or a converted directory")


def cmd_inspect(args):
    head = fio.binary_header(getattr(args, "in"))
    json.dump(head, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowplan",
        description="Scene-flow trajectory planning toolkit with a synthetic "
                    "RGBD simulator and a toy video diffusion model.")
    parser.add_argument("--version", action="version", version=f"flowplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = commands["gen-scene"] = sub.add_parser(
        "gen-scene", help="render a random scripted scene with ground truth")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_gen_scene)

    p = commands["train-diffusion"] = sub.add_parser("train-diffusion", help="train the toy RGBD video model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--denoise-steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--mode", choices=diffusion.MODES, default=diffusion.MODE_PER_STEP)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_train_diffusion)

    p = commands["sample-video"] = sub.add_parser("sample-video", help="sample a video from a trained model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--obs", type=Path, required=True, help="RGBDV file; frame 0 is the observation")
    p.add_argument("--task-id", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--denoise-steps", type=int, default=50)
    p.add_argument("--mode", choices=diffusion.MODES, default=diffusion.MODE_PER_STEP)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_sample_video)

    p = commands["plan"] = sub.add_parser("plan", help="solve an end-effector trajectory from frames and a mask")
    p.add_argument("--frames", type=Path, required=True, help="RGBDV file; frame 0 is the observation")
    p.add_argument("--mask", type=Path, required=True, help="PGM part mask for frame 0")
    p.add_argument("--intrinsics", type=Path, required=True, help="JSON with fx, fy, cx, cy, width, height")
    p.add_argument("--tracker", choices=("oracle", "blockmatch", "external"), default="blockmatch")
    p.add_argument("--tracks", type=Path, default=None, help="TRKS file for oracle/external trackers")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--robust", action="store_true")
    p.add_argument("--max-width", type=float, default=0.25)
    p.add_argument("--voxel-size", type=float, default=0.005)
    p.add_argument("--block-window", type=int, default=7,
                   help="block-match patch size (odd)")
    p.add_argument("--search-radius", type=int, default=8,
                   help="block-match search radius in pixels")
    p.add_argument("--zncc-threshold", type=float, default=0.5,
                   help="block-match visibility threshold")
    p.add_argument("--grasp-candidates", type=Path, default=None,
                   help="JSON list of external grasp detections")
    p.add_argument("--dump-intermediates", type=Path, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_plan)

    p = commands["run-benchmark"] = sub.add_parser("run-benchmark", help="run seeded synthetic episodes, emit CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--tracker", choices=("oracle", "blockmatch"), default="oracle")
    p.add_argument("--track-noise", type=float, default=0.0)
    p.add_argument("--max-replans", type=int, default=10)
    p.add_argument("--robust", action="store_true")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap for episode execution (episodes are independent)")
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_run_benchmark)

    p = commands["convert"] = sub.add_parser("convert", help="RGBDV <-> PNG-per-frame (float path is bit-exact)")
    p.add_argument("--in", type=Path, required=True, dest="in")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--allow-lossy", action="store_true",
                   help="also write 8-bit preview PNGs (lossy)")
    p.set_defaults(func=cmd_convert)

    p = commands["inspect"] = sub.add_parser("inspect", help="print the header of any flowplan binary file")
    p.add_argument("--in", type=Path, required=True, dest="in")
    p.set_defaults(func=cmd_inspect)

    return parser, commands


def main(argv=None):
    _setup_logging()
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args, commands[args.command])
        return args.func(args)
    except FlowPlanError as err:
        log.error("%s", err)
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
