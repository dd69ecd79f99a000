"""Command-line entry point.

Subcommands: degree, split, render-pc, refine, demo-oracle. Output-writing
commands drop a ``manifest.json`` next to their outputs with every resolved
input, the backend, and the seed; re-running with ``--manifest`` reproduces
the outputs bitwise (the replay writes no new manifest, so two replays give
byte-identical directories).

Exit codes: 0 success, 1 I/O, 2 domain or degenerate input, 3 transport,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import math
import os
import re
import secrets
import sys
from pathlib import Path

import numpy as np

from . import bridge, imageio, oracle, pcrender
from .errors import (
    ConfigError,
    DomainError,
    NumericalDivergenceError,
    ParseError,
    TransportError,
    ViewxError,
)
from .extrapolation import (
    ViewSet,
    build_split,
    extrapolation_degree,
    save_degree_csv,
    save_split_json,
)
from .geometry import (
    Trajectory,
    identity_pose,
    intrinsics_from_dict,
    load_poses_any,
    make_trajectory,
    pose_from_dict,
)
from .oracle import GaussianPrior
from .rng import NoiseStream
from .sampler import GuidanceInput, SamplerConfig, build_schedule, refine_video

EXIT_OK = 0
EXIT_IO = 1
EXIT_DOMAIN = 2
EXIT_TRANSPORT = 3
EXIT_DIVERGED = 4

_FRAME_RE = re.compile(r"^frame_(\d{5})\.ppm$")


def _write_manifest(out_dir: Path, command: str, args: dict):
    manifest = {
        "command": command,
        "args": args,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    target = out_dir / "manifest.json"
    tmp = target.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, target)


def _load_manifest(path, expected_command: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("command") != expected_command:
        raise ConfigError(
            f"manifest describes {doc.get('command')!r}, expected {expected_command!r}"
        )
    return doc["args"]


def _draw_seed() -> int:
    return secrets.randbits(64)


# -- degree -------------------------------------------------------------------


def _split_views(poses, target_index=None, target_pose_path=None):
    if (target_index is None) == (target_pose_path is None):
        raise ConfigError("give exactly one of --target-index or --target-pose")
    if target_pose_path is not None:
        target = pose_from_dict(json.loads(Path(target_pose_path).read_text()))
        train = poses
    else:
        if not 0 <= target_index < len(poses):
            raise ConfigError(f"target index {target_index} out of range 0..{len(poses) - 1}")
        target = poses[target_index]
        train = [p for i, p in enumerate(poses) if i != target_index]
    if not train:
        raise ConfigError("no training views left")
    return train, target


def cmd_degree(args) -> int:
    _, poses = load_poses_any(args.poses)
    if not poses:
        raise ConfigError(f"no poses found in {args.poses}")
    train, target = _split_views(poses, args.target_index, args.target_pose)
    report = extrapolation_degree(ViewSet.from_poses(train), target)
    print(f"d = ({report.offset[0]:.9g}, {report.offset[1]:.9g}, {report.offset[2]:.9g})")
    print(f"|d| = {float(np.linalg.norm(report.offset)):.9g}")
    print(f"r = {report.spread:.9g}")
    print(f"e = {report.degree:.9g}")
    print(f"direction_angle_deg = {math.degrees(report.direction_angle):.6g}")
    return EXIT_OK


# -- split ---------------------------------------------------------------------


def cmd_split(args) -> int:
    _, poses = load_poses_any(args.poses)
    if len(poses) < 3:
        raise ConfigError(f"need at least 3 poses, found {len(poses)}")
    result = build_split(
        ViewSet.from_poses(poses),
        e_threshold=args.e_threshold,
        max_test=args.max_test,
        max_angle=math.radians(args.max_angle_deg),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_split_json(out, result)
    if args.hist:
        save_degree_csv(args.hist, result)
    if result.note:
        print(f"note: {result.note}")
    print(f"train={list(result.train)} test={list(result.test)} -> {out}")
    return EXIT_OK


# -- render-pc -------------------------------------------------------------------


def _load_intrinsics(path):
    return intrinsics_from_dict(json.loads(Path(path).read_text()))


def _resolve_render_args(args) -> dict:
    if args.manifest:
        resolved = _load_manifest(args.manifest, "render-pc")
        if args.out:
            resolved = dict(resolved, out=args.out)
        return resolved
    if not (args.image and args.depth and args.intrinsics and args.out):
        raise ConfigError("render-pc needs --image, --depth, --intrinsics and --out")
    if (args.target_pose is None) == (args.poses is None):
        raise ConfigError("give exactly one of --target-pose or --poses")
    return {
        "image": args.image,
        "depth": args.depth,
        "intrinsics": args.intrinsics,
        "source_pose": args.source_pose,
        "target_pose": args.target_pose,
        "poses": args.poses,
        "target_index": args.target_index,
        "frames": args.frames,
        "radius": args.radius,
        "out": args.out,
    }


def cmd_render_pc(args) -> int:
    resolved = _resolve_render_args(args)
    image = imageio.image_to_float(imageio.read_ppm(resolved["image"]))
    depth = pcrender.DepthMap.from_array(imageio.read_pfm(resolved["depth"]))
    intr = _load_intrinsics(resolved["intrinsics"])

    if resolved.get("source_pose"):
        source = pose_from_dict(json.loads(Path(resolved["source_pose"]).read_text()))
    else:
        source = identity_pose()

    if resolved.get("target_pose"):
        target = pose_from_dict(json.loads(Path(resolved["target_pose"]).read_text()))
    else:
        _, poses = load_poses_any(resolved["poses"])
        index = resolved.get("target_index")
        if index is None:
            raise ConfigError("--target-index is required with --poses")
        if not 0 <= index < len(poses):
            raise ConfigError(f"target index {index} out of range 0..{len(poses) - 1}")
        target = poses[index]

    cloud = pcrender.unproject(image, depth, intr, source)
    traj = (
        make_trajectory(source, target, resolved["frames"])
        if resolved["frames"] >= 2
        else Trajectory(poses=(source,), frame_count=1)
    )
    video, mask = pcrender.render_trajectory(cloud, intr, traj, resolved["radius"])

    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(video.shape[0]):
        imageio.write_ppm(out_dir / f"frame_{k:05d}.ppm", imageio.float_to_image(video[k]))
        imageio.write_pgm(
            out_dir / f"mask_{k:05d}.pgm", (mask[k, 0] >= 0.5).astype(np.uint8) * 255
        )
    if not args.manifest:
        _write_manifest(out_dir, "render-pc", resolved)
    print(f"wrote {video.shape[0]} frames to {out_dir}")
    return EXIT_OK


# -- refine ----------------------------------------------------------------------


def _read_frame_dir(path: Path):
    frame_files = sorted(p for p in path.iterdir() if _FRAME_RE.match(p.name))
    if not frame_files:
        raise ConfigError(f"no frame_%05d.ppm files in {path}")
    frames, masks = [], []
    for frame_path in frame_files:
        index = _FRAME_RE.match(frame_path.name).group(1)
        frames.append(imageio.image_to_float(imageio.read_ppm(frame_path)))
        mask_path = path / f"mask_{index}.pgm"
        if mask_path.exists():
            masks.append((imageio.read_pgm(mask_path) >= 128).astype(np.float32))
        else:
            masks.append(np.ones(frames[-1].shape[:2], dtype=np.float32))
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ConfigError(f"frames disagree in shape: {sorted(shapes)}")
    video = np.stack(frames).transpose(0, 3, 1, 2)  # (F, C, H, W)
    mask = np.stack(masks)[:, None, :, :]
    return np.ascontiguousarray(video), np.ascontiguousarray(mask), frame_files[0]


def _resolve_refine_args(args) -> dict:
    if args.manifest:
        resolved = _load_manifest(args.manifest, "refine")
        if args.out:
            resolved = dict(resolved, out=args.out)
        return resolved
    if not (args.frames_dir and args.out):
        raise ConfigError("refine needs a frames directory and --out")

    config = SamplerConfig()
    if args.config:
        config = SamplerConfig.from_json(Path(args.config).read_text())
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.t_guide is not None:
        overrides["guided_steps"] = args.t_guide
    elif args.dynamic:
        overrides["guided_steps"] = 16
    if args.resample is not None:
        overrides["resample_rounds"] = args.resample
    if args.r_guide is not None:
        overrides["guided_resample_rounds"] = args.r_guide
    for name in ("sigma_min", "sigma_max", "rho", "sigma_data"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    seed = args.seed if args.seed is not None else _draw_seed()
    overrides["seed"] = seed
    config = dataclasses.replace(config, **overrides).validate()

    return {
        "frames_dir": args.frames_dir,
        "out": args.out,
        "backend": args.backend,
        "prior": args.prior,
        "prior_mean": args.prior_mean,
        "prior_scale": args.prior_scale,
        "addr": args.addr,
        "config": dataclasses.asdict(config),
        "config_path": args.config,
    }


def _make_backend(resolved):
    backend = resolved["backend"]
    if backend == "oracle:gaussian":
        if resolved.get("prior"):
            prior = oracle.load_prior(resolved["prior"])
        else:
            prior = GaussianPrior(
                mean=resolved.get("prior_mean", 0.0), scale=resolved.get("prior_scale", 1.0)
            )
        return oracle.make_denoiser(prior), None
    if backend == "oracle:mixture":
        if not resolved.get("prior"):
            raise ConfigError("oracle:mixture needs --prior pointing at a prior JSON")
        return oracle.make_denoiser(oracle.load_prior(resolved["prior"])), None
    if backend == "bridge":
        denoiser = bridge.BridgeDenoiser(resolved.get("addr"))
        return denoiser, denoiser
    raise ConfigError(f"unknown backend {backend!r}")


def cmd_refine(args) -> int:
    resolved = _resolve_refine_args(args)
    video, mask, first_frame = _read_frame_dir(Path(resolved["frames_dir"]))
    config = SamplerConfig(**resolved["config"]).validate()
    denoiser, closer = _make_backend(resolved)
    condition = first_frame.read_bytes()  # PPM bytes of the first frame
    try:
        refined = refine_video(
            GuidanceInput(video=video, mask=mask, condition=condition), denoiser, config
        )
    finally:
        if closer is not None:
            closer.close()

    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(refined.shape[0]):
        imageio.write_ppm(
            out_dir / f"frame_{k:05d}.ppm",
            imageio.float_to_image(refined[k].transpose(1, 2, 0)),
        )
    bridge.save_tensor(out_dir / "refined.vxt", refined.astype(np.float32, copy=False))
    if not args.manifest:
        _write_manifest(out_dir, "refine", resolved)
    print(f"wrote {refined.shape[0]} refined frames to {out_dir} (seed {config.seed})")
    return EXIT_OK


# -- demo-oracle ------------------------------------------------------------------


def cmd_demo_oracle(args) -> int:
    steps_list = [int(s) for s in args.steps.split(",")]
    prior = GaussianPrior(mean=0.0, scale=1.0)
    denoiser = oracle.make_denoiser(prior)
    shape = (4, 3, 8, 8)
    print(f"seed {args.seed}; schedule sigma in [0.002, 80], rho 7; shape {shape}")
    print(f"{'T':>6}  {'rel_error':>12}")
    errors = []
    for steps in steps_list:
        config = SamplerConfig(
            steps=steps,
            guided_steps=0,
            resample_rounds=1,
            guided_resample_rounds=0,
            seed=args.seed,
            sigma_min=0.002,
            sigma_max=80.0,
            rho=7.0,
        )
        schedule = build_schedule(config)
        sigma_top = float(schedule.sigmas[-1])
        x_top = sigma_top * NoiseStream(config.seed).standard_normal(shape, dtype=np.float32)
        guidance = GuidanceInput(
            video=np.zeros(shape, dtype=np.float32),
            mask=np.zeros((shape[0], 1, shape[2], shape[3]), dtype=np.float32),
        )
        sampled = refine_video(guidance, denoiser, config)
        exact = oracle.closed_form_gaussian_flow(x_top, sigma_top, 0.0, prior)
        rel = float(np.linalg.norm(sampled - exact) / np.linalg.norm(exact))
        errors.append(rel)
        print(f"{steps:>6}  {rel:>12.6f}")
    if errors == sorted(errors, reverse=True) and len(errors) > 1:
        print("errors decrease monotonically with step count")
    return EXIT_OK


# -- argument plumbing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewx",
        description="guided diffusion refinement of novel-view renderings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_degree = sub.add_parser("degree", help="extrapolation degree of one view")
    p_degree.add_argument("poses", help="pose JSON file or reconstruction directory")
    p_degree.add_argument("--target-index", type=int, help="use this view as the query")
    p_degree.add_argument("--target-pose", help="JSON file with a single query pose")
    p_degree.set_defaults(func=cmd_degree)

    p_split = sub.add_parser("split", help="build an extrapolative train/test split")
    p_split.add_argument("poses")
    p_split.add_argument("--e-threshold", type=float, default=1.0)
    p_split.add_argument("--max-test", type=int, default=8)
    p_split.add_argument("--max-angle-deg", type=float, default=30.0)
    p_split.add_argument("--out", required=True, help="split JSON path")
    p_split.add_argument("--hist", help="optional per-view degree CSV")
    p_split.set_defaults(func=cmd_split)

    p_render = sub.add_parser("render-pc", help="render a point-cloud sweep video")
    p_render.add_argument("--image", help="source PPM")
    p_render.add_argument("--depth", help="source depth PFM")
    p_render.add_argument("--intrinsics", help="intrinsics JSON")
    p_render.add_argument("--source-pose", help="source pose JSON (default identity)")
    p_render.add_argument("--target-pose", help="target pose JSON")
    p_render.add_argument("--poses", help="pose file/dir to pick the target from")
    p_render.add_argument("--target-index", type=int)
    p_render.add_argument("--frames", type=int, default=25)
    p_render.add_argument("--radius", type=int, default=1, help="splat radius in pixels")
    p_render.add_argument("--out")
    p_render.add_argument("--manifest", help="replay a recorded run")
    p_render.set_defaults(func=cmd_render_pc)

    p_refine = sub.add_parser("refine", help="refine a rendered frame directory")
    p_refine.add_argument("frames_dir", nargs="?", help="directory of frame_/mask_ files")
    p_refine.add_argument("--out")
    p_refine.add_argument(
        "--backend",
        default="oracle:gaussian",
        help="oracle:gaussian | oracle:mixture | bridge",
    )
    p_refine.add_argument("--config", help="sampler config JSON")
    p_refine.add_argument("--steps", type=int)
    p_refine.add_argument("--t-guide", type=int, dest="t_guide")
    p_refine.add_argument("--resample", type=int)
    p_refine.add_argument("--r-guide", type=int, dest="r_guide")
    p_refine.add_argument("--dynamic", action="store_true",
                          help="dynamic-scene preset: guided steps default to 16")
    p_refine.add_argument("--seed", type=int)
    p_refine.add_argument("--sigma-min", type=float, dest="sigma_min")
    p_refine.add_argument("--sigma-max", type=float, dest="sigma_max")
    p_refine.add_argument("--rho", type=float)
    p_refine.add_argument("--sigma-data", type=float, dest="sigma_data")
    p_refine.add_argument("--prior", help="prior JSON for oracle backends")
    p_refine.add_argument("--prior-mean", type=float, default=0.0)
    p_refine.add_argument("--prior-scale", type=float, default=1.0)
    p_refine.add_argument("--addr", help=f"bridge address (default ${bridge.ADDR_ENV_VAR})")
    p_refine.add_argument("--manifest", help="replay a recorded run")
    p_refine.set_defaults(func=cmd_refine)

    p_demo = sub.add_parser("demo-oracle", help="Euler vs closed-form convergence table")
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--steps", default="25,50,100", help="comma-separated step counts")
    p_demo.set_defaults(func=cmd_demo_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DomainError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ViewxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
