"""Command-line interface.

Subcommands:

* ``preprocess``  resample a volume to isotropic spacing and center
  crop/pad to a cubic grid
* ``drr``         render one radiograph for a volume and pose
* ``register``    run the two-stage registration and write reports
* ``experiment``  batch registration from random initial offsets
* ``phantom``     generate the synthetic test case (volume, landmarks,
  ground-truth pose, fixed image)
* ``similarity``  print all similarity metrics for two image files
* ``bench``       CMA-ES sanity benchmark on sphere/Rosenbrock

All file outputs use fixed names under ``--out-dir``; report paths also
render matplotlib figures next to the delimited output unless
``--no-figures`` is given.  Wall-clock timings go to separate ``timing``
files so the main reports are byte-identical across reruns with the same
seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import cmaes, evaluation, geometry, phantom, pipeline
from .drr import beer_lambert_log, downsample, render_drr
from .errors import RadregError
from .geometry import DEFAULT_CAMERA, CameraIntrinsics, Pose6
from .similarity import gc, lncc, make_patch_grid, mncc, ncc
from .volume import (
    Image2D,
    crop_or_pad_centered,
    load_image_raw,
    load_volume,
    resample_isotropic,
    save_image_pgm,
    save_image_raw,
    save_volume,
)

EXIT_USAGE = 2


def load_camera(path) -> CameraIntrinsics:
    """Camera file: key-value text (sdd_mm, pixel_spacing_mm, width, height)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise RadregError(f"camera file {path}: expected 'key = value'")
            key, val = (p.strip() for p in line.split("=", 1))
            values[key] = val
    try:
        return CameraIntrinsics(
            sdd=float(values["sdd_mm"]),
            pixel_spacing=float(values["pixel_spacing_mm"]),
            detector_width=int(values["width"]),
            detector_height=int(values["height"]),
        )
    except KeyError as exc:
        raise RadregError(f"camera file {path}: missing key {exc}")


def save_camera(intr: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"sdd_mm = {intr.sdd:.17g}\n")
        fh.write(f"pixel_spacing_mm = {intr.pixel_spacing:.17g}\n")
        fh.write(f"width = {intr.detector_width}\n")
        fh.write(f"height = {intr.detector_height}\n")


def _camera_from_args(args) -> CameraIntrinsics:
    if getattr(args, "camera", None):
        return load_camera(args.camera)
    return DEFAULT_CAMERA


def _write_image(img: Image2D, path: str) -> None:
    if path.endswith(".pgm"):
        save_image_pgm(img, path)
    else:
        save_image_raw(img, path)


def cmd_preprocess(args) -> int:
    vol = load_volume(args.in_volume)
    vol = resample_isotropic(vol, args.spacing)
    vol = crop_or_pad_centered(vol, (args.dims, args.dims, args.dims))
    save_volume(vol, args.out_volume)
    return 0


def cmd_drr(args) -> int:
    vol = load_volume(args.volume)
    intr = _camera_from_args(args)
    pose = geometry.load_pose(args.pose) if args.pose else Pose6()
    img = render_drr(vol, intr, pose, args.width, args.height)
    _write_image(img, args.out)
    if phantom.is_degenerate(img):
        print("DegenerateCase: rendered image has no anatomy signal", file=sys.stderr)
    return 0


def _registration_config(args) -> pipeline.RegistrationConfig:
    cfg = pipeline.RegistrationConfig()
    if getattr(args, "config", None):
        cfg = pipeline.load_config(args.config, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg = pipeline.RegistrationConfig(
            coarse=cfg.coarse, fine=cfg.fine, seed=args.seed, workers=cfg.workers
        )
    return cfg


def cmd_register(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    vol = load_volume(args.volume)
    intr = _camera_from_args(args)
    fixed = load_image_raw(args.fixed)
    if args.log_transform:
        fixed = beer_lambert_log(fixed)
    init = geometry.load_pose(args.init_pose) if args.init_pose else Pose6()
    cfg = _registration_config(args)

    result = pipeline.register(fixed, vol, intr, init, cfg)

    with open(os.path.join(args.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(pipeline.format_report(result))
        if args.landmarks and args.gt_pose:
            landmarks = geometry.load_landmarks(args.landmarks)
            gt = geometry.load_pose(args.gt_pose)
            pivot = tuple(vol.center)
            fh.write("\n[evaluation]\n")
            fh.write(f"initial_mtre_mm = {evaluation.mtre(gt, init, landmarks, pivot=pivot):.9g}\n")
            fh.write(
                f"final_mtre_mm = {evaluation.mtre(gt, result.final_pose, landmarks, pivot=pivot):.9g}\n"
            )
            errs = evaluation.pose_errors(gt, result.final_pose)
            fh.write(f"final_rot_error_deg = {errs.total_rot:.9g}\n")
            fh.write(f"final_trans_error_mm = {errs.total_trans:.9g}\n")
    with open(os.path.join(args.out_dir, "loss_curves.csv"), "w", encoding="utf-8") as fh:
        fh.write(pipeline.format_loss_curves(result))
    with open(os.path.join(args.out_dir, "timing.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"wall_time_s = {result.wall_time_s:.3f}\n")
    geometry.save_pose(result.final_pose, os.path.join(args.out_dir, "final_pose.txt"))

    final_drr = render_drr(vol, intr, result.final_pose, fixed.width, fixed.height)
    save_image_raw(final_drr, os.path.join(args.out_dir, "final_drr.raw"))
    save_image_pgm(final_drr, os.path.join(args.out_dir, "final_drr.pgm"))
    if args.figures:
        from . import figures

        figures.save_loss_curves(result, os.path.join(args.out_dir, "loss_curves.png"))
    return 0


def cmd_experiment(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    case = args.case_dir
    vol = load_volume(os.path.join(case, "volume.mhd"))
    fixed = load_image_raw(os.path.join(case, "fixed.raw"))
    landmarks = geometry.load_landmarks(os.path.join(case, "landmarks.txt"))
    gt = geometry.load_pose(os.path.join(case, "gt_pose.txt"))
    camera_path = os.path.join(case, "camera.txt")
    intr = load_camera(camera_path) if os.path.exists(camera_path) else _camera_from_args(args)
    cfg = _registration_config(args)

    progress = None
    if args.verbose:
        def progress(row):
            print(
                f"trial {row.trial}: mTRE {row.initial_mtre:.2f} -> {row.final_mtre:.2f} mm",
                file=sys.stderr,
            )

    report = evaluation.run_experiment(
        fixed, vol, intr, gt, landmarks,
        trials=args.trials, config=cfg, seed=args.seed if args.seed is not None else 0,
        sigma_rot_deg=args.sigma_rot, sigma_trans_mm=args.sigma_trans,
        parallel_trials=args.parallel_trials,
        progress=progress,
    )
    with open(os.path.join(args.out_dir, "trials.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluation.format_trials_csv(report))
    with open(os.path.join(args.out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(evaluation.format_summary(report))
    with open(os.path.join(args.out_dir, "timing.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluation.format_timing_csv(report))
    if args.figures:
        from . import figures

        figures.save_experiment_figure(report, os.path.join(args.out_dir, "mtre_summary.png"))
    return 0


def cmd_phantom(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    intr = _camera_from_args(args)
    gt = geometry.load_pose(args.gt_pose) if args.gt_pose else Pose6()
    case = phantom.make_case(
        intr, gt, dims=(args.dims, args.dims, args.dims), spacing=args.spacing, seed=args.seed
    )
    save_volume(case.volume, os.path.join(args.out_dir, "volume.mhd"))
    geometry.save_landmarks(case.landmarks, os.path.join(args.out_dir, "landmarks.txt"))
    geometry.save_pose(case.gt_pose, os.path.join(args.out_dir, "gt_pose.txt"))
    save_image_raw(case.fixed, os.path.join(args.out_dir, "fixed.raw"))
    save_image_pgm(case.fixed, os.path.join(args.out_dir, "fixed.pgm"))
    save_camera(intr, os.path.join(args.out_dir, "camera.txt"))
    if phantom.is_degenerate(case.fixed):
        print("DegenerateCase: ground-truth pose renders no anatomy", file=sys.stderr)
    return 0


def cmd_similarity(args) -> int:
    a = load_image_raw(args.image_a)
    b = load_image_raw(args.image_b)
    print(f"ncc = {ncc(a, b):.9g}")
    print(f"mncc = {mncc(a, b, lam=args.lam, r=args.patch_radius):.9g}")
    print(f"gc = {gc(a, b):.9g}")
    grid = make_patch_grid(a.width, a.height, args.patch_radius)
    center = grid.centers[len(grid) // 2]
    print(f"lncc_center = {lncc(a, b, center[0], center[1], args.patch_radius):.9g}")
    print(f"patches = {len(grid)}")
    return 0


def _bench_function(name: str):
    if name == "sphere":
        return lambda x: float(np.sum(x * x)), [5.0], 3.0, 5000, 1e-10
    if name == "rosenbrock":
        return (
            lambda x: float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2)),
            [0.0], 0.5, 50000, 1e-6,
        )
    raise RadregError(f"unknown benchmark function {name!r}")


def cmd_bench(args) -> int:
    fn, mean0, sigma0, budget, target = _bench_function(args.function)
    histories = []
    hits = 0
    lines = [f"function = {args.function}", f"dim = {args.dim}", f"runs = {args.runs}"]
    for run in range(args.runs):
        cfg = cmaes.CmaesConfig(
            n=args.dim, mean0=mean0 * args.dim, sigma0=sigma0,
            seed=args.seed + run, max_evaluations=budget, loss_threshold=target,
        )
        res = cmaes.minimize(fn, cfg)
        hits += res.best_loss <= target
        histories.append(res.history)
        lines.append(
            f"run {run}: best_loss = {res.best_loss:.3e}, evaluations = {res.evaluations}, "
            f"termination = {res.termination.value}"
        )
    lines.append(f"target {target:g} reached in {hits}/{args.runs} runs")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "bench.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
        if args.figures:
            from . import figures

            figures.save_bench_figure(
                {args.function: histories}, os.path.join(args.out_dir, "convergence.png")
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radreg",
        description="Rigid 2D/3D registration: DRR rendering plus CMA-ES optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample + center crop/pad a volume")
    p.add_argument("--in-volume", required=True)
    p.add_argument("--out-volume", required=True)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--dims", type=int, default=256)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("drr", help="render a radiograph")
    p.add_argument("--volume", required=True)
    p.add_argument("--pose", default=None)
    p.add_argument("--camera", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=1024)
    p.set_defaults(func=cmd_drr)

    p = sub.add_parser("register", help="two-stage registration")
    p.add_argument("--fixed", required=True, help="fixed image (float raw + sidecar)")
    p.add_argument("--volume", required=True)
    p.add_argument("--camera", default=None)
    p.add_argument("--init-pose", default=None, help="defaults to the identity pose")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--landmarks", default=None)
    p.add_argument("--gt-pose", default=None)
    p.add_argument("--log-transform", action="store_true",
                   help="apply the Beer-Lambert log transform to the fixed image")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_register, figures=True)

    p = sub.add_parser("experiment", help="batch registration with random offsets")
    p.add_argument("--case-dir", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--sigma-rot", type=float, default=20.0)
    p.add_argument("--sigma-trans", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--camera", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--parallel-trials", type=int, default=None,
                   help="run trials in this many worker processes")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_experiment, figures=True)

    p = sub.add_parser("phantom", help="generate a synthetic test case")
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--spacing", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--camera", default=None)
    p.add_argument("--gt-pose", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("similarity", help="print metrics for two images")
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--patch-radius", type=int, default=6)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("bench", help="CMA-ES benchmark (sphere/rosenbrock)")
    p.add_argument("--function", choices=("sphere", "rosenbrock"), default="sphere")
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_bench, figures=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RadregError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
