"""Command-line interface for the depth-completion pipeline.

Subcommands: scaffold, synth, train, infer, eval-depth, eval-pose, plot.
Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Every
subcommand that takes --seed is bit-reproducible on one machine.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, metrics
from .dataio import BadFormat, InsufficientValidPixels
from .diffgraph import CheckpointMismatch
from .losses import EmptyMask, FrameTriplet, LossWeights
from .models import (
    BadResolution,
    DivergedLoss,
    ModelConfig,
    TrainConfig,
    TrainingSample,
    infer,
    load_checkpoint,
    train,
)
from .scaffold import DegenerateInput, DenseDepthMap, scaffold

DATA_ERRORS = (
    BadFormat,
    BadResolution,
    CheckpointMismatch,
    DegenerateInput,
    DivergedLoss,
    EmptyMask,
    InsufficientValidPixels,
    FileNotFoundError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    data errors and use 1 for usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdcomp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scaffold", help="piecewise-planar depth from sparse points")
    p.add_argument("--sparse", required=True,
                   help="sparse depth: .json point list or 16-bit PNG; or a directory of them")
    p.add_argument("--intrinsics", required=True, help="intrinsics JSON (sizes the output)")
    p.add_argument("--out", required=True, help="output 16-bit depth PNG (or directory)")
    p.add_argument("--validity-out", default=None,
                   help="optional PNG marking hull coverage (single file mode)")
    p.add_argument("--workers", type=int, default=1, help="parallelism for directory mode")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--triplets", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--density", type=float, default=0.005,
                   help="sparse points as a fraction of the pixel count")
    p.add_argument("--rgb-noise", type=float, default=0.0)

    p = sub.add_parser("train", help="train the refinement network")
    p.add_argument("--data", required=True, help="manifest.jsonl of training triplets")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--config", default=None, help="TOML training config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel scaffolding workers (results independent of N)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("infer", help="densify sparse depth with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="RGB PNG")
    p.add_argument("--sparse", required=True, help=".json point list or 16-bit PNG")
    p.add_argument("--out", required=True, help="output 16-bit depth PNG")

    p = sub.add_parser("eval-depth", help="depth error metrics (table + JSON)")
    p.add_argument("--pred", required=True, help="predicted 16-bit depth PNG")
    p.add_argument("--gt", required=True, help="ground-truth 16-bit depth PNG")
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("eval-pose", help="trajectory error metrics (table + JSON)")
    p.add_argument("--est", required=True, help="estimated trajectory text file")
    p.add_argument("--gt", required=True, help="ground-truth trajectory text file")
    p.add_argument("--delta", type=int, default=1, help="relative-pose window")
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("plot", help="error-vs-distance chart (static SVG/PNG)")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="output .svg or .png")
    p.add_argument("--max-depth", type=float, default=None,
                   help="default: max valid ground-truth depth")
    p.add_argument("--bins", type=int, default=10)
    return parser


def _scaffold_one(sparse_path: Path, intrinsics, out_path: Path, validity_out=None) -> None:
    zs = dataio.load_sparse(sparse_path)
    if (zs.width, zs.height) != (intrinsics.width, intrinsics.height):
        raise ValueError(
            f"{sparse_path}: sparse size {zs.width}x{zs.height} does not match "
            f"intrinsics {intrinsics.width}x{intrinsics.height}"
        )
    result = scaffold(zs)
    # The scaffold fills the whole map; keep every pixel in the PNG and put
    # the hull-coverage channel in the optional validity image.
    dataio.write_depth_png(out_path, DenseDepthMap(result.depth, np.ones_like(result.validity)))
    if validity_out:
        from PIL import Image

        Image.fromarray((result.validity * 255).astype(np.uint8)).save(validity_out)


def cmd_scaffold(args) -> int:
    intrinsics = dataio.load_intrinsics(args.intrinsics)
    sparse_path = Path(args.sparse)
    if sparse_path.is_dir():
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        inputs = sorted(
            [p for p in sparse_path.iterdir() if p.suffix.lower() in (".png", ".json")]
        )
        if not inputs:
            raise ValueError(f"no sparse files in {sparse_path}")
        jobs = [(p, intrinsics, out_dir / (p.stem + ".png")) for p in inputs]
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                list(pool.map(lambda j: _scaffold_one(*j), jobs))
        else:
            for job in jobs:
                _scaffold_one(*job)
        print(f"scaffolded {len(jobs)} maps into {out_dir}")
    else:
        _scaffold_one(sparse_path, intrinsics, Path(args.out), args.validity_out)
        print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    base = dataio.SceneConfig.default(
        width=args.width, height=args.height, seed=args.scene_seed
    )
    scene = dataio.SceneConfig(
        intrinsics=base.intrinsics,
        objects=base.objects,
        step=base.step,
        sway_period=base.sway_period,
        sparse_density=args.density,
        rgb_noise=args.rgb_noise,
    )
    manifest = dataio.generate_synthetic(scene, args.triplets, seed=args.seed, out_dir=args.out)
    print(f"wrote {len(manifest)} triplets to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig.desk()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)

    manifest = dataio.DatasetManifest.load(args.data)
    samples = []
    for index in range(len(manifest)):
        triplet, _, poses = manifest.load_triplet(index)
        samples.append(TrainingSample(triplet, poses))
    if config.pose_source == "dataset" and any(s.poses is None for s in samples):
        raise ValueError("manifest has no odometry poses; use pose_source='network'")

    def report(step, loss, params):
        if not args.quiet and (step % 25 == 0 or step == 1):
            print(f"step {step:6d}  loss {loss:.6f}")
        return False

    result = train(samples, config, callback=report)
    result.save_checkpoint(args.out)
    print(f"trained {len(result.loss_history)} steps; "
          f"final loss {result.loss_history[-1]:.6f}; wrote {args.out}")
    return 0


def cmd_infer(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    image = dataio.read_image_png(args.image)
    zs = dataio.load_sparse(args.sparse)
    prediction = infer(params, config, image, zs)
    dataio.write_depth_png(args.out, prediction)
    print(f"wrote {args.out}")
    return 0


def _emit_report(report: dict, out_path, table_rows) -> None:
    width = max(len(label) for label, _ in table_rows)
    for label, value in table_rows:
        print(f"{label:<{width}}  {value}")
    payload = json.dumps(report, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(payload + "\n")
        print(f"wrote {out_path}")
    else:
        print(payload)


def cmd_eval_depth(args) -> int:
    pred = dataio.read_depth_png(args.pred)
    gt = dataio.read_depth_png(args.gt)
    report = metrics.depth_errors(pred, gt).as_dict()
    _emit_report(
        report,
        args.out,
        [
            ("MAE   (mm)", f"{report['mae_mm']:.3f}"),
            ("RMSE  (mm)", f"{report['rmse_mm']:.3f}"),
            ("iMAE  (1/km)", f"{report['imae_per_km']:.3f}"),
            ("iRMSE (1/km)", f"{report['irmse_per_km']:.3f}"),
            ("valid pixels", str(report["valid_pixels"])),
        ],
    )
    return 0


def cmd_eval_pose(args) -> int:
    est = metrics.load_trajectory(args.est)
    gt = metrics.load_trajectory(args.gt)
    report = {
        "ate_m": metrics.ate(est, gt),
        "ate5f_m": metrics.ate_5f(est, gt),
        "rpe_m": metrics.rpe(est, gt, delta=args.delta),
        "rre_deg": math.degrees(metrics.rre(est, gt, delta=args.delta)),
        "frames": len(est),
    }
    _emit_report(
        report,
        args.out,
        [
            ("ATE    (m)", f"{report['ate_m']:.6f}"),
            ("ATE-5F (m)", f"{report['ate5f_m']:.6f}"),
            ("RPE    (m)", f"{report['rpe_m']:.6f}"),
            ("RRE    (deg)", f"{report['rre_deg']:.6f}"),
            ("frames", str(report["frames"])),
        ],
    )
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pred = dataio.read_depth_png(args.pred)
    gt = dataio.read_depth_png(args.gt)
    top = args.max_depth or float(gt.depth[gt.validity].max()) + 1e-9
    edges = np.linspace(0.0, top, args.bins + 1)
    records = metrics.error_vs_distance(pred, gt, edges)

    centers = [0.5 * (r["lo_m"] + r["hi_m"]) for r in records]
    means = [r["mean_abs_error_m"] for r in records]
    lo = [r["p5_m"] for r in records]
    hi = [r["p95_m"] for r in records]
    fractions = [100.0 * r["fraction"] for r in records]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(centers, lo, hi, alpha=0.25, color="tab:blue", label="5th-95th pct")
    ax.plot(centers, means, color="tab:blue", marker="o", label="mean |error|")
    ax.set_xlabel("ground-truth distance (m)")
    ax.set_ylabel("absolute depth error (m)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(centers, fractions, color="tab:red", linestyle="--", label="points (%)")
    ax2.set_ylabel("share of ground-truth points (%)", color="tab:red")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "scaffold": cmd_scaffold,
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval-depth": cmd_eval_depth,
    "eval-pose": cmd_eval_pose,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except DATA_ERRORS as err:
        print(f"sdcomp {args.command}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
