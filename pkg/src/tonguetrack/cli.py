"""Command-line entry point for the whole pipeline.

Subcommands: synth, annotate, train, eval, infer, bench, overlay, sweep.
Exit codes: 0 success, 1 usage error, 2 unreadable or malformed data,
3 runtime failure.  Every run echoes its resolved configuration (including
seeds) to standard error so results can be reproduced from the log alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import (
    SpacingPolicy,
    contour_from_mask,
    place_landmarks,
    revert_to_contour,
    write_landmarks_csv,
)
from .data import (
    AugmentConfig,
    SynthConfig,
    load_dataset,
    make_dataset,
    read_pgm,
    save_dataset,
    split_dataset,
    write_pgm,
)
from .exceptions import TongueTrackError
from .network import LandmarkNet, NetworkConfig
from .training import (
    TrainConfig,
    benchmark_framerate,
    evaluate,
    infer_landmarks,
    load_checkpoint,
    point_count_sweep,
    save_checkpoint,
    train,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tonguetrack",
                     description="Tongue-surface landmark tracking pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, required=True, help="number of frames")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--n-points", type=int, default=10)
    p.add_argument("--spacing", choices=("equal", "random"), default="random")
    p.add_argument("--band-sigma", type=float, default=3.0)
    p.add_argument("--speckle-scale", type=float, default=0.8)
    p.add_argument("--noise-sigma", type=float, default=0.03)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("annotate", help="convert contour masks to landmark CSV")
    p.add_argument("--masks", required=True, help="directory of *.pgm masks")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--n-points", type=int, required=True)
    p.add_argument("--spacing", choices=("equal", "random"), default="equal")
    p.add_argument("--min-dist-x", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=30)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--conv-channels", type=_int_list, default=[16, 32, 64, 128])
    p.add_argument("--fc-sizes", type=_int_list, default=[256, 128])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all",
                   help="evaluate the whole directory or one split of it")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--per-sample", default=None, help="optional CSV of per-sample MSD")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict landmarks for one frame")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="measure eval-mode frame rate")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frames", required=True, help="directory of *.pgm frames")
    p.add_argument("--warmup", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("overlay", help="burn predictions into a frame")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("sweep", help="retrain across output point counts")
    p.add_argument("--n", type=_int_list, required=True,
                   help="comma-separated point counts, e.g. 5,10,15")
    p.add_argument("--count", type=int, default=200, help="synthetic samples per arm")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--spacing", choices=("equal", "random"), default="random")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=30)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--conv-channels", type=_int_list, default=[16, 32, 64, 128])
    p.add_argument("--fc-sizes", type=_int_list, default=[256, 128])
    p.set_defaults(func=cmd_sweep)

    return parser


def _echo_config(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"resolved-config: {json.dumps(cfg, default=str)}", file=sys.stderr)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        width=args.width,
        height=args.height,
        band_sigma=args.band_sigma,
        speckle_scale=args.speckle_scale,
        noise_sigma=args.noise_sigma,
        n_points=args.n_points,
        spacing=SpacingPolicy(kind=args.spacing, n_points=args.n_points),
    )
    samples = make_dataset(cfg, args.count, seed=args.seed)
    save_dataset(args.out, samples, seed=args.seed)
    print(f"wrote {len(samples)} samples to {args.out}", file=sys.stderr)
    return 0


def cmd_annotate(args) -> int:
    mask_dir = Path(args.masks)
    paths = sorted(mask_dir.glob("*.pgm"))
    if not paths:
        raise TongueTrackError(f"no *.pgm masks found in {mask_dir}")
    rows = []
    for i, path in enumerate(paths):
        mask = read_pgm(path) > 0.5
        contour = contour_from_mask(mask)
        seed = int(np.random.SeedSequence((args.seed, i)).generate_state(1)[0])
        policy = SpacingPolicy(kind=args.spacing, n_points=args.n_points,
                               min_dist_x=args.min_dist_x, seed=seed)
        pts = place_landmarks(contour, policy, width=mask.shape[1])
        rows.append((path.name, pts))
    write_landmarks_csv(args.out, rows)
    print(f"annotated {len(rows)} masks into {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    samples = load_dataset(args.data)
    train_set, val_set, _ = split_dataset(samples, seed=args.seed)
    h, w = samples[0].image.shape
    n_points = len(samples[0].landmarks)
    net = LandmarkNet(
        NetworkConfig(n_points=n_points, in_shape=(1, h, w),
                      conv_channels=tuple(args.conv_channels),
                      fc_sizes=tuple(args.fc_sizes)),
        seed=args.seed,
    )
    cfg = TrainConfig(
        lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        max_iterations=args.max_iterations, seed=args.seed,
        augment=AugmentConfig(enabled=not args.no_augment),
    )
    result = train(net, train_set, val_set, cfg)
    for epoch, (vl, vm) in enumerate(zip(result.val_loss, result.val_msd), 1):
        print(f"epoch {epoch}: val_loss={vl:.6g} val_msd_px={vm:.6g}", file=sys.stderr)
    save_checkpoint(args.out, result.best_model)
    print(f"saved best checkpoint (val_msd_px={result.best_val_msd:.6g}) to {args.out}",
          file=sys.stderr)
    return 0


def _pick_split(samples, which: str, seed: int):
    if which == "all":
        return samples
    parts = dict(zip(("train", "val", "test"), split_dataset(samples, seed=seed)))
    return parts[which]


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    samples = _pick_split(load_dataset(args.data), args.split, args.split_seed)
    report = evaluate(model, samples)
    if args.per_sample:
        with open(args.per_sample, "w") as fh:
            fh.write("id,msd_px\n")
            for s, v in zip(samples, report.per_sample):
                fh.write(f"{s.id},{v:.8g}\n")
    print(report.record())
    return 0


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    pts = infer_landmarks(model, read_pgm(args.image))
    print(",".join(f"{v:.4f}" for v in pts.ravel()))
    return 0


def cmd_bench(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    frame_dir = Path(args.frames)
    paths = sorted(frame_dir.glob("*.pgm"))
    if not paths:
        raise TongueTrackError(f"no *.pgm frames found in {frame_dir}")
    frames = [read_pgm(p) for p in paths]
    result = benchmark_framerate(model, frames, warmup=args.warmup)
    print(f"fps={result.fps:.6g}")
    return 0


def _burn_overlay(img: np.ndarray, landmarks: np.ndarray, curve: np.ndarray) -> np.ndarray:
    h, w = img.shape
    out = img.copy()
    for a, b in zip(curve[:-1], curve[1:]):
        steps = max(2, int(np.ceil(np.linalg.norm(b - a))) * 2)
        line = np.linspace(a, b, steps)
        xs = np.clip(np.rint(line[:, 0]).astype(int), 0, w - 1)
        ys = np.clip(np.rint(line[:, 1]).astype(int), 0, h - 1)
        out[ys, xs] = 1.0
    for x, y in landmarks:
        xi = int(np.clip(np.rint(x), 1, w - 2))
        yi = int(np.clip(np.rint(y), 1, h - 2))
        out[yi - 1:yi + 2, xi - 1:xi + 2] = 1.0
    return out


def cmd_overlay(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    img = read_pgm(args.image)
    pts = infer_landmarks(model, img)
    curve = revert_to_contour(pts)
    write_pgm(args.out, _burn_overlay(img, pts, curve))
    print(f"wrote overlay to {args.out}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    data_cfg = SynthConfig(
        width=args.width, height=args.height,
        spacing=SpacingPolicy(kind=args.spacing),
    )
    train_cfg = TrainConfig(
        lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        max_iterations=args.max_iterations, seed=args.seed,
        augment=AugmentConfig(enabled=not args.no_augment),
    )
    net_cfg = NetworkConfig(conv_channels=tuple(args.conv_channels),
                            fc_sizes=tuple(args.fc_sizes),
                            in_shape=(1, args.height, args.width))
    rows = point_count_sweep(args.n, data_cfg, train_cfg, net_cfg=net_cfg,
                             count=args.count)
    print("n_points,msd_mean_px,fps")
    for row in rows:
        print(f"{row.n_points},{row.msd_mean:.8g},{row.fps:.6g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    _echo_config(args)
    try:
        return args.func(args)
    except (TongueTrackError, FileNotFoundError, NotADirectoryError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
