"""``fingerpose`` command line: simulate, train, fit-map, adapt, eval, predict, grad-check.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric fault. Failures print
one line starting with ``error:`` to stderr. Set ``FINGERPOSE_THREADS`` to cap
the number of BLAS threads.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import MissingPathError, RunConfig, load_config
from .errors import (
    DegenerateDistributionError,
    FingerPoseError,
    InvalidArgumentError,
    NumericFaultError,
)
from .estimator import (
    grad_check,
    init_model,
    load_checkpoint,
    make_batch,
    predict_batch,
    random_batch,
    save_checkpoint,
    tiny_config,
    train,
)
from .evalkit import REGIMES, FullPose, report
from .mapping import MappingModel, adapt_bias, fit_global, map_to_3d, read_samples_csv
from .pose import Pose2D, TouchCenter, to_uv_pose
from .simdata import read_dataset, read_pgm, synth_dataset, write_dataset

log = logging.getLogger("fingerpose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRAD_TOL = 1e-4
# the gate runs on a fixed tiny network so its verdict does not depend on the run seed
GATE_SEED = 0
PREDICT_FIELDS = ("c", "r", "theta", "u", "v", "phi", "roll", "pitch", "yaw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = Path(cfg.path("out"))
    dataset = synth_dataset(cfg.synth)
    manifest = write_dataset(dataset, out)
    print(f"wrote {len(dataset.samples)} samples to {manifest}")
    return EXIT_OK


def _grad_gate(seed: int, eps: float) -> tuple[float, bool]:
    """Finite-difference check of the tiny network; seed 0 is the reference gate."""
    model = init_model(tiny_config(init_seed=seed))
    err = grad_check(model, random_batch(model.config, 4, seed), eps)
    print(f"grad-check max relative error {err:.3e} (tolerance {GRAD_TOL:g})")
    return err, err < GRAD_TOL


def _print_progress(row) -> None:
    print(f"epoch {row['epoch']} train_loss {row['train_loss']:.4f} "
          f"val_yaw_mae {row['val_yaw_mae']}", flush=True)


def cmd_train(cfg: RunConfig, args) -> int:
    if args.grad_check:
        _, ok = _grad_gate(GATE_SEED, args.eps)
        if not ok:
            raise NumericFaultError("gradient check failed", layer="grad-check")
    dataset = read_dataset(cfg.path("data"))
    out = Path(cfg.path("out"))
    out.mkdir(parents=True, exist_ok=True)
    train_batch = make_batch(dataset.train, cfg.net)
    val_batch = make_batch(dataset.test, cfg.net) if dataset.test else None
    model = init_model(cfg.net)
    progress = None if args.quiet else _print_progress
    trained, history = train(model, train_batch, cfg.train, val_batch, progress)
    final = history.rows[-1]["train_loss"]
    if not math.isfinite(final):
        raise NumericFaultError("final training loss is not finite", layer="loss")
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, trained, seed=cfg.train.seed, epoch=cfg.train.epochs,
                    train=cfg.train.to_dict())
    history.write_csv(out / "history.csv")
    print(f"wrote {ckpt} and {out / 'history.csv'}")
    return EXIT_OK


def cmd_grad_check(cfg: RunConfig, args) -> int:
    _, ok = _grad_gate(GATE_SEED if cfg.seed is None else cfg.seed, args.eps)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_fit_map(cfg: RunConfig, args) -> int:
    samples = read_samples_csv(cfg.path("data"), split=args.split)
    model = fit_global(samples, cfg.map_k, cfg.map_input_scale)
    out = Path(cfg.path("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"fitted degree-{cfg.map_k} mapping on {len(samples)} samples -> {out}")
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, args) -> int:
    base = MappingModel.load(cfg.path("mapping"))
    touches = read_samples_csv(cfg.path("touches"))
    if not touches:
        raise UsageError("adapt needs at least one touch sample")
    adapted = adapt_bias(base, touches, cfg.max_touches)
    out = Path(cfg.path("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    adapted.save(out)
    print(f"adapted biases from {len(touches)} touches -> {out}")
    return EXIT_OK


def _pipeline(model, mapping: MappingModel, touch: TouchCenter, cap, patch):
    """Per sample (Pose2D, UVPose, Pose3D) from the estimator through the mapping."""
    c, r, theta = predict_batch(model, cap, patch)
    out = []
    for ci, ri, ti in zip(c, r, theta):
        pose2d = Pose2D(ci, ri, ti)
        uv = to_uv_pose(pose2d, touch)
        out.append((pose2d, uv, map_to_3d(mapping, uv)))
    return out


def cmd_eval(cfg: RunConfig, args) -> int:
    dataset = read_dataset(cfg.path("data"))
    samples = dataset.split(args.split)
    if not samples:
        raise InvalidArgumentError(f"split '{args.split}' is empty")
    touch = dataset.config.touch
    mapping_path = cfg.path("mapping", required=not args.oracle)
    mapping = MappingModel.load(mapping_path) if mapping_path else dataset.config.gt_mapping
    labels = [FullPose(s.uv, s.pose3d) for s in samples]
    if args.oracle:
        preds = []
        for s in samples:
            uv = to_uv_pose(s.pose2d, touch)
            preds.append(FullPose(uv, map_to_3d(mapping, uv)))
    else:
        model, _ = load_checkpoint(cfg.path("checkpoint"))
        cap = np.stack([s.cap.pixels for s in samples])
        patch = np.stack([s.patch.pixels for s in samples])
        preds = [FullPose(uv, p3) for _, uv, p3 in _pipeline(model, mapping, touch, cap, patch)]
    regimes = tuple(args.regimes) if args.regimes else REGIMES
    rep = report(preds, labels, regimes)
    rep.check_identities()
    out = Path(cfg.path("out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(rep.to_csv())
    (out / "report.txt").write_text(rep.to_text())
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    model, _ = load_checkpoint(cfg.path("checkpoint"))
    mapping = MappingModel.load(cfg.path("mapping"))
    cap = read_pgm(args.cap).pixels
    patch = read_pgm(args.patch).pixels
    n = model.config.patch_size
    touch = TouchCenter((n - 1) / 2.0, (n - 1) / 2.0)
    (pose2d, uv, p3), = _pipeline(model, mapping, touch, cap[None], patch[None])
    vals = (pose2d.c, pose2d.r, pose2d.theta, uv.u, uv.v, uv.phi, p3.roll, p3.pitch, p3.yaw)
    if args.header:
        print(",".join(PREDICT_FIELDS))
    print(",".join(_fmt(x) for x in vals))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration; flags override it")
    p.add_argument("--seed", type=int, help="default seed for data, init and shuffling")


def _net_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--angle-head", choices=("softbin", "trig", "direct"), help="angle head type")
    p.add_argument("--modality", choices=("bimodal", "patch", "cap"), help="inputs fed to the network")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fingerpose", description="Finger pose estimation from capacitive and fingerprint images.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="generate a labelled synthetic dataset")
    _common(p)
    p.add_argument("--out", help="output directory for manifest.csv and images")
    p.add_argument("--n-fingers", type=int, help="number of synthetic fingers")
    p.add_argument("--samples-per-finger", type=int, help="touches rendered per finger")
    p.add_argument("--yaw-range", type=float, help="yaw drawn uniformly from +-this (45, 90, 135 or 180)")
    p.add_argument("--noise-std", type=float, help="additive Gaussian noise on both images")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the 2D pose estimator")
    _common(p)
    p.add_argument("--data", help="dataset manifest.csv")
    p.add_argument("--out", help="directory for checkpoint.bin and history.csv")
    p.add_argument("--epochs", type=int, help="training epochs (0 writes the initialisation)")
    p.add_argument("--batch-size", type=int, help="mini-batch size")
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--lr-end", type=float, help="final learning rate of the cosine schedule")
    p.add_argument("--weight-decay", type=float, help="decoupled weight decay")
    _net_flags(p)
    p.add_argument("--grad-check", action="store_true", help="run the finite-difference gate first; fail if it does not pass")
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step for --grad-check")
    p.add_argument("--quiet", action="store_true", help="do not print per-epoch progress")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-map", help="fit the UV to 3D pose mapping")
    _common(p)
    p.add_argument("--data", help="CSV with u,v,phi,roll,pitch,yaw columns (a manifest works)")
    p.add_argument("--split", help="only use rows whose split column equals this")
    p.add_argument("--k", type=int, help="polynomial degree")
    p.add_argument("--out", help="output mapping JSON")
    p.set_defaults(func=cmd_fit_map)

    p = sub.add_parser("adapt", help="re-estimate mapping biases from a few touches")
    _common(p)
    p.add_argument("--mapping", help="base mapping JSON")
    p.add_argument("--touches", help="CSV of registered touches (u,v,phi,roll,pitch,yaw)")
    p.add_argument("--max-touches", type=int, help="largest accepted number of touches")
    p.add_argument("--out", help="output mapping JSON")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="run the full pipeline and write per-regime reports")
    _common(p)
    p.add_argument("--data", help="dataset manifest.csv")
    p.add_argument("--checkpoint", help="estimator checkpoint")
    p.add_argument("--mapping", help="mapping JSON (with --oracle defaults to the generator's mapping)")
    p.add_argument("--split", default="test", choices=("train", "test", "all"), help="samples to evaluate")
    p.add_argument("--regimes", type=int, nargs="+", choices=REGIMES, help="yaw bounds to report")
    p.add_argument("--oracle", action="store_true", help="use ground-truth 2D poses instead of the estimator")
    p.add_argument("--out", help="directory for report.csv and report.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="estimate the pose of one touch")
    _common(p)
    p.add_argument("--checkpoint", help="estimator checkpoint")
    p.add_argument("--mapping", help="mapping JSON")
    p.add_argument("--cap", required=True, help="capacitive PGM")
    p.add_argument("--patch", required=True, help="fingerprint patch PGM")
    p.add_argument("--header", action="store_true", help="print a header row first")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grad-check", help="finite-difference gradient gate on the tiny network")
    _common(p)
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step")
    p.set_defaults(func=cmd_grad_check)
    return parser


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "seed": get("seed"),
        "paths": {k: get(k) for k in ("data", "out", "checkpoint", "mapping", "touches")},
        "synth": {
            "n_fingers": get("n_fingers"),
            "samples_per_finger": get("samples_per_finger"),
            "yaw_range": get("yaw_range"),
            "noise_std": get("noise_std"),
        },
        "net": {"angle_head": get("angle_head"), "modality": get("modality")},
        "train": {
            "epochs": get("epochs"),
            "batch_size": get("batch_size"),
            "lr_start": get("lr"),
            "lr_end": get("lr_end"),
            "weight_decay": get("weight_decay"),
        },
        "mapping": {"k": get("k"), "max_touches": get("max_touches")},
    }


def _run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
    except InvalidArgumentError as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    threads = os.environ.get("FINGERPOSE_THREADS")
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(threads)):
            return args.func(cfg, args)
    return args.func(cfg, args)


def main(argv=None) -> int:
    try:
        return _run(argv)
    except (UsageError, MissingPathError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFaultError, DegenerateDistributionError, FloatingPointError) as exc:
        layer = getattr(exc, "layer", None)
        where = f" in layer {layer}" if layer else ""
        print(f"error: numeric fault{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FingerPoseError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
