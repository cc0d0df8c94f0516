"""Command-line entry point.

Subcommands: train, eval, experiments, augment, synth-toy, gradcheck,
gradcam. Exit codes: 0 success, 1 usage error, 2 data/format/I-O error,
3 divergence, 4 gradient-check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .augment import apply_pipeline
from .config import RunConfig, load_run_config
from .data import (load_dataset, read_ppm, stratified_split, synth_toy, write_corpus, write_ppm)
from .errors import ConfigError, ContractError, DivergenceError, FormatError
from .image import resize_image, to_tensor, to_uint8
from .metrics import summarize
from .model import CLASS_NAMES, experiment_configs, grad_cam
from .train import evaluate, load_checkpoint, restore, run_experiments, train_run

log = logging.getLogger("exprnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def emit_pgm(heatmap, path) -> None:
    """Write a [0, 1] heatmap as an 8-bit binary P5 PGM."""
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.ndim != 2 or heatmap.min() < 0 or heatmap.max() > 1:
        raise ContractError("heatmap must be a 2-D array with values in [0, 1]")
    h, w = heatmap.shape
    pixels = to_uint8(255 * heatmap)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


# -- config resolution -------------------------------------------------------

def _resolve(args) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    rc = load_run_config(getattr(args, "config", None))
    train, data = rc.train, rc.data
    if getattr(args, "data", None):
        data.dir = args.data
    if getattr(args, "seed", None) is not None:
        s = args.seed
        data.seed = s
        aug = train.augment.replace(master_seed=s) if train.augment is not None else None
        train = train.replace(seed=s, model=train.model.replace(seed=s), augment=aug)
    for flag, key in (("epochs", "epochs"), ("workers", "workers"), ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            train = train.replace(**{key: value})
    if getattr(args, "image_size", None) is not None:
        train = train.replace(model=train.model.replace(input_size=args.image_size))
    if getattr(args, "no_augment", False):
        train = train.replace(augment=None)
    return RunConfig(train, data)


def _split(rc: RunConfig):
    if not rc.data.dir:
        raise ConfigError("no data directory given (--data or data.dir)")
    ds = load_dataset(rc.data.dir, rc.model.input_size)
    return stratified_split(ds, rc.data.val_frac, rc.data.seed)


def _metrics_json(cm):
    happy, sad = summarize(cm, 0), summarize(cm, 1)
    return {"accuracy": happy.accuracy, "confusion_matrix": cm.counts.tolist(),
            "happy": {"precision": happy.precision, "recall": happy.recall, "f1": happy.f1},
            "sad": {"precision": sad.precision, "recall": sad.recall, "f1": sad.f1}}


# -- subcommands ---------------------------------------------------------------

def cmd_train(args):
    rc = _resolve(args)
    if args.experiment is not None:
        name, mcfg = experiment_configs(rc.model)[args.experiment - 1]
        rc = RunConfig(rc.train.replace(model=mcfg), rc.data)
        log.info("training %s", name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rc.dump(out / "config.json")
    train_ds, val_ds = _split(rc)
    res = train_run(rc.train, train_ds, val_ds, out, resume=args.resume)
    print(json.dumps({"best_epoch": res.best_epoch, **_metrics_json(res.final_cm)}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    net, _, cfg = restore(ckpt)
    rc = _resolve(args)
    ds = load_dataset(rc.data.dir, cfg.model.input_size)
    if args.split == "val":
        _, ds = stratified_split(ds, rc.data.val_frac, rc.data.seed)
    loss, cm = evaluate(net, ds)
    print(json.dumps({"loss": loss, "samples": cm.total, **_metrics_json(cm)}, indent=2))
    return EXIT_OK


def cmd_experiments(args):
    rc = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rc.dump(out / "config.json")
    train_ds, val_ds = _split(rc)
    results, text, _ = run_experiments(rc.train, train_ds, val_ds, out)
    print(text, end="")
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"{r.name}: {r.error}", file=sys.stderr)
    return EXIT_OK


def cmd_augment(args):
    rc = _resolve(args)
    cfg = rc.train.augment
    if cfg is None:
        raise ConfigError("augmentation is disabled in the config")
    src, out = Path(args.data), Path(args.out)
    rows = []
    index = 0
    for name in CLASS_NAMES:
        files = sorted((src / name).glob("*.ppm"))
        if not files:
            raise ConfigError(f"class directory {src / name} is missing or empty")
        (out / name).mkdir(parents=True, exist_ok=True)
        for path in files:
            img = read_ppm(path)
            for n in range(args.copies):
                ops = []
                aug = apply_pipeline(img, cfg, index, ops)
                target = out / name / f"{path.stem}_aug{n}.ppm"
                write_ppm(target, aug)
                rows.append([str(path), str(target), cfg.master_seed, index, ";".join(ops)])
                index += 1
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source", "output", "seed", "index", "ops"])
        w.writerows(rows)
    print(f"wrote {len(rows)} images to {out}")
    return EXIT_OK


def cmd_synth_toy(args):
    seed = 0 if args.seed is None else args.seed
    ds = synth_toy(args.n, args.size, seed)
    write_corpus(ds, args.out)
    print(f"wrote {len(ds)} images ({args.n} per class) to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run_suite(args.trials, 0 if args.seed is None else args.seed)
    for name, err in results.items():
        tol = gradcheck.MODEL_TOL if name == "full_model" else gradcheck.LAYER_TOL
        status = "ok" if err <= tol else "FAIL"
        print(f"{name:14s} max_rel_err={err:.3e} tol={tol:.0e} {status}")
    return EXIT_OK if gradcheck.passed(results) else EXIT_GRADCHECK


def cmd_gradcam(args):
    net, _, cfg = restore(load_checkpoint(args.checkpoint))
    size = cfg.model.input_size
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        img = resize_image(read_ppm(path), size)
        x = to_tensor([img], net.dtype)
        target = args.target_class
        if target is None:
            target = int(net.forward(x).argmax(axis=1)[0])
        emit_pgm(grad_cam(net, x, target), out / (Path(path).stem + "_gradcam.pgm"))
    print(f"wrote {len(args.images)} heatmaps to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="exprnet", description="Child facial-expression CNN toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data", help="corpus directory (happy/, sad/)")

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--experiment", type=int, choices=range(1, 9))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--image-size", type=int)
    sp.add_argument("--no-augment", action="store_true")
    sp.add_argument("--resume")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("all", "val"), default="val")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiments", help="run the eight-experiment matrix")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--image-size", type=int)
    sp.add_argument("--no-augment", action="store_true")
    sp.set_defaults(func=cmd_experiments)

    sp = sub.add_parser("augment", help="write augmented copies of a corpus")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--copies", type=int, default=1)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("synth-toy", help="generate the procedural toy corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=600, help="images per class")
    sp.add_argument("--size", type=int, default=224)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth_toy)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("gradcam", help="write Grad-CAM heatmaps as PGM")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--class", dest="target_class", type=int, choices=(0, 1))
    sp.add_argument("--seed", type=int)
    sp.add_argument("images", nargs="+")
    sp.set_defaults(func=cmd_gradcam)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, ConfigError, ContractError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
