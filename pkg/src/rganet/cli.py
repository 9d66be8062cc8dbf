"""``rganet`` command line: train, infer, eval, report, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import (
    IMAGE_DIR, MASK_DIR, DataError, SynthSpec, load_image, load_mask, parse_label_map,
    save_mask, synth_dataset, worker_count,
)
from .engine.tensor import Tensor
from .metrics import MgridConfig, evaluate_pair, regulator_curve
from .model import ConfigError, ModelConfig, build_model, count_params_flops, load_checkpoint
from .train import NumericalError, load_train_config, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

EVAL_COLUMNS = ("filename", "accuracy", "precision", "recall", "jaccard", "dice", "mcc", "fbeta", "mgrid")
REPORT_COLUMNS = ("module", "params", "flops")

EVAL_EPILOG = """\
CSV columns: filename,accuracy,precision,recall,jaccard,dice,mcc,fbeta,mgrid.
One row per image, then a final row with filename "mean". An image with no
evidential grid cell has an empty mgrid field; --mgrid-empty decides whether
the mean skips it or counts it as 1.0. --dump-regulator writes f,gamma rows.
"""

log = logging.getLogger("rganet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _range(text):
    lo, _, hi = text.partition("-")
    return int(lo), int(hi or lo)


def _pair(text):
    lo, _, hi = text.partition(",")
    return float(lo), float(hi or lo)


def build_parser():
    p = _Parser(prog="rganet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a key = value config file",
                       epilog="Writes model.rgan and train_log.csv (epoch,loss,jaccard,precision,recall).")
    t.add_argument("config", type=Path)

    i = sub.add_parser("infer", help="predict a class mask for one image")
    i.add_argument("checkpoint", type=Path)
    i.add_argument("image", type=Path)
    i.add_argument("out", type=Path)
    i.add_argument("--probs", action="store_true",
                   help="also write <out>_prob<c>.png per class (probability * 255)")

    e = sub.add_parser("eval", help="score predicted masks against ground truth",
                       epilog=EVAL_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    e.add_argument("pred_dir", type=Path, nargs="?")
    e.add_argument("gt_dir", type=Path, nargs="?")
    e.add_argument("--out", type=Path, help="CSV path (default stdout)")
    e.add_argument("--jsonl", type=Path, help="also write one JSON record per line")
    e.add_argument("--beta", type=float, default=0.5)
    e.add_argument("--cell", type=_size, default=(12, 12), help="grid cell HxW (default 12x12)")
    e.add_argument("--fm", type=float, default=0.5)
    e.add_argument("--cm", type=float, default=0.525)
    e.add_argument("--mgrid-empty", choices=("skip", "one"), default="skip")
    e.add_argument("--positive-class", type=int, default=2)
    e.add_argument("--label-map", help="gray:class pairs for ground-truth files, e.g. 0:0,128:1,255:2")
    e.add_argument("--dump-regulator", type=Path, help="write the regulator curve as CSV and exit")

    r = sub.add_parser("report", help="parameter and FLOPs summary",
                       epilog="CSV columns: module,params,flops; last row is 'total'.")
    r.add_argument("checkpoint", type=Path, nargs="?")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="model config override when no checkpoint is given")
    r.add_argument("--csv", action="store_true")

    s = sub.add_parser("synth", help="render a synthetic image/mask dataset")
    s.add_argument("out_dir", type=Path)
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--size", type=_size, default=(48, 64))
    s.add_argument("--objects", type=_range, default=(1, 3), help="min-max objects per image")
    s.add_argument("--fraction", type=_pair, default=(0.1, 0.3), help="suction fraction lo,hi")
    s.add_argument("--border", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    return p


def cmd_train(args):
    cfg = load_train_config(args.config)
    _, history = run_training(cfg)
    last = history[-1] if history else None
    if last:
        print(f"epochs={last['epoch']} loss={last['loss']:.6f} jaccard={last['jaccard']:.4f}")
    print(f"checkpoint: {Path(cfg.out_dir) / 'model.rgan'}")
    return EXIT_OK


def cmd_infer(args):
    model = load_checkpoint(args.checkpoint)
    model.eval()
    image = load_image(args.image)
    H, W = model.cfg.input_size
    if image.shape[1:] != (H, W):
        raise DataError(
            f"{args.image}: image is {image.shape[1]}x{image.shape[2]}, checkpoint expects {H}x{W}"
        )
    probs = model(Tensor(image[None])).data[0]
    save_mask(args.out, probs.argmax(axis=0).astype(np.uint8))
    if args.probs:
        stem = args.out.with_suffix("")
        for c in range(probs.shape[0]):
            level = np.clip(probs[c] * 255 + 0.5, 0, 255).astype(np.uint8)
            save_mask(f"{stem}_prob{c}.png", level)
    return EXIT_OK


def _fmt(v):
    if v is None:
        return ""
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def cmd_eval(args):
    try:
        mcfg = MgridConfig(beta=args.beta, cell_h=args.cell[0], cell_w=args.cell[1], f_m=args.fm, c_m=args.cm)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.dump_regulator:
        with open(args.dump_regulator, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("f", "gamma"))
            for f, g in regulator_curve(mcfg):
                w.writerow((f"{f:.3f}", f"{g:.10g}"))
        if args.pred_dir is None:
            return EXIT_OK
    if args.pred_dir is None or args.gt_dir is None:
        raise UsageError("eval needs PRED_DIR and GT_DIR")
    pred_dir = _mask_dir(args.pred_dir)
    gt_dir = _mask_dir(args.gt_dir)
    label_map = parse_label_map(args.label_map)
    preds = {p.name for p in pred_dir.glob("*.png")}
    gts = {p.name for p in gt_dir.glob("*.png")}
    for name in sorted(preds ^ gts):
        side = "ground truth" if name in preds else "prediction"
        log.warning("skipping %s: no matching %s", name, side)
    names = sorted(preds & gts)
    if not names:
        raise DataError(f"no matching mask files between {pred_dir} and {gt_dir}")

    def score(name):
        pred = load_mask(pred_dir / name)
        gt = load_mask(gt_dir / name, label_map)
        if pred.shape != gt.shape:
            raise DataError(f"{name}: prediction {pred.shape} and ground truth {gt.shape} differ in size")
        return evaluate_pair(pred, gt, args.positive_class, mcfg)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        rows = list(pool.map(score, names))

    records = [{"filename": n, **r} for n, r in zip(names, rows)]
    mean = {"filename": "mean"}
    for col in EVAL_COLUMNS[1:]:
        vals = [r[col] for r in records]
        if col == "mgrid":
            vals = [1.0 if v is None else v for v in vals] if args.mgrid_empty == "one" else [
                v for v in vals if v is not None
            ]
        mean[col] = math.fsum(vals) / len(vals) if vals else None

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(EVAL_COLUMNS)
        for rec in records + [mean]:
            w.writerow([_fmt(rec[c]) for c in EVAL_COLUMNS])
    finally:
        if args.out:
            out.close()
    if args.jsonl:
        with open(args.jsonl, "w") as fh:
            for rec in records + [mean]:
                fh.write(json.dumps({c: rec[c] for c in EVAL_COLUMNS}) + "\n")
    return EXIT_OK


def _mask_dir(root):
    """Accept either a directory of masks or a dataset root with a masks/ subdirectory."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    if (root / MASK_DIR).is_dir() and not any(root.glob("*.png")):
        return root / MASK_DIR
    return root


def cmd_report(args):
    if args.checkpoint is not None:
        model = load_checkpoint(args.checkpoint)
    else:
        raw = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            raw[key.strip()] = value.strip()
        model = build_model(ModelConfig.from_mapping(raw))
    rows = model.breakdown()
    params, flops = count_params_flops(model)
    rows.append(("total", params, flops))
    if args.csv:
        w = csv.writer(sys.stdout)
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    else:
        H, W = model.cfg.input_size
        print(f"RGANet{model.cfg.scales} k={model.cfg.k} s={model.cfg.expansion} input {H}x{W}")
        print(f"{'module':<8} {'params':>12} {'GFLOPs':>10}")
        for name, p, f in rows:
            print(f"{name:<8} {p:>12,d} {f / 1e9:>10.3f}")
    return EXIT_OK


def cmd_synth(args):
    spec = SynthSpec(
        count=args.count, height=args.size[0], width=args.size[1],
        min_objects=args.objects[0], max_objects=args.objects[1],
        border=args.border, fraction=args.fraction,
    )
    synth_dataset(spec, args.seed, args.out_dir)
    print(f"wrote {spec.count} pairs to {args.out_dir}/{{{IMAGE_DIR},{MASK_DIR}}}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
    "report": cmd_report, "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ValueError) as e:
        print(f"rganet {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"rganet {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"rganet {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
