"""``pixkit`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime/domain error.
Outputs are written to a temporary file and renamed, so a failed command
leaves nothing behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import anyres, codecs, metrics, pipeline, toymodel
from .fileio import (
    atomic_directory, atomic_write_text, dump_json, read_mask, read_rgb, write_csv, write_png,
)
from .flow import CfgWeights, Schedule
from .numcore import RngState, read_tsr, write_tsr

EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


def _color(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"color must be r,g,b, got {text!r}") from None
    if len(parts) != 3 or not all(0 <= v <= 255 for v in parts):
        raise argparse.ArgumentTypeError(f"color must be three values in 0..255, got {text!r}")
    return parts


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must be lo:hi, got {text!r}") from None
    return lo, hi


def _int_range(text: str) -> tuple[int, int]:
    lo, hi = _range(text)
    return int(lo), int(hi)


def _box(text: str) -> codecs.BBox:
    try:
        return codecs.BBox(*(int(v) for v in text.split(",")))
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"box must be x0,y0,x1,y1, got {text!r}") from None


def _load_json(path) -> object:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PIXKIT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PIXKIT_SEED must be an integer, got {env!r}") from None


# -- codec ------------------------------------------------------------------------

def _labels_json(labels: np.ndarray) -> dict:
    return {"height": labels.shape[0], "width": labels.shape[1], "labels": labels.tolist()}


def _palette(args) -> codecs.Palette:
    if not args.palette:
        raise UsageError("--palette is required")
    try:
        return codecs.Palette.from_json(_load_json(args.palette))
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"bad palette: {e}") from None


def cmd_codec(args) -> None:
    act = args.action
    p = codecs.DepthCodecParams(args.dmin, args.dmax) if args.dmin < args.dmax else None
    if act.startswith("depth") and p is None:
        raise UsageError("--dmin must be below --dmax")
    if act != "canvas":
        if not args.input:
            raise UsageError("--in is required")
        _require(args.input)
    if act == "depth-enc":
        write_png(args.out, codecs.encode_depth(read_tsr(args.input), p))
    elif act == "depth-dec":
        write_tsr_atomic(args.out, codecs.decode_depth(read_rgb(args.input), p))
    elif act == "seg-enc":
        pal = _palette(args)
        labels = np.asarray(_load_json(args.input)["labels"], dtype=np.int64)
        write_png(args.out, codecs.encode_labels(labels, pal))
    elif act == "seg-dec":
        pal = _palette(args)
        atomic_write_text(args.out, json.dumps(_labels_json(codecs.decode_labels(read_rgb(args.input), pal))) + "\n")
    elif act == "norm-enc":
        write_png(args.out, codecs.encode_normals(read_tsr(args.input)))
    elif act == "norm-dec":
        write_tsr_atomic(args.out, codecs.decode_normals(read_rgb(args.input)))
    elif act == "mask2rgb":
        write_png(args.out, codecs.mask_to_rgb(read_mask(args.input)))
    elif act == "rgb2mask":
        write_png(args.out, codecs.rgb_to_mask(read_rgb(args.input), args.threshold))
    elif act == "overlay":
        if not args.mask:
            raise UsageError("--mask is required")
        img = read_rgb(args.input)
        mask = read_mask(_require(args.mask))
        write_png(args.out, codecs.overlay_mask(img, mask, args.color, args.alpha))
    elif act == "extract-hsv":
        write_png(args.out, codecs.extract_mask_hsv(read_rgb(args.input), args.color, args.hue_tol, args.sat_min))
    elif act == "bbox-draw":
        if args.box is None:
            raise UsageError("--box is required")
        write_png(args.out, codecs.draw_bbox(read_rgb(args.input), args.box, args.color, args.thickness))
    elif act == "bbox-extract":
        b = codecs.extract_bbox(read_rgb(args.input), args.color, args.tol)
        atomic_write_text(args.out, dump_json({"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}))
    elif act == "canvas":
        write_png(args.out, codecs.blank_canvas(args.height, args.width, args.fill))


def write_tsr_atomic(path, x) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        write_tsr(tmp, x)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


# -- mask ---------------------------------------------------------------------------

def cmd_mask(args) -> None:
    rng = RngState(_seed(args))
    h, w = args.height, args.width
    if h < 1 or w < 1:
        raise UsageError("--height and --width must be positive")
    info: dict = {}
    if args.extend_right is not None:
        mask = codecs.extend_right_mask(h, w, args.extend_right)
    elif args.outpaint is not None:
        mask, kept = codecs.gen_outpaint_mask(rng, h, w, args.outpaint)
        info["kept"] = [kept.x0, kept.y0, kept.x1, kept.y1]
    else:
        try:
            spec = codecs.InpaintMaskSpec(tuple(args.shapes.split(",")), args.count, args.area, args.fill)
        except ValueError as e:
            raise UsageError(str(e)) from None
        mask = codecs.gen_inpaint_mask(rng, h, w, spec)
    write_png(args.out, codecs.mask_to_rgb(mask) if args.rgb else mask)
    info["fraction"] = float(mask.mean())
    info["masked_columns"] = int(mask.any(axis=0).sum())
    print(json.dumps(info, sort_keys=True))


# -- bucket-plan ----------------------------------------------------------------------

def _read_items(path) -> list[tuple[str, int, int]]:
    _require(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{path}: no items")
    try:
        return [(r["id"], int(r["w"]), int(r["h"])) for r in rows]
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"{path}: bad row ({e})") from None


def cmd_bucket_plan(args) -> None:
    items = _read_items(args.csv)
    if args.batch_size < 1:
        raise UsageError("--batch-size must be at least 1")
    if any(w < 1 or h < 1 for _, w, h in items):
        raise UsageError("image sizes must be positive")
    cands = anyres.candidate_set(patch_px=args.patch)
    rng = RngState(_seed(args))
    plan = anyres.bucket_batches(items, cands, args.batch_size, rng)
    baseline = anyres.padding_waste(anyres.random_batches(items, args.batch_size, rng.next()), cands)
    out = plan.to_json()
    out["baseline_padding_waste"] = baseline
    atomic_write_text(args.out, dump_json(out))
    print(json.dumps({"padding_waste": plan.padding_waste, "baseline_padding_waste": baseline}))


# -- flow-demo -------------------------------------------------------------------------

FLOW_DEFAULTS = {
    "steps": 4000, "batch_size": 128, "lr": 0.05, "seed": 0, "nfe": 30, "solver": "heun",
    "schedule": "uniform", "shift": 3.0, "wi": 1.5, "wt": 7.0, "label": 0, "n_samples": 1000,
}


def _flow_config(args) -> dict:
    cfg = dict(FLOW_DEFAULTS)
    if args.config:
        loaded = _load_json(args.config)
        if not isinstance(loaded, dict):
            raise UsageError("flow config must be a JSON object")
        unknown = set(loaded) - set(FLOW_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in FLOW_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.seed is not None or os.environ.get("PIXKIT_SEED") is not None:
        cfg["seed"] = _seed(args)
    return cfg


def density_image(points: np.ndarray, bins: int = 64, extent: float = 4.0) -> np.ndarray:
    """Grayscale 2D histogram of the samples, quantized through the depth codec."""
    hist, _, _ = np.histogram2d(
        points[:, 1], points[:, 0], bins=bins, range=[[-extent, extent], [-extent, extent]]
    )
    top = max(hist.max(), 1.0)
    return codecs.encode_depth(hist[::-1], codecs.DepthCodecParams(0.0, top))


def cmd_flow_demo(args) -> None:
    cfg = _flow_config(args)
    out = Path(args.out_dir)
    if args.mode == "train":
        try:
            tc = toymodel.TrainConfig(cfg["steps"], cfg["batch_size"], cfg["lr"], seed=cfg["seed"])
        except ValueError as e:
            raise UsageError(str(e)) from None
        data = toymodel.ToyDataset.two_gaussians()
        model = toymodel.VelocityMlp.init(RngState(tc.seed, 7))
        model, trace = toymodel.train(model, data, tc)
        with atomic_directory(out) as tmp:
            toymodel.save_checkpoint(model, tmp / "checkpoint")
            write_csv(tmp / "loss.csv", ["step", "loss"], [(i, repr(float(v))) for i, v in enumerate(trace)])
        print(json.dumps({"initial_loss": float(trace[0]), "final_loss": float(trace[-1]),
                          "loss_ratio": toymodel.loss_reduction(trace)}))
        return
    if not args.checkpoint:
        raise UsageError("--checkpoint is required for sampling")
    try:
        model = toymodel.load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as e:
        raise DomainError(f"cannot load checkpoint {args.checkpoint}: {e}") from None
    try:
        sched = Schedule(cfg["nfe"], cfg["schedule"], cfg["shift"])
        weights = CfgWeights(cfg["wi"], cfg["wt"])
    except ValueError as e:
        raise UsageError(str(e)) from None
    if cfg["solver"] not in ("euler", "heun", "midpoint"):
        raise UsageError(f"unknown solver {cfg['solver']!r}")
    res = toymodel.sample(model, cfg["n_samples"], cfg["label"], weights, cfg["solver"], sched,
                          RngState(cfg["seed"], 99))
    with atomic_directory(out) as tmp:
        write_csv(tmp / "samples.csv", ["x", "y"], [(repr(float(a)), repr(float(b))) for a, b in res.x])
        write_png(tmp / "density.png", density_image(res.x))
    print(json.dumps({"steps": cfg["nfe"], "nfe": res.nfe, "field_calls": res.field_calls}))


# -- metrics ---------------------------------------------------------------------------

def _metric_pairs(args):
    for a, b in args.pair:
        _require(a)
        _require(b)
        yield a, b


def cmd_metrics(args) -> None:
    if not args.pair:
        raise UsageError("give at least one --pair A B")
    reports = []
    if args.kind == "image":
        for a, b in _metric_pairs(args):
            ia, ib = read_rgb(a), read_rgb(b)
            if ia.shape != ib.shape:
                raise UsageError(f"size mismatch: {a} {ia.shape[:2]} vs {b} {ib.shape[:2]}")
            for name in args.metric or ["psnr", "ssim", "l1"]:
                if name == "ssim" and min(ia.shape[:2]) < metrics.SSIM_WINDOW:
                    raise UsageError(f"{a}: too small for SSIM")
                reports.append((a, b, metrics.IMAGE_METRICS[name](ia, ib)))
    elif args.kind == "depth":
        for a, b in _metric_pairs(args):
            da, db = read_tsr(a), read_tsr(b)
            if da.shape != db.shape:
                raise UsageError(f"size mismatch: {a} vs {b}")
            reports.append((a, b, metrics.rmse(da, db)))
    elif args.kind == "normal":
        for a, b in _metric_pairs(args):
            na, nb = read_tsr(a), read_tsr(b)
            if na.shape != nb.shape:
                raise UsageError(f"size mismatch: {a} vs {b}")
            reports.append((a, b, metrics.mean_angle_error(na, nb)))
    elif args.kind == "seg":
        if args.num_classes is None:
            raise UsageError("--num-classes is required for seg metrics")
        for a, b in _metric_pairs(args):
            la = np.asarray(_load_json(a)["labels"])
            lb = np.asarray(_load_json(b)["labels"])
            if la.shape != lb.shape:
                raise UsageError(f"size mismatch: {a} vs {b}")
            reports.append((a, b, metrics.miou(la, lb, args.num_classes)))
    elif args.kind == "mask":
        preds, gts = [], []
        for a, b in _metric_pairs(args):
            ma, mb = read_mask(a), read_mask(b)
            if ma.shape != mb.shape:
                raise UsageError(f"size mismatch: {a} vs {b}")
            preds.append(ma)
            gts.append(mb)
        reports.append(("*", "*", metrics.ciou(preds, gts)))
    if args.format == "csv":
        lines = ["pred,gt,name,value,count,infinite"]
        for a, b, r in reports:
            lines.append(f"{a},{b},{r.name},{'inf' if r.infinite else repr(r.value)},{r.count},{int(r.infinite)}")
        text = "\n".join(lines) + "\n"
    else:
        text = "".join(json.dumps({"pred": a, "gt": b, **r.to_json()}) + "\n" for a, b, r in reports)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


# -- pipeline --------------------------------------------------------------------------

def cmd_pipeline(args) -> None:
    raw = _load_json(args.tasks)
    try:
        tasks = pipeline.load_tasks(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"bad tasks file: {e}") from None
    rng = RngState(_seed(args))
    if args.target < 1:
        raise UsageError("--target must be at least 1")
    if args.stage == "stage1":
        plan = pipeline.stage1_plan(tasks, args.target, rng)
    else:
        plan = pipeline.stage2_plan(tasks, rng, None if args.no_t2i else args.t2i_task)
    if args.shuffle:
        plan = pipeline.MixPlan(pipeline.epoch_order(plan, rng.next()))
    atomic_write_text(args.out, plan.to_jsonl())
    totals = plan.totals
    width = max(len(t) for t in totals) if totals else 4
    for task, n in totals.items():
        print(f"{task:<{width}}  {n}")


# -- parser ----------------------------------------------------------------------------

CODEC_ACTIONS = (
    "depth-enc", "depth-dec", "seg-enc", "seg-dec", "norm-enc", "norm-dec", "mask2rgb",
    "rgb2mask", "overlay", "extract-hsv", "bbox-draw", "bbox-extract", "canvas",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixkit", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="defaults to $PIXKIT_SEED, then 0")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codec", help="pixel-space encoders and decoders")
    p.add_argument("action", choices=CODEC_ACTIONS)
    p.add_argument("--in", dest="input")
    p.add_argument("--out", required=True)
    p.add_argument("--palette")
    p.add_argument("--mask")
    p.add_argument("--dmin", type=float, default=0.0)
    p.add_argument("--dmax", type=float, default=10.0)
    p.add_argument("--threshold", type=float, default=128)
    p.add_argument("--color", type=_color, default=(255, 0, 0))
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--hue-tol", type=float, default=18.0)
    p.add_argument("--sat-min", type=float, default=0.3)
    p.add_argument("--box", type=_box)
    p.add_argument("--thickness", type=int, default=2)
    p.add_argument("--tol", type=int, default=0)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--fill", choices=("white", "black"), default="white")
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("mask", help="inpainting / outpainting masks")
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--area", type=_range, default=(0.4, 0.5))
    p.add_argument("--count", type=_int_range, default=(1, 4))
    p.add_argument("--shapes", default="circle,rectangle,freeform")
    p.add_argument("--fill", choices=("white", "black"), default="black")
    p.add_argument("--outpaint", type=_range, metavar="LO:HI", help="kept-area fraction range")
    p.add_argument("--extend-right", type=float, metavar="FRAC")
    p.add_argument("--rgb", action="store_true", help="write RGB instead of 1-bit PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("bucket-plan", help="group images into token-grid buckets")
    p.add_argument("csv")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--patch", type=int, default=anyres.PATCH_PX)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bucket_plan)

    p = sub.add_parser("flow-demo", help="2D conditional flow-matching demo")
    p.add_argument("mode", choices=("train", "sample"))
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--nfe", type=int, help="solver steps")
    p.add_argument("--solver", choices=("euler", "heun", "midpoint"))
    p.add_argument("--schedule", choices=("uniform", "shifted"))
    p.add_argument("--shift", type=float)
    p.add_argument("--wi", type=float)
    p.add_argument("--wt", type=float)
    p.add_argument("--label", type=int)
    p.add_argument("--n-samples", type=int)
    p.set_defaults(func=cmd_flow_demo)

    p = sub.add_parser("metrics", help="evaluate prediction/ground-truth pairs")
    p.add_argument("--pair", nargs=2, action="append", metavar=("PRED", "GT"), default=[])
    p.add_argument("--kind", choices=("image", "depth", "normal", "seg", "mask"), default="image")
    p.add_argument("--metric", action="append", choices=sorted(metrics.IMAGE_METRICS))
    p.add_argument("--num-classes", type=int)
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pipeline", help="two-stage data-balancing plans")
    p.add_argument("stage", choices=("stage1", "stage2"))
    p.add_argument("--tasks", required=True)
    p.add_argument("--target", type=int, default=200)
    p.add_argument("--t2i-task", default=pipeline.T2I_TASK)
    p.add_argument("--no-t2i", action="store_true", help="skip the 1:1 text-to-image balancing")
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except UsageError as e:
        print(f"pixkit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ValueError, KeyError, FloatingPointError, OSError) as e:
        print(f"pixkit: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
