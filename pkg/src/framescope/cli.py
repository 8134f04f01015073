"""``framescope`` command line: rectify, preprocess, synth, train, eval, sweep, report.

Configuration precedence is built-in defaults < ``--config`` JSON < flags.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .core import FramescopeError, read_png, write_png
from .dataio import SynthSpec, generate_synthetic, load_dataset_dir, save_dataset, split
from .geometry import load_sidecar, rectify_quad, rectify_sidecar
from .segnet import SegConfig, TrainConfig, build_model, load_model, save_model, train
from .strategy import apply_strategy, format_strategy, parse_strategy
from .sweep import (
    SweepConfig,
    derive_seed,
    desk_config,
    evaluate_split,
    params_from_dict,
    report_from_document,
    run_sweep,
    validate_report,
    write_outputs,
)

log = logging.getLogger("framescope")

CACHE_ENV = "FRAMESCOPE_CACHE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def reseed(doc: dict, seed: int) -> dict:
    """Fan a single seed out to the named sub-seeds of a sweep/train config."""
    doc = dict(doc, seed=seed)
    doc["model"] = dict(doc.get("model", {}), seed=derive_seed(seed, "init"))
    doc["train"] = dict(doc.get("train", {}), seed=derive_seed(seed, "train"))
    if doc.get("synth") is not None:
        doc["synth"] = dict(doc["synth"], seed=seed)
    return doc


def _split_counts(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"bad split {text!r}; expected train,val,test") from None
    if len(parts) != 3:
        raise UsageError(f"bad split {text!r}; expected train,val,test")
    return parts


def _sweep_doc(args) -> dict:
    doc = desk_config().to_dict()
    doc = _merge(doc, _load_json(args.config))
    if args.seed is not None:
        doc = reseed(doc, args.seed)
    if args.data is not None:
        doc["data"] = args.data
    if args.mode is not None:
        doc["mode"] = args.mode
    if args.strategy is not None:
        doc["strategy"] = args.strategy
    if args.steps is not None:
        doc["train"] = dict(doc["train"], steps=args.steps)
    if args.split is not None:
        doc["split"] = list(_split_counts(args.split))
    if args.jobs is not None:
        doc["jobs"] = args.jobs
    return doc


# --- subcommands ------------------------------------------------------------

def cmd_rectify(args) -> int:
    image = read_png(args.image)
    if args.sidecar:
        out = rectify_sidecar(image, load_sidecar(args.sidecar))
    elif args.quad:
        pts = [tuple(float(c) for c in p.split(",")) for p in args.quad]
        if len(pts) != 4 or any(len(p) != 2 for p in pts):
            raise UsageError("--quad needs four x,y points")
        out = rectify_quad(image, pts, args.width, args.height)
    else:
        raise UsageError("rectify needs --sidecar or --quad")
    write_png(args.out, out)
    return 0


def cmd_preprocess(args) -> int:
    params = params_from_dict(_load_json(args.config).get("params", {}))
    if args.shadow_dir:
        from .ipt import ExternalShadow
        import dataclasses

        params = dataclasses.replace(params, shadow=ExternalShadow(args.shadow_dir))
    strategy = parse_strategy(args.strategy, params)
    src = Path(args.input)
    out = Path(args.out)
    files = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not files:
        raise FramescopeError(f"no PNG images under {src}")
    for f in files:
        result = apply_strategy(strategy, read_png(f), f.stem)
        target = out / f.name if (src.is_dir() or out.suffix.lower() != ".png") else out
        write_png(target, result)
    log.info("preprocessed %d image(s) with %s", len(files), format_strategy(strategy) or "no stages")
    return 0


def cmd_synth(args) -> int:
    doc = _load_json(args.config)
    for k in ("count", "side", "seed"):
        v = getattr(args, k)
        if v is not None:
            doc[k] = v
    for k in ("shadow_factor", "color_gain", "contrast", "scratch_pixels"):
        if k in doc:
            doc[k] = tuple(doc[k])
    spec = SynthSpec(**doc)
    save_dataset(generate_synthetic(spec, jobs=args.jobs or 1), args.out)
    return 0


def _train_configs(args, doc):
    if args.seed is not None:
        doc = reseed(doc, args.seed)
    model_doc = doc.get("model", {})
    train_doc = doc.get("train", {})
    for flag, key in (("side", "input_side"), ("base", "base_channels"), ("depth", "depth")):
        if getattr(args, flag) is not None:
            model_doc[key] = getattr(args, flag)
    for flag, key in (("steps", "steps"), ("batch_size", "batch_size"), ("lr", "learning_rate"), ("momentum", "momentum")):
        if getattr(args, flag) is not None:
            train_doc[key] = getattr(args, flag)
    return SegConfig(**model_doc), TrainConfig(**train_doc), doc


def cmd_train(args) -> int:
    doc = _load_json(args.config)
    model_cfg, train_cfg, doc = _train_configs(args, doc)
    ds = load_dataset_dir(args.data)
    counts = _split_counts(args.split) if args.split else tuple(doc.get("split", (len(ds) - len(ds) // 5, len(ds) // 5, 0)))
    train_set, val_set, _ = split(ds, counts, derive_seed(doc.get("seed", 0), "split"))
    model, history = train(build_model(model_cfg), train_set.pairs(), val_set.pairs(), train_cfg)
    save_model(args.out, model)
    if args.history:
        Path(args.history).write_text(json.dumps({
            "losses": history.losses, "val_miou": history.val_miou,
            "best_epoch": history.best_epoch, "best_val": history.best_val, "best_loss": history.best_loss,
        }, indent=2))
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = load_dataset_dir(args.data)
    if args.strategy:
        from .sweep import preprocess

        ds = preprocess(ds, parse_strategy(args.strategy))
    ious = evaluate_split(model, ds)
    defined = [v for v in ious.values() if v is not None]
    doc = {
        "iou": {c.short: v for c, v in ious.items()},
        "mean_iou": sum(defined) / len(defined) if defined else None,
        "images": len(ds),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    doc = _sweep_doc(args)
    out = Path(args.out)
    cache = os.environ.get(CACHE_ENV) or doc.get("cache_dir") or str(out / "cache")
    doc["cache_dir"] = cache
    try:
        cfg = SweepConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sweep config: {exc}") from exc
    report = run_sweep(cfg)
    write_outputs(report, out)
    for f in report.failures:
        print(f"strategy {f['strategy'] or '(none)'} failed: {f['error']}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    doc = _load_json(args.report)
    validate_report(doc)
    write_outputs(report_from_document(doc), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="framescope", description="Window-frame defect inspection: preprocessing, segmentation and strategy sweeps.")
    p.add_argument("--version", action="version", version=f"framescope {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("rectify", help="perspective-rectify one image")
    s.add_argument("--image", required=True)
    s.add_argument("--sidecar", help="JSON {image_id, src, dst_width, dst_height}")
    s.add_argument("--quad", nargs=4, metavar="X,Y", help="TL TR BR BL source corners")
    s.add_argument("--width", type=int, default=500)
    s.add_argument("--height", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rectify)

    s = sub.add_parser("preprocess", help="apply a strategy to a PNG or a directory of PNGs")
    s.add_argument("--input", required=True)
    s.add_argument("--strategy", required=True, help='e.g. "SR+CN+IN+CE"; "" for none')
    s.add_argument("--out", required=True)
    s.add_argument("--shadow-dir", help="directory of precomputed shadow-free <image_id>.png files")
    s.add_argument("--config")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="generate the synthetic window-frame dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int)
    s.add_argument("--side", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    for name, func, hlp in (("train", cmd_train, "train a segmentation model"),):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--data", required=True, help="dataset directory (annotations.json + images/)")
        s.add_argument("--out", required=True, help="checkpoint path")
        s.add_argument("--history")
        s.add_argument("--config")
        s.add_argument("--split", help="train,val,test counts")
        s.add_argument("--seed", type=int)
        s.add_argument("--side", type=int)
        s.add_argument("--base", type=int)
        s.add_argument("--depth", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--momentum", type=float)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="per-class IoU of a checkpoint on a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--strategy")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and evaluate one model per strategy")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--data")
    s.add_argument("--mode", choices=("subsets", "permutations"))
    s.add_argument("--strategy")
    s.add_argument("--steps", type=int)
    s.add_argument("--split")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="re-render CSV and charts from a report.json")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (FramescopeError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"framescope {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
