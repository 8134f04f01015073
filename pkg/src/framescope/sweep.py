"""Strategy sweeps: preprocess, train one model per strategy, compare IoUs.

A sweep trains every model from the same initial weights and the same
training seed, so the strategy is the only thing that varies between rows.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ClassId, FramescopeError, MaskSet, StageId, resize_canonical, resize_masks
from .dataio import Dataset, Sample, SynthSpec, generate_synthetic, load_dataset_dir, split
from .ipt import ClassicShadow, ColorParams, ExternalShadow, MsrParams, StageParams, WhitePoint
from .metrics import EmptyEvaluation, mean_iou
from .segnet import SegConfig, TrainConfig, build_model, predict_labels, stack_samples, train
from .strategy import Strategy, apply_strategy, format_strategy, parse_strategy, validate_strategy

log = logging.getLogger(__name__)

CLASS_KEYS = {c: c.short for c in ClassId}

# The fifteen strategies of the published comparison table; the sixteenth
# subset (SR+IN) has no row there.
REFERENCE_STRATEGIES = (
    "", "SR", "CN", "IN", "CE", "SR+CN", "CN+IN", "SR+CE", "CN+CE", "IN+CE",
    "SR+CN+CE", "SR+IN+CE", "SR+CN+IN", "CN+IN+CE", "SR+CN+IN+CE",
)


class MissingBaseline(FramescopeError, ValueError):
    pass


class InsufficientOrderings(FramescopeError, ValueError):
    pass


class EmptyStrategy(FramescopeError, ValueError):
    pass


# --- enumeration ------------------------------------------------------------

def enumerate_subsets(stages: Sequence[StageId] = tuple(StageId), params: StageParams | None = None) -> list[Strategy]:
    """All subsets in canonical stage order, sorted by size then lexicographically."""
    pool = sorted(set(stages))
    out = []
    for k in range(len(pool) + 1):
        for combo in itertools.combinations(pool, k):
            out.append(validate_strategy(combo, params))
    return out


def enumerate_permutations(strategy: Strategy) -> list[Strategy]:
    """Every ordering of ``strategy``'s stages, in lexicographic order of the canonical ranks."""
    if strategy.is_baseline:
        raise EmptyStrategy("cannot permute the empty strategy")
    return [validate_strategy(p, strategy.params) for p in itertools.permutations(sorted(strategy.stages))]


# --- config -----------------------------------------------------------------

def derive_seed(seed: int, name: str) -> int:
    """Named sub-seed so one user seed fans out to independent streams."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class SweepConfig:
    mode: str = "subsets"  # or "permutations"
    strategy: str = "SR+CN+IN+CE"  # permuted in permutations mode
    data: str | None = None  # dataset directory (annotations.json + images/)
    synth: SynthSpec | None = None  # used when data is None
    split: tuple[int, int, int] = (60, 20, 20)
    model: SegConfig = SegConfig()
    train: TrainConfig = TrainConfig()
    params: StageParams = StageParams()
    seed: int = 0
    # execution-only settings, excluded from the digest
    jobs: int = 1
    cache_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("subsets", "permutations"):
            raise ValueError(f"unknown sweep mode {self.mode!r}")
        if self.data is None and self.synth is None:
            raise ValueError("a sweep needs either a dataset directory or a synthetic spec")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def strategies(self) -> list[Strategy]:
        if self.mode == "subsets":
            return enumerate_subsets(tuple(StageId), self.params)
        return enumerate_permutations(parse_strategy(self.strategy, self.params))

    def to_dict(self, execution: bool = True) -> dict:
        doc = {
            "mode": self.mode,
            "strategy": self.strategy,
            "data": self.data,
            "synth": dataclasses.asdict(self.synth) if self.synth else None,
            "split": list(self.split),
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "params": params_to_dict(self.params),
            "seed": self.seed,
        }
        if execution:
            doc.update(jobs=self.jobs, cache_dir=self.cache_dir)
        return json.loads(json.dumps(doc))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(execution=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        if doc.get("synth") is not None:
            s = dict(doc["synth"])
            for k in ("shadow_factor", "color_gain", "contrast", "scratch_pixels"):
                if k in s:
                    s[k] = tuple(s[k])
            doc["synth"] = SynthSpec(**s)
        if "split" in doc:
            doc["split"] = tuple(doc["split"])
        if "model" in doc:
            doc["model"] = SegConfig(**doc["model"])
        if "train" in doc:
            doc["train"] = TrainConfig(**doc["train"])
        if "params" in doc:
            doc["params"] = params_from_dict(doc["params"])
        return cls(**doc)


def params_to_dict(p: StageParams) -> dict:
    if isinstance(p.shadow, ExternalShadow):
        shadow = {"kind": "external", "directory": p.shadow.directory}
    else:
        shadow = {"kind": "classic", "sigma_fraction": p.shadow.sigma_fraction}
    src = p.color.source_white
    return {
        "shadow": shadow,
        "color": {
            "source_white": None if src is None else [src.r, src.g, src.b],
            "target_white": [p.color.target_white.r, p.color.target_white.g, p.color.target_white.b],
        },
        "msr": {**dataclasses.asdict(p.msr), "scales": list(p.msr.scales), "weights": list(p.msr.weights)},
    }


def params_from_dict(doc: dict) -> StageParams:
    out = StageParams()
    if "shadow" in doc:
        s = dict(doc["shadow"])
        kind = s.pop("kind", "classic")
        shadow = ExternalShadow(**s) if kind == "external" else ClassicShadow(**s)
        out = dataclasses.replace(out, shadow=shadow)
    if "color" in doc:
        c = doc["color"]
        src = c.get("source_white")
        color = ColorParams(
            source_white=None if src is None else WhitePoint(*src),
            target_white=WhitePoint(*c.get("target_white", (1.0, 1.0, 1.0))),
        )
        out = dataclasses.replace(out, color=color)
    if "msr" in doc:
        m = dict(doc["msr"])
        for k in ("scales", "weights"):
            if k in m:
                m[k] = tuple(m[k])
        out = dataclasses.replace(out, msr=MsrParams(**m))
    return out


def desk_config(**overrides) -> SweepConfig:
    """The documented desk-scale sweep: seed 42, 64x64, 60/20/20, low contrast with shadows."""
    base = SweepConfig(
        mode="subsets",
        synth=SynthSpec(
            count=100, side=64, seed=42,
            contrast=(0.3, 0.5), shadow_probability=0.6, gradient_amplitude=0.5,
        ),
        split=(60, 20, 20),
        model=SegConfig(input_side=64, base_channels=8, depth=3, seed=derive_seed(42, "init")),
        train=TrainConfig(learning_rate=0.1, momentum=0.9, steps=450, batch_size=4, grad_clip=1.0, seed=derive_seed(42, "train")),
        seed=42,
    )
    return dataclasses.replace(base, **overrides)


# --- preprocessing cache ----------------------------------------------------

class PreprocessCache:
    """Content-addressed store of preprocessed images (``<key>.npy``)."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(image: np.ndarray, strategy: Strategy, image_id: str | None = None) -> str:
        h = hashlib.sha256()
        arr = np.ascontiguousarray(image, dtype=np.float64)
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
        h.update(strategy.canonical_encoding())
        if any(s is StageId.SR for s in strategy.stages) and isinstance(strategy.params.shadow, ExternalShadow):
            h.update(f"id={image_id}".encode())
        return h.hexdigest()

    def apply(self, strategy: Strategy, image: np.ndarray, image_id: str | None = None) -> np.ndarray:
        path = self.directory / f"{self.key(image, strategy, image_id)}.npy"
        if path.is_file():
            self.hits += 1
            return np.load(path)
        self.misses += 1
        out = apply_strategy(strategy, image, image_id)
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, out)
        os.replace(tmp, path)
        return out


def preprocess(dataset: Dataset, strategy: Strategy, cache: PreprocessCache | None = None) -> Dataset:
    out = []
    for s in dataset:
        img = cache.apply(strategy, s.image, s.image_id) if cache else apply_strategy(strategy, s.image, s.image_id)
        out.append(Sample(s.image_id, img, s.masks))
    return Dataset(out, dict(dataset.class_table))


# --- results ----------------------------------------------------------------

@dataclass
class StrategyResult:
    strategy: Strategy
    iou: dict[ClassId, float | None]
    val_best: float = float("nan")
    loss: float = float("nan")

    @property
    def label(self) -> str:
        return format_strategy(self.strategy)


@dataclass
class SweepReport:
    rows: list[StrategyResult]
    mode: str = "subsets"
    config_digest: str = ""
    failures: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def baseline(self) -> StrategyResult:
        found = [r for r in self.rows if r.strategy.is_baseline]
        if not found:
            raise MissingBaseline("the report has no empty-strategy row")
        return found[0]

    def to_json(self) -> str:
        return json.dumps(report_document(self), indent=2, sort_keys=True) + "\n"


def _r(x):
    return None if x is None or not np.isfinite(x) else round(float(x), 6)


def impact_table(report: SweepReport) -> dict[ClassId, list[tuple[str, float]]]:
    """Per class, ``(strategy, IoU - baseline IoU)`` sorted by descending delta."""
    base = report.baseline()
    table = {}
    for cls_id in ClassId:
        b = base.iou.get(cls_id)
        if b is None:
            table[cls_id] = []
            continue
        rows = [(r.label, r.iou[cls_id] - b) for r in report.rows if r.iou.get(cls_id) is not None]
        table[cls_id] = sorted(rows, key=lambda t: -t[1])
    return table


def order_spread(report: SweepReport) -> dict[ClassId, float]:
    """Per class ``max - min`` IoU across the evaluated orderings."""
    if len(report.rows) < 2:
        raise InsufficientOrderings("need at least two orderings")
    out = {}
    for cls_id in ClassId:
        vals = [r.iou[cls_id] for r in report.rows if r.iou.get(cls_id) is not None]
        if len(vals) >= 2:
            out[cls_id] = max(vals) - min(vals)
    return out


def report_document(report: SweepReport) -> dict:
    doc = {
        "config_digest": report.config_digest,
        "mode": report.mode,
        "rows": [
            {
                "strategy": r.label,
                "iou": {CLASS_KEYS[c]: _r(r.iou.get(c)) for c in ClassId},
                "val_best": _r(r.val_best),
                "loss": _r(r.loss),
            }
            for r in report.rows
        ],
        "baseline": None,
        "deltas": {},
        "spreads": {},
        "failures": report.failures,
        "notes": report.notes,
    }
    if any(r.strategy.is_baseline for r in report.rows):
        doc["baseline"] = ""
        doc["deltas"] = {
            CLASS_KEYS[c]: [{"strategy": s, "delta": _r(d)} for s, d in rows]
            for c, rows in impact_table(report).items()
        }
    if report.mode == "permutations" and len(report.rows) >= 2:
        doc["spreads"] = {CLASS_KEYS[c]: _r(v) for c, v in order_spread(report).items()}
    return doc


_IOU_SCHEMA = {
    "type": "object",
    "properties": {k: {"type": ["number", "null"], "minimum": 0, "maximum": 1} for k in CLASS_KEYS.values()},
    "required": list(CLASS_KEYS.values()),
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["config_digest", "mode", "rows", "baseline", "deltas", "spreads", "failures", "notes"],
    "properties": {
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$|^$"},
        "mode": {"enum": ["subsets", "permutations"]},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["strategy", "iou", "val_best", "loss"],
                "properties": {
                    "strategy": {"type": "string", "pattern": "^((SR|CN|IN|CE)(\\+(SR|CN|IN|CE))*)?$"},
                    "iou": _IOU_SCHEMA,
                    "val_best": {"type": ["number", "null"]},
                    "loss": {"type": ["number", "null"], "minimum": 0},
                },
            },
        },
        "baseline": {"type": ["string", "null"]},
        "deltas": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["strategy", "delta"],
                    "properties": {"strategy": {"type": "string"}, "delta": {"type": "number"}},
                },
            },
        },
        "spreads": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "failures": {
            "type": "array",
            "items": {"type": "object", "required": ["strategy", "error"]},
        },
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}


def validate_report(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, REPORT_SCHEMA)


def report_from_document(doc: dict) -> SweepReport:
    rows = []
    for row in doc["rows"]:
        iou = {c: row["iou"].get(CLASS_KEYS[c]) for c in ClassId}
        rows.append(StrategyResult(
            parse_strategy(row["strategy"]), iou,
            float("nan") if row["val_best"] is None else row["val_best"],
            float("nan") if row["loss"] is None else row["loss"],
        ))
    return SweepReport(rows, doc["mode"], doc["config_digest"], list(doc["failures"]), list(doc["notes"]))


CSV_HEADER = ("IPT Strategy", "Test Bend IoU", "Test Dent IoU", "Test Scratch IoU", "Test Wframe IoU")
_CSV_ORDER = (ClassId.BEND, ClassId.DENT, ClassId.SCRATCH, ClassId.WINDOW_FRAME)


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for r in report.rows:
        cells = ["" if r.iou.get(c) is None else f"{r.iou[c]:.3f}" for c in _CSV_ORDER]
        buf.write(",".join([r.strategy.label()] + cells) + "\n")
    return buf.getvalue()


_CHART_TITLES = {
    ClassId.BEND: "Bend",
    ClassId.DENT: "Dent",
    ClassId.SCRATCH: "Scratch",
    ClassId.WINDOW_FRAME: "Window frame",
}


def impact_svg(report: SweepReport, cls_id: ClassId) -> str:
    """Bar chart of IoU change versus the baseline for one class."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = impact_table(report)[cls_id]
    with matplotlib.rc_context({"svg.hashsalt": "framescope", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 0.3 * max(len(rows), 1) + 1.2))
        labels = [s.replace("+", " + ") or "Without IPT" for s, _ in rows]
        vals = [d for _, d in rows]
        colors = ["#3a7d44" if v >= 0 else "#b23a48" for v in vals]
        ax.barh(range(len(rows)), vals, color=colors)
        ax.set_yticks(range(len(rows)), labels)
        ax.invert_yaxis()
        ax.axvline(0, color="black", linewidth=0.8)
        ax.set_xlabel("IoU change vs. no preprocessing")
        ax.set_title(f"Strategy impact: {_CHART_TITLES[cls_id]}")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def write_outputs(report: SweepReport, out_dir) -> list[Path]:
    """``report.json``, ``report.csv`` and (with a baseline) ``impact_<class>.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "report.csv"]
    doc = report_document(report)
    validate_report(doc)
    written[0].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    written[1].write_text(report_csv(report))
    if doc["baseline"] is not None:
        for cls_id in ClassId:
            path = out / f"impact_{CLASS_KEYS[cls_id]}.svg"
            path.write_text(impact_svg(report, cls_id))
            written.append(path)
    return written


# --- running ----------------------------------------------------------------

def load_sweep_data(cfg: SweepConfig, jobs: int = 1) -> Dataset:
    if cfg.data is not None:
        ds = load_dataset_dir(cfg.data)
    else:
        ds = generate_synthetic(cfg.synth, jobs=jobs)
    side = cfg.model.input_side
    samples = []
    for s in ds:
        if s.image.shape[:2] != (side, side):
            s = Sample(s.image_id, resize_canonical(s.image, side), resize_masks(s.masks, side, side))
        samples.append(s)
    return Dataset(samples, ds.class_table)


def evaluate_split(model, test: Dataset) -> dict[ClassId, float | None]:
    images, labels = stack_samples(test.pairs(), model.dtype)
    preds = np.concatenate([predict_labels(model, images[i:i + 8]) for i in range(0, len(images), 8)])
    try:
        per_class, _ = mean_iou([MaskSet.from_labels(p) for p in preds], [MaskSet.from_labels(t) for t in labels])
    except EmptyEvaluation:
        return {c: None for c in ClassId}
    return {c: v.iou for c, v in per_class.items()}


def run_strategy(cfg: SweepConfig, strategy: Strategy, parts: tuple[Dataset, Dataset, Dataset]) -> StrategyResult:
    cache = PreprocessCache(cfg.cache_dir) if cfg.cache_dir else None
    train_set, val_set, test_set = (preprocess(p, strategy, cache) for p in parts)
    model = build_model(cfg.model)
    best, history = train(model, train_set.pairs(), val_set.pairs(), cfg.train)
    return StrategyResult(strategy, evaluate_split(best, test_set), history.best_val, history.best_loss)


def _run_one(args):
    cfg, strategy, parts = args
    try:
        return run_strategy(cfg, strategy, parts), None
    except Exception as exc:  # recorded, the sweep carries on
        log.warning("strategy %s failed: %s", format_strategy(strategy), exc)
        return None, {"strategy": format_strategy(strategy), "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(cfg: SweepConfig, dataset: Dataset | None = None) -> SweepReport:
    """Train and evaluate one model per strategy; results are ordered by strategy, not completion."""
    ds = dataset if dataset is not None else load_sweep_data(cfg, cfg.jobs)
    parts = split(ds, cfg.split, derive_seed(cfg.seed, "split"))
    strategies = cfg.strategies()
    tasks = [(cfg, s, parts) for s in strategies]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]
    rows = [r for r, _ in outcomes if r is not None]
    failures = [f for _, f in outcomes if f is not None]
    notes = []
    if cfg.mode == "subsets":
        extra = [format_strategy(s) for s in strategies if format_strategy(s) not in REFERENCE_STRATEGIES]
        if extra:
            notes.append(
                f"{len(strategies)} subsets evaluated; {', '.join(extra)} has no row in the 15-strategy reference table"
            )
    return SweepReport(rows, cfg.mode, cfg.digest(), failures, notes)
