"""COCO polygon ingestion, mask rasterisation, splitting and a synthetic
window-frame defect generator."""
from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    ClassId,
    DimensionMismatch,
    FramescopeError,
    MaskSet,
    read_png,
    write_mask_png,
    write_png,
)


class ParseError(FramescopeError, ValueError):
    pass


class UnknownCategory(FramescopeError, ValueError):
    pass


class MissingImageFile(FramescopeError, FileNotFoundError):
    pass


class DegeneratePolygon(FramescopeError, ValueError):
    pass


class InsufficientData(FramescopeError, ValueError):
    pass


class Sample(NamedTuple):
    image_id: str
    image: np.ndarray
    masks: MaskSet


CATEGORY_NAMES = {
    ClassId.WINDOW_FRAME: "window_frame",
    ClassId.DENT: "dent",
    ClassId.BEND: "bend",
    ClassId.SCRATCH: "scratch",
}

_ALIASES = {
    "windowframe": ClassId.WINDOW_FRAME,
    "windowframes": ClassId.WINDOW_FRAME,
    "wframe": ClassId.WINDOW_FRAME,
    "frame": ClassId.WINDOW_FRAME,
    "dent": ClassId.DENT,
    "dents": ClassId.DENT,
    "bend": ClassId.BEND,
    "bends": ClassId.BEND,
    "scratch": ClassId.SCRATCH,
    "scratches": ClassId.SCRATCH,
}


def class_for_name(name: str) -> ClassId:
    key = re.sub(r"[^a-z]", "", name.lower())
    try:
        return _ALIASES[key]
    except KeyError:
        raise UnknownCategory(f"unknown category {name!r}") from None


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)
    class_table: dict[str, ClassId] = field(default_factory=lambda: {v: k for k, v in CATEGORY_NAMES.items()})

    def __post_init__(self):
        ids = [s.image_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("image ids must be unique")
        for s in self.samples:
            if s.image.shape[:2] != s.masks.shape:
                raise DimensionMismatch(f"masks of {s.image_id} do not match its image")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def pairs(self) -> list[tuple[np.ndarray, MaskSet]]:
        return [(s.image, s.masks) for s in self.samples]


# --- rasterisation ----------------------------------------------------------

def _as_vertices(poly) -> np.ndarray:
    pts = np.asarray(poly, dtype=np.float64)
    if pts.ndim == 1:
        if pts.size % 2:
            raise DegeneratePolygon("flat polygon list has an odd number of coordinates")
        pts = pts.reshape(-1, 2)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegeneratePolygon("a polygon needs at least 3 (x, y) vertices")
    return pts


def rasterize(polygons: Sequence, side: int, height: int | None = None) -> np.ndarray:
    """Pixels whose centre ``(col + 0.5, row + 0.5)`` is inside any polygon (even-odd).

    Polygons are ``[(x, y), ...]`` vertex lists or COCO flat ``[x0, y0, x1, ...]``
    lists. The canvas is ``side`` wide and ``height`` (default ``side``) tall.
    """
    height = side if height is None else height
    px = (np.arange(side) + 0.5)[None, :]
    py = (np.arange(height) + 0.5)[:, None]
    out = np.zeros((height, side), dtype=bool)
    for poly in polygons:
        pts = _as_vertices(poly)
        inside = np.zeros_like(out)
        for (xi, yi), (xj, yj) in zip(pts, np.roll(pts, -1, axis=0)):
            if yi == yj:
                continue
            straddles = (yi > py) != (yj > py)
            # px < xi + (py - yi) (xj - xi) / (yj - yi), without the division
            lhs = (px - xi) * (yj - yi)
            rhs = (py - yi) * (xj - xi)
            left = lhs < rhs if yj > yi else lhs > rhs
            inside ^= straddles & left
        out |= inside
    return out


def plane_to_polygons(plane: np.ndarray) -> list[list[float]]:
    """Exact polygon cover of a binary plane: one rectangle per horizontal run."""
    polys = []
    for y, row in enumerate(np.asarray(plane, dtype=bool)):
        padded = np.concatenate([[False], row, [False]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        for x0, x1 in zip(edges[::2], edges[1::2]):
            polys.append([float(x0), float(y), float(x1), float(y), float(x1), float(y + 1), float(x0), float(y + 1)])
    return polys


# --- COCO -------------------------------------------------------------------

def load_coco(annotation_file, image_dir) -> Dataset:
    """Load a COCO polygon-segmentation file; masks are resolved by class priority."""
    path = Path(annotation_file)
    try:
        doc = json.loads(path.read_text())
        images, annotations, categories = doc["images"], doc["annotations"], doc["categories"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: not a COCO annotation file ({exc})") from exc
    cat_class = {}
    for cat in categories:
        cat_class[cat["id"]] = class_for_name(cat["name"])
    planes: dict = {}
    meta = {}
    for im in images:
        meta[im["id"]] = im
        planes[im["id"]] = np.zeros((len(ClassId), int(im["height"]), int(im["width"])), dtype=bool)
    for ann in annotations:
        seg = ann.get("segmentation")
        if not isinstance(seg, list):
            raise ParseError(f"annotation {ann.get('id')}: only polygon segmentations are supported")
        if ann["image_id"] not in planes:
            raise ParseError(f"annotation {ann.get('id')} refers to unknown image {ann['image_id']}")
        if ann["category_id"] not in cat_class:
            raise UnknownCategory(f"annotation {ann.get('id')} uses undeclared category {ann['category_id']}")
        target = planes[ann["image_id"]]
        cls_id = cat_class[ann["category_id"]]
        h, w = target.shape[1:]
        target[int(cls_id)] |= rasterize(seg, w, h)
    samples = []
    for image_id, im in meta.items():
        img_path = Path(image_dir) / im["file_name"]
        if not img_path.is_file():
            raise MissingImageFile(f"missing image file {img_path}")
        img = read_png(img_path)
        masks = MaskSet(planes[image_id]).resolved()
        if img.shape[:2] != masks.shape:
            raise DimensionMismatch(f"{img_path} is {img.shape[:2]}, annotation says {masks.shape}")
        samples.append(Sample(Path(im["file_name"]).stem, img, masks))
    table = {c["name"]: cat_class[c["id"]] for c in categories}
    return Dataset(samples, table)


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``images/*.png``, ``masks/<class>/*.png`` and a COCO ``annotations.json``."""
    root = Path(directory)
    images, annotations = [], []
    ann_id = 1
    for idx, s in enumerate(dataset, start=1):
        write_png(root / "images" / f"{s.image_id}.png", s.image)
        h, w = s.masks.shape
        images.append({"id": idx, "file_name": f"{s.image_id}.png", "width": w, "height": h})
        for cls_id in ClassId:
            plane = s.masks[cls_id]
            write_mask_png(root / "masks" / CATEGORY_NAMES[cls_id] / f"{s.image_id}.png", plane)
            if plane.any():
                ys, xs = np.nonzero(plane)
                annotations.append({
                    "id": ann_id,
                    "image_id": idx,
                    "category_id": int(cls_id) + 1,
                    "segmentation": plane_to_polygons(plane),
                    "area": int(plane.sum()),
                    "bbox": [int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)],
                    "iscrowd": 0,
                })
                ann_id += 1
    categories = [{"id": int(c) + 1, "name": CATEGORY_NAMES[c], "supercategory": "window"} for c in ClassId]
    doc = {"images": images, "annotations": annotations, "categories": categories}
    (root / "annotations.json").write_text(json.dumps(doc, separators=(",", ":")))
    return root


def load_dataset_dir(directory) -> Dataset:
    root = Path(directory)
    return load_coco(root / "annotations.json", root / "images")


# --- splitting --------------------------------------------------------------

def split(dataset: Dataset, counts: tuple[int, int, int], seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then the first ``train``, next ``val`` and next ``test`` items."""
    if any(c < 0 for c in counts):
        raise ValueError("split counts must be non-negative")
    if sum(counts) > len(dataset):
        raise InsufficientData(f"asked for {sum(counts)} items, dataset has {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    parts, start = [], 0
    for c in counts:
        parts.append(Dataset([dataset[int(i)] for i in order[start:start + c]], dict(dataset.class_table)))
        start += c
    return tuple(parts)


# --- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic corpus: a metal frame band with defects and lighting nuisances."""

    count: int = 20
    side: int = 64
    dent_rate: float = 0.6
    bend_rate: float = 0.6
    scratch_rate: float = 0.7
    gradient_amplitude: float = 0.5
    shadow_probability: float = 0.5
    shadow_factor: tuple[float, float] = (0.4, 0.7)
    color_gain: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.35, 0.6)
    noise_sigma: float = 0.01
    scratch_pixels: tuple[int, int] = (8, 120)
    seed: int = 0

    def __post_init__(self):
        for name in ("dent_rate", "bend_rate", "scratch_rate", "gradient_amplitude", "shadow_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.shadow_factor
        if not 0.4 <= lo <= hi <= 0.7:
            raise ValueError("shadow_factor must be a sub-range of [0.4, 0.7]")
        if self.side < 32:
            raise ValueError("side must be >= 32")
        if self.count < 0 or self.noise_sigma < 0:
            raise ValueError("count and noise_sigma must be non-negative")
        if not 0 < self.contrast[0] <= self.contrast[1] <= 1:
            raise ValueError("contrast range must lie in (0, 1]")
        if not 0 < self.color_gain[0] <= self.color_gain[1]:
            raise ValueError("color_gain range must be positive")
        if not 1 <= self.scratch_pixels[0] <= self.scratch_pixels[1]:
            raise ValueError("scratch_pixels must be a (min, max) pair with 1 <= min <= max")


def _segment_pixels(p0, p1, width: int, side: int) -> np.ndarray:
    """Mask of pixels within ``width / 2`` of segment p0-p1 (pixel centres)."""
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    d = np.asarray(p1) - np.asarray(p0)
    length2 = max(float(d @ d), 1e-12)
    t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / length2, 0.0, 1.0)
    dist2 = (xx - p0[0] - t * d[0]) ** 2 + (yy - p0[1] - t * d[1]) ** 2
    return dist2 <= (width / 2.0) ** 2 + 1e-9


def _draw_scratch(rng, band: np.ndarray, spec: SynthSpec) -> np.ndarray:
    side = spec.side
    ys, xs = np.nonzero(band)
    lo, hi = spec.scratch_pixels
    for _ in range(50):
        k = rng.integers(len(xs))
        pts = [np.array([xs[k] + 0.5, ys[k] + 0.5])]
        for _ in range(int(rng.integers(1, 4))):
            angle = rng.uniform(0, 2 * np.pi)
            length = rng.uniform(0.06, 0.18) * side
            pts.append(pts[-1] + length * np.array([np.cos(angle), np.sin(angle)]))
        width = int(rng.integers(1, 3))
        mask = np.zeros((side, side), dtype=bool)
        for a, b in zip(pts[:-1], pts[1:]):
            mask |= _segment_pixels(a, b, width, side)
        mask &= band
        if lo <= mask.sum() <= hi:
            return mask
    return np.zeros((side, side), dtype=bool)


def _frame_band(rng, side: int) -> np.ndarray:
    m = int(rng.integers(round(0.06 * side), round(0.14 * side) + 1))
    t = int(rng.integers(round(0.16 * side), round(0.24 * side) + 1))
    band = np.zeros((side, side), dtype=bool)
    band[m:side - m, m:side - m] = True
    band[m + t:side - m - t, m + t:side - m - t] = False
    return band


def synth_sample(spec: SynthSpec, index: int) -> Sample:
    """One synthetic image; depends only on ``(spec, index)``."""
    rng = np.random.default_rng([spec.seed, index])
    side = spec.side
    yy, xx = np.mgrid[0:side, 0:side] + 0.5

    wall = rng.uniform(0.55, 0.8, size=3)
    img = np.broadcast_to(wall, (side, side, 3)).copy()
    img += 0.03 * np.sin(xx[..., None] / side * rng.uniform(2, 6) + rng.uniform(0, 6))

    band = _frame_band(rng, side)
    metal = rng.uniform(0.3, 0.45) + rng.uniform(-0.04, 0.04, size=3)
    brushed = np.repeat(0.02 * rng.standard_normal((side, 1)), side, axis=1)
    img[band] = metal + brushed[band][:, None]

    planes = np.zeros((len(ClassId), side, side), dtype=bool)
    planes[ClassId.WINDOW_FRAME] = band
    ys, xs = np.nonzero(band)

    if rng.random() < spec.bend_rate:
        k = rng.integers(len(xs))
        cx, cy = xs[k] + 0.5, ys[k] + 0.5
        angle = rng.uniform(0, np.pi)
        half = rng.uniform(1.5, 3.0) * side / 64
        dist = (xx - cx) * np.sin(angle) - (yy - cy) * np.cos(angle)
        along = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
        reach = rng.uniform(0.12, 0.25) * side
        mask = (np.abs(dist) < half) & (np.abs(along) < reach) & band
        ridge = np.where(mask, np.cos(0.5 * np.pi * dist / half), 0.0)
        img += (rng.uniform(0.18, 0.3) * ridge)[..., None]
        planes[ClassId.BEND] = mask

    if rng.random() < spec.dent_rate:
        k = rng.integers(len(xs))
        cx, cy = xs[k] + 0.5, ys[k] + 0.5
        rx, ry = rng.uniform(2.0, 5.0, size=2) * side / 64
        r2 = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        mask = (r2 < 1.0) & band
        depth = rng.uniform(0.35, 0.55)
        img *= np.where(mask, 1.0 - depth * (1.0 - r2), 1.0)[..., None]
        planes[ClassId.DENT] = mask

    if rng.random() < spec.scratch_rate:
        mask = _draw_scratch(rng, band, spec)
        delta = rng.uniform(0.2, 0.3) * rng.choice([-1.0, 1.0])
        img[mask] += delta
        planes[ClassId.SCRATCH] = mask

    # nuisance factors
    angle = rng.uniform(0, 2 * np.pi)
    ramp = ((xx * np.cos(angle) + yy * np.sin(angle)) / side)
    ramp = ramp - ramp.mean()
    img *= (1.0 + spec.gradient_amplitude * rng.uniform(0.5, 1.0) * ramp)[..., None]

    if rng.random() < spec.shadow_probability:
        # a random triangle anchored on one image edge
        corner = rng.uniform(0, side, size=(3, 2))
        corner[0, int(rng.integers(2))] = 0.0
        shade = rasterize([corner], side)
        img *= np.where(shade, rng.uniform(*spec.shadow_factor), 1.0)[..., None]

    img *= rng.uniform(*spec.color_gain, size=3)
    c = rng.uniform(*spec.contrast)
    mean = img.mean(axis=(0, 1), keepdims=True)
    img = mean + c * (img - mean)
    img += spec.noise_sigma * rng.standard_normal(img.shape)
    img = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0

    return Sample(f"synth_{index:05d}", img, MaskSet(planes).resolved())


def generate_synthetic(spec: SynthSpec, jobs: int = 1) -> Dataset:
    """Deterministic synthetic dataset; per-image RNG streams come from ``(seed, index)``."""
    if jobs > 1 and spec.count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(synth_sample, [spec] * spec.count, range(spec.count)))
    else:
        samples = [synth_sample(spec, i) for i in range(spec.count)]
    return Dataset(samples)
