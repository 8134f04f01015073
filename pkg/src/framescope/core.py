"""Shared domain types: images, class ids, mask sets, stage ids, resizing and PNG io.

Images are plain ``numpy`` arrays of shape ``(H, W, 3)`` holding float64 RGB
samples in ``[0, 1]``. Helpers here validate and coerce; they never mutate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class FramescopeError(Exception):
    """Base class for all errors raised by the package."""


class DimensionMismatch(FramescopeError, ValueError):
    pass


class DuplicateStage(FramescopeError, ValueError):
    pass


class UnknownStage(FramescopeError, ValueError):
    pass


class ClassId(enum.IntEnum):
    WINDOW_FRAME = 0
    DENT = 1
    BEND = 2
    SCRATCH = 3

    @property
    def short(self) -> str:
        return _CLASS_SHORT[self]


_CLASS_SHORT = {
    ClassId.WINDOW_FRAME: "wframe",
    ClassId.DENT: "dent",
    ClassId.BEND: "bend",
    ClassId.SCRATCH: "scratch",
}

# highest priority first: defects shadow the frame
CLASS_PRIORITY = (ClassId.SCRATCH, ClassId.DENT, ClassId.BEND, ClassId.WINDOW_FRAME)


class StageId(enum.Enum):
    SR = 0
    CN = 1
    IN = 2
    CE = 3

    def __lt__(self, other: "StageId") -> bool:
        if not isinstance(other, StageId):
            return NotImplemented
        return self.value < other.value


def as_image(data, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as an RGB image buffer and return it as float64."""
    img = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionMismatch("image must have at least one pixel")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image samples must lie in [0, 1]")
    return img


def clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class MaskSet:
    """Per-class binary planes, ``planes[c]`` for each :class:`ClassId` ``c``."""

    planes: np.ndarray  # (4, H, W) bool

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=bool)
        if planes.ndim != 3 or planes.shape[0] != len(ClassId):
            raise DimensionMismatch(f"mask planes must be (4, H, W), got {planes.shape}")
        planes = planes.copy()
        planes.flags.writeable = False
        object.__setattr__(self, "planes", planes)

    @classmethod
    def empty(cls, height: int, width: int) -> "MaskSet":
        return cls(np.zeros((len(ClassId), height, width), dtype=bool))

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "MaskSet":
        """Build from a label map where 0 is background and ``c + 1`` is class ``c``."""
        labels = np.asarray(labels)
        return cls(np.stack([labels == c + 1 for c in ClassId]))

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1], self.planes.shape[2]

    def __getitem__(self, cls_id: ClassId) -> np.ndarray:
        return self.planes[int(cls_id)]

    def __eq__(self, other) -> bool:
        return isinstance(other, MaskSet) and np.array_equal(self.planes, other.planes)

    def labels(self) -> np.ndarray:
        """Label map (H, W) int; overlaps resolved by :data:`CLASS_PRIORITY`."""
        out = np.zeros(self.shape, dtype=np.int64)
        for cls_id in reversed(CLASS_PRIORITY):
            out[self.planes[int(cls_id)]] = int(cls_id) + 1
        return out

    def resolved(self) -> "MaskSet":
        """Planes made pairwise disjoint by class priority."""
        return MaskSet.from_labels(self.labels())

    def matches(self, image: np.ndarray) -> bool:
        return image.shape[:2] == self.shape


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) resampling weights along one axis."""
    if n_out == n_in:
        return np.eye(n_in)
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    if n_out < n_in:
        # area averaging: integrate the piecewise-constant input over each output cell
        for i in range(n_out):
            lo, hi = i * scale, (i + 1) * scale
            j0, j1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
            for j in range(j0, j1):
                overlap = min(hi, j + 1) - max(lo, j)
                if overlap > 0:
                    m[i, j] = overlap / scale
    else:
        # bilinear on pixel centres, edge-clamped
        src = (np.arange(n_out) + 0.5) * scale - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        j0 = np.floor(src).astype(int)
        j1 = np.minimum(j0 + 1, n_in - 1)
        frac = src - j0
        rows = np.arange(n_out)
        np.add.at(m, (rows, j0), 1.0 - frac)
        np.add.at(m, (rows, j1), frac)
    return m


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    img = as_image(image)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ry = _axis_matrix(h, height)
    rx = _axis_matrix(w, width)
    out = np.einsum("ij,jkc,lk->ilc", ry, img, rx, optimize=True)
    return clamp(out)


def resize_canonical(image: np.ndarray, side: int = 500) -> np.ndarray:
    """Stretch ``image`` to ``side x side``: area averaging when shrinking, bilinear when enlarging."""
    if side < 1:
        raise ValueError("side must be >= 1")
    return resize(image, side, side)


def resize_masks(masks: MaskSet, height: int, width: int) -> MaskSet:
    """Nearest-neighbour resampling of a mask set."""
    if masks.shape == (height, width):
        return masks
    ys = np.minimum(((np.arange(height) + 0.5) * masks.height / height).astype(int), masks.height - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * masks.width / width).astype(int), masks.width - 1)
    return MaskSet(masks.planes[:, ys][:, :, xs])


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.floor(clamp(np.asarray(image, dtype=np.float64)) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, optimize=False)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def write_mask_png(path, plane: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(plane, 255, 0).astype(np.uint8), mode="L").save(path, optimize=False)
