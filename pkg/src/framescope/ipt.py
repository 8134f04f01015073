"""The four image-processing stages: shadow removal, colour and intensity
neutralisation, and contrast enhancement.

Every stage maps an ``(H, W, 3)`` float image in ``[0, 1]`` to a new image of
the same shape, clamped to ``[0, 1]`` on exit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import DimensionMismatch, FramescopeError, as_image, clamp, read_png


class MissingExternal(FramescopeError, FileNotFoundError):
    pass


class DegenerateWhite(FramescopeError, ValueError):
    pass


# Gaussian blurs use edge replication; it keeps linear illumination ramps
# close to linear up to the border.
BLUR_MODE = "nearest"


@dataclass(frozen=True)
class ClassicShadow:
    """Built-in shadow removal: divide luminance by a wide Gaussian blur of itself."""

    sigma_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.sigma_fraction <= 1.0:
            raise ValueError("sigma_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ExternalShadow:
    """Precomputed shadow-free images stored as ``<directory>/<image_id>.png``."""

    directory: str


ShadowBackend = ClassicShadow | ExternalShadow


@dataclass(frozen=True)
class WhitePoint:
    """Illuminant colour in linear RGB."""

    r: float
    g: float
    b: float

    def __post_init__(self):
        if not (self.r > 0 and self.g > 0 and self.b > 0):
            raise ValueError(f"white point components must be positive: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)


# sRGB primaries are defined against D65, so D65 is unit linear RGB
D65 = WhitePoint(1.0, 1.0, 1.0)


@dataclass(frozen=True)
class MsrParams:
    scales: tuple[float, ...] = (15.0, 80.0, 250.0)
    weights: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    epsilon: float = 1e-4
    reference_side: int = 500  # scales are given at this size and rescaled proportionally

    def __post_init__(self):
        if len(self.scales) != len(self.weights) or not self.scales:
            raise ValueError("scales and weights must be non-empty and of equal length")
        if any(s <= 0 for s in self.scales):
            raise ValueError("MSR sigmas must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("MSR weights must sum to 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class ColorParams:
    source_white: WhitePoint | None = None  # None: gray-world estimate
    target_white: WhitePoint = D65


@dataclass(frozen=True)
class StageParams:
    """Parameters for all four stages; stages absent from a strategy ignore theirs."""

    shadow: ShadowBackend = field(default_factory=ClassicShadow)
    color: ColorParams = field(default_factory=ColorParams)
    msr: MsrParams = field(default_factory=MsrParams)


def intensity(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=2)


# --- shadow removal -------------------------------------------------------

def shadow_removal(
    image, backend: ShadowBackend = ClassicShadow(), image_id: str | None = None, *, clip: bool = True
) -> np.ndarray:
    """Remove cast shadows.

    ``ExternalShadow`` returns the stored shadow-free image unchanged. The
    classic backend flattens luminance ``L = mean(R, G, B)`` by dividing it by
    its Gaussian blur (sigma = ``sigma_fraction * min(H, W)``), rescales to
    keep mean luminance, and applies the same gain to all three channels.
    """
    img = as_image(image)
    if isinstance(backend, ExternalShadow):
        if image_id is None:
            raise MissingExternal("external shadow backend needs an image id")
        path = Path(backend.directory) / f"{image_id}.png"
        if not path.is_file():
            raise MissingExternal(f"no shadow-free image at {path}")
        out = read_png(path)
        if out.shape != img.shape:
            raise DimensionMismatch(f"{path} is {out.shape[:2]}, expected {img.shape[:2]}")
        return out

    lum = intensity(img)
    sigma = backend.sigma_fraction * min(img.shape[:2])
    blur = np.maximum(gaussian_filter(lum, sigma, mode=BLUR_MODE), 1e-6)
    ratio = lum / blur
    mean_ratio = ratio.mean()
    if mean_ratio <= 0:
        return img.copy()
    # L' = ratio * mean(L) / mean(ratio); per-pixel gain L'/L simplifies to this
    gain = lum.mean() / (mean_ratio * blur)
    out = img * gain[..., None]
    return clamp(out) if clip else out


# --- colour neutralisation (von Kries in LMS) ------------------------------

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_LMS_HPE = np.array([
    [0.38971, 0.68898, -0.07868],
    [-0.22981, 1.18340, 0.04641],
    [0.00000, 0.00000, 1.00000],
])
RGB_TO_LMS = _XYZ_TO_LMS_HPE @ _SRGB_TO_XYZ
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)


def srgb_decode(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_encode(v: np.ndarray) -> np.ndarray:
    v = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1 / 2.4) - 0.055)


def gray_world(image, target_white: WhitePoint = D65) -> WhitePoint:
    """Gray-world illuminant estimate, rescaled to the target's component sum."""
    lin = srgb_decode(as_image(image)).reshape(-1, 3).mean(axis=0)
    total = lin.sum()
    if total <= 1e-12:
        raise DegenerateWhite("cannot estimate the illuminant of a black image")
    lin = lin * (target_white.as_array().sum() / total)
    return WhitePoint(*np.maximum(lin, 1e-12))


def adaptation_matrix(source: WhitePoint, target: WhitePoint) -> np.ndarray:
    """Linear-RGB 3x3 von Kries transform taking ``source`` to ``target``."""
    src_lms = RGB_TO_LMS @ source.as_array()
    dst_lms = RGB_TO_LMS @ target.as_array()
    if np.any(src_lms < 1e-9):
        raise DegenerateWhite(f"source white {source} has LMS response {src_lms}")
    return LMS_TO_RGB @ np.diag(dst_lms / src_lms) @ RGB_TO_LMS


def color_neutralize(image, source_white: WhitePoint | None = None, target_white: WhitePoint = D65) -> np.ndarray:
    img = as_image(image)
    if source_white is None:
        source_white = gray_world(img, target_white)
    m = adaptation_matrix(source_white, target_white)
    lin = srgb_decode(img) @ m.T
    return clamp(srgb_encode(lin))


# --- intensity neutralisation (multi-scale retinex) -------------------------

def msr_response(lum: np.ndarray, params: MsrParams) -> np.ndarray:
    eps = params.epsilon
    rescale = min(lum.shape) / params.reference_side
    log_lum = np.log(lum + eps)
    out = np.zeros_like(lum)
    for sigma, weight in zip(params.scales, params.weights):
        blur = gaussian_filter(lum, sigma * rescale, mode=BLUR_MODE)
        out += weight * (log_lum - np.log(blur + eps))
    return out


def intensity_neutralize(image, params: MsrParams = MsrParams(), *, clip: bool = True) -> np.ndarray:
    """Retinex on the mean-RGB intensity; each channel scaled by the same gain.

    ``clip=False`` returns the unclamped result, used to check that chromaticity
    is preserved before clamping.
    """
    img = as_image(image)
    lum = intensity(img)
    response = msr_response(lum, params)
    lo, hi = np.percentile(response, [1.0, 99.0])
    if hi - lo < 1e-9:
        return img.copy()
    # not clipped here: the exit clamp handles the tails, and a shared
    # per-pixel gain keeps chromaticity exact before that clamp
    stretched = (response - lo) / (hi - lo)
    gain = stretched / np.maximum(lum, params.epsilon)
    out = img * gain[..., None]
    return clamp(out) if clip else out


# --- contrast enhancement ---------------------------------------------------

def equalize_channel(channel: np.ndarray) -> np.ndarray:
    q = np.floor(np.clip(channel, 0.0, 1.0) * 255.0 + 0.5).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256)
    cdf = np.cumsum(hist) / q.size
    cdf_min = cdf[cdf > 0].min()
    if cdf_min >= 1.0:
        return channel.copy()
    lut = np.floor(255.0 * (cdf - cdf_min) / (1.0 - cdf_min) + 0.5)
    return np.clip(lut[q], 0, 255) / 255.0


def contrast_enhance(image) -> np.ndarray:
    """Histogram equalisation of each RGB channel independently (256 bins)."""
    img = as_image(image)
    return np.stack([equalize_channel(img[..., c]) for c in range(3)], axis=2)
