"""Preprocessing strategies, segmentation and ablation sweeps for window-frame defect inspection."""

__version__ = "0.1.0"

from .core import ClassId, MaskSet, StageId, read_png, resize_canonical, write_png
from .strategy import Strategy, apply_strategy, format_strategy, parse_strategy, validate_strategy

__all__ = [
    "ClassId",
    "MaskSet",
    "StageId",
    "Strategy",
    "apply_strategy",
    "format_strategy",
    "parse_strategy",
    "read_png",
    "resize_canonical",
    "validate_strategy",
    "write_png",
]
