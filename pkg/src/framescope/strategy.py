"""Strategies: ordered, duplicate-free sequences of processing stages."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import ipt
from .core import DuplicateStage, StageId, UnknownStage, as_image
from .ipt import StageParams


@dataclass(frozen=True)
class Strategy:
    stages: tuple[StageId, ...] = ()
    params: StageParams = field(default_factory=StageParams)

    def __post_init__(self):
        stages = tuple(self.stages)
        seen = set()
        for s in stages:
            if not isinstance(s, StageId):
                raise TypeError(f"not a stage id: {s!r}")
            if s in seen:
                raise DuplicateStage(f"stage {s.name} appears twice")
            seen.add(s)
        object.__setattr__(self, "stages", stages)

    def __len__(self) -> int:
        return len(self.stages)

    def __str__(self) -> str:
        return format_strategy(self)

    @property
    def is_baseline(self) -> bool:
        return not self.stages

    def label(self) -> str:
        """Table-style label, e.g. ``"SR + CN"``; the empty strategy is ``"Without IPT"``."""
        return " + ".join(s.name for s in self.stages) if self.stages else "Without IPT"

    def canonical_encoding(self) -> bytes:
        """Stable byte encoding of stages and the parameters of the stages used."""
        used = {}
        for s in self.stages:
            if s is StageId.SR:
                backend = self.params.shadow
                used["SR"] = {"kind": type(backend).__name__, **dataclasses.asdict(backend)}
            elif s is StageId.CN:
                used["CN"] = dataclasses.asdict(self.params.color)
            elif s is StageId.IN:
                used["IN"] = dataclasses.asdict(self.params.msr)
            else:
                used["CE"] = {}
        doc = {"stages": [s.name for s in self.stages], "params": used}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def validate_strategy(stages: Iterable[StageId], params: StageParams | None = None) -> Strategy:
    return Strategy(tuple(stages), params if params is not None else StageParams())


def parse_strategy(text: str, params: StageParams | None = None) -> Strategy:
    """Parse ``"SR+CN+IN+CE"`` style text (case-insensitive, spaces allowed)."""
    text = text.strip()
    if not text or text.lower() in ("none", "without ipt"):
        return validate_strategy([], params)
    stages = []
    for token in text.split("+"):
        code = token.strip().upper()
        try:
            stages.append(StageId[code])
        except KeyError:
            raise UnknownStage(token.strip()) from None
    return validate_strategy(stages, params)


def format_strategy(strategy: Strategy) -> str:
    return "+".join(s.name for s in strategy.stages)


def apply_stage(stage: StageId, image: np.ndarray, params: StageParams, image_id: str | None = None) -> np.ndarray:
    if stage is StageId.SR:
        return ipt.shadow_removal(image, params.shadow, image_id)
    if stage is StageId.CN:
        return ipt.color_neutralize(image, params.color.source_white, params.color.target_white)
    if stage is StageId.IN:
        return ipt.intensity_neutralize(image, params.msr)
    return ipt.contrast_enhance(image)


def apply_strategy(strategy: Strategy, image, image_id: str | None = None) -> np.ndarray:
    """Apply the stages left to right. The empty strategy returns an exact copy."""
    out = as_image(image, copy=True)
    for stage in strategy.stages:
        out = apply_stage(stage, out, strategy.params, image_id)
    return out
