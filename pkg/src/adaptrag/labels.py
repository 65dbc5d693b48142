"""Unit importance labels and labeled units."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .segmenter import TextUnit


class UnitLabel(str, Enum):
    """A: critical for the diagnosis, B: helps retrieval, C: unimportant."""

    A = "A"
    B = "B"
    C = "C"


LABEL_ORDER = (UnitLabel.A, UnitLabel.B, UnitLabel.C)


def label_from_scores(scores: Sequence[float]) -> UnitLabel:
    # first maximum wins, which gives the A > B > C tie order
    best = 0
    for i in (1, 2):
        if scores[i] > scores[best]:
            best = i
    return LABEL_ORDER[best]


@dataclass(frozen=True)
class LabeledUnit:
    unit: TextUnit
    label: UnitLabel
    scores: tuple[float, float, float]

    @classmethod
    def from_scores(cls, unit: TextUnit, scores: Sequence[float]) -> "LabeledUnit":
        triple = (float(scores[0]), float(scores[1]), float(scores[2]))
        return cls(unit=unit, label=label_from_scores(triple), scores=triple)
