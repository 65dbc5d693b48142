"""Sentence segmentation shared by classification, masking and chunking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .errors import ConfigError, EmptyInput

DEFAULT_TERMINATORS = frozenset({"。", "！", "？", "；", ".", "!", "?", ";", "\n"})

# Terminators that only end a sentence when followed by whitespace or end of
# text, so decimals such as "3.5 mg" stay intact.
_LATIN_GUARDED = frozenset({"."})


@dataclass(frozen=True)
class TextUnit:
    index: int
    text: str
    span: tuple[int, int]


@dataclass(frozen=True)
class SegmentationConfig:
    terminators: frozenset[str] = field(default=DEFAULT_TERMINATORS)
    max_unit_chars: int = 512
    strip_whitespace: bool = True

    def __post_init__(self) -> None:
        if not self.terminators:
            raise ConfigError("terminators must be non-empty")
        if self.max_unit_chars < 8:
            raise ConfigError(f"max_unit_chars must be >= 8, got {self.max_unit_chars}")
        object.__setattr__(self, "terminators", frozenset(self.terminators))


DEFAULT_SEGMENTATION = SegmentationConfig()


def _ends_sentence(text: str, pos: int, terminators: frozenset[str]) -> bool:
    ch = text[pos]
    if ch not in terminators:
        return False
    if ch in _LATIN_GUARDED:
        return pos + 1 == len(text) or text[pos + 1].isspace()
    return True


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def _candidate_spans(text: str, config: SegmentationConfig) -> Iterator[tuple[int, int]]:
    start = 0
    for pos in range(len(text)):
        if _ends_sentence(text, pos, config.terminators):
            yield start, pos + 1
            start = pos + 1
    if start < len(text):
        yield start, len(text)


def _unit_spans(text: str, start: int, end: int, config: SegmentationConfig) -> Iterator[tuple[int, int]]:
    if config.strip_whitespace:
        start, end = _trim(text, start, end)
    if start >= end or text[start:end].isspace():
        return
    cap = config.max_unit_chars
    if end - start <= cap:
        yield start, end
        return
    for piece_start in range(start, end, cap):
        s, e = piece_start, min(piece_start + cap, end)
        if config.strip_whitespace:
            s, e = _trim(text, s, e)
        if s < e and not text[s:e].isspace():
            yield s, e


def segment(text: str, config: SegmentationConfig = DEFAULT_SEGMENTATION) -> list[TextUnit]:
    """Split ``text`` into ordered sentence units.

    A unit ends at a terminator (kept inside the unit) or is hard-split at
    ``config.max_unit_chars``. Whitespace-only candidates are dropped.
    Raises :class:`EmptyInput` for empty or all-whitespace text.
    """
    if not text or text.isspace():
        raise EmptyInput("cannot segment empty or whitespace-only text")
    units: list[TextUnit] = []
    for cand_start, cand_end in _candidate_spans(text, config):
        for s, e in _unit_spans(text, cand_start, cand_end, config):
            units.append(TextUnit(index=len(units), text=text[s:e], span=(s, e)))
    return units


def separators(text: str, units: list[TextUnit]) -> list[str]:
    """Return the source text found between consecutive units."""
    return [text[a.span[1]:b.span[0]] for a, b in zip(units, units[1:])]
