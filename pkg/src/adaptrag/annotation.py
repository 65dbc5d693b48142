"""Masking-based training label generation for the unit classifier.

For each record the LLM first diagnoses the full text. If that diagnosis
matches the physician reference, every unit is masked in turn and labeled A
when its removal breaks the diagnosis, C otherwise. If the full-text diagnosis
is already wrong, each unit is instead used as a BM25 query and labeled B when
it retrieves a document about the reference disease, C otherwise.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import BackendError, DataError, EmptyInput, EmptyQuery, IndexOutOfRange, SegmentationFailure, TooFewUnits
from .evaluation import LINK_THRESHOLD, extract_mentions, normalize, similarity
from .index import KnowledgeIndex
from .jsonl import read_jsonl
from .labels import UnitLabel
from .llm import LlmGateway, PromptTemplate, TemplateName, render
from .segmenter import DEFAULT_SEGMENTATION, SegmentationConfig, TextUnit, segment

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnotationRecord:
    record_id: str
    text: str
    reference_diagnosis: str

    def __post_init__(self) -> None:
        if not self.text.strip() or not self.reference_diagnosis.strip():
            raise DataError(f"record {self.record_id!r}: text and reference_diagnosis must be non-empty")


@dataclass(frozen=True)
class MaskedVariant:
    masked_index: int
    text: str
    unit_count: int


class Strategy(str, Enum):
    S1 = "S1"
    S2 = "S2"


@dataclass(frozen=True)
class AnnotationOutcome:
    record_id: str
    unit_index: int
    unit_text: str
    label: UnitLabel
    strategy: Strategy
    full_diag: str
    masked_diag: str | None = None
    probe_hit: bool | None = None

    def audit_row(self) -> dict:
        row = asdict(self)
        row["label"] = self.label.value
        row["strategy"] = self.strategy.value
        return row


@dataclass(frozen=True)
class AnnotationConfig:
    m: int = 5
    match_threshold: float = LINK_THRESHOLD
    segmentation: SegmentationConfig = DEFAULT_SEGMENTATION


@dataclass
class RecordAnnotation:
    record_id: str
    strategy: Strategy
    outcomes: list[AnnotationOutcome] = field(default_factory=list)
    skipped: int = 0
    llm_calls: int = 0
    index_probes: int = 0

    @property
    def labels(self) -> list[UnitLabel]:
        return [o.label for o in self.outcomes]


def load_emr(path: str | Path, require_reference: bool = True) -> list[dict]:
    """Read EMR JSONL rows ``{"id", "text", "reference_diagnosis"}``."""
    rows = []
    for lineno, row in enumerate(read_jsonl(path), 1):
        if "id" not in row or not str(row.get("text", "")).strip():
            raise DataError(f"{path}:{lineno}: EMR rows need 'id' and non-empty 'text'")
        if require_reference and not str(row.get("reference_diagnosis", "")).strip():
            raise DataError(f"{path}:{lineno}: missing reference_diagnosis")
        rows.append({"id": str(row["id"]), "text": row["text"], "reference_diagnosis": row.get("reference_diagnosis", "")})
    return rows


def mask_unit(units: Sequence[TextUnit], i: int, source: str | None = None) -> MaskedVariant:
    """Drop unit ``i``; the remaining units keep the separators that followed them in ``source``."""
    n = len(units)
    if n < 2:
        raise TooFewUnits(f"masking needs at least 2 units, got {n}")
    if not 0 <= i < n:
        raise IndexOutOfRange(f"unit index {i} out of range for {n} units")
    kept = [pos for pos in range(n) if pos != i]
    parts: list[str] = []
    for k, pos in enumerate(kept):
        if k:
            prev = kept[k - 1]
            if source is None:
                parts.append(" ")
            else:
                parts.append(source[units[prev].span[1]:units[prev + 1].span[0]])
        parts.append(units[pos].text)
    return MaskedVariant(masked_index=i, text="".join(parts), unit_count=n - 1)


def _mentions_or_whole(text: str) -> list[str]:
    return extract_mentions(text) or ([text] if normalize(text) else [])


def diagnosis_matches(predicted: str, reference: str, threshold: float = LINK_THRESHOLD) -> bool:
    """True when some predicted mention is at least ``threshold`` similar to some reference mention."""
    pred = _mentions_or_whole(predicted)
    ref = _mentions_or_whole(reference)
    return any(similarity(p, r) >= threshold for p in pred for r in ref)


def _diag(gateway: LlmGateway, template: PromptTemplate, text: str, tag: str) -> str:
    return gateway.ask(render(template, {"patient": text}), tag=tag)


def annotate_record(
    record: AnnotationRecord,
    gateway: LlmGateway,
    kb_index: KnowledgeIndex,
    config: AnnotationConfig = AnnotationConfig(),
    diag_template: PromptTemplate | None = None,
) -> RecordAnnotation:
    template = diag_template or PromptTemplate.default(TemplateName.DIAG)
    try:
        units = segment(record.text, config.segmentation)
    except EmptyInput as exc:
        raise SegmentationFailure(f"record {record.record_id}: {exc}") from exc
    if len(units) < 2:
        raise SegmentationFailure(f"record {record.record_id}: needs >= 2 units to mask, got {len(units)}")

    full_diag = _diag(gateway, template, record.text, f"annotate:{record.record_id}:full")
    reference = record.reference_diagnosis
    if diagnosis_matches(full_diag, reference, config.match_threshold):
        result = RecordAnnotation(record.record_id, Strategy.S1, llm_calls=1 + len(units))

        def masked(unit: TextUnit) -> str | BackendError:
            variant = mask_unit(units, unit.index, record.text)
            try:
                return _diag(gateway, template, variant.text, f"annotate:{record.record_id}:mask{unit.index}")
            except BackendError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=min(len(units), gateway.max_concurrent)) as pool:
            answers = list(pool.map(masked, units))
        for unit, answer in zip(units, answers):
            if isinstance(answer, BackendError):
                logger.warning("record %s unit %d skipped: %s", record.record_id, unit.index, answer)
                result.skipped += 1
                continue
            still_right = diagnosis_matches(answer, reference, config.match_threshold)
            result.outcomes.append(AnnotationOutcome(
                record.record_id, unit.index, unit.text,
                UnitLabel.C if still_right else UnitLabel.A,
                Strategy.S1, full_diag, masked_diag=answer,
            ))
        return result

    result = RecordAnnotation(record.record_id, Strategy.S2, llm_calls=1, index_probes=len(units))
    ref_mentions = _mentions_or_whole(reference)
    for unit in units:
        try:
            hits = kb_index.search(unit.text, config.m)
        except EmptyQuery:
            hits = []
        titles = [kb_index.docs[h.doc_id].title for h in hits]
        hit = any(similarity(t, r) >= config.match_threshold for t in titles for r in ref_mentions)
        result.outcomes.append(AnnotationOutcome(
            record.record_id, unit.index, unit.text,
            UnitLabel.B if hit else UnitLabel.C,
            Strategy.S2, full_diag, probe_hit=hit,
        ))
    return result


def annotate_corpus(
    records: Sequence[AnnotationRecord],
    gateway: LlmGateway,
    kb_index: KnowledgeIndex,
    config: AnnotationConfig = AnnotationConfig(),
    diag_template: PromptTemplate | None = None,
    workers: int = 1,
) -> tuple[list[RecordAnnotation], list[tuple[str, str]]]:
    """Annotate records concurrently; returns results in input order and per-record failures."""

    def one(rec: AnnotationRecord) -> RecordAnnotation | Exception:
        try:
            return annotate_record(rec, gateway, kb_index, config, diag_template)
        except (BackendError, DataError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        raw = list(pool.map(one, records))
    done, failed = [], []
    for rec, res in zip(records, raw):
        if isinstance(res, Exception):
            logger.warning("record %s failed: %s", rec.record_id, res)
            failed.append((rec.record_id, str(res)))
        else:
            done.append(res)
    return done, failed
