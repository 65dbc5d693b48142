"""Label-gated query selection, chunk gathering and document rerank by chunk count."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigError, EmptyQuery
from .index import KnowledgeIndex
from .labels import LabeledUnit, UnitLabel
from .segmenter import TextUnit


@dataclass(frozen=True)
class ChunkHit:
    chunk_id: str
    doc_id: str
    score: float
    query_index: int


@dataclass(frozen=True)
class DocScore:
    doc_id: str
    s_doc: int
    best_chunk_score: float


def select_queries(labeled: Sequence[LabeledUnit]) -> tuple[list[TextUnit], bool]:
    """Units labeled A or B, in order. Falls back to every unit (flag True) if none qualify."""
    if not labeled:
        raise ConfigError("select_queries needs at least one labeled unit")
    picked = [lu.unit for lu in labeled if lu.label in (UnitLabel.A, UnitLabel.B)]
    if picked:
        return picked, False
    return [lu.unit for lu in labeled], True


def gather(queries: Sequence[TextUnit], index: KnowledgeIndex, m: int) -> dict[str, ChunkHit]:
    """Union of per-query top-m hits keyed by chunk_id.

    A chunk hit by several queries keeps its highest score (earliest query on ties).
    Queries with no indexable tokens contribute nothing.
    """
    merged: dict[str, ChunkHit] = {}
    for q in queries:
        try:
            hits = index.search(q.text, m)
        except EmptyQuery:
            continue
        for h in hits:
            prev = merged.get(h.chunk_id)
            if prev is None or h.score > prev.score:
                merged[h.chunk_id] = ChunkHit(h.chunk_id, h.doc_id, h.score, q.index)
    return merged


def doc_scores(hits: Iterable[ChunkHit]) -> list[DocScore]:
    counts: dict[str, int] = {}
    best: dict[str, float] = {}
    for h in {h.chunk_id: h for h in hits}.values():
        counts[h.doc_id] = counts.get(h.doc_id, 0) + 1
        best[h.doc_id] = max(best.get(h.doc_id, 0.0), h.score)
    return [DocScore(d, counts[d], best[d]) for d in counts]


def rerank_docs(hits: Iterable[ChunkHit], k: int) -> list[DocScore]:
    """Top-k documents by number of retrieved chunks, then best chunk score, then doc_id."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    ranked = sorted(doc_scores(hits), key=lambda d: (-d.s_doc, -d.best_chunk_score, d.doc_id))
    return ranked[:k]


def rank_by_best_chunk(hits: Iterable[ChunkHit], k: int) -> list[DocScore]:
    """Top-k documents by their single best chunk score (ablation without count-based rerank)."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    ranked = sorted(doc_scores(hits), key=lambda d: (-d.best_chunk_score, d.doc_id))
    return ranked[:k]
