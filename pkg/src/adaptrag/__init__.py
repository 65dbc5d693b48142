"""Completeness-gated retrieval-augmented diagnosis.

Sentences of a patient record are labeled A/B/C by a small classifier; the
weighted label mass decides whether to answer directly or to retrieve
knowledge chunks, rerank their parent documents by hit count, filter them
with a differential-diagnosis prompt and answer from what remains.
"""

from .completeness import (
    CompletenessReport,
    CompletenessWeights,
    RoutingDecision,
    RoutingThresholds,
    assess,
    compute_completeness,
    route,
)
from .config import PipelineConfig, load_config
from .index import Bm25Params, Chunk, KnowledgeDoc, KnowledgeIndex, build_index, chunk_document
from .labels import LabeledUnit, UnitLabel
from .llm import LlmGateway, MockBackend, HttpBackend, PromptTemplate
from .pipeline import DiagnosisOutcome, Pipeline, bench
from .segmenter import SegmentationConfig, TextUnit, segment

__version__ = "0.1.0"

__all__ = [
    "Bm25Params",
    "Chunk",
    "CompletenessReport",
    "CompletenessWeights",
    "DiagnosisOutcome",
    "HttpBackend",
    "KnowledgeDoc",
    "KnowledgeIndex",
    "LabeledUnit",
    "LlmGateway",
    "MockBackend",
    "Pipeline",
    "PipelineConfig",
    "PromptTemplate",
    "RoutingDecision",
    "RoutingThresholds",
    "SegmentationConfig",
    "TextUnit",
    "UnitLabel",
    "assess",
    "bench",
    "build_index",
    "chunk_document",
    "compute_completeness",
    "load_config",
    "route",
    "segment",
]
