"""End-to-end orchestration: classify, route, retrieve, filter, diagnose."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .classifier import UnitClassifier
from .completeness import RoutingDecision, assess, route
from .config import PipelineConfig
from .errors import AdaptragError, BackendError, ConfigError, StageFailure
from .filtering import filter_docs
from .index import KnowledgeDoc, KnowledgeIndex
from .llm import LlmGateway, PromptTemplate, TemplateName, format_documents, render
from .rerank import gather, rank_by_best_chunk, rerank_docs, select_queries
from .segmenter import SegmentationConfig, segment

logger = logging.getLogger(__name__)


@dataclass
class DiagnosisOutcome:
    record_id: str
    final_diagnosis: str = ""
    route: RoutingDecision | None = None
    i_norm: float | None = None
    labels: list[str] = field(default_factory=list)
    queries_used: list[int] = field(default_factory=list)
    retrieved_docs: list[str] = field(default_factory=list)
    doc_scores: list[dict[str, Any]] = field(default_factory=list)
    kept_docs: list[str] = field(default_factory=list)
    verdicts: list[dict[str, Any]] = field(default_factory=list)
    warning: bool = False
    fallback_flags: dict[str, bool] = field(default_factory=lambda: {"query_fallback": False, "empty_evidence": False})
    call_counts: dict[str, int] = field(default_factory=lambda: {"llm_calls": 0, "retriever_queries": 0})
    status: str = "ok"
    error: str | None = None
    failed_stage: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict[str, Any]:
        row = dataclasses.asdict(self)
        row["route"] = self.route.value if self.route else None
        return row


def load_templates(config: PipelineConfig) -> dict[TemplateName, PromptTemplate]:
    paths = config.templates
    out = {}
    for name in TemplateName:
        path = getattr(paths, name.value)
        out[name] = PromptTemplate.from_file(name, path) if path else PromptTemplate.default(name)
    return out


def build_knowledge_index(docs: Sequence[KnowledgeDoc], config: PipelineConfig) -> KnowledgeIndex:
    """Index ``docs`` honouring the chunking toggle (disabled means one chunk per document)."""
    return KnowledgeIndex.build(
        docs,
        max_chunk_chars=config.retrieval.max_chunk_chars,
        params=config.retrieval.bm25,
        whole_documents=not config.toggles.chunking_enabled,
    )


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig,
        classifier: UnitClassifier,
        index: KnowledgeIndex,
        gateway: LlmGateway,
        templates: dict[TemplateName, PromptTemplate] | None = None,
    ) -> None:
        if index.whole_documents == config.toggles.chunking_enabled:
            want = "chunked" if config.toggles.chunking_enabled else "whole-document"
            raise ConfigError(f"chunking toggle expects a {want} index; rebuild the index to match")
        self.config = config
        self.classifier = classifier
        self.index = index
        self.gateway = gateway
        self.templates = templates or load_templates(config)
        self.segmentation = SegmentationConfig(max_unit_chars=config.max_unit_chars)

    def _decide(self, i_norm: float) -> RoutingDecision:
        policy = self.config.effective_policy
        if policy == "never":
            return RoutingDecision.DIRECT
        decision = route(i_norm, self.config.thresholds)
        if policy == "always" and decision is RoutingDecision.DIRECT:
            return RoutingDecision.RETRIEVE
        return decision

    def diagnose(self, record_id: str, text: str) -> DiagnosisOutcome:
        cfg = self.config
        out = DiagnosisOutcome(record_id=record_id)
        try:
            units = segment(text, self.segmentation)
        except AdaptragError as exc:
            raise StageFailure("segment", exc) from exc
        try:
            labeled = self.classifier.classify(units)
        except AdaptragError as exc:
            raise StageFailure("classify", exc) from exc

        report = assess([lu.label for lu in labeled], cfg.weights, cfg.thresholds)
        out.labels = [lu.label.value for lu in labeled]
        out.i_norm = report.i_norm
        out.route = self._decide(report.i_norm)
        out.warning = out.route is RoutingDecision.RETRIEVE_WITH_WARNING

        if out.route is RoutingDecision.DIRECT:
            prompt = render(self.templates[TemplateName.DIAG], {"patient": text})
            return self._generate(out, prompt, f"diag:{record_id}")

        queries, out.fallback_flags["query_fallback"] = select_queries(labeled)
        out.queries_used = [q.index for q in queries]
        out.call_counts["retriever_queries"] = len(queries)
        try:
            hits = gather(queries, self.index, cfg.retrieval.m)
        except AdaptragError as exc:
            raise StageFailure("retrieve", exc) from exc
        ranker = rerank_docs if cfg.toggles.mapping_rerank_enabled else rank_by_best_chunk
        ranked = ranker(hits.values(), cfg.retrieval.k)
        out.retrieved_docs = [d.doc_id for d in ranked]
        out.doc_scores = [dataclasses.asdict(d) for d in ranked]
        docs = [self.index.docs[d] for d in out.retrieved_docs]

        if cfg.toggles.diff_filter_enabled:
            kept, verdicts = filter_docs(text, docs, self.gateway, self.templates[TemplateName.DIFF])
            out.call_counts["llm_calls"] += len(docs)
            out.verdicts = [
                {**dataclasses.asdict(v), "parse_status": v.parse_status.value} for v in verdicts
            ]
        else:
            kept = docs
        out.kept_docs = [d.doc_id for d in kept]
        out.fallback_flags["empty_evidence"] = not kept

        prompt = render(self.templates[TemplateName.RAG], {"patient": text, "documents": format_documents(kept)})
        return self._generate(out, prompt, f"rag:{record_id}")

    def _generate(self, out: DiagnosisOutcome, prompt: str, tag: str) -> DiagnosisOutcome:
        out.call_counts["llm_calls"] += 1
        try:
            out.final_diagnosis = self.gateway.ask(prompt, tag=tag)
        except BackendError as exc:
            logger.warning("final LLM call for %s failed: %s", out.record_id, exc)
            out.status, out.error, out.failed_stage = "failed", str(exc), "generate"
        return out

    def _safe_diagnose(self, record: dict[str, Any]) -> DiagnosisOutcome:
        rid = str(record["id"])
        try:
            return self.diagnose(rid, record["text"])
        except StageFailure as exc:
            logger.warning("record %s failed in %s: %s", rid, exc.stage, exc.cause)
            return DiagnosisOutcome(rid, status="failed", error=str(exc.cause), failed_stage=exc.stage)
        except AdaptragError as exc:
            logger.warning("record %s failed: %s", rid, exc)
            return DiagnosisOutcome(rid, status="failed", error=str(exc), failed_stage="unknown")

    def run_batch(self, records: Sequence[dict[str, Any]]) -> tuple[list[DiagnosisOutcome], dict[str, Any]]:
        """Diagnose ``records`` (dicts with ``id`` and ``text``) in parallel, output in input order."""
        start = time.perf_counter()
        if records:
            with ThreadPoolExecutor(max_workers=min(self.config.workers, len(records))) as pool:
                outcomes = list(pool.map(self._safe_diagnose, records))
        else:
            outcomes = []
        return outcomes, summarize(outcomes, time.perf_counter() - start)


def summarize(outcomes: Sequence[DiagnosisOutcome], wall_time_s: float) -> dict[str, Any]:
    ok = [o for o in outcomes if o.route is not None]
    routes = {r.value: sum(1 for o in ok if o.route is r) for r in RoutingDecision}
    retrieved = sum(1 for o in ok if o.route.retrieves)
    return {
        "n_records": len(outcomes),
        "n_failed": sum(1 for o in outcomes if not o.ok),
        "routes": routes,
        "retrieval_rate": retrieved / len(ok) if ok else 0.0,
        "mean_i_norm": sum(o.i_norm for o in ok) / len(ok) if ok else None,
        "llm_calls": sum(o.call_counts["llm_calls"] for o in outcomes),
        "retriever_queries": sum(o.call_counts["retriever_queries"] for o in outcomes),
        "wall_time_s": wall_time_s,
    }


BENCH_FIELDS = ("policy", "n_records", "retrieval_rate", "llm_calls", "retriever_queries", "wall_time_s")


def bench(
    records: Sequence[dict[str, Any]],
    config: PipelineConfig,
    classifier: UnitClassifier,
    index: KnowledgeIndex,
    gateway: LlmGateway,
    policies: Iterable[str] = ("adaptive", "always", "never"),
) -> list[dict[str, Any]]:
    """Run the batch once per routing policy and tabulate retrieval and call volume."""
    rows = []
    for policy in policies:
        cfg = config.replace(policy=policy).with_toggles(decision_enabled=True)
        _, summary = Pipeline(cfg, classifier, index, gateway).run_batch(records)
        rows.append({"policy": policy, **{k: summary[k] for k in BENCH_FIELDS[1:]}})
    return rows


def write_bench_csv(rows: Sequence[dict[str, Any]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def make_gateway(config: PipelineConfig) -> LlmGateway:
    from .llm import HttpBackend, MockBackend

    llm = config.llm
    if llm.backend == "http":
        backend = HttpBackend(
            llm.endpoint, llm.model, api_key_env=llm.api_key_env,
            timeout_ms=llm.timeout_ms, max_retries=llm.max_retries,
        )
    elif llm.mock_rules:
        backend = MockBackend.from_jsonl(llm.mock_rules, default=llm.mock_default)
    else:
        backend = MockBackend((), default=llm.mock_default)
    return LlmGateway(backend, llm.max_concurrent_llm, llm.temperature, llm.max_tokens)


def make_classifier(config: PipelineConfig, model_path: str | Path | None) -> UnitClassifier:
    from .classifier import LinearUnitClassifier, RemoteUnitClassifier, load

    if model_path is not None:
        return LinearUnitClassifier(load(model_path))
    if config.classifier.remote_endpoint:
        return RemoteUnitClassifier(config.classifier.remote_endpoint, config.classifier.timeout_s)
    raise ConfigError("need --model or classifier.remote_endpoint in the config")
