"""Differential-diagnosis document filter."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import BackendError
from .index import KnowledgeDoc
from .llm import LlmGateway, PromptTemplate, TemplateName, render

logger = logging.getLogger(__name__)

_VERDICT = re.compile(r"(?<![A-Za-z])(support|exclude)(?![A-Za-z])", re.IGNORECASE)


class ParseStatus(str, Enum):
    PARSED = "Parsed"
    UNPARSEABLE = "Unparseable"


@dataclass(frozen=True)
class FilterVerdict:
    doc_id: str
    support: bool
    raw_output: str
    parse_status: ParseStatus
    error: str | None = None


def parse_verdict(text: str) -> tuple[bool, ParseStatus]:
    """First SUPPORT/EXCLUDE token decides; neither present keeps the document."""
    match = _VERDICT.search(text or "")
    if match is None:
        return True, ParseStatus.UNPARSEABLE
    return match.group(1).lower() == "support", ParseStatus.PARSED


def _judge(record_text: str, doc: KnowledgeDoc, gateway: LlmGateway, template: PromptTemplate) -> FilterVerdict:
    prompt = render(template, {"patient": record_text, "document": f"{doc.title}\n{doc.body}"})
    try:
        raw = gateway.ask(prompt, tag=f"diff:{doc.doc_id}")
    except BackendError as exc:
        logger.warning("filter call for %s failed, keeping document: %s", doc.doc_id, exc)
        return FilterVerdict(doc.doc_id, True, "", ParseStatus.UNPARSEABLE, error=str(exc))
    support, status = parse_verdict(raw)
    if status is ParseStatus.UNPARSEABLE:
        logger.info("unparseable verdict for %s, keeping document", doc.doc_id)
    return FilterVerdict(doc.doc_id, support, raw, status)


def filter_docs(
    record_text: str,
    docs: Sequence[KnowledgeDoc],
    gateway: LlmGateway,
    template: PromptTemplate | None = None,
) -> tuple[list[KnowledgeDoc], list[FilterVerdict]]:
    """One verdict call per document; kept documents stay in their input order."""
    if not docs:
        return [], []
    template = template or PromptTemplate.default(TemplateName.DIFF)
    workers = min(len(docs), gateway.max_concurrent)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        verdicts = list(pool.map(lambda d: _judge(record_text, d, gateway, template), docs))
    kept = [d for d, v in zip(docs, verdicts) if v.support]
    return kept, verdicts
