"""Diagnosis normalisation against a terminology and set-level P/R/F1."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, EmptyTerminology
from .jsonl import read_jsonl

logger = logging.getLogger(__name__)

LINK_THRESHOLD = 0.5

_HEADER = re.compile(
    r"(?:(?:final|primary|preliminary|working|differential)\s+)?diagnos[ie]s\s*[:：]"
    r"|(?:初步|最终|临床|出院)?诊断\s*[:：]",
    re.IGNORECASE,
)
_NUMBERED = re.compile(r"(?:^|(?<=[\s,，;；、]))\d{1,2}\s?[.)、．](?!\d)", re.MULTILINE)
_DELIMS = re.compile(r"[,，;；、\n]")
_EDGE_PUNCT = " \t\r.。:：-–·*"


def extract_mentions(text: str) -> list[str]:
    """Split the diagnosis part of ``text`` into individual disease mentions."""
    if not text:
        return []
    header = _HEADER.search(text)
    if header:
        text = text[header.end():]
    text = _NUMBERED.sub("\n", text)
    mentions = []
    for piece in _DELIMS.split(text):
        piece = piece.strip(_EDGE_PUNCT)
        if piece:
            mentions.append(piece)
    return mentions


def normalize(s: str) -> str:
    return " ".join(s.lower().split())


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        row = [i]
        for j, cb in enumerate(b, 1):
            row.append(min(row[j - 1] + 1, prev[j] + 1, prev[j - 1] + (ca != cb)))
        prev = row
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """1 - Levenshtein distance / longer length, on case- and space-normalised strings."""
    a, b = normalize(a), normalize(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def best_similarity(candidates: Iterable[str], targets: Iterable[str]) -> float:
    targets = list(targets)
    return max((similarity(c, t) for c in candidates for t in targets), default=0.0)


@dataclass(frozen=True)
class TerminologyEntry:
    code: str
    canonical: str
    synonyms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.code or not self.canonical:
            raise DataError("terminology entries need a code and a canonical name")
        object.__setattr__(self, "synonyms", tuple(self.synonyms))

    @property
    def names(self) -> tuple[str, ...]:
        return (self.canonical, *self.synonyms)


@dataclass(frozen=True)
class DiagnosisSet:
    codes: frozenset[str]
    unlinked: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalMetrics:
    precision: float
    recall: float
    f1: float
    n_records: int = 1


def load_terminology(path: str | Path) -> list[TerminologyEntry]:
    entries: list[TerminologyEntry] = []
    seen: set[str] = set()
    for row in read_jsonl(path):
        try:
            entry = TerminologyEntry(str(row["code"]), str(row["canonical"]), tuple(row.get("synonyms", [])))
        except KeyError as exc:
            raise DataError(f"{path}: terminology row missing {exc}") from exc
        if entry.code in seen:
            raise DataError(f"{path}: duplicate terminology code {entry.code}")
        seen.add(entry.code)
        entries.append(entry)
    if not entries:
        raise EmptyTerminology(f"{path} contains no terminology entries")
    return entries


def link_one(mention: str, terminology: Sequence[TerminologyEntry]) -> tuple[TerminologyEntry, float]:
    best_entry, best_sim = terminology[0], -1.0
    for entry in terminology:
        sim = max(similarity(mention, name) for name in entry.names)
        if sim > best_sim:  # strict: earlier entries win ties
            best_entry, best_sim = entry, sim
    return best_entry, best_sim


def link(mentions: Sequence[str], terminology: Sequence[TerminologyEntry], threshold: float = LINK_THRESHOLD) -> DiagnosisSet:
    if not terminology:
        raise EmptyTerminology("cannot link against an empty terminology")
    codes: set[str] = set()
    unlinked: list[str] = []
    for mention in mentions:
        entry, sim = link_one(mention, terminology)
        if sim >= threshold:
            codes.add(entry.code)
        else:
            unlinked.append(mention)
    return DiagnosisSet(frozenset(codes), tuple(unlinked))


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def metrics(pred: DiagnosisSet | set, ref: DiagnosisSet | set) -> EvalMetrics:
    pred_codes = pred.codes if isinstance(pred, DiagnosisSet) else frozenset(pred)
    ref_codes = ref.codes if isinstance(ref, DiagnosisSet) else frozenset(ref)
    hit = len(pred_codes & ref_codes)
    p = hit / len(pred_codes) if pred_codes else 0.0
    r = hit / len(ref_codes) if ref_codes else 0.0
    return EvalMetrics(p, r, _f1(p, r), 1)


def micro_average(pairs: Sequence[tuple[DiagnosisSet, DiagnosisSet]]) -> EvalMetrics:
    """Corpus metrics from summed intersection / predicted / reference sizes."""
    hit = n_pred = n_ref = 0
    for pred, ref in pairs:
        hit += len(pred.codes & ref.codes)
        n_pred += len(pred.codes)
        n_ref += len(ref.codes)
    p = hit / n_pred if n_pred else 0.0
    r = hit / n_ref if n_ref else 0.0
    return EvalMetrics(p, r, _f1(p, r), len(pairs))


@dataclass
class EvalReport:
    corpus: EvalMetrics
    per_record: list[dict] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)
    averaging: str = "micro"


def evaluate(
    predictions: dict[str, str],
    references: dict[str, str],
    terminology: Sequence[TerminologyEntry],
    threshold: float = LINK_THRESHOLD,
) -> EvalReport:
    """Score predicted diagnosis strings against references, both keyed by record id.

    References that link to no terminology code are rejected and listed.
    A reference without a prediction scores as an empty prediction.
    """
    pairs = []
    rows = []
    rejected = []
    for rid, ref_text in references.items():
        ref = link(extract_mentions(ref_text), terminology, threshold)
        if not ref.codes:
            rejected.append(rid)
            continue
        pred = link(extract_mentions(predictions.get(rid, "")), terminology, threshold)
        m = metrics(pred, ref)
        pairs.append((pred, ref))
        rows.append({
            "id": rid,
            "pred_codes": " ".join(sorted(pred.codes)),
            "ref_codes": " ".join(sorted(ref.codes)),
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
        })
    extra = set(predictions) - set(references)
    if extra:
        logger.warning("%d predictions have no reference record and were ignored", len(extra))
    if rejected:
        logger.warning("%d reference records linked to no terminology code and were rejected", len(rejected))
    return EvalReport(micro_average(pairs), rows, rejected)
