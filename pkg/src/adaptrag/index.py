"""Knowledge-base chunking and BM25 chunk retrieval."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, DataError, EmptyCorpus, EmptyQuery, IoFailure, SchemaMismatch
from .jsonl import read_jsonl
from .segmenter import SegmentationConfig, segment

INDEX_FORMAT = "adaptrag-bm25-index"
INDEX_VERSION = 1

_CJK = "㐀-䶿一-鿿豈-﫿"
_TOKEN = re.compile(rf"[{_CJK}]+|[^\W_{_CJK}]+")
_CJK_RUN = re.compile(rf"[{_CJK}]+")


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.doc_id or not self.title.strip() or not self.body.strip():
            raise DataError(f"knowledge document {self.doc_id!r} needs doc_id, title and body")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    sentence_range: tuple[int, int]


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if not (self.k1 > 0 and 0 <= self.b <= 1):
            raise ConfigError(f"BM25 needs k1 > 0 and 0 <= b <= 1, got {self}")


@dataclass(frozen=True)
class TokenizerConfig:
    cjk_ngram: int = 2
    lowercase: bool = True


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    doc_id: str
    score: float


def load_kb(path: str | Path) -> list[KnowledgeDoc]:
    docs = []
    seen: set[str] = set()
    for lineno, row in enumerate(read_jsonl(path), 1):
        try:
            doc = KnowledgeDoc(str(row["doc_id"]), str(row["title"]), str(row["body"]))
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: knowledge row missing {exc}") from exc
        if doc.doc_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        docs.append(doc)
    return docs


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    """Latin runs split on whitespace/punctuation; CJK runs emit character n-grams."""
    if config.lowercase:
        text = text.lower()
    n = config.cjk_ngram
    tokens: list[str] = []
    for run in _TOKEN.findall(text):
        if _CJK_RUN.fullmatch(run):
            if len(run) <= n:
                tokens.append(run)
            else:
                tokens.extend(run[i:i + n] for i in range(len(run) - n + 1))
        else:
            tokens.append(run)
    return tokens


def _chunk_id(doc_id: str, j: int) -> str:
    return f"{doc_id}#{j:04d}"


def chunk_document(doc: KnowledgeDoc, max_chunk_chars: int = 256) -> list[Chunk]:
    """Greedily pack whole sentences into chunks of at most ``max_chunk_chars``.

    A sentence longer than the limit is hard-split into its own chunks.
    """
    if max_chunk_chars < 32:
        raise ConfigError(f"max_chunk_chars must be >= 32, got {max_chunk_chars}")
    body = doc.body
    sentences = segment(body, SegmentationConfig(max_unit_chars=max(len(body), 8)))
    spans: list[tuple[int, int, int, int]] = []  # (start, end, first, last)
    current: list[int] | None = None

    for sent in sentences:
        s, e = sent.span
        if current is not None and e - current[0] <= max_chunk_chars:
            current[1] = e
            current[3] = sent.index
            continue
        if current is not None:
            spans.append(tuple(current))
            current = None
        if e - s > max_chunk_chars:
            for piece in range(s, e, max_chunk_chars):
                spans.append((piece, min(piece + max_chunk_chars, e), sent.index, sent.index))
        else:
            current = [s, e, sent.index, sent.index]
    if current is not None:
        spans.append(tuple(current))

    return [
        Chunk(_chunk_id(doc.doc_id, j), doc.doc_id, body[s:e], (first, last))
        for j, (s, e, first, last) in enumerate(spans)
    ]


def whole_document_chunks(doc: KnowledgeDoc) -> list[Chunk]:
    n_sent = len(segment(doc.body, SegmentationConfig(max_unit_chars=max(len(doc.body), 8))))
    return [Chunk(_chunk_id(doc.doc_id, 0), doc.doc_id, doc.body, (0, n_sent - 1))]


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    chunk_lengths: dict[str, int]
    doc_freq: dict[str, int]
    avg_len: float
    params: Bm25Params
    tokenizer: TokenizerConfig

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_lengths)

    def idf(self, term: str) -> float:
        df = self.doc_freq[term]
        return math.log((self.n_chunks - df + 0.5) / (df + 0.5) + 1.0)

    def scores(self, query: str) -> dict[str, float]:
        terms = list(dict.fromkeys(tokenize(query, self.tokenizer)))
        if not terms:
            raise EmptyQuery(f"query {query!r} has no indexable tokens")
        k1, b = self.params.k1, self.params.b
        acc: dict[str, float] = {}
        for term in terms:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for cid, tf in plist:
                norm = k1 * (1.0 - b + b * self.chunk_lengths[cid] / self.avg_len)
                acc[cid] = acc.get(cid, 0.0) + idf * (tf * (k1 + 1.0)) / (tf + norm)
        return acc


def build_index(
    chunks: Sequence[Chunk], params: Bm25Params = Bm25Params(), tokenizer: TokenizerConfig = TokenizerConfig()
) -> InvertedIndex:
    """Build postings over ``chunks``; chunks without any token are left out."""
    if not chunks:
        raise EmptyCorpus("cannot index an empty chunk list")
    postings: dict[str, list[tuple[str, int]]] = {}
    lengths: dict[str, int] = {}
    for chunk in sorted(chunks, key=lambda c: c.chunk_id):
        tokens = tokenize(chunk.text, tokenizer)
        if not tokens:
            continue
        lengths[chunk.chunk_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((chunk.chunk_id, tf))
    if not lengths:
        raise EmptyCorpus("no chunk contains an indexable token")
    postings = dict(sorted(postings.items()))
    doc_freq = {term: len(plist) for term, plist in postings.items()}
    avg_len = sum(lengths.values()) / len(lengths)
    return InvertedIndex(postings, lengths, doc_freq, avg_len, params, tokenizer)


class KnowledgeIndex:
    """Documents, their chunks, the chunk-to-document map and the BM25 index."""

    def __init__(self, docs: Sequence[KnowledgeDoc], chunks: Sequence[Chunk], index: InvertedIndex, max_chunk_chars: int | None) -> None:
        self.docs = {d.doc_id: d for d in docs}
        self.chunks = {c.chunk_id: c for c in chunks}
        self.index = index
        self.max_chunk_chars = max_chunk_chars
        for c in chunks:
            if c.doc_id not in self.docs:
                raise DataError(f"chunk {c.chunk_id} points at unknown document {c.doc_id}")

    @classmethod
    def build(
        cls,
        docs: Sequence[KnowledgeDoc],
        max_chunk_chars: int = 256,
        params: Bm25Params = Bm25Params(),
        whole_documents: bool = False,
        tokenizer: TokenizerConfig = TokenizerConfig(),
    ) -> "KnowledgeIndex":
        if not docs:
            raise EmptyCorpus("knowledge base is empty")
        chunks: list[Chunk] = []
        for doc in docs:
            chunks.extend(whole_document_chunks(doc) if whole_documents else chunk_document(doc, max_chunk_chars))
        return cls(docs, chunks, build_index(chunks, params, tokenizer), None if whole_documents else max_chunk_chars)

    @property
    def whole_documents(self) -> bool:
        return self.max_chunk_chars is None

    def doc_of(self, chunk_id: str) -> str:
        return self.chunks[chunk_id].doc_id

    def search(self, query: str, m: int) -> list[SearchHit]:
        if m < 1:
            raise ConfigError("m must be >= 1")
        scored = self.index.scores(query)
        ranked = sorted(((cid, s) for cid, s in scored.items() if s > 0), key=lambda kv: (-kv[1], kv[0]))
        return [SearchHit(cid, self.doc_of(cid), s) for cid, s in ranked[:m]]

    def save(self, path: str | Path) -> None:
        ix = self.index
        state = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "max_chunk_chars": self.max_chunk_chars,
            "params": asdict(ix.params),
            "tokenizer": asdict(ix.tokenizer),
            "docs": [asdict(d) for d in self.docs.values()],
            "chunks": [asdict(c) for c in self.chunks.values()],
            "postings": ix.postings,
            "chunk_lengths": ix.chunk_lengths,
            "doc_freq": ix.doc_freq,
            "avg_len": ix.avg_len,
        }
        try:
            Path(path).write_text(json.dumps(state, ensure_ascii=False), encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write index to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeIndex":
        try:
            state = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise IoFailure(f"index file not found: {path}") from exc
        except (OSError, ValueError) as exc:
            raise SchemaMismatch(f"corrupt index file {path}: {exc}") from exc
        if not isinstance(state, dict) or state.get("format") != INDEX_FORMAT:
            raise SchemaMismatch(f"{path} is not an index file")
        if state.get("version") != INDEX_VERSION:
            raise SchemaMismatch(
                f"index file version {state.get('version')} is not supported (expected version {INDEX_VERSION})"
            )
        try:
            index = InvertedIndex(
                postings={t: [(c, int(tf)) for c, tf in pl] for t, pl in state["postings"].items()},
                chunk_lengths={c: int(n) for c, n in state["chunk_lengths"].items()},
                doc_freq={t: int(n) for t, n in state["doc_freq"].items()},
                avg_len=float(state["avg_len"]),
                params=Bm25Params(**state["params"]),
                tokenizer=TokenizerConfig(**state["tokenizer"]),
            )
            docs = [KnowledgeDoc(**d) for d in state["docs"]]
            chunks = [Chunk(c["chunk_id"], c["doc_id"], c["text"], tuple(c["sentence_range"])) for c in state["chunks"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"index file {path} is missing fields: {exc}") from exc
        return cls(docs, chunks, index, state.get("max_chunk_chars"))


def search(index: KnowledgeIndex, query: str, m: int) -> list[SearchHit]:
    return index.search(query, m)

