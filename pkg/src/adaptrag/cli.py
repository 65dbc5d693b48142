"""Adaptive retrieval-augmented diagnosis over clinical notes.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import classifier as clf
from .annotation import AnnotationConfig, AnnotationRecord, annotate_corpus, load_emr
from .config import POLICIES, load_config
from .errors import AdaptragError, DataError
from .evaluation import evaluate, load_terminology
from .index import KnowledgeIndex, load_kb
from .jsonl import read_jsonl, write_jsonl
from .llm import TemplateName
from .pipeline import (
    Pipeline,
    bench,
    build_knowledge_index,
    load_templates,
    make_classifier,
    make_gateway,
    write_bench_csv,
)

logger = logging.getLogger("adaptrag")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _print_json(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


def cmd_ingest(args) -> int:
    report = {}
    if args.kb:
        docs = load_kb(args.kb)
        report["kb"] = {"path": args.kb, "documents": len(docs)}
    if args.emr:
        rows = load_emr(args.emr, require_reference=args.require_reference)
        ids = [r["id"] for r in rows]
        if len(set(ids)) != len(ids):
            raise DataError(f"{args.emr}: duplicate record ids")
        report["emr"] = {"path": args.emr, "records": len(rows)}
    if not report:
        raise DataError("nothing to validate: pass --kb and/or --emr")
    _print_json(report)
    return 0


def cmd_index(args) -> int:
    config = load_config(args.config)
    if args.whole_documents:
        config = config.with_toggles(chunking_enabled=False)
    if args.max_chunk_chars:
        config = config.replace(retrieval=dataclasses.replace(config.retrieval, max_chunk_chars=args.max_chunk_chars))
    index = build_knowledge_index(load_kb(args.kb), config)
    index.save(args.out)
    _print_json({"documents": len(index.docs), "chunks": len(index.chunks), "terms": len(index.index.postings)})
    return 0


def cmd_annotate(args) -> int:
    config = load_config(args.config)
    gateway = make_gateway(config)
    index = KnowledgeIndex.load(args.kb_index)
    records = [AnnotationRecord(r["id"], r["text"], r["reference_diagnosis"]) for r in load_emr(args.emr)]
    ann_cfg = AnnotationConfig(m=args.m or config.retrieval.m, match_threshold=args.threshold)
    templates = load_templates(config)
    results, failed = annotate_corpus(records, gateway, index, ann_cfg, templates[TemplateName.DIAG], workers=config.workers)
    outcomes = [o for r in results for o in r.outcomes]
    write_jsonl(args.out, ({"text": o.unit_text, "label": o.label.value} for o in outcomes))
    if args.audit:
        write_jsonl(args.audit, (o.audit_row() for o in outcomes))
    _print_json({
        "records": len(records),
        "annotated": len(results),
        "failed": [{"id": rid, "error": err} for rid, err in failed],
        "units": len(outcomes),
        "skipped_units": sum(r.skipped for r in results),
        "strategies": {s: sum(1 for r in results if r.strategy.value == s) for s in ("S1", "S2")},
    })
    return 0


def cmd_train(args) -> int:
    examples = clf.load_training_corpus(args.data)
    hyper = clf.TrainingConfig(l2=args.l2, epochs=args.epochs, lr=args.lr, seed=args.seed, batch_size=args.batch_size)
    model = clf.train(examples, hyper, clf.FeatureSpace(dim=2**args.dim_bits))
    clf.save(model, args.out)
    _print_json({k: model.metadata[k] for k in ("n_examples", "label_counts", "train_loss", "train_accuracy")})
    return 0


def _records(args) -> list[dict]:
    if args.text is not None:
        return [{"id": args.record_id, "text": args.text}]
    if args.input:
        return load_emr(args.input, require_reference=False)
    raise DataError("pass --input JSONL or --text")


def _pipeline(args, config) -> Pipeline:
    return Pipeline(config, make_classifier(config, args.model), KnowledgeIndex.load(args.kb_index), make_gateway(config))


def cmd_diagnose(args) -> int:
    config = load_config(args.config)
    outcomes, summary = _pipeline(args, config).run_batch(_records(args))
    if args.out:
        write_jsonl(args.out, (o.to_dict() for o in outcomes))
    else:
        for o in outcomes:
            print(json.dumps(o.to_dict(), ensure_ascii=False))
    print(json.dumps({"summary": summary}, ensure_ascii=False), file=sys.stderr)
    if outcomes and summary["n_failed"] == len(outcomes):
        return 3
    return 0


def cmd_eval(args) -> int:
    terminology = load_terminology(args.terminology)
    preds = {}
    for row in read_jsonl(args.pred):
        # accept both {"id", "diagnosis"} and raw diagnose outcomes
        rid = row.get("id", row.get("record_id"))
        if rid is None:
            raise DataError(f"{args.pred}: prediction rows need 'id'")
        preds[str(rid)] = str(row.get("diagnosis", row.get("final_diagnosis")) or "")
    refs = {r["id"]: r["reference_diagnosis"] for r in load_emr(args.ref)}
    report = evaluate(preds, refs, terminology, args.threshold)
    result = {
        "averaging": report.averaging,
        "precision": report.corpus.precision,
        "recall": report.corpus.recall,
        "f1": report.corpus.f1,
        "n_records": report.corpus.n_records,
        "rejected_references": report.rejected,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2), encoding="utf-8")
    _print_json(result)
    if args.per_record:
        with Path(args.per_record).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["id", "pred_codes", "ref_codes", "precision", "recall", "f1"])
            writer.writeheader()
            writer.writerows(report.per_record)
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    policies = POLICIES if args.policy == "all" else (args.policy,)
    pipe = _pipeline(args, config)
    rows = bench(_records(args), config, pipe.classifier, pipe.index, pipe.gateway, policies)
    if args.out:
        write_bench_csv(rows, args.out)
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adaptrag", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="validate knowledge-base and EMR JSONL files")
    s.add_argument("--kb")
    s.add_argument("--emr")
    s.add_argument("--require-reference", action="store_true")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("index", help="chunk a knowledge base and build the BM25 index")
    s.add_argument("--kb", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--max-chunk-chars", type=int)
    s.add_argument("--whole-documents", action="store_true", help="one chunk per document")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("annotate", help="label EMR sentences by masking")
    s.add_argument("--emr", required=True)
    s.add_argument("--kb-index", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="training JSONL")
    s.add_argument("--audit", help="per-unit audit JSONL")
    s.add_argument("--m", type=int)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("train", help="train the linear sentence classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--l2", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--dim-bits", type=int, default=18)
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("diagnose", cmd_diagnose, "run the pipeline"), ("bench", cmd_bench, "compare routing policies")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config")
        s.add_argument("--kb-index", required=True)
        s.add_argument("--model")
        s.add_argument("--input", help="EMR JSONL with id and text")
        s.add_argument("--text")
        s.add_argument("--record-id", default="record-0")
        s.add_argument("--out")
        if name == "bench":
            s.add_argument("--policy", choices=(*POLICIES, "all"), default="all")
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="set-level precision/recall/F1")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--terminology", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out")
    s.add_argument("--per-record")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except AdaptragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
