import json

import pytest

from adaptrag.classifier import LinearUnitClassifier
from adaptrag.completeness import RoutingDecision
from adaptrag.config import PipelineConfig, RetrievalConfig, config_from_dict, load_config
from adaptrag.errors import ConfigError, HttpStatusError
from adaptrag.llm import LlmGateway, MockBackend
from adaptrag.pipeline import Pipeline, bench, build_knowledge_index, make_gateway, write_bench_csv

import synthetic
from synthetic import A, B, C

CONFIG = PipelineConfig().replace(retrieval=RetrievalConfig(m=3, k=3, max_chunk_chars=64))


@pytest.fixture(scope="module")
def classifier():
    return LinearUnitClassifier(synthetic.fixture_model())


@pytest.fixture(scope="module")
def index():
    return build_knowledge_index(synthetic.TOY_KB, CONFIG)


def make(classifier, index, config=CONFIG, backend=None):
    return Pipeline(config, classifier, index, LlmGateway(backend or synthetic.e2e_mock()))


def test_high_completeness_goes_direct(classifier, index):
    out = make(classifier, index).diagnose("h", synthetic.record_text([A, A, A, A], 1))
    assert out.route is RoutingDecision.DIRECT
    assert out.i_norm == 1.0
    assert out.call_counts == {"llm_calls": 1, "retriever_queries": 0}
    assert out.retrieved_docs == [] and out.kept_docs == []
    assert not out.warning
    assert out.final_diagnosis == "Diagnosis: influenza"


def test_mid_completeness_retrieves(classifier, index):
    out = make(classifier, index).diagnose("m", synthetic.record_text([A, B, C, C], 2))
    assert out.route is RoutingDecision.RETRIEVE and out.i_norm == 0.375
    assert out.retrieved_docs
    assert out.queries_used == [0, 1]
    assert out.call_counts["retriever_queries"] == 2
    assert out.call_counts["llm_calls"] == len(out.retrieved_docs) + 1
    assert set(out.kept_docs) <= set(out.retrieved_docs)
    assert not out.warning


def test_all_c_warns_and_falls_back(classifier, index):
    out = make(classifier, index).diagnose("c", synthetic.record_text([C, C, C], 3))
    assert out.route is RoutingDecision.RETRIEVE_WITH_WARNING
    assert out.warning and out.fallback_flags["query_fallback"]
    assert out.queries_used == [0, 1, 2]


def test_excluded_docs_are_dropped_in_order(classifier, index):
    text = "Exam: rebound tenderness in right lower quadrant. Complaint: dry cough and fever. Note: insurance card copied. Note: lives alone with a cat."
    out = make(classifier, index).diagnose("x", text)
    assert "d_app" in out.retrieved_docs
    assert "d_app" not in out.kept_docs
    assert out.kept_docs == [d for d in out.retrieved_docs if d != "d_app"]
    verdicts = {v["doc_id"]: v["support"] for v in out.verdicts}
    assert verdicts["d_app"] is False


def test_all_excluded_sets_empty_evidence(classifier, index):
    backend = MockBackend((("Reference document:\n", "EXCLUDE"),), default="Diagnosis: unknown")
    out = make(classifier, index, backend=backend).diagnose("e", synthetic.record_text([B, C, C], 4))
    assert out.retrieved_docs and out.kept_docs == []
    assert out.fallback_flags["empty_evidence"]
    assert out.ok


class _FinalCallFails:
    name = "mock"

    def complete(self, request):
        if "Reference document:\n" in request.prompt:
            return "SUPPORT"
        raise HttpStatusError(500)


def test_final_call_failure_is_a_failed_outcome(classifier, index):
    outs, summary = make(classifier, index, backend=_FinalCallFails()).run_batch(synthetic.mixed_batch()[:3])
    assert all(o.status == "failed" and o.failed_stage == "generate" for o in outs)
    assert summary["n_failed"] == 3 and summary["n_records"] == 3


def test_segmentation_failure_isolated(classifier, index):
    outs, summary = make(classifier, index).run_batch([{"id": "blank", "text": "   "}, {"id": "ok", "text": "Exam: culture grew streptococcus."}])
    assert outs[0].failed_stage == "segment" and outs[1].ok
    assert summary["n_failed"] == 1


def test_mixed_batch_split(classifier, index):
    outs, summary = make(classifier, index).run_batch(synthetic.mixed_batch())
    assert [o.record_id for o in outs] == [r["id"] for r in synthetic.mixed_batch()]
    assert summary["routes"]["Direct"] == 10
    assert summary["routes"]["Retrieve"] + summary["routes"]["RetrieveWithWarning"] == 10
    for o in outs:
        assert (o.route is RoutingDecision.DIRECT) == o.record_id.startswith("high")
        assert o.warning == (o.route is RoutingDecision.RETRIEVE_WITH_WARNING)


def test_decision_toggle_forces_retrieval(classifier, index):
    cfg = CONFIG.with_toggles(decision_enabled=False)
    _, summary = make(classifier, index, cfg).run_batch(synthetic.mixed_batch())
    assert summary["retrieval_rate"] == 1.0
    assert summary["routes"]["Direct"] == 0


def test_empty_batch(classifier, index):
    outs, summary = make(classifier, index).run_batch([])
    assert outs == [] and summary["llm_calls"] == 0 and summary["retriever_queries"] == 0


def test_batch_is_bit_stable(classifier, index):
    a, _ = make(classifier, index).run_batch(synthetic.mixed_batch())
    b, _ = make(classifier, index).run_batch(synthetic.mixed_batch())
    assert json.dumps([o.to_dict() for o in a]) == json.dumps([o.to_dict() for o in b])


def test_bench_policies(classifier, index, tmp_path):
    gw = LlmGateway(synthetic.e2e_mock())
    rows = {r["policy"]: r for r in bench(synthetic.mixed_batch(), CONFIG, classifier, index, gw)}
    assert rows["never"]["retriever_queries"] == 0
    assert rows["never"]["retriever_queries"] <= rows["adaptive"]["retriever_queries"] < rows["always"]["retriever_queries"]
    assert rows["adaptive"]["retrieval_rate"] == 0.5 and rows["always"]["retrieval_rate"] == 1.0
    write_bench_csv(list(rows.values()), tmp_path / "bench.csv")
    header = (tmp_path / "bench.csv").read_text().splitlines()[0]
    assert header == "policy,n_records,retrieval_rate,llm_calls,retriever_queries,wall_time_s"


def test_bench_all_low_batch(classifier, index):
    low = [r for r in synthetic.mixed_batch() if r["id"].startswith("low")]
    rows = {r["policy"]: r for r in bench(low, CONFIG, classifier, index, LlmGateway(synthetic.e2e_mock()))}
    assert rows["adaptive"]["retrieval_rate"] == 1.0 == rows["always"]["retrieval_rate"]
    assert rows["adaptive"]["retriever_queries"] == rows["always"]["retriever_queries"]


def test_diff_toggle_keeps_all(classifier, index):
    cfg = CONFIG.with_toggles(diff_filter_enabled=False)
    outs, _ = make(classifier, index, cfg).run_batch(synthetic.mixed_batch())
    for o in outs:
        if o.route.retrieves:
            assert o.kept_docs == o.retrieved_docs
            assert o.call_counts["llm_calls"] == 1 and o.verdicts == []


def test_chunk_toggle_needs_whole_document_index(classifier, index):
    cfg = CONFIG.with_toggles(chunking_enabled=False)
    with pytest.raises(ConfigError):
        make(classifier, index, cfg)
    whole = build_knowledge_index(synthetic.TOY_KB, cfg)
    assert all(c.text == whole.docs[c.doc_id].body for c in whole.chunks.values())
    assert len(whole.chunks) == len(synthetic.TOY_KB)
    outs, _ = make(classifier, whole, cfg).run_batch(synthetic.mixed_batch())
    assert all(o.ok for o in outs)


def test_mrerank_toggle_orders_by_best_chunk(classifier, index):
    cfg = CONFIG.with_toggles(mapping_rerank_enabled=False)
    outs, _ = make(classifier, index, cfg).run_batch(synthetic.mixed_batch())
    for o in outs:
        best = [d["best_chunk_score"] for d in o.doc_scores]
        assert best == sorted(best, reverse=True)


def test_config_rejects_unknown_and_invalid(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"thresholds": {"theta1": 0.6, "theta3": 0.1}})
    with pytest.raises(ConfigError):
        config_from_dict({"thresholds": {"theta1": 1.5}})
    with pytest.raises(ConfigError):
        config_from_dict({"llm": {"backend": "http"}})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"weights": {"alpha": 2, "beta": 1, "gamma": 0}, "retrieval": {"m": 4, "bm25": {"k1": 1.5}}}))
    cfg = load_config(path)
    assert cfg.weights.alpha == 2 and cfg.retrieval.m == 4 and cfg.retrieval.bm25.k1 == 1.5 and cfg.retrieval.bm25.b == 0.75


def test_make_gateway_from_rules_file(tmp_path):
    rules = tmp_path / "rules.jsonl"
    rules.write_text('{"pattern": "Patient record", "response": "Diagnosis: x"}\n')
    gw = make_gateway(config_from_dict({"llm": {"mock_rules": str(rules)}}))
    assert gw.ask("Patient record: y") == "Diagnosis: x"
