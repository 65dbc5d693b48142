import pytest

from adaptrag.errors import HttpStatusError
from adaptrag.filtering import ParseStatus, filter_docs, parse_verdict
from adaptrag.index import KnowledgeDoc
from adaptrag.llm import LlmGateway, MockBackend


@pytest.mark.parametrize(
    "text, expected",
    [
        ("SUPPORT - symptoms align", (True, ParseStatus.PARSED)),
        ("exclude: conflicting lab values", (False, ParseStatus.PARSED)),
        ("uncertain", (True, ParseStatus.UNPARSEABLE)),
        ("", (True, ParseStatus.UNPARSEABLE)),
        ("I would Exclude this, not support it", (False, ParseStatus.PARSED)),
        ("Verdict: Support. Nothing to exclude.", (True, ParseStatus.PARSED)),
        ("unsupported claim", (True, ParseStatus.UNPARSEABLE)),
        ("结论：EXCLUDE", (False, ParseStatus.PARSED)),
    ],
)
def test_parse_verdict(text, expected):
    assert parse_verdict(text) == expected


DOCS = [
    KnowledgeDoc("d1", "Influenza", "Fever and cough."),
    KnowledgeDoc("d2", "Appendicitis", "Right lower quadrant pain."),
    KnowledgeDoc("d3", "Pneumonia", "Consolidation on radiograph."),
]


def gateway(rules, default="SUPPORT"):
    return LlmGateway(MockBackend(tuple(rules), default=default))


def test_exclude_second_keeps_order():
    gw = gateway([("Appendicitis", "EXCLUDE: no abdominal findings")])
    kept, verdicts = filter_docs("fever, cough", DOCS, gw)
    assert [d.doc_id for d in kept] == ["d1", "d3"]
    assert [v.doc_id for v in verdicts] == ["d1", "d2", "d3"]
    assert [v.support for v in verdicts] == [True, False, True]
    assert gw.calls == 3


def test_empty_doc_list_makes_no_calls():
    gw = gateway([])
    assert filter_docs("x", [], gw) == ([], [])
    assert gw.calls == 0


def test_all_excluded():
    kept, verdicts = filter_docs("x", DOCS, gateway([], default="EXCLUDE"))
    assert kept == [] and len(verdicts) == 3


class _Flaky:
    name = "mock"

    def complete(self, request):
        if "Pneumonia" in request.prompt:
            raise HttpStatusError(503)
        return "EXCLUDE"


def test_gateway_error_fails_open():
    kept, verdicts = filter_docs("x", DOCS, LlmGateway(_Flaky()))
    assert [d.doc_id for d in kept] == ["d3"]
    v = verdicts[2]
    assert v.parse_status is ParseStatus.UNPARSEABLE and v.support and "503" in v.error
