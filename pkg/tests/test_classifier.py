import json
import threading
import zlib
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptrag import classifier as clf
from adaptrag.errors import ConfigError, DegenerateCorpus, IoFailure, SchemaMismatch
from adaptrag.labels import LabeledUnit, UnitLabel, label_from_scores
from adaptrag.segmenter import TextUnit, segment

import synthetic

SMALL = clf.FeatureSpace(dim=2**10)


def unit(text, i=0):
    return TextUnit(i, text, (0, len(text)))


def test_featurize_deterministic():
    assert clf.featurize("fever and cough", SMALL) == clf.featurize("fever and cough", SMALL)


def test_featurize_char_bigrams_hand_hashed():
    space = clf.FeatureSpace(dim=16, char_orders=(2,), word_unigrams=False)
    expected = {zlib.crc32(b"c:ab") % 16, zlib.crc32(b"c:bc") % 16}
    vec = clf.featurize("abc", space)
    assert set(vec) == expected
    assert len(vec) == (2 if len(expected) == 2 else 1)
    assert sum(v * v for v in vec.values()) == pytest.approx(1.0)


def test_featurize_scaling_symmetry():
    # Literal text doubling adds junction n-grams ("hc" in "coughcough"), so the
    # invariance is checked on the key multiset: doubling every count keeps the direction.
    space = clf.FeatureSpace(dim=2**12)
    keys = clf.feature_keys("dry cough", space)
    assert clf.vectorize_keys(keys * 2, space.dim) == pytest.approx(clf.vectorize_keys(keys, space.dim))
    assert clf.vectorize_keys(keys, space.dim) == clf.featurize("dry cough", space)
    # word unigrams alone are exactly scale-free under repetition
    words = clf.FeatureSpace(dim=2**12, char_orders=(), word_unigrams=True)
    assert clf.featurize("dry cough dry cough", words) == pytest.approx(clf.featurize("dry cough", words))


def test_word_unigrams_included():
    space = clf.FeatureSpace(dim=2**12, char_orders=(), word_unigrams=True)
    vec = clf.featurize("fever fever", space)
    assert vec == {clf.bucket("w:fever", space.dim): 1.0}


def test_uniform_prediction_from_zero_model():
    model = clf.ClassifierModel.zeros(SMALL)
    lu = clf.predict(model, unit("anything"))
    assert lu.scores == pytest.approx((1 / 3, 1 / 3, 1 / 3))
    assert lu.label is UnitLabel.A


def test_tie_order():
    assert label_from_scores((0.2, 0.4, 0.4)) is UnitLabel.B
    assert label_from_scores((0.5, 0.5, 0.0)) is UnitLabel.A
    assert label_from_scores((0.1, 0.2, 0.7)) is UnitLabel.C


def test_model_dimension_floor():
    with pytest.raises(ConfigError):
        clf.ClassifierModel.zeros(clf.FeatureSpace(dim=512))


def test_degenerate_corpus():
    with pytest.raises(DegenerateCorpus):
        clf.train([clf.TrainingExample("x y", UnitLabel.A)] * 5, feature_space=SMALL)
    with pytest.raises(DegenerateCorpus):
        clf.train([], feature_space=SMALL)


def _toy_problem(seed=3):
    examples = synthetic.training_examples(60, seed=seed)
    X = clf.featurize_many([e.text for e in examples], SMALL)
    y = np.array([["A", "B", "C"].index(e.label.value) for e in examples])
    return X, y


def test_gradient_matches_central_differences():
    X, y = _toy_problem()
    rng = np.random.default_rng(0)
    active = np.unique(X.indices)
    l2 = 1e-2
    for _ in range(5):
        W = rng.normal(scale=0.5, size=(3, SMALL.dim))
        b = rng.normal(scale=0.5, size=3)
        _, gw, gb = clf.loss_and_grad(W, b, X, y, l2)
        cls, feat = int(rng.integers(3)), int(rng.choice(active))
        h = 1e-5
        Wp, Wm = W.copy(), W.copy()
        Wp[cls, feat] += h
        Wm[cls, feat] -= h
        numeric = (clf.loss_and_grad(Wp, b, X, y, l2)[0] - clf.loss_and_grad(Wm, b, X, y, l2)[0]) / (2 * h)
        assert abs(numeric - gw[cls, feat]) / max(abs(numeric), abs(gw[cls, feat]), 1e-12) < 1e-4
        bp, bm = b.copy(), b.copy()
        bp[cls] += h
        bm[cls] -= h
        numeric_b = (clf.loss_and_grad(W, bp, X, y, l2)[0] - clf.loss_and_grad(W, bm, X, y, l2)[0]) / (2 * h)
        assert abs(numeric_b - gb[cls]) / max(abs(numeric_b), 1e-12) < 1e-4


def test_full_batch_descent_is_monotone():
    X, y = _toy_problem()
    W, b = np.zeros((3, SMALL.dim)), np.zeros(3)
    losses = []
    for _ in range(11):
        loss, gw, gb = clf.loss_and_grad(W, b, X, y, 1e-4)
        losses.append(loss)
        W -= 0.05 * gw
        b -= 0.05 * gb
    assert all(b2 <= a2 + 1e-15 for a2, b2 in zip(losses, losses[1:]))


def test_separable_fixture_accuracy_and_marker_prediction():
    model = synthetic.fixture_model()
    assert model.metadata["train_accuracy"] >= 0.95
    lu = clf.predict(model, unit("Exam: radiograph shows lobar consolidation."))
    assert lu.label is UnitLabel.A
    assert lu.scores[0] > 0.5


def test_training_is_bit_deterministic():
    ex = synthetic.training_examples(90, seed=5)
    m1 = clf.train(ex, clf.TrainingConfig(epochs=3, seed=9), SMALL)
    m2 = clf.train(ex, clf.TrainingConfig(epochs=3, seed=9), SMALL)
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.bias, m2.bias)


def test_batch_prediction_preserves_order():
    model = synthetic.fixture_model()
    units = segment("Note: insurance card copied. Exam: culture grew streptococcus. Complaint: nausea after meals.")
    out = clf.predict_batch(model, units)
    assert [lu.unit for lu in out] == units
    assert [lu.label for lu in out] == [UnitLabel.C, UnitLabel.A, UnitLabel.B]
    assert clf.predict_batch(model, []) == []


@settings(max_examples=100, deadline=None)
@given(st.text(min_size=1, max_size=60).filter(str.strip))
def test_softmax_normalisation(text):
    lu = clf.predict(synthetic.fixture_model(), unit(text))
    assert abs(sum(lu.scores) - 1.0) <= 1e-9
    assert all(0.0 <= s <= 1.0 for s in lu.scores)
    assert lu.label is label_from_scores(lu.scores)


def test_save_load_round_trip(tmp_path):
    model = synthetic.fixture_model()
    path = tmp_path / "m.npz"
    clf.save(model, path)
    loaded = clf.load(path)
    probes = [f"probe sentence {i} with cough" for i in range(100)]
    assert np.array_equal(clf.predict_scores(model, probes), clf.predict_scores(loaded, probes))
    assert loaded.metadata == model.metadata


def test_load_truncated(tmp_path):
    path = tmp_path / "m.npz"
    clf.save(synthetic.fixture_model(), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(SchemaMismatch):
        clf.load(path)


def test_load_unknown_version(tmp_path):
    model = synthetic.fixture_model()
    path = tmp_path / "m.npz"
    np.savez(
        path, format=np.array(clf.MODEL_FORMAT), version=np.array(99),
        feature_space=np.array("{}"), metadata=np.array("{}"), weights=model.weights, bias=model.bias,
    )
    with pytest.raises(SchemaMismatch, match=r"version 99.*version 1"):
        clf.load(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        clf.load(tmp_path / "nope.npz")


def test_training_corpus_jsonl(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text('{"text": "Exam: x.", "label": "A"}\n{"text": "Note: y.", "label": "C"}\n')
    ex = clf.load_training_corpus(path)
    assert [e.label for e in ex] == [UnitLabel.A, UnitLabel.C]


class _ClassifierStub(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        n = len(body["texts"])
        payload = {"labels": ["B"] * n, "scores": [[0.2, 0.6, 0.2]] * n}
        raw = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


def test_remote_classifier_contract():
    server = HTTPServer(("127.0.0.1", 0), _ClassifierStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        remote = clf.RemoteUnitClassifier(f"http://127.0.0.1:{server.server_port}/classify")
        units = segment("One. Two. Three.")
        out = remote.classify(units)
    finally:
        server.shutdown()
    assert [lu.label for lu in out] == [UnitLabel.B] * 3
    assert all(isinstance(lu, LabeledUnit) and sum(lu.scores) == pytest.approx(1.0) for lu in out)
