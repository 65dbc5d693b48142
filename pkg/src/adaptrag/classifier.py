"""Sentence importance classifier.

The reference backend is multinomial logistic regression over hashed
character n-gram and whitespace-token features. Any object with a
``classify(units)`` method can stand in for it; :class:`RemoteUnitClassifier`
forwards units to an HTTP service.
"""

from __future__ import annotations

import json
import logging
import zipfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import httpx
import numpy as np
import scipy.sparse as sp

from .errors import (
    ConfigError,
    DataError,
    DegenerateCorpus,
    IoFailure,
    MalformedProviderPayload,
    SchemaMismatch,
    HttpStatusError,
    LlmTimeout,
)
from .labels import LABEL_ORDER, LabeledUnit, UnitLabel, label_from_scores
from .segmenter import TextUnit

logger = logging.getLogger(__name__)

MODEL_FORMAT = "adaptrag-linear-classifier"
MODEL_VERSION = 1
MIN_MODEL_DIM = 2**10

_LABEL_INDEX = {label: i for i, label in enumerate(LABEL_ORDER)}


@dataclass(frozen=True)
class FeatureSpace:
    dim: int = 2**18
    char_orders: tuple[int, ...] = (2, 3, 4)
    word_unigrams: bool = True
    lowercase: bool = True

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError("feature dimension must be positive")
        if any(n < 1 for n in self.char_orders):
            raise ConfigError("n-gram orders must be positive")
        object.__setattr__(self, "char_orders", tuple(self.char_orders))


@dataclass(frozen=True)
class TrainingExample:
    text: str
    label: UnitLabel

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise DataError("training example text must be non-empty")
        object.__setattr__(self, "label", UnitLabel(self.label))


@dataclass(frozen=True)
class TrainingConfig:
    l2: float = 1e-4
    epochs: int = 20
    lr: float = 0.1
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.l2 < 0 or self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"invalid training hyperparameters: {self}")


def bucket(key: str, dim: int) -> int:
    """Stable hash bucket of a feature key (CRC-32, independent of PYTHONHASHSEED)."""
    return zlib.crc32(key.encode("utf-8")) % dim


def feature_keys(text: str, space: FeatureSpace) -> list[str]:
    if space.lowercase:
        text = text.lower()
    keys = []
    for n in space.char_orders:
        keys.extend("c:" + text[i:i + n] for i in range(len(text) - n + 1))
    if space.word_unigrams:
        keys.extend("w:" + tok for tok in text.split())
    return keys


def vectorize_keys(keys: Iterable[str], dim: int) -> dict[int, float]:
    counts: dict[int, float] = {}
    for key in keys:
        b = bucket(key, dim)
        counts[b] = counts.get(b, 0.0) + 1.0
    norm = float(np.sqrt(sum(v * v for v in counts.values())))
    if norm > 0:
        counts = {b: v / norm for b, v in counts.items()}
    return dict(sorted(counts.items()))


def featurize(text: str, space: FeatureSpace) -> dict[int, float]:
    """Hashed, L2-normalised feature counts of ``text`` as ``{bucket: value}``."""
    return vectorize_keys(feature_keys(text, space), space.dim)


def featurize_many(texts: Sequence[str], space: FeatureSpace) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        vec = featurize(text, space)
        indices.extend(vec.keys())
        data.extend(vec.values())
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(texts), space.dim),
    )


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    feature_space: FeatureSpace
    weights: np.ndarray
    bias: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        dim = self.feature_space.dim
        if dim < MIN_MODEL_DIM:
            raise ConfigError(f"model hash dimension must be >= {MIN_MODEL_DIM}, got {dim}")
        if self.weights.shape != (3, dim) or self.bias.shape != (3,):
            raise SchemaMismatch(
                f"weights {self.weights.shape} / bias {self.bias.shape} do not match dimension {dim}"
            )

    @classmethod
    def zeros(cls, feature_space: FeatureSpace | None = None) -> "ClassifierModel":
        space = feature_space or FeatureSpace()
        return cls(space, np.zeros((3, space.dim)), np.zeros(3))


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, X: sp.csr_matrix, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient w.r.t. (W, b)."""
    n = X.shape[0]
    logits = np.asarray(X @ weights.T) + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    loss = -log_probs[np.arange(n), y].mean() + 0.5 * l2 * float(np.sum(weights * weights))
    delta = np.exp(log_probs)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_w = np.asarray((X.T @ delta).T) + l2 * weights
    grad_b = delta.sum(axis=0)
    return float(loss), grad_w, grad_b


def _accuracy(weights: np.ndarray, bias: np.ndarray, X: sp.csr_matrix, y: np.ndarray) -> float:
    probs = softmax_rows(np.asarray(X @ weights.T) + bias)
    preds = np.array([_LABEL_INDEX[label_from_scores(row)] for row in probs])
    return float((preds == y).mean())


def train(
    examples: Sequence[TrainingExample],
    hyper: TrainingConfig = TrainingConfig(),
    feature_space: FeatureSpace | None = None,
) -> ClassifierModel:
    """Fit the linear model with seeded mini-batch gradient descent."""
    space = feature_space or FeatureSpace()
    if not examples:
        raise DegenerateCorpus("no training examples")
    labels = {ex.label for ex in examples}
    if len(labels) < 2:
        raise DegenerateCorpus(f"need at least 2 distinct labels, got {sorted(l.value for l in labels)}")

    X = featurize_many([ex.text for ex in examples], space)
    y = np.array([_LABEL_INDEX[ex.label] for ex in examples], dtype=np.int64)
    weights = np.zeros((3, space.dim))
    bias = np.zeros(3)
    rng = np.random.default_rng(hyper.seed)
    n = len(examples)
    loss = float("nan")
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            loss, gw, gb = loss_and_grad(weights, bias, X[batch], y[batch], hyper.l2)
            weights -= hyper.lr * gw
            bias -= hyper.lr * gb
        logger.debug("epoch %d loss %.5f", epoch + 1, loss)

    full_loss, _, _ = loss_and_grad(weights, bias, X, y, hyper.l2)
    acc = _accuracy(weights, bias, X, y)
    logger.info("trained on %d examples: loss %.4f, train accuracy %.4f", n, full_loss, acc)
    counts = {label.value: int((y == i).sum()) for i, label in enumerate(LABEL_ORDER)}
    metadata = {
        "hyper": asdict(hyper),
        "n_examples": n,
        "label_counts": counts,
        "train_loss": full_loss,
        "train_accuracy": acc,
    }
    return ClassifierModel(space, weights, bias, metadata)


def predict_scores(model: ClassifierModel, texts: Sequence[str]) -> np.ndarray:
    X = featurize_many(list(texts), model.feature_space)
    return softmax_rows(np.asarray(X @ model.weights.T) + model.bias)


def predict(model: ClassifierModel, unit: TextUnit) -> LabeledUnit:
    return predict_batch(model, [unit])[0]


def predict_batch(model: ClassifierModel, units: Sequence[TextUnit]) -> list[LabeledUnit]:
    if not units:
        return []
    probs = predict_scores(model, [u.text for u in units])
    return [LabeledUnit.from_scores(u, row) for u, row in zip(units, probs)]


def save(model: ClassifierModel, path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("wb") as fh:
            np.savez_compressed(
                fh,
                format=np.array(MODEL_FORMAT),
                version=np.array(MODEL_VERSION),
                feature_space=np.array(json.dumps(asdict(model.feature_space))),
                metadata=np.array(json.dumps(model.metadata)),
                weights=model.weights,
                bias=model.bias,
            )
    except OSError as exc:
        raise IoFailure(f"cannot write model to {path}: {exc}") from exc


def load(path: str | Path) -> ClassifierModel:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["format"]) if "format" in data.files else None
            if fmt != MODEL_FORMAT:
                raise SchemaMismatch(f"{path} is not a classifier model file (format={fmt!r})")
            version = int(data["version"])
            if version != MODEL_VERSION:
                raise SchemaMismatch(
                    f"model file version {version} is not supported (expected version {MODEL_VERSION})"
                )
            space = json.loads(str(data["feature_space"]))
            metadata = json.loads(str(data["metadata"]))
            weights = np.array(data["weights"])
            bias = np.array(data["bias"])
    except SchemaMismatch:
        raise
    except FileNotFoundError as exc:
        raise IoFailure(f"model file not found: {path}") from exc
    except (zipfile.BadZipFile, EOFError, ValueError, KeyError, OSError) as exc:
        raise SchemaMismatch(f"corrupt or truncated model file {path}: {exc}") from exc
    space["char_orders"] = tuple(space["char_orders"])
    return ClassifierModel(FeatureSpace(**space), weights, bias, metadata)


def load_training_corpus(path: str | Path) -> list[TrainingExample]:
    from .jsonl import read_jsonl

    examples = []
    for lineno, row in enumerate(read_jsonl(path), 1):
        try:
            examples.append(TrainingExample(text=row["text"], label=UnitLabel(row["label"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: bad training row: {exc}") from exc
    return examples


class UnitClassifier(Protocol):
    def classify(self, units: Sequence[TextUnit]) -> list[LabeledUnit]: ...


class LinearUnitClassifier:
    def __init__(self, model: ClassifierModel) -> None:
        self.model = model

    def classify(self, units: Sequence[TextUnit]) -> list[LabeledUnit]:
        return predict_batch(self.model, units)


class RemoteUnitClassifier:
    """Classifier served over HTTP.

    POSTs ``{"texts": [...]}`` and expects ``{"labels": [...], "scores": [[a, b, c], ...]}``.
    Labels are re-derived from the returned scores so the local tie rule holds.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, client: httpx.Client | None = None) -> None:
        self.endpoint = endpoint
        self.timeout = timeout
        self._client = client

    def _post(self, payload: dict) -> httpx.Response:
        if self._client is not None:
            return self._client.post(self.endpoint, json=payload, timeout=self.timeout)
        return httpx.post(self.endpoint, json=payload, timeout=self.timeout)

    def classify(self, units: Sequence[TextUnit]) -> list[LabeledUnit]:
        if not units:
            return []
        try:
            resp = self._post({"texts": [u.text for u in units]})
        except httpx.TimeoutException as exc:
            raise LlmTimeout(f"classifier backend timed out after {self.timeout}s") from exc
        except httpx.HTTPError as exc:
            raise HttpStatusError(0, f"classifier backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise HttpStatusError(resp.status_code, "classifier backend")
        try:
            body = resp.json()
            labels = [UnitLabel(v) for v in body["labels"]]
            scores = [_normalise_triple(s) for s in body["scores"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedProviderPayload(f"bad classifier response: {exc}") from exc
        if len(labels) != len(units) or len(scores) != len(units):
            raise MalformedProviderPayload(
                f"classifier returned {len(labels)} labels / {len(scores)} scores for {len(units)} texts"
            )
        out = []
        for unit, remote_label, triple in zip(units, labels, scores):
            labeled = LabeledUnit.from_scores(unit, triple)
            if labeled.label is not remote_label:
                logger.warning(
                    "remote label %s disagrees with argmax %s for unit %d",
                    remote_label.value, labeled.label.value, unit.index,
                )
            out.append(labeled)
        return out


def _normalise_triple(values: Iterable[float]) -> tuple[float, float, float]:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)) or np.any(arr < 0) or arr.sum() <= 0:
        raise ValueError(f"score triple must be 3 non-negative finite numbers, got {arr.tolist()}")
    arr = arr / arr.sum()
    return float(arr[0]), float(arr[1]), float(arr[2])
