"""
Difficulty classifiers and the F1 evaluation harness.

Three classifiers map a text to a label of a :class:`LabelScheme`:

* :class:`ReadabilityClassifier`: readability formula, then calibration.
* :class:`EmbeddingHeadClassifier`: embedding, then a softmax head trained
  with :func:`train_embedding_head`.
* :class:`RemoteClassifier`: a chat model prompted as a CEFR assessor;
  the free-text reply is parsed with :func:`parse_level_response`.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from cefrkit.calibration import (
    CalibrationModel,
    ClassifierOutput,
    Hyper,
    fit_softmax,
    output_from_probs,
    predict_calibrated,
    softmax,
    softmax_loss_and_grad,
)
from cefrkit.corpus import Corpus, LabelScheme
from cefrkit.errors import DataError, ProviderError
from cefrkit.providers import ChatBackend, Embedder, MockEmbedder, embed_many, parallel_map
from cefrkit.readability import DEFAULT_COEFFICIENTS, Coefficients, score
from cefrkit.textproc import compute_stats

# French wording of the assessor context used for the "with context" setting.
ASSESSOR_PROMPT = (
    "Vous êtes un évaluateur linguistique qui utilise le Cadre européen commun "
    "de référence pour les langues (CECRL). Votre tâche consiste à attribuer à "
    "ce texte un niveau de compétence, selon les niveaux du CECRL allant de A1 "
    "(débutant) à C2 (avancé/natif). Évaluez ce texte et attribuez-lui le "
    "niveau CECRL correspondant."
)


class UnparseableReply(ProviderError):
    """A remote classifier answered without naming any label."""


class DifficultyClassifier(ABC):
    scheme: LabelScheme

    @abstractmethod
    def classify(self, text: str) -> ClassifierOutput:
        ...

    def __call__(self, text: str) -> ClassifierOutput:
        return self.classify(text)


def classify(classifier: DifficultyClassifier, text: str) -> ClassifierOutput:
    if not text or not text.strip():
        raise DataError("cannot classify empty text")
    return classifier.classify(text)


class ReadabilityClassifier(DifficultyClassifier):
    def __init__(self, model: CalibrationModel, metric: str | None = None,
                 coefficients: Coefficients = DEFAULT_COEFFICIENTS):
        self.model = model
        self.scheme = model.scheme
        self.metric = metric or model.metric
        if not self.metric:
            raise DataError("readability classifier needs a metric name")
        self.coefficients = coefficients

    def classify(self, text):
        return predict_calibrated(self.model, score(compute_stats(text), self.metric, self.coefficients))


@dataclass(frozen=True)
class EmbeddingHead:
    scheme: LabelScheme
    weights: np.ndarray  # K x D
    biases: np.ndarray  # K
    hyper: Hyper = field(default_factory=Hyper)
    loss_trace: tuple = ()

    def probabilities(self, vector) -> np.ndarray:
        x = np.asarray(vector, dtype=np.float64)
        if x.shape != (self.weights.shape[1],):
            raise DataError(f"embedding dim {x.shape} does not match head dim {self.weights.shape[1]}")
        return softmax(self.weights @ x + self.biases)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.to_dict(),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "hyper": asdict(self.hyper),
            "final_loss": self.loss_trace[-1] if self.loss_trace else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingHead":
        return cls(
            scheme=LabelScheme.from_dict(d["scheme"]),
            weights=np.asarray(d["weights"], dtype=np.float64),
            biases=np.asarray(d["biases"], dtype=np.float64),
            hyper=Hyper.from_dict(d.get("hyper", {})),
        )


class EmbeddingHeadClassifier(DifficultyClassifier):
    def __init__(self, head: EmbeddingHead, embedder: Embedder):
        self.head = head
        self.scheme = head.scheme
        self.embedder = embedder

    def classify(self, text):
        return output_from_probs(self.scheme, self.head.probabilities(self.embedder.embed(text)))

    def to_dict(self) -> dict:
        d = {"kind": "embedding-head", **self.head.to_dict()}
        if isinstance(self.embedder, MockEmbedder):
            d["mock_dim"] = self.embedder.dim
        return d

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


def train_embedding_head(
    train: Corpus,
    embedder: Embedder,
    hyper: Hyper | None = None,
    parallelism: int = 1,
) -> EmbeddingHeadClassifier:
    hyper = hyper or Hyper()
    train.require_labeled()
    y = np.array([train.scheme.rank(it.label) for it in train])
    if len(set(y.tolist())) < 2:
        raise DataError("embedding head needs at least 2 distinct labels")
    X = np.vstack(embed_many(embedder, [it.text for it in train], parallelism))
    W, b, trace = fit_softmax(X, y, len(train.scheme), hyper)
    head = EmbeddingHead(train.scheme, W, b, hyper, tuple(trace))
    return EmbeddingHeadClassifier(head, embedder)


def head_loss_and_grad(head: EmbeddingHead, X, y):
    """Objective and gradients of ``head`` on embedded data (for checks)."""
    return softmax_loss_and_grad(head.weights, head.biases, np.asarray(X), np.asarray(y), head.hyper.l2)


def parse_level_response(reply: str, scheme: LabelScheme) -> str:
    """First scheme label that appears as a standalone token, case-insensitive."""
    alternatives = "|".join(re.escape(lab) for lab in sorted(scheme.labels, key=len, reverse=True))
    pattern = re.compile(rf"(?<![^\W_])({alternatives})(?![^\W_])", re.IGNORECASE)
    match = pattern.search(reply)
    if match is None:
        raise UnparseableReply(f"no {scheme.name} label in reply: {reply[:80]!r}")
    found = match.group(1).lower()
    return next(lab for lab in scheme.labels if lab.lower() == found)


class RemoteClassifier(DifficultyClassifier):
    """Prompted chat model. ``with_context`` toggles the assessor system prompt."""

    def __init__(self, backend: ChatBackend, scheme: LabelScheme, with_context: bool = True,
                 system_prompt: str = ASSESSOR_PROMPT):
        self.backend = backend
        self.scheme = scheme
        self.with_context = with_context
        self.system_prompt = system_prompt

    def classify(self, text):
        reply = self.backend.complete(self.system_prompt if self.with_context else "", text)
        return ClassifierOutput(label=parse_level_response(reply, self.scheme))


class TagClassifier(DifficultyClassifier):
    """Reads a leading ``[LEVEL]`` tag. Pairs with :class:`StepDownSimplifier`
    as a perfect offline proxy."""

    def __init__(self, scheme: LabelScheme):
        self.scheme = scheme

    def classify(self, text):
        match = re.match(r"\s*\[([^\]]+)\]", text)
        if match is None or match.group(1) not in self.scheme:
            raise UnparseableReply(f"no level tag in {text[:40]!r}")
        return ClassifierOutput(label=match.group(1))


# -- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class DifficultyReport:
    labels: tuple
    confusion: tuple  # rows = gold, cols = predicted
    per_class_f1: tuple
    macro_f1: float
    weighted_f1: float
    n_evaluated: int
    n_errors: int = 0

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "confusion": [list(r) for r in self.confusion],
            "per_class_f1": dict(zip(self.labels, self.per_class_f1)),
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "n_evaluated": self.n_evaluated,
            "n_errors": self.n_errors,
        }

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gold\\pred", *self.labels])
        for lab, row in zip(self.labels, self.confusion):
            writer.writerow([lab, *row])
        return buf.getvalue()


def f1_from_confusion(confusion) -> tuple[list[float], float, float]:
    """Per-class, macro and support-weighted F1 from a K x K count matrix."""
    cm = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(cm)
    gold = cm.sum(axis=1)
    pred = cm.sum(axis=0)
    per_class = []
    for k in range(cm.shape[0]):
        # 2PR/(P+R) == 2TP/(gold+pred), and is 0 when there is no true positive.
        denom = gold[k] + pred[k]
        per_class.append(2.0 * tp[k] / denom if tp[k] else 0.0)
    macro = math.fsum(per_class) / len(per_class)
    total = int(gold.sum())
    weighted = math.fsum(f * s for f, s in zip(per_class, gold)) / total if total else 0.0
    return per_class, macro, weighted


def evaluate_difficulty(classifier: DifficultyClassifier, test: Corpus, parallelism: int = 1) -> DifficultyReport:
    """Confusion matrix and F1 on a labeled test corpus.

    Unparseable remote replies are counted in ``n_errors`` and left out of
    the matrix; any other failure propagates.
    """
    if not len(test):
        raise DataError("cannot evaluate on an empty test set")
    test.require_labeled()
    scheme = classifier.scheme

    def run(item) -> Optional[str]:
        try:
            return classify(classifier, item.text).label
        except UnparseableReply:
            return None

    predictions = parallel_map(run, test.items, parallelism)
    k = len(scheme)
    cm = [[0] * k for _ in range(k)]
    errors = 0
    for item, pred in zip(test.items, predictions):
        if pred is None:
            errors += 1
            continue
        cm[scheme.rank(item.label)][scheme.rank(pred)] += 1
    per_class, macro, weighted = f1_from_confusion(cm)
    return DifficultyReport(
        labels=scheme.labels,
        confusion=tuple(tuple(r) for r in cm),
        per_class_f1=tuple(per_class),
        macro_f1=macro,
        weighted_f1=weighted,
        n_evaluated=len(test) - errors,
        n_errors=errors,
    )


def load_classifier_model(path, embedder: Embedder | None = None) -> DifficultyClassifier:
    """Rebuild a saved calibration or embedding-head classifier."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    kind = d.get("kind")
    if kind == "calibration":
        return ReadabilityClassifier(CalibrationModel.from_dict(d))
    if kind == "embedding-head":
        if embedder is None:
            if "mock_dim" not in d:
                raise DataError(f"{path}: head was trained on a remote embedder; pass one in")
            embedder = MockEmbedder(d["mock_dim"])
        return EmbeddingHeadClassifier(EmbeddingHead.from_dict(d), embedder)
    raise DataError(f"{path}: unknown model kind {kind!r}")
