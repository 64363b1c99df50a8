"""
Score-to-label calibration with multinomial logistic regression.

A readability formula yields one real number per text. To compare it with
classifiers that output labels, we fit a softmax regression on that single
standardized feature. The same full-batch gradient-descent core
(:func:`fit_softmax`) also trains the embedding head in
:mod:`cefrkit.difficulty`.

Objective (mean over n samples, W is K x D, b is K)::

    L = -1/n sum_i log softmax(W x_i + b)[y_i] + l2/2 * ||W||^2

The bias is not regularized.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from cefrkit.corpus import LabelScheme
from cefrkit.errors import DataError

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class Hyper:
    learning_rate: float = 0.1
    l2: float = 1e-4
    max_epochs: int = 5000
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.learning_rate <= 0 or self.l2 < 0 or self.max_epochs < 0 or self.tolerance < 0:
            raise DataError(f"invalid hyperparameters: {self}")

    @classmethod
    def from_dict(cls, d: dict) -> "Hyper":
        return cls(**{k: d[k] for k in ("learning_rate", "l2", "max_epochs", "tolerance") if k in d})


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_loss_and_grad(W, b, X, y, l2):
    """Loss and its gradient w.r.t. ``W`` (K x D) and ``b`` (K,).

    ``X`` is n x D, ``y`` holds integer class indices.
    """
    n = X.shape[0]
    logits = X @ W.T + b
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), y].mean() + 0.5 * l2 * float(np.sum(W * W))

    delta = np.exp(log_probs)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_W = delta.T @ X + l2 * W
    grad_b = delta.sum(axis=0)
    return float(loss), grad_W, grad_b


def fit_softmax(X, y, n_classes: int, hyper: Hyper):
    """Zero-initialized full-batch gradient descent.

    Returns ``(W, b, loss_trace)``. ``loss_trace[k]`` is the loss after
    ``k`` updates, so a zero-epoch fit yields a one-element trace. Stops
    early once an update improves the loss by less than ``hyper.tolerance``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    W = np.zeros((n_classes, X.shape[1]))
    b = np.zeros(n_classes)
    loss, gW, gb = softmax_loss_and_grad(W, b, X, y, hyper.l2)
    trace = [loss]
    for _ in range(hyper.max_epochs):
        W -= hyper.learning_rate * gW
        b -= hyper.learning_rate * gb
        new_loss, gW, gb = softmax_loss_and_grad(W, b, X, y, hyper.l2)
        trace.append(new_loss)
        if loss - new_loss < hyper.tolerance:
            break
        loss = new_loss
    return W, b, trace


@dataclass(frozen=True)
class ClassifierOutput:
    label: str
    probabilities: dict | None = None

    def to_dict(self) -> dict:
        return {"label": self.label, "probabilities": self.probabilities}


def output_from_probs(scheme: LabelScheme, probs: np.ndarray) -> ClassifierOutput:
    # np.argmax returns the first maximum, i.e. ties go to the lower rank.
    best = int(np.argmax(probs))
    return ClassifierOutput(
        label=scheme.labels[best],
        probabilities={lab: float(p) for lab, p in zip(scheme.labels, probs)},
    )


@dataclass(frozen=True)
class CalibrationModel:
    scheme: LabelScheme
    weights: tuple[float, ...]
    biases: tuple[float, ...]
    feature_mean: float = 0.0
    feature_std: float = 1.0
    hyper: Hyper = field(default_factory=Hyper)
    metric: str = ""
    loss_trace: tuple[float, ...] = ()

    def __post_init__(self):
        k = len(self.scheme)
        if len(self.weights) != k or len(self.biases) != k:
            raise DataError(f"calibration model needs {k} weights and biases")
        if not self.feature_std > 0:
            raise DataError("feature_std must be > 0")
        params = (*self.weights, *self.biases, self.feature_mean, self.feature_std)
        if not all(math.isfinite(p) for p in params):
            raise DataError("calibration parameters must be finite")

    def _standardize(self, scores) -> np.ndarray:
        x = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise DataError("calibration scores must be finite")
        return ((x - self.feature_mean) / self.feature_std).reshape(-1, 1)

    def probabilities(self, score: float) -> np.ndarray:
        x = self._standardize([score])
        logits = x @ np.asarray(self.weights).reshape(-1, 1).T + np.asarray(self.biases)
        return softmax(logits)[0]

    def loss(self, pairs) -> float:
        """Training objective of this model on ``pairs`` of (score, label)."""
        scores, labels = zip(*pairs)
        y = np.array([self.scheme.rank(lab) for lab in labels])
        W = np.asarray(self.weights).reshape(-1, 1)
        value, _, _ = softmax_loss_and_grad(W, np.asarray(self.biases), self._standardize(scores), y, self.hyper.l2)
        return value

    def to_dict(self) -> dict:
        return {
            "kind": "calibration",
            "scheme": self.scheme.to_dict(),
            "metric": self.metric,
            "weights": list(self.weights),
            "biases": list(self.biases),
            "feature_mean": self.feature_mean,
            "feature_std": self.feature_std,
            "hyper": asdict(self.hyper),
            "final_loss": self.loss_trace[-1] if self.loss_trace else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        final = d.get("final_loss")
        return cls(
            scheme=LabelScheme.from_dict(d["scheme"]),
            weights=tuple(d["weights"]),
            biases=tuple(d["biases"]),
            feature_mean=d["feature_mean"],
            feature_std=d["feature_std"],
            hyper=Hyper.from_dict(d.get("hyper", {})),
            metric=d.get("metric", ""),
            loss_trace=() if final is None else (final,),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_calibration(
    pairs: Sequence[tuple[float, str]],
    scheme: LabelScheme,
    hyper: Hyper | None = None,
    metric: str = "",
) -> CalibrationModel:
    hyper = hyper or Hyper()
    if not pairs:
        raise DataError("no calibration data")
    scores = np.array([float(s) for s, _ in pairs])
    if not np.all(np.isfinite(scores)):
        raise DataError("calibration scores must be finite")
    y = np.array([scheme.rank(lab) for _, lab in pairs])
    if len(set(y.tolist())) < 2:
        raise DataError("calibration needs at least 2 distinct labels")

    mean = float(scores.mean())
    std = max(float(scores.std()), STD_FLOOR)
    X = ((scores - mean) / std).reshape(-1, 1)
    W, b, trace = fit_softmax(X, y, len(scheme), hyper)
    return CalibrationModel(
        scheme=scheme,
        weights=tuple(float(w) for w in W[:, 0]),
        biases=tuple(float(v) for v in b),
        feature_mean=mean,
        feature_std=std,
        hyper=hyper,
        metric=metric,
        loss_trace=tuple(trace),
    )


def predict_calibrated(model: CalibrationModel, score: float) -> ClassifierOutput:
    return output_from_probs(model.scheme, model.probabilities(score))
