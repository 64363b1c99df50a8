"""
Simplification: backends, the accuracy/similarity/w-Score metrics, corpus
evaluation and the iterative driver.

Accuracy is judged by a proxy difficulty classifier applied to both the
original and the simplified text; a pair scores 1 only if the proxy puts the
simplified text exactly one rank below the original. Gold labels are never
consulted, so a constant bias of the proxy cancels out.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from cefrkit.corpus import Corpus, LabelScheme
from cefrkit.difficulty import DifficultyClassifier, classify
from cefrkit.errors import DataError, ProviderError
from cefrkit.providers import ChatBackend, Embedder, cosine, parallel_map
from cefrkit.textproc import count_syllables

log = logging.getLogger(__name__)

SKIPPED = None  # accuracy value when the proxy puts the original at the lowest level

PROMPT_VERSION = "fr-one-level-v1"
SIMPLIFY_SYSTEM_PROMPT = (
    "Tu es un professeur de français langue étrangère. Réécris la phrase "
    "donnée pour qu'elle soit exactement un niveau CECRL plus facile, en "
    "conservant son sens. Réponds uniquement par la phrase réécrite, en français."
)
SIMPLIFY_USER_TEMPLATE = "Niveau actuel : {level}\nNiveau visé : {target}\nPhrase : {text}"
MOCK_SYNONYM = "truc"


class Simplifier(ABC):
    @abstractmethod
    def simplify(self, text: str, current_level: Optional[str] = None) -> str:
        ...


def simplify_once(simplifier: Simplifier, text: str, current_level: Optional[str] = None) -> str:
    if not text or not text.strip():
        raise DataError("cannot simplify empty text")
    out = simplifier.simplify(text, current_level)
    if not out or not out.strip():
        raise ProviderError("simplifier returned an empty completion")
    return out


class RemoteSimplifier(Simplifier):
    def __init__(self, backend: ChatBackend, scheme: LabelScheme | None = None):
        self.backend = backend
        self.scheme = scheme

    def user_prompt(self, text: str, current_level: Optional[str]) -> str:
        target = "un niveau plus bas"
        level = current_level or "inconnu"
        if current_level and self.scheme is not None and current_level in self.scheme:
            rank = self.scheme.rank(current_level)
            if rank > 0:
                target = self.scheme.label(rank - 1)
        return SIMPLIFY_USER_TEMPLATE.format(level=level, target=target, text=text)

    def simplify(self, text, current_level=None):
        return self.backend.complete(SIMPLIFY_SYSTEM_PROMPT, self.user_prompt(text, current_level)).strip()


_WORD_RE = re.compile(r"[^\W\d_]+(?:['’\-][^\W\d_]+)*")


class MockSimplifier(Simplifier):
    """Replaces every word of 3+ syllables with a fixed short word."""

    def __init__(self, synonym: str = MOCK_SYNONYM):
        if count_syllables(synonym) >= 3:
            raise ValueError("mock synonym must have fewer than 3 syllables")
        self.synonym = synonym

    def simplify(self, text, current_level=None):
        return _WORD_RE.sub(lambda m: self.synonym if count_syllables(m.group(0)) >= 3 else m.group(0), text)


class IdentitySimplifier(Simplifier):
    def simplify(self, text, current_level=None):
        return text


class StepDownSimplifier(Simplifier):
    """Lowers a leading ``[LEVEL]`` tag by one rank, floored at the lowest.

    With :class:`cefrkit.difficulty.TagClassifier` as proxy this is a
    perfect one-level simplifier.
    """

    def __init__(self, scheme: LabelScheme):
        self.scheme = scheme

    def simplify(self, text, current_level=None):
        match = re.match(r"(\s*)\[([^\]]+)\]", text)
        if match is None or match.group(2) not in self.scheme:
            raise DataError(f"no level tag in {text[:40]!r}")
        rank = max(0, self.scheme.rank(match.group(2)) - 1)
        return f"{match.group(1)}[{self.scheme.label(rank)}]{text[match.end():]}"


# -- metrics ------------------------------------------------------------------------

def judge_pair(proxy: DifficultyClassifier, original: str, simplified: str) -> tuple[str, str, Optional[int]]:
    """Proxy levels of both texts and the resulting accuracy (1, 0 or ``SKIPPED``)."""
    if len(proxy.scheme) < 2:
        raise DataError("proxy scheme needs at least 2 levels")
    lvl_o = classify(proxy, original).label
    lvl_s = classify(proxy, simplified).label
    r_o, r_s = proxy.scheme.rank(lvl_o), proxy.scheme.rank(lvl_s)
    if r_o == 0:
        return lvl_o, lvl_s, SKIPPED
    return lvl_o, lvl_s, int(r_o - r_s == 1)


def simplification_accuracy(proxy: DifficultyClassifier, original: str, simplified: str) -> Optional[int]:
    return judge_pair(proxy, original, simplified)[2]


def w_score(mean_accuracy: float, mean_similarity: float, w1: float = 0.5, literal: bool = False) -> float:
    """Weighted harmonic mean of accuracy and similarity.

    ``A*S / (w1*S + w2*A)`` with ``w2 = 1 - w1``; equals ``2AS/(A+S)`` at
    equal weights and 0 when either input is 0. Negative similarity is
    clamped to 0.

    ``literal=True`` evaluates ``2*w1*A*w2*S / (w1*A + w2*S)`` instead,
    which at equal weights is half the harmonic mean. Kept for comparison
    only; it does not reproduce published w-Score tables.
    """
    if not 0.0 < w1 < 1.0:
        raise ValueError(f"w1 must be in (0, 1), got {w1}")
    if not 0.0 <= mean_accuracy <= 1.0:
        raise ValueError(f"mean accuracy must be in [0, 1], got {mean_accuracy}")
    if not mean_similarity <= 1.0:
        raise ValueError(f"mean similarity must be <= 1, got {mean_similarity}")
    a, s = mean_accuracy, max(0.0, mean_similarity)
    w2 = 1.0 - w1
    if a == 0.0 or s == 0.0:
        return 0.0
    if literal:
        return 2.0 * (w1 * a * w2 * s) / (w1 * a + w2 * s)
    return a * s / (w1 * s + w2 * a)


# -- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class SimplificationRecord:
    id: str
    original: str
    simplified: str
    gold_level: Optional[str]
    proxy_level_original: str
    proxy_level_simplified: str
    accuracy: Optional[int]
    similarity: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimplificationReport:
    mean_accuracy: float
    mean_similarity: float
    w_score: float
    n_pairs: int
    n_skipped: int
    w1: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


class ItemFailure(ProviderError):
    def __init__(self, item_id: str, cause: Exception):
        super().__init__(f"item {item_id!r} failed: {cause}")
        self.item_id = item_id


def _evaluate_item(simplifier, proxy, embedder, item) -> SimplificationRecord:
    try:
        simplified = simplify_once(simplifier, item.text, item.label)
        lvl_o, lvl_s, acc = judge_pair(proxy, item.text, simplified)
        sim = cosine(embedder.embed(item.text), embedder.embed(simplified))
    except ProviderError as exc:
        raise ItemFailure(item.id, exc) from exc
    return SimplificationRecord(item.id, item.text, simplified, item.label, lvl_o, lvl_s, acc, sim)


def summarize(records: Sequence[SimplificationRecord], w1: float = 0.5) -> SimplificationReport:
    """Corpus-level means over non-skipped records, then the w-Score.

    ``math.fsum`` keeps the means independent of record order.
    """
    scored = [r for r in records if r.accuracy is not SKIPPED]
    n = len(scored)
    mean_a = math.fsum(r.accuracy for r in scored) / n if n else 0.0
    mean_s = math.fsum(r.similarity for r in scored) / n if n else 0.0
    return SimplificationReport(
        mean_accuracy=mean_a,
        mean_similarity=mean_s,
        w_score=w_score(mean_a, mean_s, w1),
        n_pairs=n,
        n_skipped=len(records) - n,
        w1=w1,
    )


def evaluate_simplification(
    simplifier: Simplifier,
    proxy: DifficultyClassifier,
    embedder: Embedder,
    eval_set: Corpus,
    w1: float = 0.5,
    parallelism: int = 1,
) -> tuple[SimplificationReport, list[SimplificationRecord]]:
    if not len(eval_set):
        raise DataError("evaluation set is empty")
    records = parallel_map(
        lambda item: _evaluate_item(simplifier, proxy, embedder, item), eval_set.items, parallelism
    )
    return summarize(records, w1), records


# -- iterative driver --------------------------------------------------------------

@dataclass(frozen=True)
class IterationStep:
    iteration: int
    text: str
    proxy_level: str
    similarity_to_step0: float


@dataclass
class IterationTrace:
    steps: list = field(default_factory=list)
    complete: bool = True
    error: Optional[str] = None
    id: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "complete": self.complete,
            "error": self.error,
            "steps": [asdict(s) for s in self.steps],
        }


def iterate_simplify(
    simplifier: Simplifier,
    proxy: DifficultyClassifier,
    embedder: Embedder,
    sentence: str,
    max_iters: int = 8,
    id: str = "",
) -> IterationTrace:
    """Apply ``simplifier`` ``max_iters`` times, tracking proxy level and
    similarity to the original. No early stop.

    A provider failure ends the run; the partial trace comes back with
    ``complete=False``.
    """
    if max_iters < 1:
        raise DataError("max_iters must be >= 1")
    if not sentence or not sentence.strip():
        raise DataError("cannot iterate on empty text")
    trace = IterationTrace(id=id)
    try:
        base = embedder.embed(sentence)
        level = classify(proxy, sentence).label
        trace.steps.append(IterationStep(0, sentence, level, cosine(base, base)))
        text = sentence
        for it in range(1, max_iters + 1):
            text = simplify_once(simplifier, text, level)
            level = classify(proxy, text).label
            trace.steps.append(IterationStep(it, text, level, cosine(base, embedder.embed(text))))
    except ProviderError as exc:
        log.warning("iteration on %r stopped after %d step(s): %s", id or sentence[:30], len(trace.steps), exc)
        trace.complete = False
        trace.error = str(exc)
    return trace


@dataclass(frozen=True)
class IterationMean:
    iteration: int
    mean_rank: float
    mean_similarity: float


def aggregate_traces(traces: Sequence[IterationTrace], scheme: LabelScheme) -> list[IterationMean]:
    if not traces:
        raise DataError("no traces to aggregate")
    lengths = {len(t.steps) for t in traces}
    if len(lengths) != 1:
        raise DataError(f"traces have different lengths: {sorted(lengths)}")
    out = []
    for i in range(lengths.pop()):
        ranks = [scheme.rank(t.steps[i].proxy_level) for t in traces]
        sims = [t.steps[i].similarity_to_step0 for t in traces]
        out.append(IterationMean(i, math.fsum(ranks) / len(traces), math.fsum(sims) / len(traces)))
    return out


def aggregate_csv(means: Sequence[IterationMean]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "mean_rank", "mean_similarity"])
    for m in means:
        writer.writerow([m.iteration, repr(m.mean_rank), repr(m.mean_similarity)])
    return buf.getvalue()


def records_jsonl(records: Sequence[SimplificationRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)
