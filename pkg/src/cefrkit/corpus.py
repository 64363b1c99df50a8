"""
Labeled text corpora: schemes, loading/saving, stats, splits and sampling.

Labels are plain strings; a :class:`LabelScheme` gives them an order.
Randomness uses :class:`random.Random` (Mersenne Twister) seeded explicitly,
so splits and samples are reproducible across platforms and Python versions.
"""
from __future__ import annotations

import csv
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from cefrkit.errors import DataError
from cefrkit.textproc import tokenize_words

FIELDS = ("id", "text", "label", "source")


class CorpusError(DataError):
    """A corpus file or value violates the expected schema."""


@dataclass(frozen=True)
class LabelScheme:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise CorpusError(f"scheme {self.name!r} needs at least 2 labels")
        if any(not lab for lab in self.labels):
            raise CorpusError(f"scheme {self.name!r} has an empty label")
        if len(set(self.labels)) != len(self.labels):
            raise CorpusError(f"scheme {self.name!r} has duplicate labels")

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label) -> bool:
        return label in self.labels

    def rank(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise CorpusError(f"label {label!r} is not in scheme {self.name!r}") from None

    def label(self, rank: int) -> str:
        if not 0 <= rank < len(self.labels):
            raise CorpusError(f"rank {rank} out of range for scheme {self.name!r}")
        return self.labels[rank]

    @property
    def lowest(self) -> str:
        return self.labels[0]

    def to_dict(self) -> dict:
        return {"name": self.name, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelScheme":
        return cls(d["name"], tuple(d["labels"]))


CEFR = LabelScheme("cefr", ("A1", "A2", "B1", "B2", "C1", "C2"))
LJL = LabelScheme("ljl", ("level1", "level2", "level3", "level4"))
SCHEMES = {s.name: s for s in (CEFR, LJL)}


def get_scheme(name: str) -> LabelScheme:
    try:
        return SCHEMES[name.lower()]
    except KeyError:
        raise CorpusError(f"unknown scheme {name!r}; known: {sorted(SCHEMES)}") from None


@dataclass(frozen=True)
class LabeledText:
    id: str
    text: str
    label: Optional[str] = None
    source: str = ""

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise CorpusError(f"item {self.id!r} has empty text")


@dataclass(frozen=True)
class Corpus:
    scheme: LabelScheme
    items: tuple[LabeledText, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        seen = set()
        for item in self.items:
            if item.id in seen:
                raise CorpusError(f"duplicate id {item.id!r}")
            seen.add(item.id)
            if item.label is not None and item.label not in self.scheme:
                raise CorpusError(f"item {item.id!r}: unknown label {item.label!r}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def by_label(self, label: str) -> list[LabeledText]:
        return [it for it in self.items if it.label == label]

    @property
    def is_labeled(self) -> bool:
        return all(it.label is not None for it in self.items)

    def require_labeled(self) -> None:
        missing = [it.id for it in self.items if it.label is None]
        if missing:
            raise CorpusError(f"{len(missing)} unlabeled item(s), e.g. {missing[0]!r}")


@dataclass(frozen=True)
class CorpusStats:
    n_items: int
    n_words: int
    n_chars: int
    per_label_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_words": self.n_words,
            "n_chars": self.n_chars,
            "per_label_counts": dict(self.per_label_counts),
        }


# -- I/O ---------------------------------------------------------------------

def _row_to_item(row: dict, lineno: int, scheme: LabelScheme) -> LabeledText:
    if not isinstance(row, dict) or "id" not in row or "text" not in row:
        raise CorpusError(f"row {lineno}: malformed row, expected fields {FIELDS}")
    label = row.get("label") or None
    if label is not None:
        label = str(label).strip() or None
    if label is not None and label not in scheme:
        raise CorpusError(f"row {lineno}: unknown label {label!r} for scheme {scheme.name!r}")
    text = row["text"]
    if not isinstance(text, str) or not text.strip():
        raise CorpusError(f"row {lineno}: empty text")
    return LabeledText(id=str(row["id"]), text=text, label=label, source=str(row.get("source") or ""))


def _guess_format(path: Path) -> str:
    return "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"


def load_corpus(path, scheme: LabelScheme, format: Optional[str] = None) -> Corpus:
    """Read a CSV (``id,text,label,source`` header) or JSONL corpus.

    Row numbers in error messages are 1-based and count the CSV header as
    row 1, so they match what a spreadsheet shows.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    format = (format or _guess_format(path)).lower()
    items = []
    with path.open(encoding="utf-8", newline="") as fh:
        if format == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "text"} <= set(reader.fieldnames):
                raise CorpusError(f"{path}: CSV header must contain {FIELDS}")
            for lineno, row in enumerate(reader, start=2):
                if None in row:
                    raise CorpusError(f"row {lineno}: too many fields")
                items.append(_row_to_item(row, lineno, scheme))
        elif format == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"row {lineno}: invalid JSON ({exc.msg})") from None
                items.append(_row_to_item(row, lineno, scheme))
        else:
            raise CorpusError(f"unsupported corpus format {format!r}")
    try:
        return Corpus(scheme, items)
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from None


def dump_corpus(corpus: Corpus, fh, format: str = "csv") -> None:
    if format == "csv":
        writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        for it in corpus:
            writer.writerow({"id": it.id, "text": it.text, "label": it.label or "", "source": it.source})
    elif format == "jsonl":
        for it in corpus:
            row = {"id": it.id, "text": it.text, "label": it.label, "source": it.source}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    else:
        raise CorpusError(f"unsupported corpus format {format!r}")


def save_corpus(corpus: Corpus, path, format: Optional[str] = None) -> None:
    path = Path(path)
    format = (format or _guess_format(path)).lower()
    with path.open("w", encoding="utf-8", newline="") as fh:
        dump_corpus(corpus, fh, format)


# -- stats / split / sample -------------------------------------------------

def corpus_stats(corpus: Corpus) -> CorpusStats:
    counts = Counter(it.label for it in corpus if it.label is not None)
    return CorpusStats(
        n_items=len(corpus),
        n_words=sum(len(tokenize_words(it.text)) for it in corpus),
        n_chars=sum(len(it.text) for it in corpus),
        per_label_counts={lab: counts[lab] for lab in corpus.scheme.labels if counts[lab]},
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_corpus(
    corpus: Corpus, train_fraction: float = 0.8, seed: int = 0, stratify: bool = True
) -> tuple[Corpus, Corpus]:
    """Seeded train/test split, stratified by label by default.

    Per stratum of size n, ``round(train_fraction * n)`` items (half-up) go
    to train. Both halves keep the input order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = random.Random(seed)
    if stratify:
        corpus.require_labeled()
        strata = [
            [i for i, it in enumerate(corpus.items) if it.label == lab]
            for lab in corpus.scheme.labels
        ]
        strata = [s for s in strata if s]
        for idx in strata:
            if len(idx) < 2:
                label = corpus.items[idx[0]].label
                raise CorpusError(f"stratum {label!r} has {len(idx)} item(s); need at least 2")
    else:
        strata = [list(range(len(corpus)))]

    train_idx = set()
    for idx in strata:
        shuffled = list(idx)
        rng.shuffle(shuffled)
        train_idx.update(shuffled[: _round_half_up(train_fraction * len(idx))])

    train = [it for i, it in enumerate(corpus.items) if i in train_idx]
    test = [it for i, it in enumerate(corpus.items) if i not in train_idx]
    return Corpus(corpus.scheme, train), Corpus(corpus.scheme, test)


def sample_eval_set(
    corpora: Sequence[Corpus], per_level: int, levels: Iterable[str], seed: int = 0
) -> Corpus:
    """Draw ``per_level`` items per (level, source corpus) without replacement.

    Ids that collide across source corpora are prefixed with the item's
    source tag (or ``corpus<i>``) to keep the result valid.
    """
    if not corpora:
        raise CorpusError("sample_eval_set needs at least one corpus")
    if per_level < 0:
        raise CorpusError("per_level must be >= 0")
    scheme = corpora[0].scheme
    if any(c.scheme != scheme for c in corpora):
        raise CorpusError("all source corpora must share one label scheme")
    levels = list(levels)
    for lev in levels:
        scheme.rank(lev)

    rng = random.Random(seed)
    picked = []
    for ci, corpus in enumerate(corpora):
        for lev in levels:
            pool = corpus.by_label(lev)
            if len(pool) < per_level:
                src = pool[0].source if pool and pool[0].source else f"corpus{ci}"
                raise CorpusError(
                    f"source {src!r} has {len(pool)} item(s) at level {lev}; need {per_level}"
                )
            picked.extend((ci, it) for it in rng.sample(pool, per_level))

    seen = set()
    items = []
    for ci, it in picked:
        if it.id in seen:
            it = LabeledText(f"{it.source or f'corpus{ci}'}/{it.id}", it.text, it.label, it.source)
        seen.add(it.id)
        items.append(it)
    return Corpus(scheme, items)
