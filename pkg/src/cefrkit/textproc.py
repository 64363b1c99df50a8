"""
Deterministic French text statistics.

Sentence segmentation, word tokenization and a vowel-group syllable
heuristic, composed into :class:`TextStats` for the readability formulas.

The syllable rule counts maximal runs of vowel characters, so hiatus is
undercounted ("créativité" gives 4, not 5). That is fine for relative
scoring, which is all the calibration layer needs.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass

VOWELS = frozenset("aeiouyéèêëàâîïôûùüœ" + "aeiouyéèêëàâîïôûùüœ".upper())

# Lowercase abbreviations whose trailing period never ends a sentence.
ABBREVIATIONS = frozenset(
    {
        "m", "mm", "mme", "mmes", "mlle", "mlles", "me", "dr", "pr", "st", "ste",
        "etc", "cf", "p", "pp", "av", "bd", "env", "ex", "vol", "chap", "fig",
    }
)

_WORD_RE = re.compile(r"[^\W\d_]+(?:['’\-][^\W\d_]+)*")
# French typography puts a (possibly non-breaking) space before "»".
_BOUNDARY_RE = re.compile(r"[.!?…]+(?:[\"'”’)\]]|\s?»)*(?=\s|$)")
_TOKEN_BEFORE_RE = re.compile(r"([^\W\d_]+)$")
_VOWEL_GROUP_RE = re.compile("[" + "".join(sorted(VOWELS)) + "]+")


@dataclass(frozen=True)
class TextStats:
    n_sentences: int = 0
    n_words: int = 0
    n_chars: int = 0
    n_syllables: int = 0
    n_complex_words: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def segment_sentences(text: str) -> list[str]:
    """Split ``text`` on terminal punctuation followed by whitespace or end.

    A single period right after a known abbreviation (``M.``, ``Mme.``,
    ``etc.``...) does not close the sentence. A trailing fragment without
    terminal punctuation is kept as its own sentence.

    >>> segment_sentences("Bonjour. Ça va ?")
    ['Bonjour.', 'Ça va ?']
    """
    sentences = []
    start = 0
    for match in _BOUNDARY_RE.finditer(text):
        if match.group(0) == "." and _is_abbreviation(text, match.start()):
            continue
        piece = text[start:match.end()].strip()
        if piece:
            sentences.append(piece)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _is_abbreviation(text: str, dot_index: int) -> bool:
    found = _TOKEN_BEFORE_RE.search(text, 0, dot_index)
    return found is not None and found.group(1).lower() in ABBREVIATIONS


def tokenize_words(text: str) -> list[str]:
    """Maximal letter runs; internal apostrophes and hyphens stay in the token."""
    return _WORD_RE.findall(text)


def count_syllables(word: str) -> int:
    """Number of vowel groups in ``word``, at least 1 if it has any letter."""
    groups = len(_VOWEL_GROUP_RE.findall(word))
    if groups:
        return groups
    return 1 if any(ch.isalpha() for ch in word) else 0


def compute_stats(text: str) -> TextStats:
    words = tokenize_words(text)
    syllables = [count_syllables(w) for w in words]
    return TextStats(
        n_sentences=len(segment_sentences(text)),
        n_words=len(words),
        n_chars=sum(1 for ch in text if ch.isalnum()),
        n_syllables=sum(syllables),
        n_complex_words=sum(1 for s in syllables if s >= 3),
    )
