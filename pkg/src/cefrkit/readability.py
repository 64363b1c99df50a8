"""Gunning Fog, Flesch-Kincaid grade level and ARI from :class:`TextStats`."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from cefrkit.errors import DataError
from cefrkit.textproc import TextStats, compute_stats

METRICS = ("gfi", "fkgl", "ari")


@dataclass(frozen=True)
class Coefficients:
    """Formula constants. Defaults are the standard English ones; swap in
    French-adapted values here without touching the formulas."""

    gfi_scale: float = 0.4
    gfi_complex_pct: float = 100.0
    fkgl_words_per_sentence: float = 0.39
    fkgl_syllables_per_word: float = 11.8
    fkgl_intercept: float = -15.59
    ari_chars_per_word: float = 4.71
    ari_words_per_sentence: float = 0.5
    ari_intercept: float = -21.43


DEFAULT_COEFFICIENTS = Coefficients()


@dataclass(frozen=True)
class ReadabilityScores:
    gfi: float
    fkgl: float
    ari: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check(stats: TextStats) -> None:
    if stats.n_sentences < 1 or stats.n_words < 1:
        raise DataError(
            f"readability needs at least one sentence and one word "
            f"(got {stats.n_sentences} sentences, {stats.n_words} words)"
        )


def gfi(stats: TextStats, coef: Coefficients = DEFAULT_COEFFICIENTS) -> float:
    _check(stats)
    return coef.gfi_scale * (
        stats.n_words / stats.n_sentences
        + coef.gfi_complex_pct * stats.n_complex_words / stats.n_words
    )


def fkgl(stats: TextStats, coef: Coefficients = DEFAULT_COEFFICIENTS) -> float:
    _check(stats)
    return (
        coef.fkgl_words_per_sentence * (stats.n_words / stats.n_sentences)
        + coef.fkgl_syllables_per_word * (stats.n_syllables / stats.n_words)
        + coef.fkgl_intercept
    )


def ari(stats: TextStats, coef: Coefficients = DEFAULT_COEFFICIENTS) -> float:
    _check(stats)
    return (
        coef.ari_chars_per_word * (stats.n_chars / stats.n_words)
        + coef.ari_words_per_sentence * (stats.n_words / stats.n_sentences)
        + coef.ari_intercept
    )


_FORMULAS = {"gfi": gfi, "fkgl": fkgl, "ari": ari}


def score(stats: TextStats, metric: str, coef: Coefficients = DEFAULT_COEFFICIENTS) -> float:
    """Evaluate one metric by name (``gfi``, ``fkgl`` or ``ari``)."""
    try:
        formula = _FORMULAS[metric]
    except KeyError:
        raise DataError(f"unknown readability metric {metric!r}; expected one of {METRICS}") from None
    return formula(stats, coef)


def readability_scores(stats: TextStats, coef: Coefficients = DEFAULT_COEFFICIENTS) -> ReadabilityScores:
    return ReadabilityScores(gfi=gfi(stats, coef), fkgl=fkgl(stats, coef), ari=ari(stats, coef))


def score_text(text: str, metric: str, coef: Coefficients = DEFAULT_COEFFICIENTS) -> float:
    return score(compute_stats(text), metric, coef)
