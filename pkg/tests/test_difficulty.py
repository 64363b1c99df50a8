import json
import math
import random

import numpy as np
import pytest
from sklearn.metrics import f1_score

from cefrkit.calibration import ClassifierOutput, Hyper, fit_calibration
from cefrkit.corpus import CEFR, LJL, Corpus, LabeledText, LabelScheme
from cefrkit.difficulty import (
    ASSESSOR_PROMPT,
    DifficultyClassifier,
    EmbeddingHeadClassifier,
    ReadabilityClassifier,
    RemoteClassifier,
    TagClassifier,
    UnparseableReply,
    classify,
    evaluate_difficulty,
    f1_from_confusion,
    head_loss_and_grad,
    load_classifier_model,
    parse_level_response,
    train_embedding_head,
)
from cefrkit.errors import DataError, ProviderError
from cefrkit.providers import MockChat, MockEmbedder
from oracles import brute_force_f1, central_differences, rel_err

BINARY = LabelScheme("binary", ("easy", "hard"))


class LookupClassifier(DifficultyClassifier):
    def __init__(self, scheme, mapping, default=None):
        self.scheme = scheme
        self.mapping = mapping
        self.default = default

    def classify(self, text):
        return ClassifierOutput(self.mapping.get(text, self.default))


# -- classify ------------------------------------------------------------------------

def test_readability_classifier_on_separable_fixture():
    model = fit_calibration([(1.0, "A1")] * 20 + [(10.0, "C2")] * 20, CEFR, metric="fkgl")
    clf = ReadabilityClassifier(model)
    # fkgl("Le chat dort.") = 0.39*3 + 11.8*1 - 15.59 = -2.62
    out = classify(clf, "Le chat dort.")
    assert out.label == "A1"
    assert abs(sum(out.probabilities.values()) - 1) <= 1e-9
    hard = "L'incommensurabilité épistémologique constitue indéniablement une problématique considérable."
    assert classify(clf, hard).label == "C2"


def test_remote_classifier_with_mock():
    assert classify(RemoteClassifier(MockChat("B2"), CEFR), "Un texte.").label == "B2"
    with pytest.raises(UnparseableReply):
        classify(RemoteClassifier(MockChat("I cannot assess this"), CEFR), "Un texte.")


def test_context_toggle_controls_system_prompt():
    seen = []
    chat = MockChat(lambda system, user: seen.append((system, user)) or "A2")
    RemoteClassifier(chat, CEFR, with_context=True).classify("Bonjour.")
    RemoteClassifier(chat, CEFR, with_context=False).classify("Bonjour.")
    assert seen == [(ASSESSOR_PROMPT, "Bonjour."), ("", "Bonjour.")]
    assert "A1" in ASSESSOR_PROMPT and "C2" in ASSESSOR_PROMPT


def test_classify_rejects_empty_text():
    with pytest.raises(DataError):
        classify(RemoteClassifier(MockChat("A1"), CEFR), "   ")


@pytest.mark.parametrize(
    "reply, expected",
    [
        ("The text is B2 level.", "B2"),
        ("Between B1 and B2, I'd say B1.", "B1"),
        ("niveau : c1", "C1"),
        ("**A2**", "A2"),
        ("B2+ probably", "B2"),
        ("Level: C2.", "C2"),
    ],
)
def test_parse_level_response(reply, expected):
    assert parse_level_response(reply, CEFR) == expected


@pytest.mark.parametrize("reply", ["intermediate", "B22", "AB1C", "", "I cannot assess this"])
def test_parse_level_response_errors(reply):
    with pytest.raises(UnparseableReply):
        parse_level_response(reply, CEFR)


def test_parse_ljl_scheme():
    assert parse_level_response("I would say Level3 here", LJL) == "level3"


# -- embedding head ------------------------------------------------------------------

def two_cluster_corpus(n=15, seed=0):
    rng = random.Random(seed)
    items = []
    for i in range(n):
        items.append(LabeledText(f"e{i}", "".join(rng.choice("abcd") for _ in range(12)), "A1"))
        items.append(LabeledText(f"h{i}", "".join(rng.choice("wxyz") for _ in range(12)), "C2"))
    return Corpus(CEFR, items)


def test_head_separates_two_clusters():
    corpus = two_cluster_corpus()
    clf = train_embedding_head(corpus, MockEmbedder(64))
    assert [clf.classify(it.text).label for it in corpus] == [it.label for it in corpus]
    trace = clf.head.loss_trace
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_zero_epoch_head_is_uniform():
    clf = train_embedding_head(two_cluster_corpus(), MockEmbedder(32), Hyper(max_epochs=0))
    out = clf.classify("abcdabcd")
    assert all(p == pytest.approx(1 / 6, abs=1e-15) for p in out.probabilities.values())
    assert out.label == "A1"


def test_head_gradient_matches_finite_differences():
    corpus = two_cluster_corpus(6)
    emb = MockEmbedder(16)
    clf = train_embedding_head(corpus, emb, Hyper(max_epochs=0, l2=0.01))
    X = np.vstack([emb.embed(it.text) for it in corpus])
    y = np.array([CEFR.rank(it.label) for it in corpus])
    rng = np.random.default_rng(4)
    for _ in range(10):
        head = type(clf.head)(CEFR, rng.normal(size=(6, 16)), rng.normal(size=6), clf.head.hyper)
        _, gW, gb = head_loss_and_grad(head, X, y)
        fW, fb = central_differences(head.weights, head.biases, X, y, head.hyper.l2)
        assert rel_err(np.concatenate([gW.ravel(), gb]), np.concatenate([fW.ravel(), fb])) <= 1e-5


def test_head_errors():
    single = Corpus(CEFR, [LabeledText("1", "abc", "A1"), LabeledText("2", "abd", "A1")])
    with pytest.raises(DataError):
        train_embedding_head(single, MockEmbedder(16))
    unlabeled = Corpus(CEFR, [LabeledText("1", "abc")])
    with pytest.raises(DataError):
        train_embedding_head(unlabeled, MockEmbedder(16))


def test_head_dim_mismatch_on_predict():
    clf = train_embedding_head(two_cluster_corpus(3), MockEmbedder(16), Hyper(max_epochs=5))
    with pytest.raises(DataError):
        EmbeddingHeadClassifier(clf.head, MockEmbedder(32)).classify("abc")


def test_saved_models_reload(tmp_path):
    corpus = two_cluster_corpus()
    clf = train_embedding_head(corpus, MockEmbedder(64), Hyper(max_epochs=300))
    clf.save(tmp_path / "head.json")
    again = load_classifier_model(tmp_path / "head.json")
    for it in corpus:
        assert again.classify(it.text) == clf.classify(it.text)

    cal = fit_calibration([(1.0, "A1"), (9.0, "B2")], CEFR, Hyper(max_epochs=50), metric="ari")
    cal.save(tmp_path / "cal.json")
    rc = load_classifier_model(tmp_path / "cal.json")
    assert isinstance(rc, ReadabilityClassifier) and rc.metric == "ari"

    (tmp_path / "x.json").write_text(json.dumps({"kind": "mystery"}))
    with pytest.raises(DataError):
        load_classifier_model(tmp_path / "x.json")


# -- evaluation ---------------------------------------------------------------------

def test_perfect_classifier():
    corpus = Corpus(CEFR, [LabeledText(f"{lab}{i}", f"t {lab} {i}", lab) for lab in CEFR.labels for i in range(3)])
    clf = LookupClassifier(CEFR, {it.text: it.label for it in corpus})
    report = evaluate_difficulty(clf, corpus)
    assert report.macro_f1 == 1.0 and report.weighted_f1 == 1.0
    assert report.confusion == tuple(tuple(3 if r == c else 0 for c in range(6)) for r in range(6))


def test_constant_classifier_hand_example():
    corpus = Corpus(BINARY, [LabeledText(f"{lab}{i}", f"{lab} {i}", lab) for lab in BINARY.labels for i in range(5)])
    report = evaluate_difficulty(LookupClassifier(BINARY, {}, default="easy"), corpus)
    assert report.per_class_f1 == (2 / 3, 0.0)
    assert report.macro_f1 == 1 / 3
    assert report.confusion == ((5, 0), (5, 0))


def test_f1_matches_brute_force_on_random_predictions():
    rng = random.Random(77)
    for trial in range(100):
        labels = list(CEFR.labels)
        n = rng.randint(1, 80)
        gold = [rng.choice(labels) for _ in range(n)]
        pred = [g if rng.random() < 0.5 else rng.choice(labels) for g in gold]
        corpus = Corpus(CEFR, [LabeledText(str(i), f"t{i}", g) for i, g in enumerate(gold)])
        report = evaluate_difficulty(LookupClassifier(CEFR, {f"t{i}": p for i, p in enumerate(pred)}), corpus)
        per, macro, weighted, matrix = brute_force_f1(gold, pred, labels)
        assert [list(r) for r in report.confusion] == matrix
        assert report.per_class_f1 == pytest.approx(per, abs=1e-12)
        assert report.macro_f1 == pytest.approx(macro, abs=1e-12)
        assert report.weighted_f1 == pytest.approx(weighted, abs=1e-12)
        assert report.macro_f1 == pytest.approx(
            f1_score(gold, pred, labels=labels, average="macro", zero_division=0), abs=1e-12)
        # conservation
        assert sum(map(sum, report.confusion)) == report.n_evaluated == n
        assert [sum(r) for r in report.confusion] == [gold.count(lab) for lab in labels]


def test_f1_from_confusion_bounds():
    rng = np.random.default_rng(1)
    for _ in range(100):
        cm = rng.integers(0, 10, size=(4, 4))
        per, macro, weighted = f1_from_confusion(cm)
        assert all(0 <= f <= 1 for f in per)
        assert macro == math.fsum(per) / 4
        assert 0 <= weighted <= 1


def test_unparseable_replies_are_counted_not_dropped():
    corpus = Corpus(CEFR, [LabeledText(str(i), f"t{i}", "B1") for i in range(6)])
    replies = iter(["B1", "no idea", "B1", "C1", "???", "B1"])
    clf = RemoteClassifier(MockChat(lambda s, u: next(replies)), CEFR)
    report = evaluate_difficulty(clf, corpus)
    assert report.n_errors == 2
    assert report.n_evaluated == 4
    assert sum(map(sum, report.confusion)) == 4


def test_serial_and_parallel_reports_match():
    rng = random.Random(8)
    corpus = Corpus(CEFR, [LabeledText(str(i), f"texte {i}", rng.choice(CEFR.labels)) for i in range(60)])
    clf = RemoteClassifier(MockChat.hashed_choice(CEFR.labels), CEFR)
    assert evaluate_difficulty(clf, corpus, parallelism=1) == evaluate_difficulty(clf, corpus, parallelism=8)


def test_repeated_evaluation_identical():
    corpus = two_cluster_corpus(5)
    clf = train_embedding_head(corpus, MockEmbedder(32), Hyper(max_epochs=50))
    assert evaluate_difficulty(clf, corpus) == evaluate_difficulty(clf, corpus)


def test_evaluate_errors():
    clf = TagClassifier(CEFR)
    with pytest.raises(DataError):
        evaluate_difficulty(clf, Corpus(CEFR, []))
    with pytest.raises(DataError):
        evaluate_difficulty(clf, Corpus(CEFR, [LabeledText("1", "[A1] x")]))


def test_provider_errors_propagate():
    def boom(system, user):
        raise ProviderError("down")

    corpus = Corpus(CEFR, [LabeledText("1", "x", "A1")])
    with pytest.raises(ProviderError):
        evaluate_difficulty(RemoteClassifier(MockChat(boom), CEFR), corpus)


def test_report_serialization():
    corpus = Corpus(BINARY, [LabeledText("1", "a", "easy"), LabeledText("2", "b", "hard")])
    report = evaluate_difficulty(LookupClassifier(BINARY, {"a": "easy", "b": "easy"}), corpus)
    d = report.to_dict()
    assert d["confusion"] == [[1, 0], [1, 0]]
    assert d["per_class_f1"] == {"easy": 2 / 3, "hard": 0.0}
    assert report.confusion_csv() == "gold\\pred,easy,hard\neasy,1,0\nhard,1,0\n"
