import socket

import pytest

from cefrkit import providers
from cefrkit.corpus import CEFR, Corpus, LabeledText, save_corpus


class RecordingTransport:
    """Transport stub that records calls and replays scripted responses.

    Each scripted entry is either ``(status, body)`` or an exception to raise.
    """

    def __init__(self, script=()):
        self.script = list(script)
        self.calls = []

    def post(self, url, payload, headers, timeout_s):
        self.calls.append({"url": url, "payload": payload, "headers": headers, "timeout_s": timeout_s})
        if not self.script:
            raise AssertionError(f"unexpected network call to {url}")
        step = self.script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


@pytest.fixture
def recording_transport():
    stub = RecordingTransport()
    previous = providers.set_default_transport(stub)
    yield stub
    providers.set_default_transport(previous)


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly if anything opens a socket connection."""
    attempts = []

    def guard(self, *args, **kwargs):
        attempts.append(args)
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket.socket, "connect_ex", guard)
    return attempts


def tagged_corpus(per_level=3, levels=CEFR.labels, source="fx"):
    items = [
        LabeledText(f"{source}-{lev}-{i}", f"[{lev}] phrase numéro {i} du niveau {lev}.", lev, source)
        for lev in levels
        for i in range(per_level)
    ]
    return Corpus(CEFR, items)


@pytest.fixture
def cefr_fixture_csv(tmp_path):
    """Six rows, one per CEFR level."""
    texts = {
        "A1": "Le chat dort.",
        "A2": "Je vais au marché le samedi matin.",
        "B1": "Depuis que j'ai déménagé, je prends le vélo pour aller au bureau.",
        "B2": "Bien que la situation se soit améliorée, beaucoup de familles peinent encore.",
        "C1": "La prolifération des plateformes numériques a bouleversé la production journalistique.",
        "C2": "L'incommensurabilité des expériences subjectives constitue une objection insurmontable.",
    }
    corpus = Corpus(CEFR, [LabeledText(f"r{i}", t, lab, "fixture") for i, (lab, t) in enumerate(texts.items())])
    path = tmp_path / "fixture.csv"
    save_corpus(corpus, path)
    return path


# -- acceptance reporting ----------------------------------------------------------------

import time  # noqa: E402

SUITE_BUDGET_S = 60.0
_acceptance = {}
_session = {}


def pytest_sessionstart(session):
    _session["start"] = time.perf_counter()


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome


def pytest_sessionfinish(session, exitstatus):
    _session["elapsed"] = time.perf_counter() - _session.get("start", time.perf_counter())
    if _session["elapsed"] > SUITE_BUDGET_S and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items()):
        tr.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
    elapsed = _session.get("elapsed", 0.0)
    verdict = "PASS" if elapsed <= SUITE_BUDGET_S else "FAIL"
    tr.write_line(f"{verdict}  suite runtime {elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s)")
