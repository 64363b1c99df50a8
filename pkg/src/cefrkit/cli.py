"""
Command-line entry point.

Settings come from an optional JSON config file (``--config``) overridden by
flags. Provider fields can be overridden one at a time with
``--provider.<role>.<field> VALUE`` where role is ``generation``,
``embedding`` or ``classifier``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 provider error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import random
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from cefrkit import __version__
from cefrkit.calibration import CalibrationModel, Hyper, fit_calibration
from cefrkit.corpus import (
    Corpus,
    CorpusError,
    corpus_stats,
    dump_corpus,
    get_scheme,
    load_corpus,
    sample_eval_set,
    split_corpus,
)
from cefrkit.difficulty import (
    ReadabilityClassifier,
    RemoteClassifier,
    evaluate_difficulty,
    load_classifier_model,
    train_embedding_head,
)
from cefrkit.errors import DataError, ProviderError
from cefrkit.providers import (
    MockChat,
    MockEmbedder,
    ProviderConfig,
    RemoteChat,
    RemoteEmbedder,
    parallel_map,
)
from cefrkit.readability import METRICS, readability_scores, score
from cefrkit.simplify import (
    MockSimplifier,
    RemoteSimplifier,
    aggregate_csv,
    aggregate_traces,
    evaluate_simplification,
    iterate_simplify,
    records_jsonl,
    simplify_once,
)
from cefrkit.textproc import compute_stats

log = logging.getLogger("cefrkit")

ROLES = ("generation", "embedding", "classifier")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunConfig:
    scheme: str = "cefr"
    seed: int = 0
    parallelism: int = 1
    w1: float = 0.5
    mock: bool = False
    embedding_dim: int = 256
    providers: dict = field(default_factory=lambda: {role: ProviderConfig() for role in ROLES})
    proxy_model: Optional[str] = None
    model: Optional[str] = None

    def validate(self) -> None:
        if self.parallelism < 1:
            raise UsageError("parallelism must be >= 1")
        if not 0 < self.w1 < 1:
            raise UsageError("w1 must be in (0, 1)")
        for path in (self.proxy_model, self.model):
            if path and not Path(path).exists():
                raise DataError(f"model file not found: {path}")
        get_scheme(self.scheme)


_SCALARS = ("scheme", "seed", "parallelism", "w1", "mock", "embedding_dim", "proxy_model", "model")


def build_config(args, provider_overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: invalid JSON ({exc.msg})") from None
        unknown = set(raw) - set(_SCALARS) - {"providers"}
        if unknown:
            raise UsageError(f"unknown config key(s): {sorted(unknown)}")
        for key in _SCALARS:
            if key in raw:
                setattr(cfg, key, raw[key])
        for role, pdict in raw.get("providers", {}).items():
            if role not in ROLES:
                raise UsageError(f"unknown provider role {role!r}")
            cfg.providers[role] = ProviderConfig.from_dict(pdict)
    for key in _SCALARS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            setattr(cfg, key, value)
    for role, updates in provider_overrides.items():
        merged = {**cfg.providers[role].to_dict(), **updates}
        cfg.providers[role] = ProviderConfig.from_dict(merged)
    cfg.validate()
    return cfg


def extract_provider_overrides(argv: list[str]) -> tuple[list[str], dict]:
    """Pull ``--provider.<role>.<field>[=]VALUE`` out of ``argv``."""
    types = {f.name: f.type for f in fields(ProviderConfig)}
    casts = {"int": int, "float": float, "str": str}
    rest, overrides = [], {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--provider."):
            rest.append(tok)
            i += 1
            continue
        key, sep, value = tok[len("--provider."):].partition("=")
        if not sep:
            if i + 1 >= len(argv):
                raise UsageError(f"{tok} needs a value")
            value = argv[i + 1]
            i += 1
        i += 1
        role, _, name = key.partition(".")
        if role not in ROLES or name not in types:
            raise UsageError(f"unknown provider override {tok!r}")
        try:
            overrides.setdefault(role, {})[name] = casts[types[name]](value)
        except ValueError:
            raise UsageError(f"bad value for {tok}: {value!r}") from None
    return rest, overrides


# -- output helpers ------------------------------------------------------------------

def write_atomic(path, content: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def emit(args, content: str, name: Optional[str] = None) -> None:
    """Write to ``--out`` (a file, or a directory when ``name`` is given) or stdout."""
    if args.out is None:
        sys.stdout.write(content)
    elif name is None:
        write_atomic(args.out, content)
    else:
        write_atomic(Path(args.out) / name, content)


# -- component wiring -----------------------------------------------------------------

def make_embedder(cfg: RunConfig):
    if cfg.mock:
        return MockEmbedder(cfg.embedding_dim)
    return RemoteEmbedder(cfg.providers["embedding"])


def make_chat(cfg: RunConfig, role: str, scheme=None):
    if cfg.mock:
        if role == "classifier":
            return MockChat.hashed_choice(scheme.labels)
        return None
    return RemoteChat(cfg.providers[role])


def make_simplifier(cfg: RunConfig, scheme):
    if cfg.mock:
        return MockSimplifier()
    return RemoteSimplifier(make_chat(cfg, "generation"), scheme)


def make_classifier(args, cfg: RunConfig, scheme):
    kind = args.classifier
    if kind == "remote":
        return RemoteClassifier(make_chat(cfg, "classifier", scheme), scheme, with_context=not args.no_context)
    if not cfg.model:
        raise UsageError(f"--classifier {kind} needs --model")
    embedder = None if (cfg.mock or kind == "calibrated") else make_embedder(cfg)
    clf = load_classifier_model(cfg.model, embedder)
    if clf.scheme != scheme:
        raise DataError(f"model scheme {clf.scheme.name!r} does not match --scheme {scheme.name!r}")
    return clf


def make_proxy(args, cfg: RunConfig, scheme, corpus: Corpus):
    if cfg.proxy_model:
        embedder = None if cfg.mock else make_embedder(cfg)
        return load_classifier_model(cfg.proxy_model, embedder)
    if args.proxy_remote:
        return RemoteClassifier(make_chat(cfg, "classifier", scheme), scheme)
    if cfg.mock:
        log.info("no proxy given; fitting an FKGL calibration on the input corpus")
        return ReadabilityClassifier(_fit_on(corpus, "fkgl", Hyper()))
    raise UsageError("need --proxy-model or --proxy-remote (or --mock)")


def _fit_on(corpus: Corpus, metric: str, hyper: Hyper) -> CalibrationModel:
    corpus.require_labeled()
    pairs = []
    for it in corpus:
        stats = compute_stats(it.text)
        if stats.n_words and stats.n_sentences:
            pairs.append((score(stats, metric), it.label))
        else:
            log.warning("skipping item %r: no words to score", it.id)
    return fit_calibration(pairs, corpus.scheme, hyper, metric=metric)


def load_inputs(args, scheme) -> list[Corpus]:
    if not args.inputs:
        raise UsageError("--in is required")
    return [load_corpus(p, scheme) for p in args.inputs]


def load_one(args, scheme) -> Corpus:
    corpora = load_inputs(args, scheme)
    if len(corpora) != 1:
        raise UsageError("this command takes exactly one --in")
    return corpora[0]


# -- subcommands ---------------------------------------------------------------------

def cmd_stats(args, cfg):
    corpus = load_one(args, get_scheme(cfg.scheme))
    emit(args, to_json(corpus_stats(corpus).to_dict()))


def cmd_readability(args, cfg):
    corpus = load_one(args, get_scheme(cfg.scheme))
    rows = []
    for it in corpus:
        stats = compute_stats(it.text)
        if stats.n_words and stats.n_sentences:
            rows.append({"id": it.id, **readability_scores(stats).to_dict()})
        else:
            rows.append({"id": it.id, "gfi": None, "fkgl": None, "ari": None})
    if args.format == "json":
        emit(args, to_json(rows))
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", *METRICS])
        for r in rows:
            writer.writerow([r["id"], *("" if r[m] is None else repr(r[m]) for m in METRICS)])
        emit(args, buf.getvalue())


def cmd_calibrate(args, cfg):
    corpus = load_one(args, get_scheme(cfg.scheme))
    hyper = Hyper(learning_rate=args.lr, l2=args.l2, max_epochs=args.epochs, tolerance=args.tol)
    model = _fit_on(corpus, args.metric, hyper)
    emit(args, to_json(model.to_dict()))


def cmd_train_head(args, cfg):
    corpus = load_one(args, get_scheme(cfg.scheme))
    hyper = Hyper(learning_rate=args.lr, l2=args.l2, max_epochs=args.epochs, tolerance=args.tol)
    clf = train_embedding_head(corpus, make_embedder(cfg), hyper, cfg.parallelism)
    emit(args, json.dumps(clf.to_dict()) + "\n")


def cmd_classify(args, cfg):
    scheme = get_scheme(cfg.scheme)
    clf = make_classifier(args, cfg, scheme)
    if args.text is not None:
        emit(args, to_json(clf.classify(args.text).to_dict()))
        return
    corpus = load_one(args, scheme)
    outputs = parallel_map(lambda it: clf.classify(it.text), corpus.items, cfg.parallelism)
    rows = [{"id": it.id, **out.to_dict()} for it, out in zip(corpus, outputs)]
    emit(args, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))


def cmd_eval_difficulty(args, cfg):
    scheme = get_scheme(cfg.scheme)
    clf = make_classifier(args, cfg, scheme)
    report = evaluate_difficulty(clf, load_one(args, scheme), cfg.parallelism)
    if args.out is None:
        emit(args, to_json(report.to_dict()))
        return
    emit(args, to_json(report.to_dict()), "report.json")
    emit(args, report.confusion_csv(), "confusion.csv")


def cmd_simplify(args, cfg):
    scheme = get_scheme(cfg.scheme)
    if args.text is None:
        raise UsageError("--text is required")
    out = simplify_once(make_simplifier(cfg, scheme), args.text, args.level)
    emit(args, out + "\n")


def _eval_set(args, cfg, scheme) -> Corpus:
    corpora = load_inputs(args, scheme)
    if args.per_level is None:
        if len(corpora) == 1:
            return corpora[0]
        items = [it for c in corpora for it in c]
        return Corpus(scheme, items)
    levels = args.levels.split(",") if args.levels else list(scheme.labels[1:])
    return sample_eval_set(corpora, args.per_level, levels, cfg.seed)


def cmd_eval_simplification(args, cfg):
    scheme = get_scheme(cfg.scheme)
    eval_set = _eval_set(args, cfg, scheme)
    proxy = make_proxy(args, cfg, scheme, eval_set)
    report, records = evaluate_simplification(
        make_simplifier(cfg, scheme), proxy, make_embedder(cfg), eval_set, cfg.w1, cfg.parallelism
    )
    if args.out is None:
        emit(args, to_json(report.to_dict()))
        return
    emit(args, to_json(report.to_dict()), "report.json")
    emit(args, records_jsonl(records), "records.jsonl")


def cmd_iterate(args, cfg):
    scheme = get_scheme(cfg.scheme)
    corpus = load_one(args, scheme)
    proxy = make_proxy(args, cfg, scheme, corpus)
    pool = corpus.by_label(args.level) if args.level else list(corpus)
    if args.level and args.agreeing:
        pool = [it for it in pool if proxy.classify(it.text).label == args.level]
    if args.n is not None:
        if len(pool) < args.n:
            raise DataError(f"only {len(pool)} candidate sentence(s); need {args.n}")
        pool = random.Random(cfg.seed).sample(pool, args.n)
    if not pool:
        raise DataError("no sentences to iterate on")
    simplifier, embedder = make_simplifier(cfg, scheme), make_embedder(cfg)
    traces = parallel_map(
        lambda it: iterate_simplify(simplifier, proxy, embedder, it.text, args.max_iters, id=it.id),
        pool,
        cfg.parallelism,
    )
    failed = [t for t in traces if not t.complete]
    traces_text = "".join(json.dumps(t.to_dict(), ensure_ascii=False) + "\n" for t in traces)
    if failed:
        if args.out is not None:
            emit(args, traces_text, "traces.jsonl")
        raise ProviderError(f"{len(failed)} trace(s) incomplete, first: {failed[0].error}")
    table = aggregate_csv(aggregate_traces(traces, scheme))
    if args.out is None:
        emit(args, table)
        return
    emit(args, traces_text, "traces.jsonl")
    emit(args, table, "aggregate.csv")


def cmd_split(args, cfg):
    corpus = load_one(args, get_scheme(cfg.scheme))
    train, test = split_corpus(corpus, args.train_fraction, cfg.seed, stratify=not args.no_stratify)
    if args.out is None:
        raise UsageError("split needs --out DIR")
    for name, part in (("train.csv", train), ("test.csv", test)):
        buf = io.StringIO()
        dump_corpus(part, buf, "csv")
        emit(args, buf.getvalue(), name)


# -- parser ----------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--in", dest="inputs", action="append", metavar="PATH", help="corpus CSV/JSONL (repeatable)")
    p.add_argument("--out", help="output file or directory (default: stdout)")
    p.add_argument("--scheme", help="label scheme: cefr or ljl")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--mock", action="store_true", help="offline mock backends, no network")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--w1", type=float, help="accuracy weight in the w-Score")
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int, help="mock embedding size")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _add_hyper(p):
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-9)


def _add_classifier(p):
    p.add_argument("--classifier", choices=("calibrated", "head", "remote"), default="calibrated")
    p.add_argument("--model", help="saved calibration or head JSON")
    p.add_argument("--no-context", action="store_true", help="remote classifier without the assessor prompt")


def _add_proxy(p):
    p.add_argument("--proxy-model", dest="proxy_model", help="saved calibration or head JSON used as proxy")
    p.add_argument("--proxy-remote", action="store_true", help="use the remote classifier as proxy")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="cefrkit", description="CEFR difficulty estimation and simplification evaluation for French text.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    add("stats", cmd_stats, "corpus statistics as JSON")
    p = add("readability", cmd_readability, "per-item GFI/FKGL/ARI")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p = add("calibrate", cmd_calibrate, "fit a score-to-label calibration")
    p.add_argument("--metric", choices=METRICS, default="fkgl")
    _add_hyper(p)
    p = add("train-head", cmd_train_head, "fit a softmax head on embeddings")
    _add_hyper(p)
    p = add("classify", cmd_classify, "classify one text or a corpus")
    _add_classifier(p)
    p.add_argument("--text")
    p = add("eval-difficulty", cmd_eval_difficulty, "confusion matrix and F1 on a test corpus")
    _add_classifier(p)
    p = add("simplify", cmd_simplify, "simplify one text")
    p.add_argument("--text")
    p.add_argument("--level", help="current level of the text")
    p = add("eval-simplification", cmd_eval_simplification, "accuracy, similarity and w-Score")
    _add_proxy(p)
    p.add_argument("--per-level", dest="per_level", type=int, help="sample N items per level and corpus")
    p.add_argument("--levels", help="comma-separated levels to sample (default: all but the lowest)")
    p = add("iterate", cmd_iterate, "iterative simplification traces")
    _add_proxy(p)
    p.add_argument("--level", help="only start from sentences with this gold level")
    p.add_argument("--agreeing", action="store_true", help="keep only sentences the proxy puts at --level")
    p.add_argument("--n", type=int, help="sample this many starting sentences")
    p.add_argument("--max-iters", dest="max_iters", type=int, default=8)
    p = add("split", cmd_split, "seeded stratified train/test split")
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.8)
    p.add_argument("--no-stratify", action="store_true")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv, overrides = extract_provider_overrides(argv)
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage() + "cefrkit: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = build_config(args, overrides)
        args.func(args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"cefrkit: provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (DataError, CorpusError, OSError, json.JSONDecodeError) as exc:
        print(f"cefrkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
