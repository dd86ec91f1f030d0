"""Command line front end.

Subcommands:

* ``confidences`` recomputes every rule's prediction counts on the
  training graph and writes the rules back in canonical form.
* ``apply`` answers completion queries and dumps ranked candidates with
  the confidences behind each one.
* ``eval`` runs the filtered-ranking protocol over a test split, either
  end to end or from a previous ``apply`` dump.
* ``tune-h`` grid-searches the per-(relation, direction) h on a
  validation split and writes the h table.
* ``verify`` runs the built-in identity checks and reports one line per
  check.

Flags can also be given in a JSON config file (``--config``); explicit
flags win. Commands that write files place them under ``--out`` next to
a ``config.resolved.json`` snapshot of the settings that produced them,
so a rerun with equal settings and seed is byte-identical. Warnings go
to stderr, data to files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .aggregation import (
    H_ALL,
    HStarTable,
    TuneConfig,
    rank_candidates,
    strategy_from_spec,
    tune_h_star,
)
from .evaluation import (
    EmptyTestSet,
    evaluate,
    format_report,
    metrics_lines,
    per_slice_lines,
)
from .grounding import (
    DEFAULT_BINDING_CAP,
    DIRECTIONS,
    GenerationPolicy,
    Query,
    answer_query,
    BodyExplosion,
    UndefinedConfidence,
    confidence,
)
from .kg import MalformedLine, SymbolTables, Triple, load_triples
from .rules import (
    DIALECTS,
    ParseError,
    UnknownDialect,
    load_ruleset,
    serialize_rule,
    with_stats,
)
from . import verify as verify_mod
from .aggregation import ScoreKey, score_key

__all__ = ["main", "build_parser", "Settings"]


@dataclasses.dataclass
class Settings:
    command: str = ""
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    rules: str | None = None
    dialect: str = "canonical"
    queries: str | None = None
    ranked: str | None = None
    strategy: str = "max"
    top_x: int = 200
    h: int | None = None
    h_table: str | None = None
    grid: str = "1,4,5,6,7,8,9,10"
    seed: int = 42
    workers: int = 1
    cap: int = DEFAULT_BINDING_CAP
    distinct: bool = False
    out: str | None = None


class CliError(Exception):
    """A usage problem the user can fix (bad flag combination, bad file)."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgrules",
        description="Apply learned rules to a knowledge graph and score the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(sp, *names, **kwargs):
        kwargs.setdefault("default", argparse.SUPPRESS)
        sp.add_argument(*names, **kwargs)

    def common_io(sp, need_rules=True):
        add(sp, "--config", help="JSON file with these same settings")
        add(sp, "--train", help="training triple file")
        if need_rules:
            add(sp, "--rules", help="rule file")
            add(sp, "--dialect", choices=DIALECTS, help="rule file dialect")
        add(sp, "--cap", type=int, help="binding-table row cap per rule")
        add(sp, "--distinct", action="store_true", help="variables bind distinct entities")
        add(sp, "--seed", type=int, help="base seed for all tie handling")
        add(sp, "--out", help="output directory")

    sp = sub.add_parser("confidences", help="recompute rule statistics on the training graph")
    common_io(sp)

    def ranking_flags(sp):
        add(sp, "--strategy", help="max | max-plus | noisy-or | noisy-or-top-h | "
            "noisy-or-top-h-star | logistic")
        add(sp, "--top-x", type=int, help="candidates kept per query")
        add(sp, "--h", type=int, help="h for noisy-or-top-h; also enables the coverage stop")
        add(sp, "--h-table", help="h table file for noisy-or-top-h-star")
        add(sp, "--workers", type=int, help="thread pool size for query batches")

    sp = sub.add_parser("apply", help="rank candidates for a query batch or test split")
    common_io(sp)
    ranking_flags(sp)
    add(sp, "--queries", help="query file: relation<TAB>anchor<TAB>direction")
    add(sp, "--test", help="test triple file (both directions per fact)")

    sp = sub.add_parser("eval", help="filtered-ranking metrics on a test split")
    common_io(sp)
    ranking_flags(sp)
    add(sp, "--valid", help="validation triple file (joins the filter set)")
    add(sp, "--test", help="test triple file")
    add(sp, "--ranked", help="rerank a previous apply dump instead of grounding")

    sp = sub.add_parser("tune-h", help="grid-search h per relation and direction")
    common_io(sp)
    add(sp, "--valid", help="validation triple file")
    add(sp, "--top-x", type=int, help="candidates kept per query")
    add(sp, "--grid", help="comma list of h values; 'k' means all rules")

    sp = sub.add_parser("verify", help="run the built-in identity checks")
    add(sp, "--seed", type=int, help="seed for the randomized checks")

    return parser


def _merge_settings(args: argparse.Namespace) -> Settings:
    given = vars(args).copy()
    command = given.pop("command")
    config_path = given.pop("config", None)
    merged = dataclasses.asdict(Settings())
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(merged)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    merged.update(given)
    merged["command"] = command
    return Settings(**merged)


def _require(settings: Settings, *names: str):
    for name in names:
        if getattr(settings, name) is None:
            raise CliError(f"{settings.command} needs --{name.replace('_', '-')}")


def _out_dir(settings: Settings) -> Path:
    _require(settings, "out")
    out = Path(settings.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(settings: Settings, out: Path):
    payload = dataclasses.asdict(settings)
    with open(out / "config.resolved.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_world(settings: Settings, want=("train",)):
    """Load the requested splits and the rules under one symbol table."""
    symbols = SymbolTables()
    graphs = {}
    for split in ("train", "valid", "test"):
        path = getattr(settings, split)
        if split in want and path is None:
            raise CliError(f"{settings.command} needs --{split}")
        if path is not None:
            graphs[split] = load_triples(path, symbols)
    ruleset = None
    if settings.rules is not None:
        ruleset = load_ruleset(settings.rules, settings.dialect, symbols)
    return symbols, graphs, ruleset


def _warn(message: str):
    print(f"warning: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# confidences
# ---------------------------------------------------------------------------


def cmd_confidences(settings: Settings) -> int:
    _require(settings, "rules")
    symbols, graphs, ruleset = _load_world(settings)
    kg = graphs["train"]
    out = _out_dir(settings)
    lines = []
    dropped = 0
    for rule in ruleset:
        try:
            predicted, correct, _ = confidence(
                kg, rule, cap=settings.cap, distinct=settings.distinct
            )
        except UndefinedConfidence:
            dropped += 1
            _warn(f"dropped (no predictions): {serialize_rule(rule, symbols)}")
            continue
        except BodyExplosion as exc:
            dropped += 1
            _warn(f"dropped ({exc}): {serialize_rule(rule, symbols)}")
            continue
        lines.append(serialize_rule(with_stats(rule, predicted, correct), symbols))
    (out / "confidences.tsv").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    _write_snapshot(settings, out)
    if dropped:
        _warn(f"{dropped} of {len(ruleset)} rules dropped")
    return 0


# ---------------------------------------------------------------------------
# apply / eval
# ---------------------------------------------------------------------------


def _read_h_table(path: str, symbols: SymbolTables, default_h: int) -> HStarTable:
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in DIRECTIONS:
                raise CliError(f"{path}:{line_no}: expected relation<TAB>direction<TAB>h")
            rel = symbols.relations.intern(parts[0])
            entries[(rel, parts[1])] = int(parts[2])
    return HStarTable(entries=entries, default_h=default_h)


def _write_h_table(table: HStarTable, path: Path, symbols: SymbolTables):
    lines = []
    for (rel, direction), h in sorted(table.entries.items()):
        lines.append(f"{symbols.relations.label_of(rel)}\t{direction}\t{h}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _build_strategy(settings: Settings, symbols: SymbolTables):
    table = None
    if settings.strategy == "noisy-or-top-h-star":
        _require(settings, "h_table")
        table = _read_h_table(settings.h_table, symbols, settings.h or 1)
    try:
        return strategy_from_spec(settings.strategy, h=settings.h, table=table)
    except ValueError as exc:
        raise CliError(str(exc))


def _queries_from_file(path: str, symbols: SymbolTables) -> list[Query]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in DIRECTIONS:
                raise CliError(f"{path}:{line_no}: expected relation<TAB>anchor<TAB>direction")
            rel = symbols.relations.get(parts[0])
            anchor = symbols.entities.get(parts[1])
            if rel is None or anchor is None:
                # unknown labels cannot match anything; keep the query with
                # fresh ids so it yields an empty candidate list
                rel = symbols.relations.intern(parts[0])
                anchor = symbols.entities.intern(parts[1])
                _warn(f"{path}:{line_no}: unknown relation or anchor, no candidates")
            out.append(Query(rel, anchor, parts[2]))
    return out


def _queries_from_test(test_kg) -> list[Query]:
    out = []
    for t in sorted(test_kg.triples):
        out.append(Query(t.relation, t.subject, "tail"))
        out.append(Query(t.relation, t.object, "head"))
    return out


def _rank_query(kg, ruleset, strategy, query, settings: Settings):
    """(ranked truncated candidates, per-candidate confidence lists)."""
    h_stop = settings.h if settings.h and settings.h > 0 else None
    policy = GenerationPolicy(top_x=settings.top_x, h_stop=h_stop)
    ranking = answer_query(
        kg, ruleset, query, policy, cap=settings.cap, distinct=settings.distinct
    )
    rng = np.random.default_rng(
        [settings.seed, query.relation, query.anchor, DIRECTIONS.index(query.direction), 0]
    )
    scored = rank_candidates(ranking, strategy, rng)[: settings.top_x]
    return scored, ranking.candidates


def _map_queries(settings: Settings, queries, worker):
    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(worker, queries))
    return [worker(q) for q in queries]


def cmd_apply(settings: Settings) -> int:
    _require(settings, "rules")
    if settings.queries is None and settings.test is None:
        raise CliError("apply needs --queries or --test")
    symbols, graphs, ruleset = _load_world(settings)
    kg = graphs["train"]
    strategy = _build_strategy(settings, symbols)
    if settings.queries is not None:
        queries = _queries_from_file(settings.queries, symbols)
    else:
        queries = _queries_from_test(graphs["test"])
    out = _out_dir(settings)
    results = _map_queries(
        settings, queries, lambda q: _rank_query(kg, ruleset, strategy, q, settings)
    )
    lines = []
    for query, (scored, conf_lists) in zip(queries, results):
        rel = symbols.relations.label_of(query.relation)
        anchor = symbols.entities.label_of(query.anchor)
        for ent, _key in scored:
            confs = ",".join(repr(c) for c in conf_lists[ent])
            lines.append(
                f"{rel}\t{anchor}\t{query.direction}\t{symbols.entities.label_of(ent)}\t{confs}"
            )
    (out / "ranked.tsv").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    _write_snapshot(settings, out)
    return 0


def cmd_eval(settings: Settings) -> int:
    symbols, graphs, ruleset = _load_world(settings, want=("train",))
    if settings.test is None:
        raise CliError("eval needs --test")
    strategy = _build_strategy(settings, symbols)
    filter_triples = set(graphs["train"].triples)
    for split in ("valid", "test"):
        if split in graphs:
            filter_triples |= graphs[split].triples
    test_triples = sorted(graphs["test"].triples)
    if settings.ranked is not None:
        ranker = _ranker_from_dump(settings, symbols, strategy)
    else:
        if ruleset is None:
            raise CliError("eval needs --rules (or --ranked)")
        kg = graphs["train"]
        queries = _queries_from_test(graphs["test"])
        results = _map_queries(
            settings, queries, lambda q: _rank_query(kg, ruleset, strategy, q, settings)[0]
        )
        cache = dict(zip(queries, results))

        def ranker(query):
            return cache[query]

    try:
        report = evaluate(
            test_triples,
            ranker,
            filter_triples,
            rng_seed=settings.seed,
        )
    except EmptyTestSet:
        raise CliError("test split is empty")
    out = _out_dir(settings)
    (out / "metrics.tsv").write_text("\n".join(metrics_lines(report)) + "\n", encoding="utf-8")
    label = symbols.relations.label_of
    (out / "per-relation.tsv").write_text(
        "\n".join(per_slice_lines(report, label)) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text(format_report(report, label), encoding="utf-8")
    _write_snapshot(settings, out)
    print(format_report(report, label), end="")
    return 0


def _ranker_from_dump(settings: Settings, symbols: SymbolTables, strategy):
    per_query: dict[Query, list[tuple[int, ScoreKey]]] = {}
    with open(settings.ranked, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5 or parts[2] not in DIRECTIONS:
                raise CliError(f"{settings.ranked}:{line_no}: bad ranked line")
            rel = symbols.relations.intern(parts[0])
            anchor = symbols.entities.intern(parts[1])
            ent = symbols.entities.intern(parts[3])
            confs = [float(c) for c in parts[4].split(",") if c]
            query = Query(rel, anchor, parts[2])
            key = score_key(confs, strategy, query)
            per_query.setdefault(query, []).append((ent, key))

    def ranker(query: Query):
        return per_query.get(query, [])

    return ranker


# ---------------------------------------------------------------------------
# tune-h
# ---------------------------------------------------------------------------


def _parse_grid(text: str) -> list[int]:
    grid = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.lower() == "k":
            grid.append(H_ALL)
        else:
            grid.append(int(token))
    if not grid:
        raise CliError("empty h grid")
    return grid


def cmd_tune_h(settings: Settings) -> int:
    _require(settings, "rules", "valid")
    symbols, graphs, ruleset = _load_world(settings)
    grid = _parse_grid(settings.grid)
    table = tune_h_star(
        graphs["train"],
        ruleset,
        sorted(graphs["valid"].triples),
        grid=grid,
        config=TuneConfig(
            top_x=settings.top_x,
            rng_seed=settings.seed,
            default_h=settings.h or 1,
            binding_cap=settings.cap,
        ),
    )
    out = _out_dir(settings)
    _write_h_table(table, out / "h-table.tsv", symbols)
    _write_snapshot(settings, out)
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(settings: Settings) -> int:
    results = verify_mod.run_checks(seed=settings.seed)
    for res in results:
        print(verify_mod.format_result(res))
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "confidences": cmd_confidences,
    "apply": cmd_apply,
    "eval": cmd_eval,
    "tune-h": cmd_tune_h,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _merge_settings(args)
        return _COMMANDS[settings.command](settings)
    except (CliError, MalformedLine, ParseError, UnknownDialect) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
