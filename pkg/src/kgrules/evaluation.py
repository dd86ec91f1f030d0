"""Filtered ranking protocol: MRR and Hits@X over both query directions.

Every test fact r(s, o) is asked twice, tail (r, s, ?) with answer o
and head (r, ?, o) with answer s. Known facts other than the answer are
removed from the candidate list before ranking. Candidates whose keys
compare exactly equal to the answer's form a tie group resolved by a
seeded random draw, so the answer's rank inside the group is uniform
rather than id-biased. An answer missing from the list yields no rank
and contributes 0 to every metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .grounding import DIRECTIONS, HEAD, TAIL, Query
from .kg import Triple

__all__ = [
    "EmptyTestSet",
    "SliceMetrics",
    "EvalReport",
    "filtered_rank",
    "evaluate",
    "metrics_lines",
    "per_slice_lines",
    "format_report",
]


class EmptyTestSet(ValueError):
    """No test facts, so no metrics are defined."""


DEFAULT_HITS_LEVELS = (1, 3, 10)


def _as_generator(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def filtered_rank(
    scored: Sequence[tuple[int, object]],
    target: int,
    filter_triples: Iterable[Triple],
    query: Query,
    rng_seed=0,
) -> int | None:
    """1-based rank of ``target`` after filtering known facts.

    ``scored`` lists (entity, key) best first with keys comparable for
    equality and order; entities are distinct. Candidates completing a
    triple in ``filter_triples`` are removed unless they are the target
    itself. Returns None when the target is not in the list.
    """
    if not isinstance(filter_triples, (set, frozenset)):
        filter_triples = set(filter_triples)
    if query.direction == TAIL:
        completed = lambda c: Triple(query.relation, query.anchor, c)
    else:
        completed = lambda c: Triple(query.relation, c, query.anchor)
    kept = [
        (ent, key)
        for ent, key in scored
        if ent == target or completed(ent) not in filter_triples
    ]
    target_key = None
    for ent, key in kept:
        if ent == target:
            target_key = key
            break
    if target_key is None:
        return None
    above = 0
    tie_slot = 0
    ties = 0
    for ent, key in kept:
        if key > target_key:
            above += 1
        elif key == target_key:
            if ent == target:
                tie_slot = ties
            ties += 1
    rng = _as_generator(rng_seed)
    perm = rng.permutation(ties)
    position = int(np.nonzero(perm == tie_slot)[0][0])
    return above + position + 1


@dataclass
class SliceMetrics:
    mrr: float
    hits: dict[int, float]
    n_queries: int


@dataclass
class EvalReport:
    """Aggregate and per-(relation, direction) filtered-ranking metrics."""

    mrr: float
    hits: dict[int, float]
    n_queries: int
    per_slice: dict[tuple[int, str], SliceMetrics] = field(default_factory=dict)


class _Accumulator:
    __slots__ = ("rr_sum", "hit_counts", "n")

    def __init__(self, levels):
        self.rr_sum = 0.0
        self.hit_counts = {lv: 0 for lv in levels}
        self.n = 0

    def add(self, rank: int | None):
        self.n += 1
        if rank is None:
            return
        self.rr_sum += 1.0 / rank
        for lv in self.hit_counts:
            if rank <= lv:
                self.hit_counts[lv] += 1

    def metrics(self):
        mrr = self.rr_sum / self.n
        hits = {lv: c / self.n for lv, c in self.hit_counts.items()}
        return mrr, hits


def evaluate(
    test_triples: Iterable[Triple],
    ranker: Callable[[Query], Sequence[tuple[int, object]]],
    filter_triples: Iterable[Triple],
    hits_levels: Sequence[int] = DEFAULT_HITS_LEVELS,
    rng_seed: int = 42,
) -> EvalReport:
    """Run both directions of every test fact through ``ranker``.

    The tie-break generator for each query is derived from the seed and
    the query's content, so reranking the same query elsewhere (for
    example from a dump file) reproduces identical ranks.
    """
    test = list(test_triples)
    if not test:
        raise EmptyTestSet("no test facts")
    if not isinstance(filter_triples, (set, frozenset)):
        filter_triples = set(filter_triples)
    levels = tuple(sorted(set(hits_levels)))
    total = _Accumulator(levels)
    slices: dict[tuple[int, str], _Accumulator] = {}
    for t in test:
        for direction, anchor, target in (
            (TAIL, t.subject, t.object),
            (HEAD, t.object, t.subject),
        ):
            q = Query(t.relation, anchor, direction)
            scored = ranker(q)
            rank = filtered_rank(
                scored,
                target,
                filter_triples,
                q,
                np.random.default_rng(
                    [rng_seed, t.relation, anchor, DIRECTIONS.index(direction), 1]
                ),
            )
            total.add(rank)
            key = (t.relation, direction)
            acc = slices.get(key)
            if acc is None:
                slices[key] = acc = _Accumulator(levels)
            acc.add(rank)
    mrr, hits = total.metrics()
    per_slice = {}
    for key in sorted(slices):
        smrr, shits = slices[key].metrics()
        per_slice[key] = SliceMetrics(mrr=smrr, hits=shits, n_queries=slices[key].n)
    return EvalReport(mrr=mrr, hits=hits, n_queries=total.n, per_slice=per_slice)


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------


def metrics_lines(report: EvalReport) -> list[str]:
    """metric<TAB>value lines for the aggregate numbers."""
    lines = [f"mrr\t{report.mrr:.6f}"]
    for lv in sorted(report.hits):
        lines.append(f"hits@{lv}\t{report.hits[lv]:.6f}")
    lines.append(f"n_queries\t{report.n_queries}")
    return lines


def per_slice_lines(report: EvalReport, relation_label: Callable[[int], str]) -> list[str]:
    """relation<TAB>direction<TAB>mrr<TAB>h1<TAB>h3<TAB>h10-style lines."""
    lines = []
    for (rel, direction), sm in report.per_slice.items():
        cells = [relation_label(rel), direction, f"{sm.mrr:.6f}"]
        cells.extend(f"{sm.hits[lv]:.6f}" for lv in sorted(sm.hits))
        lines.append("\t".join(cells))
    return lines


def format_report(report: EvalReport, relation_label: Callable[[int], str] | None = None) -> str:
    """Human-readable table of the aggregate and per-slice metrics."""
    levels = sorted(report.hits)
    header = ["slice".ljust(28), "queries".rjust(8), "mrr".rjust(8)]
    header += [f"hits@{lv}".rjust(8) for lv in levels]
    rows = [" ".join(header)]

    def row(name, n, mrr, hits):
        cells = [name.ljust(28), str(n).rjust(8), f"{mrr:.4f}".rjust(8)]
        cells += [f"{hits[lv]:.4f}".rjust(8) for lv in levels]
        rows.append(" ".join(cells))

    row("all", report.n_queries, report.mrr, report.hits)
    for (rel, direction), sm in report.per_slice.items():
        name = relation_label(rel) if relation_label else str(rel)
        row(f"{name}/{direction}", sm.n_queries, sm.mrr, sm.hits)
    return "\n".join(rows) + "\n"
