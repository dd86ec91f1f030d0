"""Aggregating several rules' confidences into one candidate score.

Every scorer takes the descending confidence list of the distinct rules
that predicted a candidate. Scalar strategies: max, noisy-or over all
confidences, noisy-or over the h strongest, and a logistic baseline
(sigmoid of summed log-odds). Max-plus refines max into a sort key that
walks the whole list lexicographically, a longer list winning over an
equal prefix.

Noisy-or runs in log space (sum of log1p(-c)) so long lists do not
underflow; a confidence of exactly 1 short-circuits to 1. The single
confidence and h >= list length cases use their exact algebraic forms,
which makes max <= top-h <= noisy-or hold with equality at h = 1 and
h = len exactly, not just up to rounding.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .evaluation import filtered_rank
from .grounding import (
    DEFAULT_BINDING_CAP,
    DIRECTIONS,
    GenerationPolicy,
    CandidateRanking,
    Query,
    answer_query,
)
from .kg import KnowledgeGraph, Triple
from .rules import RuleSet

__all__ = [
    "EmptyPrediction",
    "DegenerateConfidence",
    "H_ALL",
    "score_max",
    "score_noisy_or",
    "score_noisy_or_top_h",
    "logistic_logodds",
    "key_max_plus",
    "ScoreKey",
    "Max",
    "MaxPlus",
    "NoisyOr",
    "NoisyOrTopH",
    "NoisyOrTopHStar",
    "LogisticLogOdds",
    "Strategy",
    "strategy_from_spec",
    "score_key",
    "rank_candidates",
    "HStarTable",
    "TuneConfig",
    "tune_h_star",
]


class EmptyPrediction(ValueError):
    """No rule predicted the candidate; there is nothing to aggregate."""


class DegenerateConfidence(ValueError):
    """Log-odds are undefined at confidence exactly 0 or 1."""


H_ALL = 2**31 - 1
"""Sentinel h meaning "use every confidence", i.e. plain noisy-or."""


def _check(confs: Sequence[float]) -> Sequence[float]:
    if len(confs) == 0:
        raise EmptyPrediction("empty confidence list")
    return confs


def score_max(confs: Sequence[float]) -> float:
    """The strongest single rule's confidence (the list is descending)."""
    return float(_check(confs)[0])


def score_noisy_or(confs: Sequence[float]) -> float:
    """1 - prod(1 - c); the single-element case returns it unchanged."""
    _check(confs)
    top = float(confs[0])
    if len(confs) == 1:
        return top
    log_miss = 0.0
    for c in confs:
        if c >= 1.0:
            return 1.0
        log_miss += math.log1p(-c)
    value = 1.0 - math.exp(log_miss)
    # the result can never sit below the strongest confidence; clamping
    # enforces that in floats too, where near-zero tail confidences can
    # otherwise round the product one ulp under confs[0]
    return value if value > top else top


def score_noisy_or_top_h(confs: Sequence[float], h: int) -> float:
    """Noisy-or restricted to the h strongest confidences."""
    _check(confs)
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    eff = min(h, len(confs))
    if eff == len(confs):
        return score_noisy_or(confs)
    if eff == 1:
        return float(confs[0])
    return score_noisy_or(confs[:eff])


def logistic_logodds(confs: Sequence[float]) -> float:
    """Sigmoid of the summed log-odds of all confidences."""
    _check(confs)
    total = 0.0
    for c in confs:
        if not 0.0 < c < 1.0:
            raise DegenerateConfidence(f"confidence {c} has no finite log-odds")
        total += math.log(c / (1.0 - c))
    return 1.0 / (1.0 + math.exp(-total))


@functools.total_ordering
@dataclass(frozen=True)
class ScoreKey:
    """Comparable candidate score: a scalar plus an optional tie walk.

    Keys compare by the scalar first; equal scalars walk the tiebreak
    vectors lexicographically, and when one vector is a prefix of the
    other the longer one ranks higher. Scalar strategies leave the
    tiebreak empty, so equal scalars compare equal (real ties).
    """

    primary: float
    tiebreak: tuple[float, ...] = ()

    def __lt__(self, other: "ScoreKey") -> bool:
        if self.primary != other.primary:
            return self.primary < other.primary
        for a, b in zip(self.tiebreak, other.tiebreak):
            if a != b:
                return a < b
        return len(self.tiebreak) < len(other.tiebreak)


def key_max_plus(confs: Sequence[float]) -> ScoreKey:
    """Max refined by the remaining confidences as tiebreak."""
    _check(confs)
    return ScoreKey(float(confs[0]), tuple(float(c) for c in confs[1:]))


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Max:
    pass


@dataclass(frozen=True)
class MaxPlus:
    pass


@dataclass(frozen=True)
class NoisyOr:
    pass


@dataclass(frozen=True)
class NoisyOrTopH:
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise ValueError(f"h must be >= 1, got {self.h}")


@dataclass(frozen=True)
class LogisticLogOdds:
    pass


@dataclass
class HStarTable:
    """Per-(relation, direction) h values; h = 1 means max-plus.

    ``default_h`` applies to pairs without an entry (for example
    relations absent from the validation split).
    """

    entries: dict[tuple[int, str], int] = field(default_factory=dict)
    default_h: int = 1

    def lookup(self, relation: int, direction: str) -> int:
        return self.entries.get((relation, direction), self.default_h)


@dataclass(frozen=True)
class NoisyOrTopHStar:
    table: HStarTable


Strategy = Union[Max, MaxPlus, NoisyOr, NoisyOrTopH, NoisyOrTopHStar, LogisticLogOdds]

_STRATEGY_NAMES = {
    "max": Max,
    "max-plus": MaxPlus,
    "noisy-or": NoisyOr,
    "logistic": LogisticLogOdds,
}


def strategy_from_spec(name: str, h: int | None = None, table: HStarTable | None = None) -> Strategy:
    """Build a strategy from its CLI spelling."""
    if name in _STRATEGY_NAMES:
        return _STRATEGY_NAMES[name]()
    if name == "noisy-or-top-h":
        if h is None:
            raise ValueError("noisy-or-top-h needs h")
        return NoisyOrTopH(h)
    if name == "noisy-or-top-h-star":
        if table is None:
            raise ValueError("noisy-or-top-h-star needs an h table")
        return NoisyOrTopHStar(table)
    known = sorted(_STRATEGY_NAMES) + ["noisy-or-top-h", "noisy-or-top-h-star"]
    raise ValueError(f"unknown strategy {name!r}; expected one of {known}")


def _key_for_h(confs: Sequence[float], h: int) -> ScoreKey:
    if h == 1:
        return key_max_plus(confs)
    return ScoreKey(score_noisy_or_top_h(confs, h))


def score_key(confs: Sequence[float], strategy: Strategy, query: Query | None = None) -> ScoreKey:
    """The candidate's sort key under the strategy.

    A NoisyOrTopHStar strategy resolves its h from the query's relation
    and direction, so the query is required there.
    """
    if isinstance(strategy, Max):
        return ScoreKey(score_max(confs))
    if isinstance(strategy, MaxPlus):
        return key_max_plus(confs)
    if isinstance(strategy, NoisyOr):
        return ScoreKey(score_noisy_or(confs))
    if isinstance(strategy, NoisyOrTopH):
        return _key_for_h(confs, strategy.h)
    if isinstance(strategy, NoisyOrTopHStar):
        if query is None:
            raise ValueError("per-relation top-h needs the query for the table lookup")
        return _key_for_h(confs, strategy.table.lookup(query.relation, query.direction))
    if isinstance(strategy, LogisticLogOdds):
        return ScoreKey(logistic_logodds(confs))
    raise TypeError(f"not a strategy: {strategy!r}")


def rank_candidates(
    ranking: CandidateRanking,
    strategy: Strategy,
    rng_seed=0,
) -> list[tuple[int, ScoreKey]]:
    """Candidates best first; groups with exactly equal keys are put in
    a seeded random order so ties do not systematically favor small ids.
    """
    items = []
    for ent in sorted(ranking.candidates):
        key = score_key(ranking.candidates[ent], strategy, ranking.query)
        items.append((ent, key))
    items.sort(key=lambda item: item[1], reverse=True)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out: list[tuple[int, ScoreKey]] = []
    i = 0
    n = len(items)
    while i < n:
        j = i + 1
        while j < n and items[j][1] == items[i][1]:
            j += 1
        group = items[i:j]
        if len(group) > 1:
            group = [group[p] for p in rng.permutation(len(group))]
        out.extend(group)
        i = j
    return out


# ---------------------------------------------------------------------------
# tuning h per relation and direction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TuneConfig:
    top_x: int = 200
    rng_seed: int = 42
    default_h: int = 1
    binding_cap: int = DEFAULT_BINDING_CAP


DEFAULT_GRID = (1, 4, 5, 6, 7, 8, 9, 10)


def tune_h_star(
    train_kg: KnowledgeGraph,
    ruleset: RuleSet,
    valid_triples: Iterable[Triple],
    grid: Sequence[int] = DEFAULT_GRID,
    config: TuneConfig = TuneConfig(),
) -> HStarTable:
    """Grid-search h per (relation, direction) by validation MRR.

    Candidate rankings are generated once per query with no coverage
    stop and rescored for every grid value; ties pick the smaller h
    (H_ALL sorts last, so bounded h wins over plain noisy-or). Pairs
    with no validation queries fall back to the table's default.
    """
    valid = list(valid_triples)
    grid = sorted(set(grid))
    if not grid:
        raise ValueError("empty h grid")
    if any(h < 1 for h in grid):
        raise ValueError("grid values must be >= 1")
    filter_triples = frozenset(train_kg.triples) | set(valid)
    policy = GenerationPolicy(top_x=config.top_x, h_stop=None)
    by_pair: dict[tuple[int, str], list[tuple[Query, int, CandidateRanking]]] = {}
    for t in valid:
        for direction, anchor, target in (
            ("tail", t.subject, t.object),
            ("head", t.object, t.subject),
        ):
            q = Query(t.relation, anchor, direction)
            ranking = answer_query(train_kg, ruleset, q, policy, cap=config.binding_cap)
            by_pair.setdefault((t.relation, direction), []).append((q, target, ranking))
    entries: dict[tuple[int, str], int] = {}
    for pair, queries in sorted(by_pair.items()):
        best_h = None
        best_mrr = -1.0
        for h in grid:
            total = 0.0
            for q, target, ranking in queries:
                dcode = DIRECTIONS.index(q.direction)
                scored = rank_candidates(
                    ranking,
                    NoisyOrTopH(h) if h > 1 else MaxPlus(),
                    np.random.default_rng([config.rng_seed, q.relation, q.anchor, dcode, 0]),
                )[: config.top_x]
                rank = filtered_rank(
                    scored,
                    target,
                    filter_triples,
                    q,
                    np.random.default_rng([config.rng_seed, q.relation, q.anchor, dcode, 1]),
                )
                if rank is not None:
                    total += 1.0 / rank
            mrr = total / len(queries)
            if mrr > best_mrr:
                best_mrr = mrr
                best_h = h
        entries[pair] = best_h
    return HStarTable(entries=entries, default_h=config.default_h)
