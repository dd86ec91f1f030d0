"""Rule application against a knowledge graph.

A rule body is grounded by relational joins over the graph's
per-relation adjacency arrays. Bindings live in a 2-D int64 table with
one column per rule variable (-1 = unbound); each body atom becomes a
filter step (both positions resolved), an extension step (one position
resolved, neighbour expansion through CSR) or a cross step (neither
resolved, full pair list). Atoms are ordered greedily by estimated
fan-out, filters first. When only specific variables are needed, dead
columns are projected away after each step and rows deduplicated, which
keeps intermediate tables near the size of the final answer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import kernels
from .kg import KnowledgeGraph, Triple
from .rules import Atom, Constant, Rule, RuleSet, Variable

__all__ = [
    "BodyExplosion",
    "UndefinedConfidence",
    "FixpointBudgetExceeded",
    "Query",
    "GenerationPolicy",
    "CandidateRanking",
    "TAIL",
    "HEAD",
    "DIRECTIONS",
    "DEFAULT_BINDING_CAP",
    "ground_body",
    "predictions",
    "predicts",
    "one_step_entails",
    "confidence",
    "answer_query",
    "forward_chain",
]

DEFAULT_BINDING_CAP = 10_000_000

TAIL = "tail"  # query r(anchor, ?)
HEAD = "head"  # query r(?, anchor)
DIRECTIONS = (TAIL, HEAD)


class BodyExplosion(RuntimeError):
    """An intermediate binding table outgrew the configured cap."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"binding table reached {size} rows (cap {cap})")
        self.size = size
        self.cap = cap


class UndefinedConfidence(ValueError):
    """The rule generates no predictions, so correct/predicted is 0/0."""


class FixpointBudgetExceeded(RuntimeError):
    """Forward chaining did not close within max_rounds."""


@dataclass(frozen=True)
class Query:
    """One completion query: relation, anchor entity and open side."""

    relation: int
    anchor: int
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


@dataclass(frozen=True)
class GenerationPolicy:
    """Candidate generation bounds.

    ``h_stop`` stops applying further (weaker) rules once at least
    ``top_x`` distinct candidates were each produced by ``h_stop``
    rules; None applies every rule.
    """

    top_x: int = 200
    h_stop: int | None = None

    def __post_init__(self):
        if self.top_x < 1:
            raise ValueError("top_x must be >= 1")
        if self.h_stop is not None and self.h_stop < 1:
            raise ValueError("h_stop must be >= 1 or None")


@dataclass
class CandidateRanking:
    """Per-candidate confidence lists for one query.

    Each list holds the confidences of the distinct rules that predicted
    the candidate, descending (a rule contributes at most once).
    """

    query: Query
    candidates: dict[int, list[float]]


# ---------------------------------------------------------------------------
# join execution
# ---------------------------------------------------------------------------


def _var_columns(rule: Rule) -> dict[str, int]:
    return {name: i for i, name in enumerate(rule.variables())}


def _resolved(term, bound: set[str]) -> bool:
    return isinstance(term, Constant) or term.name in bound


def _term_slot(term, var_cols) -> tuple[int, int]:
    """(column, constant) pair for kernels; column -1 means constant."""
    if isinstance(term, Constant):
        return -1, term.entity
    return var_cols[term.name], -1


def _atom_cost(kg: KnowledgeGraph, atom: Atom, bound: set[str]) -> float:
    first_ok = _resolved(atom.first, bound)
    second_ok = _resolved(atom.second, bound)
    if first_ok and second_ok:
        return 0.0
    if first_ok:
        return 1.0 + kg.avg_fanout_out(atom.relation)
    if second_ok:
        return 1.0 + kg.avg_fanout_in(atom.relation)
    return 8.0 * (1.0 + kg.pair_count(atom.relation))


def _apply_distinct(table: np.ndarray, cols: list[int], new_cols: list[int]) -> np.ndarray:
    """Drop rows where a freshly bound variable repeats another's entity."""
    if not new_cols or table.shape[0] == 0:
        return table
    keep = np.ones(table.shape[0], dtype=bool)
    for c in new_cols:
        for other in cols:
            if other != c:
                keep &= table[:, c] != table[:, other]
    return table[keep]


def _run_join(
    kg: KnowledgeGraph,
    rule: Rule,
    seed: dict[str, int],
    keep: set[str] | None,
    cap: int = DEFAULT_BINDING_CAP,
    distinct: bool = False,
) -> tuple[np.ndarray, dict[str, int]]:
    """Ground the body; returns the binding table and the column map.

    ``keep`` = None keeps every variable (full bindings); otherwise only
    the named variables are reliable in the result and other columns may
    be projected to -1 along the way. With ``distinct`` set, variables
    must bind pairwise-distinct entities; projection is disabled then,
    because dropped columns still constrain later ones.
    """
    var_cols = _var_columns(rule)
    unknown = set(seed) - set(var_cols)
    if unknown:
        raise ValueError(f"seed binds unknown variables {sorted(unknown)}")
    table = np.full((1, len(var_cols)), -1, dtype=np.int64)
    for name, ent in seed.items():
        table[0, var_cols[name]] = ent
    bound = set(seed)
    if distinct:
        cols = [var_cols[v] for v in bound]
        table = _apply_distinct(table, cols, cols)
    remaining = list(rule.body)
    project = keep is not None and not distinct
    while remaining and table.shape[0] > 0:
        pick = min(range(len(remaining)), key=lambda i: (_atom_cost(kg, remaining[i], bound), i))
        atom = remaining.pop(pick)
        table, newly = _apply_atom(kg, atom, table, bound, var_cols)
        if table.shape[0] > cap:
            raise BodyExplosion(table.shape[0], cap)
        if distinct and newly:
            bound_cols = [var_cols[v] for v in bound]
            table = _apply_distinct(table, bound_cols, [var_cols[v] for v in newly])
        if project:
            live = set(keep)
            for a in remaining:
                live.update(a.variables())
            dead = [var_cols[v] for v in bound if v not in live]
            if dead:
                table[:, dead] = -1
                bound -= {v for v in bound if v not in live}
                if table.shape[0] > 1:
                    table = np.unique(table, axis=0)
    return table, var_cols


def _apply_atom(kg, atom, table, bound, var_cols):
    """Run one atom as a kernel step; mutates ``bound``, returns new vars."""
    first_ok = _resolved(atom.first, bound)
    second_ok = _resolved(atom.second, bound)
    rel = atom.relation
    if first_ok and second_ok:
        s_col, s_const = _term_slot(atom.first, var_cols)
        o_col, o_const = _term_slot(atom.second, var_cols)
        mask = kernels.filter_bindings(
            table, s_col, s_const, o_col, o_const, kg.pair_keys(rel), kg.n_entities
        )
        return table[mask], []
    if first_ok:
        s_col, s_const = _term_slot(atom.first, var_cols)
        new = atom.second.name
        offsets, values = kg.csr_objects(rel)
        out = kernels.expand_bindings(table, s_col, s_const, var_cols[new], offsets, values)
        bound.add(new)
        return out, [new]
    if second_ok:
        o_col, o_const = _term_slot(atom.second, var_cols)
        new = atom.first.name
        offsets, values = kg.csr_subjects(rel)
        out = kernels.expand_bindings(table, o_col, o_const, var_cols[new], offsets, values)
        bound.add(new)
        return out, [new]
    # both positions unresolved, hence both are variables
    subs, objs = kg.relation_pairs(rel)
    if atom.first.name == atom.second.name:
        self_loop = subs == objs
        vals = subs[self_loop]
        out = kernels.cross_bindings(table, var_cols[atom.first.name], vals, -1, vals)
        bound.add(atom.first.name)
        return out, [atom.first.name]
    out = kernels.cross_bindings(
        table, var_cols[atom.first.name], subs, var_cols[atom.second.name], objs
    )
    bound.add(atom.first.name)
    bound.add(atom.second.name)
    return out, [atom.first.name, atom.second.name]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def ground_body(
    kg: KnowledgeGraph,
    rule: Rule,
    seed: dict[str, int] | None = None,
    cap: int = DEFAULT_BINDING_CAP,
    distinct: bool = False,
) -> Iterator[dict[str, int]]:
    """Yield every total variable binding satisfying the body.

    ``seed`` pre-binds a subset of the rule's variables. Emission order
    is deterministic for a given graph and rule.
    """
    table, var_cols = _run_join(kg, rule, seed or {}, keep=None, cap=cap, distinct=distinct)
    names = list(var_cols)
    for row in table:
        yield {name: int(row[var_cols[name]]) for name in names}


def predictions(
    kg: KnowledgeGraph,
    rule: Rule,
    cap: int = DEFAULT_BINDING_CAP,
    distinct: bool = False,
) -> set[Triple]:
    """All distinct head groundings whose body is satisfiable."""
    head = rule.head
    keep = set(head.variables())
    table, var_cols = _run_join(kg, rule, {}, keep=keep, cap=cap, distinct=distinct)
    if table.shape[0] == 0:
        return set()
    n = table.shape[0]
    cols = []
    for term in (head.first, head.second):
        if isinstance(term, Variable):
            cols.append(table[:, var_cols[term.name]])
        else:
            cols.append(np.full(n, term.entity, dtype=np.int64))
    pairs = np.unique(np.stack(cols, axis=1), axis=0)
    rel = head.relation
    return {Triple(rel, int(s), int(o)) for s, o in pairs}


def _head_seed(rule: Rule, fact: Triple) -> dict[str, int] | None:
    """Bindings forced by matching the head onto ``fact``; None = no match."""
    if rule.head.relation != fact.relation:
        return None
    seed: dict[str, int] = {}
    for term, value in ((rule.head.first, fact.subject), (rule.head.second, fact.object)):
        if isinstance(term, Constant):
            if term.entity != value:
                return None
        else:
            before = seed.get(term.name)
            if before is not None and before != value:
                return None
            seed[term.name] = value
    return seed


def _satisfiable(kg, rule, seed, cap, distinct=False) -> bool:
    table, _ = _run_join(kg, rule, seed, keep=set(), cap=cap, distinct=distinct)
    return table.shape[0] > 0


def predicts(
    kg: KnowledgeGraph,
    rule: Rule,
    fact: Triple,
    cap: int = DEFAULT_BINDING_CAP,
) -> bool:
    """Whether the single rule generates ``fact`` on this graph."""
    seed = _head_seed(rule, fact)
    return seed is not None and _satisfiable(kg, rule, seed, cap)


def one_step_entails(
    kg: KnowledgeGraph,
    ruleset: RuleSet,
    fact: Triple,
    cap: int = DEFAULT_BINDING_CAP,
    distinct: bool = False,
) -> bool:
    """Whether some rule generates ``fact`` by a single body grounding."""
    for rule in ruleset.rules_for(fact.relation):
        seed = _head_seed(rule, fact)
        if seed is not None and _satisfiable(kg, rule, seed, cap, distinct):
            return True
    return False


def confidence(
    kg: KnowledgeGraph,
    rule: Rule,
    cap: int = DEFAULT_BINDING_CAP,
    distinct: bool = False,
) -> tuple[int, int, float]:
    """(predicted, correct, correct/predicted) for the rule on this graph.

    Counts distinct predicted facts; raises UndefinedConfidence when the
    rule generates nothing.
    """
    preds = predictions(kg, rule, cap=cap, distinct=distinct)
    if not preds:
        raise UndefinedConfidence("rule generates no predictions on this graph")
    correct = sum(1 for t in preds if t in kg.triples)
    return len(preds), correct, correct / len(preds)


def _rule_candidates(kg, rule, query: Query, cap, distinct=False) -> list[int]:
    """Distinct candidate entities this rule yields for the query, ascending."""
    head = rule.head
    if query.direction == TAIL:
        anchor_term, cand_term = head.first, head.second
    else:
        anchor_term, cand_term = head.second, head.first
    seed: dict[str, int] = {}
    if isinstance(anchor_term, Constant):
        if anchor_term.entity != query.anchor:
            return []
    else:
        seed[anchor_term.name] = query.anchor
    if isinstance(cand_term, Constant):
        return [cand_term.entity] if _satisfiable(kg, rule, seed, cap, distinct) else []
    if cand_term.name in seed:
        # head r(X,X): the only possible candidate is the anchor itself
        return [query.anchor] if _satisfiable(kg, rule, seed, cap, distinct) else []
    table, var_cols = _run_join(kg, rule, seed, keep={cand_term.name}, cap=cap, distinct=distinct)
    if table.shape[0] == 0:
        return []
    vals = np.unique(table[:, var_cols[cand_term.name]])
    return [int(v) for v in vals]


def answer_query(
    kg: KnowledgeGraph,
    ruleset: RuleSet,
    query: Query,
    policy: GenerationPolicy = GenerationPolicy(),
    cap: int = DEFAULT_BINDING_CAP,
    distinct: bool = False,
) -> CandidateRanking:
    """Apply the query relation's rules, strongest first, collecting
    candidate entities with the confidences of the rules that produced
    them. Honors the policy's coverage-based early stop.
    """
    candidates: dict[int, list[float]] = {}
    covered = 0
    for rule in ruleset.rules_for(query.relation):
        for ent in _rule_candidates(kg, rule, query, cap, distinct):
            lst = candidates.get(ent)
            if lst is None:
                candidates[ent] = lst = []
            lst.append(rule.confidence)
            if policy.h_stop is not None and len(lst) == policy.h_stop:
                covered += 1
        if policy.h_stop is not None and covered >= policy.top_x:
            break
    return CandidateRanking(query=query, candidates=candidates)


def forward_chain(
    kg: KnowledgeGraph,
    ruleset: RuleSet,
    max_rounds: int | None = None,
    cap: int = DEFAULT_BINDING_CAP,
) -> KnowledgeGraph:
    """Close the graph under every rule (ignoring confidences).

    Rounds apply all rules to the current graph and add the new facts at
    once; iteration stops at the first round deriving nothing. No new
    entities appear, so a least fixpoint exists. ``max_rounds`` bounds
    the number of rounds including the closing empty one.
    """
    graph = kg
    for round_no in itertools.count(1):
        if max_rounds is not None and round_no > max_rounds:
            raise FixpointBudgetExceeded(
                f"not closed after {max_rounds} rounds"
            )
        new: set[Triple] = set()
        for rule in ruleset:
            for t in predictions(graph, rule, cap=cap):
                if t not in graph.triples:
                    new.add(t)
        if not new:
            return graph
        graph = graph.with_added(new)
