"""Joint Bernoulli models over rule truth values.

A joint distribution over k binary variables ("rule i fired for this
candidate") is a dense table of 2^k realisation probabilities. Bit j
(0-based, least significant first) of a realisation index holds the
truth of variable j. Three constructions matter here:

* the independence model, the product measure of the marginals;
* the maximum-correlation model, which drives every pairwise
  correlation to its Fréchet-Hoeffding upper bound and is supported on
  the k+1 nested realisations 0, 1, 11, 111, ...;
* enumeration models of a probabilistic-logic program, where each rule
  holds with its confidence independently and a candidate fact counts
  when the active rules entail it (in one step, or closed recursively).

Under independence, the probability that at least one predicting rule
fires is exactly the noisy-or of their confidences; under the
maximum-correlation model it collapses to the largest marginal in the
subset. Both identities are exercised by the verification suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import kernels
from .grounding import predicts
from .kg import KnowledgeGraph, Triple
from .rules import Atom, Constant, Rule

__all__ = [
    "DegenerateMarginal",
    "UnsortedMarginals",
    "EmptySubset",
    "TooManyRules",
    "VerificationError",
    "MAX_JOINT_VARS",
    "MAX_ONESTEP_RULES",
    "MAX_ENTAILMENT_RULES",
    "JointDistribution",
    "MaxCorrSolution",
    "ProbRule",
    "frechet_upper",
    "max_corr_distribution",
    "independent_distribution",
    "prob_at_least_one",
    "marginalize",
    "problog_onestep",
    "problog_entailment",
    "MaxQueryCheck",
    "verify_max_marginal_query",
]


class DegenerateMarginal(ValueError):
    """A marginal at 0 or 1 breaks the correlation formulas."""


class UnsortedMarginals(ValueError):
    """The max-correlation construction needs descending marginals."""


class EmptySubset(ValueError):
    """An at-least-one query over no variables is meaningless."""


class TooManyRules(ValueError):
    """The dense 2^k representation would not fit."""


class VerificationError(AssertionError):
    """A verified identity failed beyond tolerance."""


MAX_JOINT_VARS = 24
MAX_ONESTEP_RULES = 20
MAX_ENTAILMENT_RULES = 16


def _check_width(k: int, limit: int = MAX_JOINT_VARS):
    if k > limit:
        raise TooManyRules(f"{k} variables exceed the dense-table limit of {limit}")


@dataclass
class JointDistribution:
    """A dense joint over k binary variables.

    ``probs[r]`` is the probability of the realisation whose bit j is
    the truth of variable j; ``marginals[j]`` caches P(variable j = 1).
    Construction validates shape, non-negativity, total mass 1 and the
    cached marginals against the table (1e-12).
    """

    k: int
    probs: np.ndarray
    marginals: np.ndarray

    def __post_init__(self):
        _check_width(self.k)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.marginals = np.asarray(self.marginals, dtype=np.float64)
        if self.probs.shape != (1 << self.k,):
            raise ValueError(f"table must have 2^{self.k} entries, got {self.probs.shape}")
        if self.marginals.shape != (self.k,):
            raise ValueError("need one cached marginal per variable")
        if np.any(self.probs < 0.0):
            worst = float(self.probs.min())
            raise ValueError(f"negative realisation probability {worst}")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"realisation probabilities sum to {total}, not 1")
        recomputed = kernels.bit_marginals(self.probs, self.k)
        if np.max(np.abs(recomputed - self.marginals), initial=0.0) > 1e-12:
            raise ValueError("cached marginals disagree with the table")

    @classmethod
    def from_table(cls, probs: np.ndarray) -> "JointDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        k = int(probs.shape[0] - 1).bit_length()
        if probs.shape[0] != 1 << k:
            raise ValueError(f"table length {probs.shape[0]} is not a power of two")
        return cls(k=k, probs=probs, marginals=kernels.bit_marginals(probs, k))


def _subset_mask(subset: Iterable[int], k: int) -> int:
    mask = 0
    count = 0
    for j in subset:
        if not 0 <= j < k:
            raise ValueError(f"variable index {j} outside 0..{k - 1}")
        mask |= 1 << j
        count += 1
    if count == 0:
        raise EmptySubset("empty variable subset")
    return mask


def prob_at_least_one(dist: JointDistribution, subset: Iterable[int]) -> float:
    """P(at least one variable in ``subset`` is true)."""
    mask = _subset_mask(subset, dist.k)
    return float(kernels.mass_any(dist.probs, mask))


def marginalize(dist: JointDistribution, keep: Sequence[int]) -> JointDistribution:
    """Project the joint onto ``keep`` (strictly ascending indices).

    Variable i of the result is ``keep[i]`` of the input.
    """
    keep = list(keep)
    if not keep:
        raise EmptySubset("cannot marginalize onto no variables")
    if any(not 0 <= j < dist.k for j in keep):
        raise ValueError(f"keep indices must lie in 0..{dist.k - 1}")
    if any(a >= b for a, b in zip(keep, keep[1:])):
        raise ValueError("keep indices must be strictly ascending")
    bits = np.asarray(keep, dtype=np.int64)
    probs = kernels.marginalize_table(dist.probs, bits)
    return JointDistribution(k=len(keep), probs=probs, marginals=dist.marginals[bits])


# ---------------------------------------------------------------------------
# the two closed-form joints
# ---------------------------------------------------------------------------


def _check_open_unit(p: float):
    if not 0.0 < p < 1.0:
        raise DegenerateMarginal(f"marginal {p} outside the open interval (0, 1)")


def frechet_upper(p_i: float, p_j: float) -> float:
    """Largest correlation two Bernoulli marginals admit.

    The Fréchet-Hoeffding bound: min of the two square-rooted odds
    ratios sqrt(p_i(1-p_j) / (p_j(1-p_i))) and its reciprocal.
    """
    _check_open_unit(p_i)
    _check_open_unit(p_j)
    ratio = np.sqrt((p_i * (1.0 - p_j)) / (p_j * (1.0 - p_i)))
    return float(min(ratio, 1.0 / ratio))


@dataclass
class MaxCorrSolution:
    """Support weights of the maximum-correlation joint.

    ``z[m]`` is the probability of the nested realisation in which
    exactly the m strongest variables are true (m = 0..k). Validation
    rebuilds the marginals: p of variable j (descending order) must be
    z[j+1] + ... + z[k].
    """

    marginals: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.marginals = np.asarray(self.marginals, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        k = self.marginals.shape[0]
        if self.z.shape != (k + 1,):
            raise ValueError("need exactly one weight per nesting depth 0..k")
        if np.any(self.z < 0.0):
            raise ValueError(f"negative support weight {float(self.z.min())}")
        if abs(float(self.z.sum()) - 1.0) > 1e-12:
            raise ValueError("support weights must sum to 1")
        # suffix sums of z reproduce the marginals
        suffix = np.cumsum(self.z[::-1])[::-1]
        if np.max(np.abs(suffix[1:] - self.marginals), initial=0.0) > 1e-12:
            raise ValueError("support weights do not reproduce the marginals")


def max_corr_distribution(marginals: Sequence[float]) -> tuple[MaxCorrSolution, JointDistribution]:
    """The joint attaining every pairwise correlation upper bound.

    ``marginals`` must be sorted descending, all strictly inside (0, 1);
    duplicates are fine (their nesting step gets weight 0). The joint is
    supported on the k+1 nested realisations (1 << m) - 1; weights come
    from back-substitution: z[k] = p_k, z[m] = p_m - p_{m+1},
    z[0] = 1 - p_1.
    """
    p = np.asarray(marginals, dtype=np.float64)
    k = p.shape[0]
    if k == 0:
        raise ValueError("need at least one marginal")
    _check_width(k)
    for v in p:
        _check_open_unit(float(v))
    if np.any(p[:-1] < p[1:]):
        raise UnsortedMarginals("marginals must be sorted descending")
    z = np.empty(k + 1, dtype=np.float64)
    z[k] = p[k - 1]
    z[1:k] = p[: k - 1] - p[1:]
    z[0] = 1.0 - p[0]
    solution = MaxCorrSolution(marginals=p, z=z)
    probs = np.zeros(1 << k, dtype=np.float64)
    for m in range(k + 1):
        probs[(1 << m) - 1] = z[m]
    dist = JointDistribution(k=k, probs=probs, marginals=p.copy())
    return solution, dist


def independent_distribution(marginals: Sequence[float]) -> JointDistribution:
    """The product measure of the given marginals."""
    p = np.asarray(marginals, dtype=np.float64)
    _check_width(p.shape[0])
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("marginals must lie in [0, 1]")
    probs = kernels.independent_table(p)
    return JointDistribution(k=p.shape[0], probs=probs, marginals=p.copy())


class MaxQueryCheck(NamedTuple):
    query_mass: float
    subset_max: float
    deviation: float


def verify_max_marginal_query(
    marginals: Sequence[float],
    subset: Iterable[int],
    tol: float = 1e-9,
) -> MaxQueryCheck:
    """Check that under the maximum-correlation joint, P(at least one of
    ``subset``) equals the largest marginal in the subset.

    Returns both sides; raises VerificationError past ``tol``.
    """
    subset = list(subset)
    _, dist = max_corr_distribution(marginals)
    mass = prob_at_least_one(dist, subset)
    best = max(float(dist.marginals[j]) for j in subset)
    deviation = abs(mass - best)
    if deviation > tol:
        raise VerificationError(
            f"at-least-one mass {mass} differs from max marginal {best} by {deviation}"
        )
    return MaxQueryCheck(query_mass=mass, subset_max=best, deviation=deviation)


# ---------------------------------------------------------------------------
# probabilistic-program enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbRule:
    """A rule held with probability ``prob``, independent of the others."""

    rule: Rule
    prob: float

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"rule probability {self.prob} outside [0, 1]")


def problog_onestep(
    prob_rules: Sequence[ProbRule],
    kg: KnowledgeGraph,
    fact: Triple,
) -> float:
    """P(some active rule generates ``fact`` in a single body grounding).

    Enumerates all 2^k rule-activation realisations of the independence
    model. Equals the noisy-or of the predicting rules' probabilities.
    """
    k = len(prob_rules)
    _check_width(k, MAX_ONESTEP_RULES)
    mask = 0
    for j, pr in enumerate(prob_rules):
        if predicts(kg, pr.rule, fact):
            mask |= 1 << j
    if mask == 0 or k == 0:
        return 0.0
    probs = np.array([pr.prob for pr in prob_rules], dtype=np.float64)
    weights = kernels.independent_table(probs)
    return float(kernels.mass_any(weights, mask))


class _FactIndex:
    """Adjacency snapshot of a small fact set for the closure evaluator."""

    __slots__ = ("facts", "by_rel_sub", "by_rel_obj", "by_rel")

    def __init__(self, facts: frozenset[Triple]):
        self.facts = facts
        self.by_rel_sub: dict[tuple[int, int], list[int]] = {}
        self.by_rel_obj: dict[tuple[int, int], list[int]] = {}
        self.by_rel: dict[int, list[Triple]] = {}
        for t in sorted(facts):
            self.by_rel_sub.setdefault((t.relation, t.subject), []).append(t.object)
            self.by_rel_obj.setdefault((t.relation, t.object), []).append(t.subject)
            self.by_rel.setdefault(t.relation, []).append(t)


def _match_consequences(index: _FactIndex, rule: Rule) -> frozenset[Triple]:
    """Every head grounding with a body grounding inside the fact set."""
    out: set[Triple] = set()
    # order atoms greedily so already-bound positions come first
    remaining = list(rule.body)
    ordered: list[Atom] = []
    bound: set[str] = set()
    while remaining:

        def readiness(atom):
            score = 0
            for term in (atom.first, atom.second):
                if isinstance(term, Constant) or term.name in bound:
                    score += 1
            return score

        best = max(range(len(remaining)), key=lambda i: (readiness(remaining[i]), -i))
        atom = remaining.pop(best)
        ordered.append(atom)
        bound.update(atom.variables())

    def emit(binding: dict[str, int]):
        vals = []
        for term in (rule.head.first, rule.head.second):
            vals.append(term.entity if isinstance(term, Constant) else binding[term.name])
        out.add(Triple(rule.head.relation, vals[0], vals[1]))

    def walk(i: int, binding: dict[str, int]):
        if i == len(ordered):
            emit(binding)
            return
        atom = ordered[i]
        s = atom.first.entity if isinstance(atom.first, Constant) else binding.get(atom.first.name)
        o = atom.second.entity if isinstance(atom.second, Constant) else binding.get(atom.second.name)
        if s is not None and o is not None:
            if Triple(atom.relation, s, o) in index.facts:
                walk(i + 1, binding)
        elif s is not None:
            for obj in index.by_rel_sub.get((atom.relation, s), ()):
                binding[atom.second.name] = obj
                walk(i + 1, binding)
            binding.pop(atom.second.name, None)
        elif o is not None:
            for sub in index.by_rel_obj.get((atom.relation, o), ()):
                binding[atom.first.name] = sub
                walk(i + 1, binding)
            binding.pop(atom.first.name, None)
        else:
            same = atom.first.name == atom.second.name
            for t in index.by_rel.get(atom.relation, ()):
                if same:
                    if t.subject != t.object:
                        continue
                    binding[atom.first.name] = t.subject
                else:
                    binding[atom.first.name] = t.subject
                    binding[atom.second.name] = t.object
                walk(i + 1, binding)
            binding.pop(atom.first.name, None)
            if not same:
                binding.pop(atom.second.name, None)
        return

    walk(0, {})
    return frozenset(out)


def problog_entailment(
    prob_rules: Sequence[ProbRule],
    kg: KnowledgeGraph,
    fact: Triple,
) -> float:
    """P(the active rules recursively entail ``fact``).

    For each of the 2^k activation realisations the graph is closed
    under the active rules (rule chaining included) and the realisation
    counts when the closure contains the fact. Walks the subset lattice
    with memoized incremental fixpoints, so shared closures are computed
    once. Never below problog_onestep for the same program.
    """
    k = len(prob_rules)
    _check_width(k, MAX_ENTAILMENT_RULES)
    base = frozenset(kg.triples)
    if k == 0:
        return 1.0 if fact in base else 0.0
    rules = [pr.rule for pr in prob_rules]
    probs = np.array([pr.prob for pr in prob_rules], dtype=np.float64)

    store: list[frozenset[Triple]] = []
    index_cache: list[_FactIndex] = []
    ids: dict[frozenset[Triple], int] = {}

    def intern(fs: frozenset[Triple]) -> int:
        got = ids.get(fs)
        if got is None:
            got = len(store)
            ids[fs] = got
            store.append(fs)
            index_cache.append(_FactIndex(fs))
        return got

    step_memo: dict[tuple[int, int], frozenset[Triple]] = {}

    def consequences(fid: int, rule_idx: int) -> frozenset[Triple]:
        key = (fid, rule_idx)
        got = step_memo.get(key)
        if got is None:
            got = _match_consequences(index_cache[fid], rules[rule_idx])
            step_memo[key] = got
        return got

    def close(fid: int, active: list[int]) -> int:
        while True:
            fresh: set[Triple] = set()
            facts = store[fid]
            for j in active:
                fresh |= consequences(fid, j) - facts
            if not fresh:
                return fid
            fid = intern(facts | fresh)

    fix_of = np.empty(1 << k, dtype=np.int64)
    fix_of[0] = intern(base)
    entails = np.zeros(1 << k, dtype=bool)
    entails[0] = fact in base
    active_of = [[j for j in range(k) if (r >> j) & 1] for r in range(1 << k)]
    for r in range(1, 1 << k):
        parent = r & (r - 1)
        fix_of[r] = close(int(fix_of[parent]), active_of[r])
        entails[r] = fact in store[fix_of[r]]
    weights = kernels.independent_table(probs)
    return float(weights[entails].sum())
