"""Joint distributions, correlation bounds, and program enumeration."""

import itertools
import math

import numpy as np
import pytest

from kgrules.grounding import forward_chain
from kgrules.kg import KnowledgeGraph, SymbolTables, Triple
from kgrules.prob import (
    DegenerateMarginal,
    EmptySubset,
    JointDistribution,
    MaxCorrSolution,
    ProbRule,
    TooManyRules,
    UnsortedMarginals,
    VerificationError,
    frechet_upper,
    independent_distribution,
    marginalize,
    max_corr_distribution,
    prob_at_least_one,
    problog_entailment,
    problog_onestep,
    verify_max_marginal_query,
)
from kgrules.rules import RuleSet, parse_rule


def rule_of(text: str, symbols: SymbolTables):
    return parse_rule(f"0.5\t0\t0\t{text}", "canonical", symbols)


class TestJointDistribution:
    """Dense tables under the bit-j-is-variable-j convention."""

    def test_marginals_follow_bit_convention(self):
        dist = JointDistribution.from_table([0.1, 0.2, 0.3, 0.4])
        assert dist.k == 2
        assert dist.marginals[0] == pytest.approx(0.2 + 0.4)
        assert dist.marginals[1] == pytest.approx(0.3 + 0.4)

    def test_rejects_negative_mass(self):
        with pytest.raises(ValueError, match="negative"):
            JointDistribution.from_table([0.6, -0.1, 0.3, 0.2])

    def test_rejects_unnormalized_table(self):
        with pytest.raises(ValueError, match="sum"):
            JointDistribution.from_table([0.5, 0.5, 0.5, 0.5])

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            JointDistribution.from_table([0.5, 0.25, 0.25])

    def test_rejects_tampered_marginal_cache(self):
        with pytest.raises(ValueError, match="disagree"):
            JointDistribution(k=1, probs=np.array([0.5, 0.5]), marginals=np.array([0.7]))

    def test_dimension_limit(self):
        with pytest.raises(TooManyRules):
            JointDistribution.from_table(np.full(1 << 25, 2.0**-25))

    def test_prob_at_least_one(self):
        dist = JointDistribution.from_table([0.1, 0.2, 0.3, 0.4])
        assert prob_at_least_one(dist, [0]) == pytest.approx(0.6)
        assert prob_at_least_one(dist, [1]) == pytest.approx(0.7)
        assert prob_at_least_one(dist, [0, 1]) == pytest.approx(0.9)
        with pytest.raises(EmptySubset):
            prob_at_least_one(dist, [])
        with pytest.raises(ValueError):
            prob_at_least_one(dist, [2])


class TestMaxCorrDistribution:
    def test_two_rule_support_weights(self):
        solution, dist = max_corr_distribution([0.64, 0.44])
        assert solution.z == pytest.approx([0.36, 0.20, 0.44])
        assert dist.probs[0b00] == pytest.approx(0.36)
        assert dist.probs[0b01] == pytest.approx(0.20)
        assert dist.probs[0b10] == 0.0
        assert dist.probs[0b11] == pytest.approx(0.44)

    def test_query_mass_equals_top_marginal(self):
        _, dist = max_corr_distribution([0.64, 0.44])
        assert prob_at_least_one(dist, [0, 1]) == pytest.approx(0.64)

    def test_three_rule_weights_match_linear_solve(self):
        """Back-substitution agrees with solving the defining system."""
        p = [0.64, 0.44, 0.41]
        solution, _ = max_corr_distribution(p)
        k = len(p)
        a = np.zeros((k + 1, k + 1))
        b = np.zeros(k + 1)
        a[0, :] = 1.0
        b[0] = 1.0
        for j in range(k):
            a[j + 1, j + 1 :] = 1.0
            b[j + 1] = p[j]
        expected = np.linalg.solve(a, b)
        assert solution.z == pytest.approx(expected, abs=1e-12)
        assert solution.z == pytest.approx([0.36, 0.20, 0.03, 0.41])

    def test_duplicate_marginals_get_zero_step(self):
        solution, _ = max_corr_distribution([0.5, 0.5])
        assert solution.z == pytest.approx([0.5, 0.0, 0.5])

    def test_rejects_ascending_order(self):
        with pytest.raises(UnsortedMarginals):
            max_corr_distribution([0.44, 0.64])

    def test_rejects_boundary_marginals(self):
        with pytest.raises(DegenerateMarginal):
            max_corr_distribution([1.0, 0.5])
        with pytest.raises(DegenerateMarginal):
            max_corr_distribution([0.5, 0.0])

    def test_solution_validation_catches_tampering(self):
        p = np.array([0.6, 0.4])
        with pytest.raises(ValueError):
            MaxCorrSolution(marginals=p, z=np.array([0.5, 0.1, 0.4]))
        with pytest.raises(ValueError):
            MaxCorrSolution(marginals=p, z=np.array([-0.1, 0.7, 0.4]))

    def test_random_marginals_attain_the_query_identity(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            k = int(rng.integers(1, 8))
            p = np.sort(rng.uniform(0.05, 0.95, size=k))[::-1]
            check = verify_max_marginal_query(p, range(k))
            assert check.deviation <= 1e-9
            assert check.subset_max == pytest.approx(p[0])

    def test_verify_raises_past_tolerance(self):
        with pytest.raises(VerificationError):
            verify_max_marginal_query([0.6, 0.4], [0, 1], tol=-1.0)


class TestFrechetUpper:
    def test_worked_values(self):
        assert frechet_upper(0.64, 0.44) == pytest.approx(0.66, abs=0.005)
        assert frechet_upper(0.44, 0.41) == pytest.approx(0.94, abs=0.005)

    def test_formula(self):
        p, q = 0.64, 0.44
        ratio = math.sqrt((p * (1 - q)) / (q * (1 - p)))
        assert frechet_upper(p, q) == pytest.approx(min(ratio, 1 / ratio))

    def test_symmetry_and_equal_marginals(self):
        assert frechet_upper(0.3, 0.8) == pytest.approx(frechet_upper(0.8, 0.3))
        assert frechet_upper(0.37, 0.37) == pytest.approx(1.0)

    def test_bound_is_attained_by_the_max_corr_joint(self):
        """Pairwise correlations of the nested joint sit on the bound."""
        rng = np.random.default_rng(42)
        for _ in range(20):
            k = int(rng.integers(2, 7))
            p = np.sort(rng.uniform(0.05, 0.95, size=k))[::-1]
            _, dist = max_corr_distribution(p)
            i, j = sorted(rng.choice(k, size=2, replace=False))
            pair = marginalize(dist, [int(i), int(j)])
            both = float(pair.probs[0b11])
            pi, pj = float(p[i]), float(p[j])
            corr = (both - pi * pj) / math.sqrt(pi * (1 - pi) * pj * (1 - pj))
            assert corr == pytest.approx(frechet_upper(pi, pj), abs=1e-9)

    def test_rejects_degenerate_inputs(self):
        with pytest.raises(DegenerateMarginal):
            frechet_upper(0.0, 0.5)
        with pytest.raises(DegenerateMarginal):
            frechet_upper(0.5, 1.0)


class TestMarginalize:
    def test_bit_convention(self):
        dist = JointDistribution.from_table([0.1, 0.2, 0.3, 0.4])
        kept = marginalize(dist, [1])
        assert kept.probs == pytest.approx([0.3, 0.7])

    def test_keeping_all_is_identity(self):
        dist = independent_distribution([0.2, 0.6, 0.9])
        same = marginalize(dist, [0, 1, 2])
        assert same.probs == pytest.approx(dist.probs)

    def test_independent_projection_stays_independent(self):
        p = [0.2, 0.6, 0.9, 0.35]
        dist = independent_distribution(p)
        kept = marginalize(dist, [1, 3])
        expected = independent_distribution([p[1], p[3]])
        assert kept.probs == pytest.approx(expected.probs, abs=1e-12)

    def test_mass_of_any_subset_is_preserved(self):
        rng = np.random.default_rng(42)
        probs = rng.dirichlet(np.ones(16))
        dist = JointDistribution.from_table(probs)
        kept = marginalize(dist, [0, 2])
        assert prob_at_least_one(kept, [0, 1]) == pytest.approx(
            prob_at_least_one(dist, [0, 2])
        )

    def test_input_validation(self):
        dist = independent_distribution([0.2, 0.6])
        with pytest.raises(EmptySubset):
            marginalize(dist, [])
        with pytest.raises(ValueError, match="ascending"):
            marginalize(dist, [1, 0])
        with pytest.raises(ValueError):
            marginalize(dist, [0, 2])


def _parallel_program():
    """Three independent one-hop rules all generating h(0, 1)."""
    symbols = SymbolTables()
    symbols.entities.intern("e0")
    symbols.entities.intern("e1")
    symbols.relations.intern("h")
    rules = []
    triples = []
    for i, prob in enumerate((0.8, 0.7, 0.5)):
        rel = symbols.relations.intern(f"r{i}")
        triples.append(Triple(rel, 0, 1))
        rules.append(ProbRule(rule_of(f"h(X,Y) <= r{i}(X,Y)", symbols), prob))
    kg = KnowledgeGraph(triples, n_entities=2, n_relations=4)
    return kg, rules, Triple(0, 0, 1)


def _chained_program():
    """q needs a which needs b; only b(0, 1) is given."""
    symbols = SymbolTables()
    symbols.entities.intern("e0")
    symbols.entities.intern("e1")
    for name in ("q", "a", "b"):
        symbols.relations.intern(name)
    rules = [
        ProbRule(rule_of("q(X,Y) <= a(X,Y)", symbols), 0.5),
        ProbRule(rule_of("a(X,Y) <= b(X,Y)", symbols), 0.5),
    ]
    kg = KnowledgeGraph([Triple(2, 0, 1)], n_entities=2, n_relations=3)
    return kg, rules, Triple(0, 0, 1)


def _random_program(rng):
    symbols = SymbolTables()
    n_ent = int(rng.integers(2, 5))
    n_rel = int(rng.integers(2, 5))
    for i in range(n_ent):
        symbols.entities.intern(f"e{i}")
    for i in range(n_rel):
        symbols.relations.intern(f"r{i}")
    triples = [
        Triple(r, s, o)
        for r in range(n_rel)
        for s in range(n_ent)
        for o in range(n_ent)
        if rng.random() < 0.2
    ]
    kg = KnowledgeGraph(triples, n_entities=n_ent, n_relations=n_rel)
    shapes = ["{h}(X,Y) <= {b}(X,Y)", "{h}(X,Y) <= {b}(Y,X)", "{h}(X,Y) <= {b}(X,A), {c}(A,Y)"]
    prs = []
    for _ in range(int(rng.integers(1, 5))):
        shape = shapes[int(rng.integers(len(shapes)))]
        text = shape.format(
            h=f"r{int(rng.integers(n_rel))}",
            b=f"r{int(rng.integers(n_rel))}",
            c=f"r{int(rng.integers(n_rel))}",
        )
        prs.append(ProbRule(rule_of(text, symbols), float(rng.uniform(0.1, 0.9))))
    fact = Triple(int(rng.integers(n_rel)), int(rng.integers(n_ent)), int(rng.integers(n_ent)))
    return kg, prs, fact


def brute_entailment(kg, prob_rules, fact) -> float:
    """Sum over all activation subsets, closing the graph per subset."""
    total = 0.0
    k = len(prob_rules)
    for bits in itertools.product((0, 1), repeat=k):
        active = RuleSet.from_rules(
            [pr.rule for pr, b in zip(prob_rules, bits) if b]
        )
        closed = forward_chain(kg, active) if len(active) else kg
        if fact in closed.triples:
            weight = math.prod(
                pr.prob if b else 1.0 - pr.prob for pr, b in zip(prob_rules, bits)
            )
            total += weight
    return total


class TestProgramEnumeration:
    def test_parallel_rules_give_noisy_or(self):
        kg, prs, fact = _parallel_program()
        assert problog_onestep(prs, kg, fact) == pytest.approx(0.97, abs=1e-12)
        assert problog_entailment(prs, kg, fact) == pytest.approx(0.97, abs=1e-12)

    def test_unpredicted_fact_has_zero_mass(self):
        kg, prs, _ = _parallel_program()
        assert problog_onestep(prs, kg, Triple(0, 1, 0)) == 0.0
        assert problog_entailment(prs, kg, Triple(0, 1, 0)) == 0.0

    def test_chaining_lifts_entailment_above_onestep(self):
        kg, prs, fact = _chained_program()
        assert problog_onestep(prs, kg, fact) == 0.0
        assert problog_entailment(prs, kg, fact) == pytest.approx(0.25, abs=1e-15)

    def test_base_fact_is_certain(self):
        kg, prs, _ = _chained_program()
        b_fact = Triple(2, 0, 1)
        assert problog_entailment(prs, kg, b_fact) == pytest.approx(1.0)
        assert problog_entailment([], kg, b_fact) == 1.0
        assert problog_entailment([], kg, Triple(0, 0, 1)) == 0.0

    def test_activation_uses_bit_j_for_rule_j(self):
        kg, prs, fact = _chained_program()
        certain_first = [ProbRule(prs[0].rule, 1.0), ProbRule(prs[1].rule, 0.0)]
        assert problog_entailment(certain_first, kg, fact) == 0.0
        both_certain = [ProbRule(prs[0].rule, 1.0), ProbRule(prs[1].rule, 1.0)]
        assert problog_entailment(both_certain, kg, fact) == 1.0

    def test_matches_subset_by_subset_closure(self):
        """The lattice walk equals the naive per-subset evaluation."""
        rng = np.random.default_rng(42)
        for _ in range(25):
            kg, prs, fact = _random_program(rng)
            got = problog_entailment(prs, kg, fact)
            assert got == pytest.approx(brute_entailment(kg, prs, fact), abs=1e-12)

    def test_entailment_never_below_onestep(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            kg, prs, fact = _random_program(rng)
            one = problog_onestep(prs, kg, fact)
            full = problog_entailment(prs, kg, fact)
            assert full >= one - 1e-12

    def test_rule_count_limits(self):
        kg, prs, fact = _parallel_program()
        many = prs * 7
        with pytest.raises(TooManyRules):
            problog_onestep(many, kg, fact)
        with pytest.raises(TooManyRules):
            problog_entailment(many[:17], kg, fact)

    def test_rule_probability_validation(self):
        kg, prs, _ = _parallel_program()
        with pytest.raises(ValueError):
            ProbRule(prs[0].rule, 1.5)
