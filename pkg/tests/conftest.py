"""Shared fixtures: the three-entity worked example and its rules."""

import pytest

from kgrules.kg import SymbolTables, Triple, load_triples
from kgrules.rules import load_ruleset

EXAMPLE_TRIPLES = [
    "e_g\tcooperatesWith\te_u",
    "e_d\tinternAt\te_g",
    "e_d\tstudentAt\te_u",
]

EXAMPLE_RULES = [
    "0.64\t64\t100\twf(X,Y) <= internAt(X,Y)",
    "0.44\t44\t100\twf(X,Y) <= studentAt(X,A), locIn(Y,B), locIn(A,B)",
    "0.41\t41\t100\twf(X,Y) <= studentAt(X,A), cooperatesWith(A,Y)",
]


@pytest.fixture
def world():
    """(symbols, kg, ruleset) for the worked example as written."""
    symbols = SymbolTables()
    kg = load_triples(EXAMPLE_TRIPLES, symbols)
    ruleset = load_ruleset(EXAMPLE_RULES, "canonical", symbols)
    return symbols, kg, ruleset


@pytest.fixture
def oracle_world(world):
    """Same, with the reversed cooperation edge so the third rule fires."""
    symbols, kg, ruleset = world
    cw = symbols.relations.id_of("cooperatesWith")
    e_u = symbols.entities.id_of("e_u")
    e_g = symbols.entities.id_of("e_g")
    kg = kg.with_added([Triple(cw, e_u, e_g)])
    return symbols, kg, ruleset
