"""Horn rules over binary atoms: parsing, normalization, serialization.

Canonical rule lines are
``confidence<TAB>correct<TAB>predicted<TAB>head <= body1, body2, ...``
with atoms written ``relation(term,term)``. A term is a variable iff it
is a single uppercase ASCII letter; anything else is an entity constant
(so ``speaks(X,English)`` binds a constant object). Inside rule files,
labels therefore must not be single uppercase letters nor contain
``(`` ``)`` ``,`` or whitespace. ``#`` lines and blank lines are
skipped.

Two miner dialects are also read: ``anyburl`` lines are
``predicted<TAB>correct<TAB>confidence<TAB>rule`` with the same rule
grammar, and ``amie`` lines are tab-separated columns holding a
space-tokenized rule (``?a r1 ?b  ?b r2 ?c => ?a r3 ?c``) plus a
PCA-confidence column; the column positions vary across miner versions
and are configurable via ParserConfig.

When a line carries prediction counts, the counts are authoritative:
confidence is recomputed as correct/predicted (miners round the printed
value). Variables are normalized on parse: head subject X, head object
Y, remaining body variables A, B, ... in first-occurrence order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Union

from .kg import SymbolTables

__all__ = [
    "ParseError",
    "UnknownDialect",
    "ParserConfig",
    "Variable",
    "Constant",
    "Term",
    "Atom",
    "Rule",
    "RuleSet",
    "parse_rule",
    "load_ruleset",
    "serialize_rule",
    "DIALECTS",
]

DIALECTS = ("canonical", "anyburl", "amie")

_BODY_VAR_NAMES = "ABCDEFGHIJKLMNOPQRSTUVWZ"


class ParseError(ValueError):
    """A rule line that does not fit the grammar."""

    def __init__(self, reason: str, position: int = 0, line_no: int | None = None):
        self.reason = reason
        self.position = position
        self.line_no = line_no
        where = f"line {line_no}, " if line_no is not None else ""
        super().__init__(f"{where}column {position}: {reason}")

    def at_line(self, line_no: int) -> "ParseError":
        return ParseError(self.reason, self.position, line_no)


class UnknownDialect(ValueError):
    def __init__(self, dialect: str):
        super().__init__(f"unknown rule dialect {dialect!r}; expected one of {DIALECTS}")


@dataclass(frozen=True)
class ParserConfig:
    max_body_atoms: int = 10
    amie_rule_column: int = 0
    amie_confidence_column: int = 3


DEFAULT_PARSER_CONFIG = ParserConfig()


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Constant:
    entity: int


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class Atom:
    relation: int
    first: Term
    second: Term

    def variables(self) -> tuple[str, ...]:
        out = []
        for t in (self.first, self.second):
            if isinstance(t, Variable):
                out.append(t.name)
        return tuple(out)


@dataclass(frozen=True)
class Rule:
    """A normalized rule with its prediction statistics.

    ``predicted`` counts the distinct facts the rule generates on the
    mining graph and ``correct`` how many of those are present there;
    when predicted > 0, confidence equals correct/predicted. Rules read
    from count-free sources carry predicted = correct = 0 and the stated
    confidence.
    """

    head: Atom
    body: tuple[Atom, ...]
    predicted: int = 0
    correct: int = 0
    confidence: float = 0.0

    def __post_init__(self):
        if not self.body:
            raise ValueError("rule body must contain at least one atom")
        if not (0 <= self.correct <= self.predicted):
            raise ValueError(f"bad counts: correct={self.correct} predicted={self.predicted}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def variables(self) -> tuple[str, ...]:
        """Distinct variable names, head first, in first-occurrence order."""
        seen: dict[str, None] = {}
        for atom in (self.head, *self.body):
            for name in atom.variables():
                seen.setdefault(name)
        return tuple(seen)

    def structure(self) -> tuple:
        """Identity for deduplication: head and body, statistics ignored."""
        return (self.head, self.body)


# ---------------------------------------------------------------------------
# atom/term grammar
# ---------------------------------------------------------------------------


def _is_variable_token(token: str) -> bool:
    return len(token) == 1 and "A" <= token <= "Z"


def _term(token: str, symbols: SymbolTables) -> Term:
    if _is_variable_token(token):
        return Variable(token)
    return Constant(symbols.entities.intern(token))


def _parse_atom(text: str, pos: int, symbols: SymbolTables) -> tuple[Atom, int]:
    n = len(text)
    while pos < n and text[pos] == " ":
        pos += 1
    start = pos
    while pos < n and text[pos] not in "(),":
        pos += 1
    rel = text[start:pos].strip()
    if not rel or pos >= n or text[pos] != "(":
        raise ParseError("expected relation(", start)
    pos += 1
    comma = text.find(",", pos)
    if comma < 0:
        raise ParseError("expected ',' inside atom", pos)
    first = text[pos:comma].strip()
    close = text.find(")", comma + 1)
    if close < 0:
        raise ParseError("expected ')' closing atom", comma)
    second = text[comma + 1 : close].strip()
    if not first or not second:
        raise ParseError("empty term in atom", pos)
    atom = Atom(symbols.relations.intern(rel), _term(first, symbols), _term(second, symbols))
    return atom, close + 1


def _parse_rule_text(text: str, symbols: SymbolTables) -> tuple[Atom, list[Atom]]:
    sep = text.find("<=")
    if sep < 0:
        raise ParseError("expected '<=' between head and body", 0)
    head, after_head = _parse_atom(text[:sep], 0, symbols)
    if text[after_head:sep].strip():
        raise ParseError("unexpected text after head atom", after_head)
    body = []
    pos = sep + 2
    n = len(text)
    while True:
        atom, pos = _parse_atom(text, pos, symbols)
        body.append(atom)
        while pos < n and text[pos] == " ":
            pos += 1
        if pos >= n:
            break
        if text[pos] != ",":
            raise ParseError("expected ',' between body atoms", pos)
        pos += 1
    return head, body


# ---------------------------------------------------------------------------
# normalization and validation
# ---------------------------------------------------------------------------


def _normalize(head: Atom, body: list[Atom]) -> tuple[Atom, tuple[Atom, ...]]:
    mapping: dict[str, str] = {}
    if isinstance(head.first, Variable):
        mapping[head.first.name] = "X"
    if isinstance(head.second, Variable) and head.second.name not in mapping:
        mapping[head.second.name] = "Y"
    fresh = iter(_BODY_VAR_NAMES)
    for atom in body:
        for name in atom.variables():
            if name not in mapping:
                try:
                    mapping[name] = next(fresh)
                except StopIteration:
                    raise ParseError(f"too many distinct body variables (> {len(_BODY_VAR_NAMES)})")

    def rename(term: Term) -> Term:
        if isinstance(term, Variable):
            return Variable(mapping[term.name])
        return term

    def rebuild(atom: Atom) -> Atom:
        return Atom(atom.relation, rename(atom.first), rename(atom.second))

    return rebuild(head), tuple(rebuild(a) for a in body)


def _validate(head: Atom, body: tuple[Atom, ...], config: ParserConfig):
    if len(body) > config.max_body_atoms:
        raise ParseError(f"body has {len(body)} atoms, limit is {config.max_body_atoms}")
    head_vars = set(head.variables())
    if not head_vars:
        raise ParseError("head atom has no variables")
    body_vars = set()
    for atom in body:
        body_vars.update(atom.variables())
    missing = head_vars - body_vars
    if missing:
        raise ParseError(f"head variable {sorted(missing)[0]} does not occur in the body")
    # every body atom must be reachable from the head variables via shared variables
    reached_vars = set(head_vars)
    pending = list(body)
    while True:
        progressed = False
        still = []
        for atom in pending:
            avars = set(atom.variables())
            if avars & reached_vars:
                reached_vars |= avars
                progressed = True
            else:
                still.append(atom)
        pending = still
        if not pending or not progressed:
            break
    if pending:
        raise ParseError("body atom not connected to the head variables")


def _stats(conf_text: str, correct_text: str, predicted_text: str) -> tuple[int, int, float]:
    try:
        conf = float(conf_text)
        correct = int(correct_text)
        predicted = int(predicted_text)
    except ValueError as exc:
        raise ParseError(f"bad statistics field: {exc}")
    if predicted < 0 or correct < 0 or correct > predicted:
        raise ParseError(f"bad counts: correct={correct} predicted={predicted}")
    if predicted > 0:
        conf = correct / predicted
    elif not 0.0 <= conf <= 1.0:
        raise ParseError(f"confidence {conf} outside [0, 1]")
    return predicted, correct, conf


# ---------------------------------------------------------------------------
# dialects
# ---------------------------------------------------------------------------


def _parse_canonical(line: str, symbols: SymbolTables, config: ParserConfig) -> Rule:
    parts = line.split("\t")
    if len(parts) != 4:
        raise ParseError(f"expected 4 TAB-separated fields, got {len(parts)}")
    predicted, correct, conf = _stats(parts[0], parts[1], parts[2])
    head, body = _parse_rule_text(parts[3], symbols)
    return _finish(head, body, predicted, correct, conf, config)


def _parse_anyburl(line: str, symbols: SymbolTables, config: ParserConfig) -> Rule:
    parts = line.split("\t")
    if len(parts) != 4:
        raise ParseError(f"expected 4 TAB-separated fields, got {len(parts)}")
    predicted, correct, conf = _stats(parts[2], parts[1], parts[0])
    head, body = _parse_rule_text(parts[3], symbols)
    return _finish(head, body, predicted, correct, conf, config)


def _amie_term(token: str, symbols: SymbolTables) -> Term:
    if token.startswith("?") and len(token) > 1:
        return Variable(token[1:])
    return Constant(symbols.entities.intern(token))


def _parse_amie(line: str, symbols: SymbolTables, config: ParserConfig) -> Rule:
    parts = line.split("\t")
    need = max(config.amie_rule_column, config.amie_confidence_column) + 1
    if len(parts) < need:
        raise ParseError(f"expected at least {need} TAB-separated columns, got {len(parts)}")
    try:
        conf = float(parts[config.amie_confidence_column])
    except ValueError as exc:
        raise ParseError(f"bad confidence column: {exc}")
    if not 0.0 <= conf <= 1.0:
        raise ParseError(f"confidence {conf} outside [0, 1]")
    tokens = parts[config.amie_rule_column].split()
    if "=>" not in tokens:
        raise ParseError("expected '=>' in rule column")
    cut = tokens.index("=>")
    body_tokens = tokens[:cut]
    head_tokens = tokens[cut + 1 :]
    if len(head_tokens) != 3:
        raise ParseError("head must be exactly one 'subject relation object' group")
    if not body_tokens or len(body_tokens) % 3 != 0:
        raise ParseError("body must be 'subject relation object' groups")

    def group(toks) -> Atom:
        s, r, o = toks
        return Atom(
            symbols.relations.intern(r),
            _amie_term(s, symbols),
            _amie_term(o, symbols),
        )

    head = group(head_tokens)
    body = [group(body_tokens[i : i + 3]) for i in range(0, len(body_tokens), 3)]
    return _finish(head, body, 0, 0, conf, config)


def _finish(head, body, predicted, correct, conf, config) -> Rule:
    head, body = _normalize(head, body)
    _validate(head, body, config)
    return Rule(head=head, body=body, predicted=predicted, correct=correct, confidence=conf)


_PARSERS = {
    "canonical": _parse_canonical,
    "anyburl": _parse_anyburl,
    "amie": _parse_amie,
}


def parse_rule(
    line: str,
    dialect: str,
    symbols: SymbolTables,
    config: ParserConfig = DEFAULT_PARSER_CONFIG,
) -> Rule:
    parser = _PARSERS.get(dialect)
    if parser is None:
        raise UnknownDialect(dialect)
    return parser(line.rstrip("\r\n"), symbols, config)


# ---------------------------------------------------------------------------
# rule sets
# ---------------------------------------------------------------------------


@dataclass
class RuleSet:
    """Rules plus a per-head-relation index in scoring order.

    Buckets list rule indices sorted by confidence descending, original
    position ascending, so iteration order is deterministic under ties.
    """

    rules: tuple[Rule, ...]
    by_head_relation: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @classmethod
    def from_rules(cls, rules: Iterable[Rule]) -> "RuleSet":
        unique = []
        seen = set()
        for rule in rules:
            key = rule.structure()
            if key in seen:
                continue
            seen.add(key)
            unique.append(rule)
        buckets: dict[int, list[int]] = {}
        for idx, rule in enumerate(unique):
            buckets.setdefault(rule.head.relation, []).append(idx)
        ordered = {
            rel: tuple(sorted(idxs, key=lambda i: (-unique[i].confidence, i)))
            for rel, idxs in buckets.items()
        }
        return cls(rules=tuple(unique), by_head_relation=ordered)

    def rules_for(self, relation: int) -> list[Rule]:
        """Rules whose head relation matches, confidence descending."""
        return [self.rules[i] for i in self.by_head_relation.get(relation, ())]

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)


def load_ruleset(
    source,
    dialect: str,
    symbols: SymbolTables,
    config: ParserConfig = DEFAULT_PARSER_CONFIG,
) -> RuleSet:
    """Read a rule file (path or line iterable) into a RuleSet.

    Duplicate rules (same head and body after normalization) keep the
    first occurrence. ParseError is re-raised with the line number.
    """
    if dialect not in _PARSERS:
        raise UnknownDialect(dialect)
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            return load_ruleset(list(fh), dialect, symbols, config)
    rules = []
    for line_no, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line or line.lstrip().startswith("#"):
            continue
        try:
            rules.append(parse_rule(line, dialect, symbols, config))
        except ParseError as exc:
            raise exc.at_line(line_no) from None
    return RuleSet.from_rules(rules)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _term_text(term: Term, symbols: SymbolTables) -> str:
    if isinstance(term, Variable):
        return term.name
    return symbols.entities.label_of(term.entity)


def _atom_text(atom: Atom, symbols: SymbolTables) -> str:
    rel = symbols.relations.label_of(atom.relation)
    return f"{rel}({_term_text(atom.first, symbols)},{_term_text(atom.second, symbols)})"


def serialize_rule(rule: Rule, symbols: SymbolTables) -> str:
    """Canonical line for a rule; parse_rule(serialize_rule(r)) == r."""
    if rule.predicted > 0:
        conf = f"{rule.confidence:.6f}"
    else:
        conf = repr(rule.confidence)
    head = _atom_text(rule.head, symbols)
    body = ", ".join(_atom_text(a, symbols) for a in rule.body)
    return f"{conf}\t{rule.correct}\t{rule.predicted}\t{head} <= {body}"


def with_stats(rule: Rule, predicted: int, correct: int) -> Rule:
    """The same rule carrying freshly computed prediction counts."""
    if predicted <= 0:
        raise ValueError("predicted must be positive; use the original rule otherwise")
    return replace(rule, predicted=predicted, correct=correct, confidence=correct / predicted)
