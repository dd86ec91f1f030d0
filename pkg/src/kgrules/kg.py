"""Interned triple store with per-relation adjacency indices.

Triple files are UTF-8 text, one fact per line as
``subject<TAB>relation<TAB>object``. Labels may contain any non-TAB
characters; lines are deduplicated; blank lines are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

__all__ = [
    "MalformedLine",
    "SymbolTable",
    "SymbolTables",
    "Triple",
    "KnowledgeGraph",
    "load_triples",
    "parse_triples",
]


class MalformedLine(ValueError):
    """A triple line without exactly two TAB separators."""

    def __init__(self, line_no: int, text: str):
        super().__init__(f"line {line_no}: expected subject<TAB>relation<TAB>object, got {text!r}")
        self.line_no = line_no
        self.text = text


class Triple(NamedTuple):
    relation: int
    subject: int
    object: int


class SymbolTable:
    """Bijection between string labels and dense non-negative ids."""

    __slots__ = ("_ids", "_labels")

    def __init__(self, labels: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._labels: list[str] = []
        for label in labels:
            self.intern(label)

    def intern(self, label: str) -> int:
        """Return the id for label, assigning the next free id if new."""
        got = self._ids.get(label)
        if got is None:
            got = len(self._labels)
            self._ids[label] = got
            self._labels.append(label)
        return got

    def id_of(self, label: str) -> int:
        return self._ids[label]

    def get(self, label: str) -> int | None:
        return self._ids.get(label)

    def label_of(self, ident: int) -> str:
        return self._labels[ident]

    def __contains__(self, label: str) -> bool:
        return label in self._ids

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self._labels)


@dataclass
class SymbolTables:
    """The entity and relation tables a dataset's files share."""

    entities: SymbolTable = field(default_factory=SymbolTable)
    relations: SymbolTable = field(default_factory=SymbolTable)


_EMPTY_VALUES = np.empty(0, dtype=np.int64)


class KnowledgeGraph:
    """Immutable set of triples plus adjacency indices for fast joins.

    For every relation the graph keeps both orientations in CSR form
    (objects grouped by subject and subjects grouped by object, each
    group ascending) and the sorted packed pair keys used for existence
    probes. Entity ids at or beyond ``n_entities`` simply have no edges.
    """

    __slots__ = (
        "n_entities",
        "n_relations",
        "triples",
        "_csr_obj",
        "_csr_sub",
        "_pairs",
        "_pair_keys",
        "_n_pairs",
        "_avg_out",
        "_avg_in",
    )

    def __init__(
        self,
        triples: Iterable[Triple],
        n_entities: int | None = None,
        n_relations: int | None = None,
    ):
        tset = frozenset(Triple(*t) for t in triples)
        max_e = -1
        max_r = -1
        for r, s, o in tset:
            if r < 0 or s < 0 or o < 0:
                raise ValueError(f"negative id in triple {(r, s, o)}")
            max_e = max(max_e, s, o)
            max_r = max(max_r, r)
        ne = max_e + 1 if n_entities is None else n_entities
        nr = max_r + 1 if n_relations is None else n_relations
        if ne <= max_e or nr <= max_r:
            raise ValueError("declared table sizes smaller than ids present")
        self.triples = tset
        self.n_entities = ne
        self.n_relations = nr
        self._build_indices()

    def _build_indices(self):
        ne = self.n_entities
        nr = self.n_relations
        arr = np.fromiter(
            (x for t in sorted(self.triples) for x in t),
            dtype=np.int64,
            count=3 * len(self.triples),
        ).reshape(-1, 3)
        self._csr_obj = []
        self._csr_sub = []
        self._pairs = []
        self._pair_keys = []
        self._n_pairs = np.zeros(nr, dtype=np.int64)
        self._avg_out = np.zeros(nr, dtype=np.float64)
        self._avg_in = np.zeros(nr, dtype=np.float64)
        for r in range(nr):
            rows = arr[arr[:, 0] == r]
            subs = rows[:, 1]
            objs = rows[:, 2]
            # arr is sorted by (relation, subject, object) already
            off_obj = np.zeros(ne + 1, dtype=np.int64)
            np.cumsum(np.bincount(subs, minlength=ne), out=off_obj[1:])
            order = np.lexsort((subs, objs))
            subs_by_o = subs[order]
            objs_by_o = objs[order]
            off_sub = np.zeros(ne + 1, dtype=np.int64)
            np.cumsum(np.bincount(objs_by_o, minlength=ne), out=off_sub[1:])
            keys = subs * ne + objs
            for a in (objs, subs_by_o, keys, subs):
                a.setflags(write=False)
            self._csr_obj.append((off_obj, objs))
            self._csr_sub.append((off_sub, subs_by_o))
            self._pairs.append((subs, objs))
            self._pair_keys.append(keys)
            m = len(rows)
            self._n_pairs[r] = m
            if m:
                self._avg_out[r] = m / len(np.unique(subs))
                self._avg_in[r] = m / len(np.unique(objs))

    # -- queries ----------------------------------------------------------

    def contains(self, triple: Triple) -> bool:
        return triple in self.triples

    def __contains__(self, triple: Triple) -> bool:
        return triple in self.triples

    def __len__(self) -> int:
        return len(self.triples)

    def objects_of(self, relation: int, subject: int) -> np.ndarray:
        """Objects o with (relation, subject, o) present, ascending."""
        if not (0 <= relation < self.n_relations and 0 <= subject < self.n_entities):
            return _EMPTY_VALUES
        offsets, values = self._csr_obj[relation]
        return values[offsets[subject] : offsets[subject + 1]]

    def subjects_of(self, relation: int, obj: int) -> np.ndarray:
        """Subjects s with (relation, s, object) present, ascending."""
        if not (0 <= relation < self.n_relations and 0 <= obj < self.n_entities):
            return _EMPTY_VALUES
        offsets, values = self._csr_sub[relation]
        return values[offsets[obj] : offsets[obj + 1]]

    # -- kernel-facing accessors ------------------------------------------

    def csr_objects(self, relation: int):
        if 0 <= relation < self.n_relations:
            return self._csr_obj[relation]
        return np.zeros(self.n_entities + 1, dtype=np.int64), _EMPTY_VALUES

    def csr_subjects(self, relation: int):
        if 0 <= relation < self.n_relations:
            return self._csr_sub[relation]
        return np.zeros(self.n_entities + 1, dtype=np.int64), _EMPTY_VALUES

    def relation_pairs(self, relation: int):
        """(subjects, objects) arrays of one relation, sorted by (s, o)."""
        if 0 <= relation < self.n_relations:
            return self._pairs[relation]
        return _EMPTY_VALUES, _EMPTY_VALUES

    def pair_keys(self, relation: int) -> np.ndarray:
        if 0 <= relation < self.n_relations:
            return self._pair_keys[relation]
        return _EMPTY_VALUES

    def pair_count(self, relation: int) -> int:
        if 0 <= relation < self.n_relations:
            return int(self._n_pairs[relation])
        return 0

    def avg_fanout_out(self, relation: int) -> float:
        if 0 <= relation < self.n_relations:
            return float(self._avg_out[relation])
        return 0.0

    def avg_fanout_in(self, relation: int) -> float:
        if 0 <= relation < self.n_relations:
            return float(self._avg_in[relation])
        return 0.0

    # -- construction ------------------------------------------------------

    def with_added(self, new_triples: Iterable[Triple]) -> "KnowledgeGraph":
        """A new graph holding this graph's triples plus new_triples."""
        new = set(Triple(*t) for t in new_triples)
        if not new - self.triples:
            return self
        merged = self.triples | new
        ne = self.n_entities
        nr = self.n_relations
        for r, s, o in new:
            ne = max(ne, s + 1, o + 1)
            nr = max(nr, r + 1)
        return KnowledgeGraph(merged, n_entities=ne, n_relations=nr)


def parse_triples(lines: Iterable[str], symbols: SymbolTables) -> list[Triple]:
    """Intern labels line by line, first appearance first."""
    out = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(line_no, line)
        s, r, o = parts
        out.append(
            Triple(
                symbols.relations.intern(r),
                symbols.entities.intern(s),
                symbols.entities.intern(o),
            )
        )
    return out


def load_triples(source, symbols: SymbolTables) -> KnowledgeGraph:
    """Read a triple file (path or line iterable) into a graph.

    The symbol tables are extended in place so several files (train,
    validation, test) can share one id space.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            triples = parse_triples(fh, symbols)
    else:
        triples = parse_triples(source, symbols)
    return KnowledgeGraph(
        triples,
        n_entities=len(symbols.entities),
        n_relations=len(symbols.relations),
    )
