"""In-memory knowledge graph with SPO / POS / OSP triple indexes.

Facts are stored three times, once per index ordering, so that any triple
pattern with at least one concrete position can be answered by a dictionary
lookup.  Index iteration order is lexicographic on the serialized terms,
which keeps every query result reproducible.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional, Union

IRI = "iri"
LITERAL = "literal"
VARIABLE = "variable"

XSD = "http://www.w3.org/2001/XMLSchema#"
RDFS_LABEL = "http://www.w3.org/2000/01/rdf-schema#label"

_WS = re.compile(r"\s")


class GraphParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ContractViolation(ValueError):
    """Raised when a caller breaks a documented precondition."""


def _escape(value: str) -> str:
    return (
        value.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\r", "\\r")
        .replace("\t", "\\t")
    )


@dataclass(frozen=True, order=False)
class Term:
    kind: str
    value: str
    datatype: Optional[str] = None
    language: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (IRI, LITERAL, VARIABLE):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind == IRI and (not self.value or _WS.search(self.value)):
            raise ValueError(f"invalid IRI {self.value!r}")
        if self.kind == VARIABLE and not self.value:
            raise ValueError("empty variable name")
        if self.kind != LITERAL and (self.datatype or self.language):
            raise ValueError("only literals carry a datatype or language")

    @classmethod
    def iri(cls, value: str) -> "Term":
        return cls(IRI, value)

    @classmethod
    def literal(cls, value: str, datatype: Optional[str] = None, language: Optional[str] = None) -> "Term":
        return cls(LITERAL, value, datatype or None, language.lower() if language else None)

    @classmethod
    def var(cls, name: str) -> "Term":
        return cls(VARIABLE, name)

    @property
    def is_iri(self) -> bool:
        return self.kind == IRI

    @property
    def is_literal(self) -> bool:
        return self.kind == LITERAL

    @property
    def is_variable(self) -> bool:
        return self.kind == VARIABLE

    def n3(self) -> str:
        if self.kind == IRI:
            return f"<{self.value}>"
        if self.kind == VARIABLE:
            return f"?{self.value}"
        text = f'"{_escape(self.value)}"'
        if self.language:
            return f"{text}@{self.language}"
        if self.datatype:
            return f"{text}^^<{self.datatype}>"
        return text

    def __str__(self) -> str:
        return self.n3()


def term_key(term: Term) -> str:
    return term.n3()


@dataclass(frozen=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if not self.subject.is_iri:
            raise ContractViolation(f"subject must be an IRI, got {self.subject}")
        if not self.predicate.is_iri:
            raise ContractViolation(f"predicate must be an IRI, got {self.predicate}")
        if self.object.is_variable:
            raise ContractViolation(f"facts cannot contain variables: {self.object}")

    def __iter__(self) -> Iterator[Term]:
        return iter((self.subject, self.predicate, self.object))

    def n3(self) -> str:
        return f"{self.subject.n3()} {self.predicate.n3()} {self.object.n3()} ."


@dataclass(frozen=True)
class TriplePattern:
    """A triple whose positions may be variables."""

    subject: Term
    predicate: Term
    object: Term

    def __iter__(self) -> Iterator[Term]:
        return iter((self.subject, self.predicate, self.object))

    def variables(self) -> list[str]:
        return [t.value for t in self if t.is_variable]


Binding = dict[str, Term]


class KnowledgeGraph:
    """Set of facts indexed three ways.

    Graphs are built single-threaded and then only read; concurrent readers
    are safe once construction is finished.
    """

    def __init__(self, facts: Iterable[Triple] = ()):
        self._spo: dict[Term, dict[Term, set[Term]]] = defaultdict(lambda: defaultdict(set))
        self._pos: dict[Term, dict[Term, set[Term]]] = defaultdict(lambda: defaultdict(set))
        self._osp: dict[Term, dict[Term, set[Term]]] = defaultdict(lambda: defaultdict(set))
        self._size = 0
        self.labels: dict[Term, str] = {}
        for fact in facts:
            self.add(fact)

    def add(self, triple: Triple) -> bool:
        """Insert a fact; returns False if it was already present."""
        if not isinstance(triple, Triple):
            raise ContractViolation(f"expected a Triple, got {type(triple).__name__}")
        s, p, o = triple
        if o in self._spo.get(s, {}).get(p, ()):
            return False
        self._spo[s][p].add(o)
        self._pos[p][o].add(s)
        self._osp[o][s].add(p)
        self._size += 1
        if p.value == RDFS_LABEL and o.is_literal and s not in self.labels:
            self.labels[s] = o.value
        return True

    def __len__(self) -> int:
        return self._size

    def __contains__(self, triple: Triple) -> bool:
        s, p, o = triple
        return o in self._spo.get(s, {}).get(p, ())

    def __iter__(self) -> Iterator[Triple]:
        for s in _sorted(self._spo):
            by_p = self._spo[s]
            for p in _sorted(by_p):
                for o in _sorted(by_p[p]):
                    yield Triple(s, p, o)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.facts() == other.facts()

    def facts(self) -> frozenset[Triple]:
        return frozenset(self)

    def index_sizes(self) -> tuple[int, int, int]:
        def count(index):
            return sum(len(leaf) for inner in index.values() for leaf in inner.values())

        return count(self._spo), count(self._pos), count(self._osp)

    def terms(self) -> set[Term]:
        out: set[Term] = set()
        for triple in self:
            out.update(triple)
        return out

    def label(self, term: Term) -> str:
        return self.labels.get(term, term.value)

    def match_pattern(self, pattern: TriplePattern) -> list[Binding]:
        """Every binding of the pattern's variables that yields a stored fact."""
        cs, cp, co = (None if t.is_variable else t for t in pattern)

        if cs is not None and cp is not None and co is not None:
            found = co in self._spo.get(cs, {}).get(cp, ())
            rows: Iterable[tuple[Term, Term, Term]] = [(cs, cp, co)] if found else []
        elif cs is not None and cp is not None:
            rows = ((cs, cp, obj) for obj in _sorted(self._spo.get(cs, {}).get(cp, ())))
        elif cs is not None and co is not None:
            rows = ((cs, pred, co) for pred in _sorted(self._osp.get(co, {}).get(cs, ())))
        elif cp is not None and co is not None:
            rows = ((subj, cp, co) for subj in _sorted(self._pos.get(cp, {}).get(co, ())))
        elif cs is not None:
            rows = _walk(self._spo.get(cs, {}), lambda a, b: (cs, a, b))
        elif cp is not None:
            rows = _walk(self._pos.get(cp, {}), lambda a, b: (b, cp, a))
        elif co is not None:
            rows = _walk(self._osp.get(co, {}), lambda a, b: (a, b, co))
        else:
            rows = (tuple(t) for t in self)

        out: list[Binding] = []
        for row in rows:
            binding: Binding = {}
            for slot, value in zip(pattern, row):
                if not slot.is_variable:
                    continue
                bound = binding.get(slot.value)
                if bound is not None and bound != value:
                    break
                binding[slot.value] = value
            else:
                out.append(binding)
        return out


def _sorted(terms: Iterable[Term]) -> list[Term]:
    return sorted(terms, key=term_key)


def _walk(level: dict[Term, set[Term]], build) -> Iterator[tuple[Term, Term, Term]]:
    for a in _sorted(level):
        for b in _sorted(level[a]):
            yield build(a, b)


def insert_fact(graph: KnowledgeGraph, triple: Triple) -> KnowledgeGraph:
    graph.add(triple)
    return graph


def match_pattern(graph: KnowledgeGraph, pattern: TriplePattern) -> list[Binding]:
    return graph.match_pattern(pattern)


# ---------------------------------------------------------------------------
# Line-oriented triple format
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    \s*(?:
        <(?P<iri>[^<>"{}|^`\\\s]*)>
      | "(?P<lit>(?:[^"\\\n]|\\.)*)"
        (?:\^\^<(?P<dt>[^<>\s]*)>|@(?P<lang>[A-Za-z]+(?:-[A-Za-z0-9]+)*))?
      | (?P<dot>\.)
    )
    """,
    re.VERBOSE,
)

_UNESCAPE = re.compile(r"\\(u[0-9A-Fa-f]{4}|U[0-9A-Fa-f]{8}|.)")
_SIMPLE_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\", "'": "'", "b": "\b", "f": "\f"}


def unescape(text: str) -> str:
    def repl(m: re.Match) -> str:
        code = m.group(1)
        if code[0] in "uU":
            return chr(int(code[1:], 16))
        if code in _SIMPLE_ESCAPES:
            return _SIMPLE_ESCAPES[code]
        raise ValueError(f"bad escape \\{code}")

    return _UNESCAPE.sub(repl, text)


def parse_line(line: str, line_no: int = 1) -> Optional[Triple]:
    """Parse one `<s> <p> <o> .` line; blank and `#` lines give None."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    terms: list[Term] = []
    pos = 0
    saw_dot = False
    while pos < len(line):
        if not line[pos:].strip():
            break
        m = _TOKEN.match(line, pos)
        if m is None:
            raise GraphParseError(line_no, f"unexpected text at column {pos + 1}: {line[pos:].strip()[:30]!r}")
        pos = m.end()
        if saw_dot:
            raise GraphParseError(line_no, "content after terminating '.'")
        if m.group("dot"):
            saw_dot = True
        elif m.group("iri") is not None:
            if not m.group("iri"):
                raise GraphParseError(line_no, "empty IRI")
            terms.append(Term.iri(m.group("iri")))
        else:
            try:
                value = unescape(m.group("lit"))
            except ValueError as exc:
                raise GraphParseError(line_no, str(exc)) from None
            terms.append(Term.literal(value, m.group("dt"), m.group("lang")))
    if not saw_dot:
        raise GraphParseError(line_no, "missing terminating '.'")
    if len(terms) != 3:
        raise GraphParseError(line_no, f"expected 3 terms, found {len(terms)}")
    s, p, o = terms
    if not s.is_iri or not p.is_iri:
        raise GraphParseError(line_no, "literals are only allowed in object position")
    return Triple(s, p, o)


def load_graph(source: Union[bytes, str, IO[bytes], IO[str]]) -> KnowledgeGraph:
    """Read the one-triple-per-line format from bytes, text, or a file object."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    graph = KnowledgeGraph()
    for line_no, line in enumerate(source.splitlines(), start=1):
        triple = parse_line(line, line_no)
        if triple is not None:
            graph.add(triple)
    return graph


def load_graph_file(path) -> KnowledgeGraph:
    with open(path, "rb") as fh:
        return load_graph(fh)


def dump_graph(graph: KnowledgeGraph) -> str:
    return "".join(t.n3() + "\n" for t in graph)
