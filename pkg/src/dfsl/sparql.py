"""Parser and evaluator for the small SPARQL fragment KGQA benchmarks use.

Supported: PREFIX, SELECT [DISTINCT] with plain variables or a single
``(COUNT([DISTINCT] ?v) AS ?alias)``, ASK, basic graph patterns with ``;``
and ``,`` lists, ``a``, sequence property paths (``p1/p2``), equality
FILTERs and LIMIT.  Everything else raises :class:`UnsupportedFeature`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Mapping, Optional

from .kg import XSD, Binding, ContractViolation, KnowledgeGraph, Term, TriplePattern, term_key, unescape

RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"

DEFAULT_PREFIXES: dict[str, str] = {
    "wd": "http://www.wikidata.org/entity/",
    "wdt": "http://www.wikidata.org/prop/direct/",
    "dbr": "http://dbpedia.org/resource/",
    "dbo": "http://dbpedia.org/ontology/",
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "xsd": XSD,
}

NUMERIC_DATATYPES = frozenset(
    XSD + name
    for name in (
        "integer", "decimal", "double", "float", "int", "long", "short", "byte",
        "nonNegativeInteger", "nonPositiveInteger", "positiveInteger", "negativeInteger",
        "unsignedLong", "unsignedInt", "unsignedShort", "unsignedByte",
    )
)

UNSUPPORTED_KEYWORDS = frozenset(
    {
        "OPTIONAL", "UNION", "ORDER", "GROUP", "HAVING", "OFFSET", "MINUS", "BIND", "VALUES",
        "SERVICE", "GRAPH", "CONSTRUCT", "DESCRIBE", "FROM", "NAMED", "BASE", "EXISTS", "NOT",
        "INSERT", "DELETE", "LOAD", "CLEAR", "DROP", "REDUCED",
    }
)


class SparqlError(ValueError):
    pass


class QuerySyntaxError(SparqlError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedFeature(SparqlError):
    def __init__(self, construct: str, offset: Optional[int] = None):
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"unsupported SPARQL construct: {construct}{where}")
        self.construct = construct
        self.offset = offset


# ---------------------------------------------------------------------------
# AST and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Filter:
    variable: Term
    operand: Term
    comparator: str = "="


@dataclass(frozen=True)
class Aggregate:
    variable: Term
    alias: Term
    distinct: bool = False


@dataclass(frozen=True)
class QueryAst:
    form: str  # "select" | "ask"
    patterns: tuple[TriplePattern, ...]
    projected: tuple[Term, ...] = ()
    distinct: bool = False
    aggregate: Optional[Aggregate] = None
    filters: tuple[Filter, ...] = ()
    limit: Optional[int] = None

    def variables(self) -> list[str]:
        seen: dict[str, None] = {}
        for pattern in self.patterns:
            for name in pattern.variables():
                seen.setdefault(name)
        return list(seen)


@dataclass(frozen=True)
class AnswerSet:
    """Result of executing a query: a set of rows or a boolean.

    ``rows`` hold terms aligned with ``variables``; an unbound value is None.
    """

    kind: str  # "bindings" | "boolean"
    variables: tuple[str, ...] = ()
    rows: frozenset = field(default_factory=frozenset)
    truth: Optional[bool] = None

    @classmethod
    def boolean(cls, truth: bool) -> "AnswerSet":
        return cls("boolean", truth=bool(truth))

    @classmethod
    def bindings(cls, variables, rows) -> "AnswerSet":
        return cls("bindings", tuple(variables), frozenset(tuple(r) for r in rows))

    @classmethod
    def empty(cls) -> "AnswerSet":
        return cls("bindings")

    @property
    def is_boolean(self) -> bool:
        return self.kind == "boolean"

    def __len__(self) -> int:
        return 1 if self.is_boolean else len(self.rows)

    def sorted_rows(self) -> list[tuple]:
        return sorted(self.rows, key=lambda row: tuple("" if t is None else term_key(t) for t in row))

    def to_json(self) -> dict:
        """SPARQL 1.1 JSON results document."""
        if self.is_boolean:
            return {"head": {}, "boolean": self.truth}
        bindings = []
        for row in self.sorted_rows():
            bindings.append({v: term_to_json(t) for v, t in zip(self.variables, row) if t is not None})
        return {"head": {"vars": list(self.variables)}, "results": {"bindings": bindings}}


def term_to_json(term: Term) -> dict:
    if term.is_iri:
        return {"type": "uri", "value": term.value}
    out = {"type": "literal", "value": term.value}
    if term.language:
        out["xml:lang"] = term.language
    elif term.datatype:
        out["datatype"] = term.datatype
    return out


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+|\#[^\n]*)
    | (?P<iri><[^<>"{}|^`\\\s]*>)
    | (?P<var>[?$][A-Za-z0-9_·À-￿]+)
    | (?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
    | (?P<number>[+-]?(?:\d+\.\d*[eE][+-]?\d+|\.?\d+[eE][+-]?\d+|\d*\.\d+|\d+))
    | (?P<pname>(?:[A-Za-z][\w\-.]*)?:(?:[\w\-]|%[0-9A-Fa-f]{2}|\\.)(?:(?:[\w\-.]|%[0-9A-Fa-f]{2}|\\.)*(?:[\w\-]|%[0-9A-Fa-f]{2}))?|(?:[A-Za-z][\w\-.]*)?:)
    | (?P<langtag>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
    | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<dtsep>\^\^)
    | (?P<op>!=|<=|>=|&&|\|\||[{}().;,=*/^|+!<>?])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int  # character offset into the source


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    return tokens


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, prefixes: Mapping[str, str]):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.prefixes = dict(prefixes)
        used = {t.text[1:] for t in self.tokens if t.kind == "var"}
        self._used_vars = used
        self._fresh = 0

    # -- token helpers ----------------------------------------------------

    def peek(self, ahead: int = 0) -> Optional[Token]:
        j = self.i + ahead
        return self.tokens[j] if j < len(self.tokens) else None

    def offset(self, tok: Optional[Token] = None) -> int:
        tok = tok if tok is not None else self.peek()
        return _byte_offset(self.text, tok.offset if tok else len(self.text))

    def error(self, message: str, tok: Optional[Token] = None) -> QuerySyntaxError:
        return QuerySyntaxError(message, self.offset(tok))

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of query")
        self.i += 1
        return tok

    def is_keyword(self, word: str, ahead: int = 0) -> bool:
        tok = self.peek(ahead)
        return tok is not None and tok.kind == "word" and tok.text.upper() == word

    def accept_keyword(self, word: str) -> bool:
        if self.is_keyword(word):
            self.i += 1
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        if not self.accept_keyword(word):
            raise self.error(f"expected {word}")

    def is_op(self, op: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "op" and tok.text == op

    def accept_op(self, op: str) -> bool:
        if self.is_op(op):
            self.i += 1
            return True
        return False

    def expect_op(self, op: str) -> Token:
        tok = self.peek()
        if not self.accept_op(op):
            raise self.error(f"expected {op!r}")
        return tok

    def check_unsupported(self) -> None:
        tok = self.peek()
        if tok is not None and tok.kind == "word" and tok.text.upper() in UNSUPPORTED_KEYWORDS:
            name = tok.text.upper()
            if name in ("ORDER", "GROUP") and self.is_keyword("BY", 1):
                name += " BY"
            raise UnsupportedFeature(name, self.offset(tok))

    def fresh_var(self) -> Term:
        while f"v{self._fresh}" in self._used_vars:
            self._fresh += 1
        name = f"v{self._fresh}"
        self._used_vars.add(name)
        return Term.var(name)

    # -- grammar -----------------------------------------------------------

    def parse(self) -> QueryAst:
        self.prologue()
        self.check_unsupported()
        if self.accept_keyword("SELECT"):
            ast = self.select_query()
        elif self.accept_keyword("ASK"):
            self.dataset_clause()
            self.accept_keyword("WHERE")
            patterns, filters = self.group()
            ast = QueryAst("ask", tuple(patterns), filters=tuple(filters))
            ast = replace(ast, limit=self.limit_clause())
        else:
            raise self.error("expected SELECT or ASK")
        self.check_unsupported()
        if self.peek() is not None:
            if self.is_keyword("SELECT") or self.is_keyword("ASK"):
                raise self.error("unexpected second query")
            raise self.error(f"unexpected token {self.peek().text!r}")
        validate(ast, self.offset(None))
        return ast

    def prologue(self) -> None:
        while True:
            if self.accept_keyword("PREFIX"):
                tok = self.next()
                if tok.kind != "pname" or not tok.text.endswith(":") or tok.text.count(":") != 1:
                    raise self.error("expected prefix name", tok)
                iri = self.next()
                if iri.kind != "iri":
                    raise self.error("expected IRI after prefix name", iri)
                self.prefixes[tok.text[:-1]] = iri.text[1:-1]
            elif self.is_keyword("BASE"):
                raise UnsupportedFeature("BASE", self.offset())
            else:
                return

    def dataset_clause(self) -> None:
        if self.is_keyword("FROM"):
            raise UnsupportedFeature("FROM", self.offset())

    def select_query(self) -> QueryAst:
        distinct = self.accept_keyword("DISTINCT")
        self.check_unsupported()
        projected: list[Term] = []
        aggregate: Optional[Aggregate] = None
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "var":
                self.i += 1
                projected.append(Term.var(tok.text[1:]))
            elif self.is_op("("):
                aggregate = self.count_expression()
                if projected or self.is_op("(") or (self.peek() is not None and self.peek().kind == "var"):
                    raise UnsupportedFeature("aggregate mixed with other projections (GROUP BY)", self.offset())
                break
            elif self.is_op("*"):
                raise UnsupportedFeature("SELECT *", self.offset())
            else:
                break
        if not projected and aggregate is None:
            raise self.error("SELECT needs at least one variable")
        self.dataset_clause()
        self.accept_keyword("WHERE")
        patterns, filters = self.group()
        limit = self.limit_clause()
        if aggregate is not None:
            projected = [aggregate.alias]
        return QueryAst(
            "select",
            tuple(patterns),
            projected=tuple(projected),
            distinct=distinct,
            aggregate=aggregate,
            filters=tuple(filters),
            limit=limit,
        )

    def count_expression(self) -> Aggregate:
        self.expect_op("(")
        tok = self.peek()
        if tok is None or tok.kind != "word" or tok.text.upper() != "COUNT":
            if tok is not None and tok.kind == "word":
                raise UnsupportedFeature(f"aggregate/expression {tok.text.upper()}", self.offset(tok))
            raise self.error("expected COUNT")
        self.i += 1
        self.expect_op("(")
        distinct = self.accept_keyword("DISTINCT")
        tok = self.next()
        if tok.kind == "op" and tok.text == "*":
            raise UnsupportedFeature("COUNT(*)", self.offset(tok))
        if tok.kind != "var":
            raise self.error("expected variable inside COUNT", tok)
        self.expect_op(")")
        if not self.accept_keyword("AS"):
            raise self.error("expected AS after COUNT(...)")
        alias = self.next()
        if alias.kind != "var":
            raise self.error("expected alias variable", alias)
        self.expect_op(")")
        return Aggregate(Term.var(tok.text[1:]), Term.var(alias.text[1:]), distinct)

    def limit_clause(self) -> Optional[int]:
        self.check_unsupported()
        if not self.accept_keyword("LIMIT"):
            return None
        tok = self.next()
        if tok.kind != "number" or not tok.text.isdigit():
            raise self.error("LIMIT expects a positive integer", tok)
        value = int(tok.text)
        if value < 1:
            raise self.error("LIMIT expects a positive integer", tok)
        self.check_unsupported()
        return value

    def group(self) -> tuple[list[TriplePattern], list[Filter]]:
        self.expect_op("{")
        patterns: list[TriplePattern] = []
        filters: list[Filter] = []
        while True:
            self.check_unsupported()
            if self.accept_op("}"):
                return patterns, filters
            if self.is_op("{"):
                if self.is_keyword("SELECT", 1):
                    raise UnsupportedFeature("subquery", self.offset())
                after = self.peek(self._group_span())
                if after is not None and after.kind == "word" and after.text.upper() == "UNION":
                    raise UnsupportedFeature("UNION", self.offset(after))
                raise UnsupportedFeature("nested group pattern", self.offset())
            if self.accept_op("."):
                continue
            if self.accept_keyword("FILTER"):
                filters.append(self.filter_clause())
                continue
            self.triples_same_subject(patterns)
            if not (self.is_op(".") or self.is_op("}") or self.is_keyword("FILTER")):
                self.check_unsupported()
                raise self.error("expected '.' or '}' after triple pattern")

    def _group_span(self) -> int:
        """Lookahead distance just past the group that opens at the current token."""
        depth = 0
        ahead = 0
        while (tok := self.peek(ahead)) is not None:
            if tok.kind == "op" and tok.text == "{":
                depth += 1
            elif tok.kind == "op" and tok.text == "}":
                depth -= 1
                if depth == 0:
                    return ahead + 1
            ahead += 1
        return ahead

    def filter_clause(self) -> Filter:
        start = self.peek()
        if start is not None and start.kind == "word":
            raise UnsupportedFeature(f"FILTER function {start.text.upper()}", self.offset(start))
        self.expect_op("(")
        left = self.filter_operand()
        op = self.next()
        if op.kind != "op" or op.text != "=":
            if op.kind == "op" and op.text in ("!=", "<", ">", "<=", ">=", "&&", "||"):
                raise UnsupportedFeature(f"FILTER comparator {op.text}", self.offset(op))
            raise self.error("expected '=' in FILTER", op)
        right = self.filter_operand()
        if not self.is_op(")"):
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.text in ("&&", "||"):
                raise UnsupportedFeature(f"FILTER operator {tok.text}", self.offset(tok))
        self.expect_op(")")
        if left.is_variable and not right.is_variable:
            return Filter(left, right)
        if right.is_variable and not left.is_variable:
            return Filter(right, left)
        raise UnsupportedFeature("FILTER must compare one variable with one constant", self.offset(start))

    def filter_operand(self) -> Term:
        tok = self.peek()
        if tok is not None and tok.kind == "word" and tok.text.lower() not in ("true", "false"):
            raise UnsupportedFeature(f"FILTER function {tok.text.upper()}", self.offset(tok))
        if tok is not None and tok.kind == "var":
            self.i += 1
            return Term.var(tok.text[1:])
        return self.term(allow_literal=True)

    def triples_same_subject(self, patterns: list[TriplePattern]) -> None:
        subject = self.term(allow_literal=True, allow_var=True)
        while True:
            predicate_path = self.verb()
            while True:
                obj = self.term(allow_literal=True, allow_var=True)
                patterns.extend(self.expand_path(subject, predicate_path, obj))
                if not self.accept_op(","):
                    break
            if not self.accept_op(";"):
                return
            while self.accept_op(";"):
                pass
            if self.is_op(".") or self.is_op("}"):
                return

    def verb(self) -> list[Term]:
        tok = self.peek()
        if tok is not None and tok.kind == "var":
            self.i += 1
            path = [Term.var(tok.text[1:])]
        else:
            path = [self.path_element()]
            while self.accept_op("/"):
                path.append(self.path_element())
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text in ("|", "*", "+", "?", "^"):
            raise UnsupportedFeature(f"property path operator {tok.text}", self.offset(tok))
        return path

    def path_element(self) -> Term:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text in ("^", "!", "("):
            raise UnsupportedFeature(f"property path operator {tok.text}", self.offset(tok))
        if tok is not None and tok.kind == "word" and tok.text == "a":
            self.i += 1
            return Term.iri(RDF_TYPE)
        term = self.term()
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text in ("|", "*", "+", "?"):
            raise UnsupportedFeature(f"property path operator {tok.text}", self.offset(tok))
        return term

    def expand_path(self, subject: Term, path: list[Term], obj: Term) -> list[TriplePattern]:
        if len(path) == 1:
            return [TriplePattern(subject, path[0], obj)]
        out = []
        current = subject
        for step in path[:-1]:
            nxt = self.fresh_var()
            out.append(TriplePattern(current, step, nxt))
            current = nxt
        out.append(TriplePattern(current, path[-1], obj))
        return out

    def term(self, allow_literal: bool = False, allow_var: bool = False) -> Term:
        tok = self.next()
        if tok.kind == "var":
            if not allow_var:
                raise self.error("variable not allowed here", tok)
            return Term.var(tok.text[1:])
        if tok.kind == "iri":
            value = tok.text[1:-1]
            if not value:
                raise self.error("empty IRI", tok)
            return Term.iri(value)
        if tok.kind == "pname":
            prefix, _, local = tok.text.partition(":")
            if prefix not in self.prefixes:
                raise self.error(f"undeclared prefix {prefix!r}", tok)
            local = re.sub(r"\\(.)", r"\1", local)
            return Term.iri(self.prefixes[prefix] + local)
        if not allow_literal:
            raise self.error(f"expected IRI, found {tok.text!r}", tok)
        if tok.kind == "string":
            value = unescape(tok.text[1:-1])
            nxt = self.peek()
            if nxt is not None and nxt.kind == "langtag":
                self.i += 1
                return Term.literal(value, language=nxt.text[1:])
            if nxt is not None and nxt.kind == "dtsep":
                self.i += 1
                dt = self.term()
                return Term.literal(value, datatype=dt.value)
            return Term.literal(value)
        if tok.kind == "number":
            return _number_literal(tok.text)
        if tok.kind == "word" and tok.text.lower() in ("true", "false"):
            return Term.literal(tok.text.lower(), XSD + "boolean")
        if tok.kind == "word" and tok.text.upper() in UNSUPPORTED_KEYWORDS:
            raise UnsupportedFeature(tok.text.upper(), self.offset(tok))
        raise self.error(f"unexpected token {tok.text!r}", tok)


def _number_literal(text: str) -> Term:
    if re.fullmatch(r"[+-]?\d+", text):
        return Term.literal(text, XSD + "integer")
    if "e" in text or "E" in text:
        return Term.literal(text, XSD + "double")
    return Term.literal(text, XSD + "decimal")


def validate(ast: QueryAst, offset: int = 0) -> None:
    in_patterns = set(ast.variables())
    for var in ast.projected:
        if ast.aggregate is not None and var == ast.aggregate.alias:
            continue
        if var.value not in in_patterns:
            raise QuerySyntaxError(f"projected variable ?{var.value} does not occur in any pattern", offset)
    if ast.aggregate is not None:
        if ast.aggregate.variable.value not in in_patterns:
            raise QuerySyntaxError(f"COUNT variable ?{ast.aggregate.variable.value} does not occur in any pattern", offset)
        if ast.aggregate.alias.value in in_patterns:
            raise QuerySyntaxError(f"alias ?{ast.aggregate.alias.value} already used in a pattern", offset)
    for flt in ast.filters:
        if flt.variable.value not in in_patterns:
            raise QuerySyntaxError(f"FILTER variable ?{flt.variable.value} does not occur in any pattern", offset)


def parse(text: str, prefixes: Optional[Mapping[str, str]] = None) -> QueryAst:
    """Parse query text into a :class:`QueryAst`.

    ``prefixes`` seeds the namespace map before any PREFIX declarations in
    the text; it defaults to :data:`DEFAULT_PREFIXES`.
    """
    return _Parser(text, DEFAULT_PREFIXES if prefixes is None else prefixes).parse()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def numeric_value(term: Term) -> Optional[Decimal]:
    if not term.is_literal or term.datatype not in NUMERIC_DATATYPES:
        return None
    text = term.value.strip()
    if text in ("INF", "+INF", "-INF", "NaN"):
        return None
    try:
        return Decimal(text)
    except InvalidOperation:
        return None


def terms_equal(left: Term, right: Term) -> bool:
    """FILTER equality: numeric literals by value, other literals by lexical form."""
    if left.is_literal and right.is_literal:
        a, b = numeric_value(left), numeric_value(right)
        if a is not None and b is not None:
            return a == b
        return left.value == right.value
    return left == right


def _substitute(pattern: TriplePattern, binding: Binding) -> TriplePattern:
    def sub(t: Term) -> Term:
        return binding.get(t.value, t) if t.is_variable else t

    return TriplePattern(sub(pattern.subject), sub(pattern.predicate), sub(pattern.object))


def solutions(query: QueryAst, graph: KnowledgeGraph) -> list[Binding]:
    """Filtered solutions of the query's patterns, sorted deterministically."""
    if not query.patterns:
        raise ContractViolation("cannot evaluate a query without triple patterns")
    current: list[Binding] = [{}]
    for pattern in query.patterns:
        extended: list[Binding] = []
        for binding in current:
            for match in graph.match_pattern(_substitute(pattern, binding)):
                extended.append({**binding, **match})
        current = extended
        if not current:
            break
    for flt in query.filters:
        current = [b for b in current if terms_equal(b[flt.variable.value], flt.operand)]
    names = sorted(query.variables())
    current.sort(key=lambda b: tuple(term_key(b[n]) for n in names))
    return current


def evaluate(query: QueryAst, graph: KnowledgeGraph) -> AnswerSet:
    sols = solutions(query, graph)
    if query.form == "ask":
        return AnswerSet.boolean(bool(sols))
    if query.aggregate is not None:
        target = query.aggregate.variable.value
        values = [b[target] for b in sols]
        count = len(set(values)) if query.aggregate.distinct else len(values)
        row = (Term.literal(str(count), XSD + "integer"),)
        return AnswerSet.bindings([query.aggregate.alias.value], [row])
    names = [v.value for v in query.projected]
    # order by projected values so LIMIT does not depend on variable names
    rows = sorted((tuple(b[n] for n in names) for b in sols), key=lambda r: tuple(term_key(t) for t in r))
    if query.distinct:
        rows = list(dict.fromkeys(rows))
    if query.limit is not None:
        rows = rows[: query.limit]
    return AnswerSet.bindings(names, rows)


def execute(text: str, graph: KnowledgeGraph, prefixes: Optional[Mapping[str, str]] = None) -> AnswerSet:
    return evaluate(parse(text, prefixes), graph)


# ---------------------------------------------------------------------------
# Canonical form and triple flips
# ---------------------------------------------------------------------------


def render(query: QueryAst, rename: bool = False) -> str:
    """Serialize an AST back to query text; ``rename`` gives the canonical form."""
    mapping: dict[str, str] = {}

    def var(t: Term) -> str:
        if not rename:
            return t.n3()
        if t.value not in mapping:
            mapping[t.value] = f"v{len(mapping)}"
        return "?" + mapping[t.value]

    def term(t: Term) -> str:
        return var(t) if t.is_variable else t.n3()

    # Rendering order fixes the first-use order for renaming.
    head: list[str] = []
    if query.form == "ask":
        head.append("ASK")
    else:
        head.append("SELECT")
        if query.distinct:
            head.append("DISTINCT")
        if query.aggregate is not None:
            agg = query.aggregate
            inner = ("DISTINCT " if agg.distinct else "") + var(agg.variable)
            head.append(f"(COUNT({inner}) AS {var(agg.alias)})")
        else:
            head.extend(var(v) for v in query.projected)
    head.append("WHERE")
    body = " . ".join(" ".join(term(t) for t in p) for p in query.patterns)
    parts = [body] if body else []
    parts.extend(f"FILTER({var(f.variable)} {f.comparator} {term(f.operand)})" for f in query.filters)
    text = " ".join(head) + " { " + " ".join(parts) + (" }" if parts else "}")
    if query.limit is not None:
        text += f" LIMIT {query.limit}"
    return text


def normalize(query: QueryAst) -> str:
    return render(query, rename=True)


def normalize_text(text: str, prefixes: Optional[Mapping[str, str]] = None) -> str:
    return normalize(parse(text, prefixes))


def flip_triples(query: QueryAst) -> list[QueryAst]:
    """One variant per pattern with subject and object swapped."""
    variants = []
    for i, pattern in enumerate(query.patterns):
        if pattern.object.is_literal or pattern.subject.is_literal:
            continue
        flipped = TriplePattern(pattern.object, pattern.predicate, pattern.subject)
        if flipped == pattern:
            continue
        patterns = query.patterns[:i] + (flipped,) + query.patterns[i + 1 :]
        variants.append(replace(query, patterns=patterns))
    return variants
