"""Independent reference implementations used to check the library.

Nothing here calls into the code under test except for plain data types
(Term, Triple, KnowledgeGraph construction).
"""

from __future__ import annotations

import itertools
import random
import zlib
from decimal import Decimal, InvalidOperation
from fractions import Fraction

from dfsl.kg import XSD, KnowledgeGraph, Term, Triple

# ---------------------------------------------------------------------------
# Random graphs and queries
# ---------------------------------------------------------------------------

LITERALS = [
    Term.literal("x"),
    Term.literal("x", language="en"),
    Term.literal("1", XSD + "integer"),
    Term.literal("01", XSD + "integer"),
    Term.literal("1.0", XSD + "decimal"),
    Term.literal("2", XSD + "integer"),
]


def random_graph(rng: random.Random, max_facts: int = 50, n_nodes: int = 6, n_preds: int = 3) -> KnowledgeGraph:
    nodes = [Term.iri(f"http://kg/n{i}") for i in range(n_nodes)]
    preds = [Term.iri(f"http://kg/p{i}") for i in range(n_preds)]
    facts = []
    for _ in range(rng.randint(0, max_facts)):
        obj = rng.choice(nodes) if rng.random() < 0.75 else rng.choice(LITERALS)
        facts.append(Triple(rng.choice(nodes), rng.choice(preds), obj))
    return KnowledgeGraph(facts)


def _pick(rng, pool, var_names, var_prob):
    if rng.random() < var_prob:
        return Term.var(rng.choice(var_names))
    return rng.choice(pool)


def random_query(rng: random.Random, graph: KnowledgeGraph, max_patterns: int = 3) -> str:
    """Query text in the supported fragment, built without the library's renderer."""
    nodes = [Term.iri(f"http://kg/n{i}") for i in range(6)]
    preds = [Term.iri(f"http://kg/p{i}") for i in range(3)]
    names = ["a", "b", "c"]
    patterns = []
    for _ in range(rng.randint(1, max_patterns)):
        s = _pick(rng, nodes, names, 0.6)
        p = _pick(rng, preds, names, 0.15)
        o = _pick(rng, nodes + LITERALS, names, 0.6)
        patterns.append((s, p, o))
    used = list(dict.fromkeys(t.value for pat in patterns for t in pat if t.is_variable))
    body = " . ".join(" ".join(t.n3() for t in pat) for pat in patterns)
    if used and rng.random() < 0.25:
        v = rng.choice(used)
        body += f" FILTER(?{v} = {rng.choice(nodes + LITERALS).n3()})"
    roll = rng.random()
    if not used or roll < 0.15:
        return f"ASK WHERE {{ {body} }}"
    if roll < 0.3:
        distinct = "DISTINCT " if rng.random() < 0.5 else ""
        return f"SELECT (COUNT({distinct}?{rng.choice(used)}) AS ?n) WHERE {{ {body} }}"
    proj = rng.sample(used, rng.randint(1, len(used)))
    distinct = "DISTINCT " if rng.random() < 0.3 else ""
    limit = f" LIMIT {rng.randint(1, 4)}" if rng.random() < 0.2 else ""
    return f"SELECT {distinct}{' '.join('?' + v for v in proj)} WHERE {{ {body} }}{limit}"


# ---------------------------------------------------------------------------
# Exhaustive-assignment SPARQL oracle
# ---------------------------------------------------------------------------


def _numeric(term: Term):
    if not term.is_literal or term.datatype not in (XSD + "integer", XSD + "decimal"):
        return None
    try:
        return Decimal(term.value)
    except InvalidOperation:
        return None


def _filter_equal(a: Term, b: Term) -> bool:
    if a.is_literal and b.is_literal:
        na, nb = _numeric(a), _numeric(b)
        if na is not None and nb is not None:
            return na == nb
        return a.value == b.value
    return a == b


def oracle_solutions(patterns, filters, graph: KnowledgeGraph):
    """Every assignment of the pattern variables to graph terms that satisfies the query."""
    facts = set(graph)
    universe = set()
    for t in facts:
        universe.update(t)
    names = sorted({t.value for pat in patterns for t in pat if t.is_variable})
    out = []
    for values in itertools.product(sorted(universe, key=Term.n3), repeat=len(names)):
        env = dict(zip(names, values))
        sub = lambda t: env[t.value] if t.is_variable else t  # noqa: E731
        ok = True
        for s, p, o in patterns:
            s, p, o = sub(s), sub(p), sub(o)
            if not (s.is_iri and p.is_iri) or Triple(s, p, o) not in facts:
                ok = False
                break
        if ok and all(_filter_equal(env[v.value], operand) for v, operand in filters):
            out.append(env)
    out.sort(key=lambda env: tuple(env[n].n3() for n in names))
    return out


def oracle_answer(ast, graph: KnowledgeGraph):
    """(kind, rows-or-truth) computed by brute force from a parsed query."""
    sols = oracle_solutions(ast.patterns, [(f.variable, f.operand) for f in ast.filters], graph)
    if ast.form == "ask":
        return ("boolean", bool(sols))
    if ast.aggregate is not None:
        vals = [env[ast.aggregate.variable.value] for env in sols]
        n = len(set(vals)) if ast.aggregate.distinct else len(vals)
        return ("bindings", frozenset({(Term.literal(str(n), XSD + "integer"),)}))
    names = [v.value for v in ast.projected]
    rows = sorted((tuple(env[n] for n in names) for env in sols), key=lambda r: tuple(t.n3() for t in r))
    if ast.distinct:
        rows = list(dict.fromkeys(rows))
    if ast.limit is not None:
        rows = rows[: ast.limit]
    return ("bindings", frozenset(rows))


# ---------------------------------------------------------------------------
# Brute-force cosine ranking with exact arithmetic
# ---------------------------------------------------------------------------


def trigram_counts(text: str, dim: int = 256) -> list[int]:
    counts = [0] * dim
    grams = [text[i : i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else ([text] if text else [])
    for g in grams:
        counts[zlib.crc32(g.encode("utf-8")) % dim] += 1
    return counts


def exact_rank_key(x: list[int], q: list[int]) -> Fraction:
    """Monotone in cosine(x, q) for non-negative count vectors: dot^2 / |x|^2."""
    dot = sum(a * b for a, b in zip(x, q))
    nx = sum(a * a for a in x)
    if nx == 0 or dot == 0:
        return Fraction(0)
    return Fraction(dot * dot, nx)


def brute_force_top_k(count_vectors: list[list[int]], query: list[int], k: int) -> list[int]:
    keyed = [(-exact_rank_key(x, query), i) for i, x in enumerate(count_vectors)]
    keyed.sort()
    return [i for _, i in keyed[:k]]


# ---------------------------------------------------------------------------
# F1 by hand
# ---------------------------------------------------------------------------


def set_f1(pred: set, gold: set) -> Fraction:
    if not pred and not gold:
        return Fraction(1)
    if not pred or not gold:
        return Fraction(0)
    hit = len(pred & gold)
    return Fraction(2 * hit, len(pred) + len(gold))
