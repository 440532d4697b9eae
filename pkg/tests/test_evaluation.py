import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dfsl.endpoint import ExecutionFailure
from dfsl.evaluation import (
    FLIP,
    NO_FLIP,
    NOT_COMPARABLE,
    CandidateAnswer,
    EvalRecord,
    EvalReport,
    aggregate,
    detect_triple_flip,
    f1,
    select_fs,
    select_ls,
    triple_flip_status,
)
from dfsl.kg import XSD, ContractViolation, Term
from dfsl.sparql import AnswerSet

from oracles import set_f1

WD = {"wd": "http://www.wikidata.org/entity/", "wdt": "http://www.wikidata.org/prop/direct/"}


def iri(name):
    return Term.iri(f"http://kg/{name}")


def answers(*names):
    return AnswerSet.bindings(["x"], [(iri(n),) for n in names])


EMPTY = answers()
SHAPES = {"empty": EMPTY, "singleton": answers("a"), "pair": answers("a", "b")}


def enumerated_cases():
    """All 27 ways to give three beams an empty, singleton or pair answer."""
    return list(itertools.product(SHAPES, repeat=3))


def expected_ls(shapes):
    sizes = [len(SHAPES[s]) for s in shapes]
    best = max(sizes)
    return 1 if best == 0 else sizes.index(best) + 1


def expected_fs(shapes):
    for rank, s in enumerate(shapes, start=1):
        if s != "empty":
            return rank
    return 1


class CountingExecutor:
    def __init__(self, mapping):
        self.mapping = mapping
        self.calls = []

    def __call__(self, query):
        self.calls.append(query)
        result = self.mapping[query]
        if isinstance(result, Exception):
            raise result
        return result


# ---------------------------------------------------------------------------
# F1
# ---------------------------------------------------------------------------


class TestF1:
    def test_both_empty(self):
        assert f1(EMPTY, EMPTY) == 1.0

    def test_half_overlap(self):
        assert f1(answers("a", "b"), answers("b", "c")) == 0.5

    def test_one_sided_empty(self):
        assert f1(answers("a"), EMPTY) == 0.0
        assert f1(EMPTY, answers("a")) == 0.0

    def test_booleans(self):
        assert f1(AnswerSet.boolean(True), AnswerSet.boolean(True)) == 1.0
        assert f1(AnswerSet.boolean(False), AnswerSet.boolean(True)) == 0.0
        assert f1(AnswerSet.boolean(True), answers("a")) == 0.0

    def test_disjoint(self):
        assert f1(answers("a"), answers("b")) == 0.0

    def test_numeric_literals_by_value(self):
        a = AnswerSet.bindings(["n"], [(Term.literal("37400", XSD + "integer"),)])
        b = AnswerSet.bindings(["n"], [(Term.literal("37400.0", XSD + "decimal"),)])
        assert f1(a, b) == 1.0

    def test_plain_literals_lexical(self):
        a = AnswerSet.bindings(["n"], [(Term.literal("Paris", language="en"),)])
        b = AnswerSet.bindings(["n"], [(Term.literal("Paris", language="fr"),)])
        c = AnswerSet.bindings(["n"], [(Term.literal("Paris"),)])
        assert f1(a, a) == 1.0
        assert f1(a, b) == 0.0
        assert f1(c, AnswerSet.bindings(["m"], [(Term.literal("Paris"),)])) == 1.0

    def test_matches_oracle_on_random_pairs(self):
        rng = random.Random(7)
        pool = "abcdef"
        for _ in range(1000):
            p = set(rng.sample(pool, rng.randint(0, 4)))
            g = set(rng.sample(pool, rng.randint(0, 4)))
            got = f1(answers(*p), answers(*g))
            assert got == pytest.approx(float(set_f1(p, g)), abs=1e-12)


sets = st.frozensets(st.sampled_from("abcdefg"), max_size=5)


class TestF1Properties:
    @given(sets, sets)
    def test_symmetric(self, a, b):
        assert f1(answers(*a), answers(*b)) == f1(answers(*b), answers(*a))

    @given(sets)
    def test_identity(self, a):
        assert f1(answers(*a), answers(*a)) == 1.0

    @given(sets, sets)
    def test_range(self, a, b):
        assert 0.0 <= f1(answers(*a), answers(*b)) <= 1.0


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


class TestSelectLS:
    def test_largest_wins(self):
        cands = [CandidateAnswer(f"q{i}", i + 1, SHAPES[s]) for i, s in enumerate(["empty", "singleton", "pair"])]
        assert select_ls(cands).rank == 3

    def test_first_largest_on_tie(self):
        cands = [CandidateAnswer("q1", 1, answers("a", "b")), CandidateAnswer("q2", 2, answers("c", "d")),
                 CandidateAnswer("q3", 3, answers("a"))]
        sel = select_ls(cands)
        assert sel.rank == 1 and sel.answer == answers("a", "b")

    def test_all_empty(self):
        cands = [CandidateAnswer("q1", 1, EMPTY), CandidateAnswer("q2", 2, ExecutionFailure("timeout", "slow"))]
        sel = select_ls(cands)
        assert sel.rank == 1 and len(sel.answer) == 0

    def test_failure_counts_as_empty(self):
        cands = [CandidateAnswer("q1", 1, ExecutionFailure("query_error", "bad")), CandidateAnswer("q2", 2, answers("a"))]
        assert select_ls(cands).rank == 2

    def test_boolean_has_cardinality_one(self):
        cands = [CandidateAnswer("q1", 1, EMPTY), CandidateAnswer("q2", 2, AnswerSet.boolean(False))]
        sel = select_ls(cands)
        assert sel.rank == 2 and sel.answer.truth is False

    def test_order_of_list_does_not_matter(self):
        cands = [CandidateAnswer("q2", 2, answers("c", "d")), CandidateAnswer("q1", 1, answers("a", "b"))]
        assert select_ls(cands).rank == 1

    def test_contracts(self):
        with pytest.raises(ContractViolation):
            select_ls([])
        with pytest.raises(ContractViolation):
            select_ls([CandidateAnswer("a", 1, EMPTY), CandidateAnswer("b", 1, EMPTY)])
        with pytest.raises(ValueError):
            CandidateAnswer("a", 0, EMPTY)


class TestSelectFS:
    def test_first_non_empty(self):
        ex = CountingExecutor({"q1": EMPTY, "q2": answers("a"), "q3": answers("a", "b")})
        sel = select_fs(["q1", "q2", "q3"], ex)
        assert sel.rank == 2 and sel.answer == answers("a")
        assert ex.calls == ["q1", "q2"]

    def test_rank_one_single_call(self):
        ex = CountingExecutor({"q1": answers("a"), "q2": answers("b")})
        assert select_fs(["q1", "q2"], ex).rank == 1
        assert len(ex.calls) == 1

    def test_all_empty_or_failing(self):
        ex = CountingExecutor({"q1": EMPTY, "q2": ExecutionFailure("timeout", "slow"), "q3": RuntimeError("boom")})
        sel = select_fs(["q1", "q2", "q3"], ex)
        assert sel.rank == 1 and len(sel.answer) == 0 and len(ex.calls) == 3

    def test_boolean_is_non_empty(self):
        ex = CountingExecutor({"q1": AnswerSet.boolean(False), "q2": answers("a")})
        assert select_fs(["q1", "q2"], ex).answer.is_boolean

    def test_empty_list(self):
        with pytest.raises(ContractViolation):
            select_fs([], lambda q: EMPTY)


class TestEnumeratedSelection:
    @pytest.mark.parametrize("shapes", enumerated_cases(), ids="-".join)
    def test_ls(self, shapes):
        cands = [CandidateAnswer(f"q{i}", i + 1, SHAPES[s]) for i, s in enumerate(shapes)]
        sel = select_ls(cands)
        assert sel.rank == expected_ls(shapes)
        assert all(len(sel.answer) >= c.size for c in cands)

    @pytest.mark.parametrize("shapes", enumerated_cases(), ids="-".join)
    def test_fs(self, shapes):
        ex = CountingExecutor({f"q{i}": SHAPES[s] for i, s in enumerate(shapes)})
        sel = select_fs([f"q{i}" for i in range(3)], ex)
        rank = expected_fs(shapes)
        assert sel.rank == rank
        assert sel.answer.rows == SHAPES[shapes[rank - 1]].rows
        hit = any(s != "empty" for s in shapes)
        assert len(ex.calls) == (rank if hit else 3)

    def test_case_count(self):
        assert len(enumerated_cases()) == 27


class TestEnthalpyCase:
    """FS keeps beam 1 while LS is lured to a larger wrong set at beam 3."""

    gold = "SELECT DISTINCT ?answer WHERE { wd:Q132298 wdt:P2116 ?answer }"
    beams = [
        gold,
        "SELECT DISTINCT ?answer WHERE { wd:Q132298 wdt:P2117 ?answer }",
        "SELECT DISTINCT ?answer WHERE { wd:Q14982 wdt:P2116 ?answer }",
    ]

    def scripted(self):
        lit = lambda v: (Term.literal(v, XSD + "integer"),)  # noqa: E731
        return {
            self.beams[0]: AnswerSet.bindings(["answer"], [lit("37400")]),
            self.beams[1]: EMPTY,
            self.beams[2]: AnswerSet.bindings(["answer"], [lit("40700"), lit("41200")]),
        }

    def test_fs_beam_one_ls_beam_three(self):
        results = self.scripted()
        gold_answer = results[self.gold]
        fs = select_fs(self.beams, CountingExecutor(results))
        ls = select_ls([CandidateAnswer(q, i + 1, results[q]) for i, q in enumerate(self.beams)])
        assert (fs.rank, ls.rank) == (1, 3)
        assert f1(fs.answer, gold_answer) == 1.0
        assert f1(ls.answer, gold_answer) == 0.0


# ---------------------------------------------------------------------------
# Records and reports
# ---------------------------------------------------------------------------


class TestAggregate:
    def test_mean(self):
        rep = aggregate([EvalRecord("a", 1.0, selected_rank=1), EvalRecord("b", 0.0, selected_rank=2)])
        assert rep.f1 == 50.0 and rep.count == 2
        assert rep.rank_histogram == {"1": 1, "2": 1}

    def test_all_ones(self):
        assert aggregate([EvalRecord(str(i), 1.0) for i in range(7)]).f1 == 100.0

    def test_empty(self):
        rep = aggregate([])
        assert rep.count == 0 and rep.f1 is None

    def test_flags_counted(self):
        rep = aggregate([
            EvalRecord("a", 0.0, flags={"extraction_failure"}),
            EvalRecord("b", 0.0, flags={"extraction_failure", "triple_flip_detected"}),
        ])
        assert rep.flag_counts == {"extraction_failure": 2, "triple_flip_detected": 1}
        assert rep.rank_histogram == {"none": 2}

    @given(st.lists(st.fractions(0, 1, max_denominator=20), min_size=1, max_size=20), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, scores, rnd):
        records = [EvalRecord(f"q{i:02d}", float(s), selected_rank=i % 3 + 1) for i, s in enumerate(scores)]
        shuffled = records[:]
        rnd.shuffle(shuffled)
        assert aggregate(records) == aggregate(shuffled)
        exact = float(100 * sum(Fraction(s) for s in scores) / len(scores))
        assert aggregate(records).f1 == pytest.approx(exact, abs=1e-9)

    def test_record_validation(self):
        with pytest.raises(ValueError):
            EvalRecord("a", 1.5)
        with pytest.raises(ValueError):
            EvalRecord("a", 1.0, flags={"bogus"})

    def test_json_round_trip(self):
        rep = aggregate([EvalRecord("a", 0.8, "ASK {}", 2, {"lenient_extraction"})], approach="DFSL", dataset="toy")
        assert EvalReport.from_json(rep.to_json()) == rep


# ---------------------------------------------------------------------------
# Triple-flip diagnostics
# ---------------------------------------------------------------------------


class TestTripleFlip:
    predicted = "SELECT DISTINCT ?obj WHERE { wd:Q340 wdt:P501 ?obj . ?obj wdt:P31 wd:Q171441 }"
    gold = "SELECT DISTINCT ?sbj WHERE { ?sbj wdt:P501 wd:Q340 . ?sbj wdt:P31 wd:Q171441 }"

    def test_flip_pair(self):
        assert detect_triple_flip(self.predicted, self.gold, WD)
        assert triple_flip_status(self.predicted, self.gold, WD) == FLIP

    def test_identical(self):
        assert not detect_triple_flip(self.gold, self.gold, WD)
        renamed = self.gold.replace("?sbj", "?who")
        assert triple_flip_status(renamed, self.gold, WD) == NO_FLIP

    def test_unrelated(self):
        assert not detect_triple_flip("ASK { wd:Q1 wdt:P36 wd:Q2 }", self.gold, WD)

    def test_unparseable(self):
        assert triple_flip_status("not a query", self.gold, WD) == NOT_COMPARABLE
        assert not detect_triple_flip("not a query", self.gold, WD)
