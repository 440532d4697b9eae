"""Answer selection over multiple candidate queries, and F1 scoring.

Largest Set (LS) picks the biggest answer set, first on ties.  First Set
(FS) walks the beams in order and stops at the first non-empty answer.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

from .endpoint import ExecutionFailure
from .kg import ContractViolation, Term
from .sparql import AnswerSet, SparqlError, flip_triples, normalize, numeric_value, parse

FLAGS = (
    "extraction_failure",
    "execution_failure",
    "lenient_extraction",
    "triple_flip_detected",
    "gold_execution_failure",
)

Outcome = Union[AnswerSet, ExecutionFailure]


@dataclass(frozen=True)
class CandidateAnswer:
    query: str
    beam_rank: int
    answer: Outcome

    def __post_init__(self):
        if self.beam_rank < 1:
            raise ValueError("beam_rank starts at 1")

    @property
    def size(self) -> int:
        return 0 if isinstance(self.answer, ExecutionFailure) else len(self.answer)

    @property
    def answer_set(self) -> AnswerSet:
        return AnswerSet.empty() if isinstance(self.answer, ExecutionFailure) else self.answer


class Selection(NamedTuple):
    answer: AnswerSet
    rank: int


def select_ls(candidates: Sequence[CandidateAnswer]) -> Selection:
    if not candidates:
        raise ContractViolation("LS needs at least one candidate")
    ranks = [c.beam_rank for c in candidates]
    if len(set(ranks)) != len(ranks):
        raise ContractViolation("beam ranks must be unique")
    ordered = sorted(candidates, key=lambda c: c.beam_rank)
    best = ordered[0]
    for cand in ordered[1:]:
        if cand.size > best.size:
            best = cand
    if best.size == 0:
        return Selection(AnswerSet.empty(), ordered[0].beam_rank)
    return Selection(best.answer_set, best.beam_rank)


def select_fs(ranked_queries: Sequence[str], executor: Callable[[str], AnswerSet]) -> Selection:
    """Execute queries lazily in beam order; return the first non-empty answer."""
    if not ranked_queries:
        raise ContractViolation("FS needs at least one query")
    for rank, query in enumerate(ranked_queries, start=1):
        try:
            answer = executor(query)
        except Exception:  # noqa: BLE001 - any failure counts as an empty answer
            continue
        if len(answer) > 0:
            return Selection(answer, rank)
    return Selection(AnswerSet.empty(), 1)


# ---------------------------------------------------------------------------
# F1
# ---------------------------------------------------------------------------


def value_key(term: Optional[Term]):
    """Comparison key: IRIs exactly, numeric literals by value, others lexically."""
    if term is None:
        return ("unbound",)
    if term.is_iri:
        return ("iri", term.value)
    num = numeric_value(term)
    if num is not None:
        return ("num", num)
    return ("lit", term.value, term.language or "")


def answer_keys(answer: AnswerSet) -> frozenset:
    return frozenset(tuple(value_key(t) for t in row) for row in answer.rows)


def f1(predicted: AnswerSet, gold: AnswerSet) -> float:
    if predicted.is_boolean or gold.is_boolean:
        if predicted.is_boolean and gold.is_boolean:
            return 1.0 if predicted.truth == gold.truth else 0.0
        return 0.0
    pred, ref = answer_keys(predicted), answer_keys(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    hit = len(pred & ref)
    if hit == 0:
        return 0.0
    precision = hit / len(pred)
    recall = hit / len(ref)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Records and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    f1: float
    selected_query: Optional[str] = None
    selected_rank: Optional[int] = None
    flags: frozenset = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.f1 <= 1.0:
            raise ValueError(f"f1 out of range: {self.f1}")
        unknown = set(self.flags) - set(FLAGS)
        if unknown:
            raise ValueError(f"unknown flags {sorted(unknown)}")
        object.__setattr__(self, "flags", frozenset(self.flags))

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "f1": self.f1,
            "selected_query": self.selected_query,
            "selected_rank": self.selected_rank,
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        return cls(d["question_id"], d["f1"], d.get("selected_query"), d.get("selected_rank"), frozenset(d.get("flags", ())))


@dataclass
class EvalReport:
    count: int
    f1: Optional[float]  # macro average x 100; None when nothing was evaluated
    flag_counts: dict[str, int]
    rank_histogram: dict[str, int]
    records: list[EvalRecord] = field(default_factory=list)
    approach: str = ""
    dataset: str = ""
    template_version: str = ""
    degraded_generation: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "approach": self.approach,
            "dataset": self.dataset,
            "count": self.count,
            "f1": self.f1,
            "flag_counts": self.flag_counts,
            "rank_histogram": self.rank_histogram,
            "template_version": self.template_version,
            "degraded_generation": self.degraded_generation,
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            count=d["count"],
            f1=d["f1"],
            flag_counts=dict(d.get("flag_counts", {})),
            rank_histogram=dict(d.get("rank_histogram", {})),
            records=[EvalRecord.from_dict(r) for r in d.get("records", [])],
            approach=d.get("approach", ""),
            dataset=d.get("dataset", ""),
            template_version=d.get("template_version", ""),
            degraded_generation=d.get("degraded_generation", False),
            config=d.get("config", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def aggregate(records: Sequence[EvalRecord], **labels) -> EvalReport:
    ordered = sorted(records, key=lambda r: r.question_id)
    count = len(ordered)
    mean = 100.0 * math.fsum(r.f1 for r in ordered) / count if count else None
    flags = Counter(flag for r in ordered for flag in r.flags)
    ranks = Counter("none" if r.selected_rank is None else str(r.selected_rank) for r in ordered)
    return EvalReport(
        count=count,
        f1=mean,
        flag_counts={k: flags[k] for k in sorted(flags)},
        rank_histogram={k: ranks[k] for k in sorted(ranks, key=lambda s: (s == "none", int(s) if s.isdigit() else 0))},
        records=ordered,
        **labels,
    )


# ---------------------------------------------------------------------------
# Triple-flip diagnostics
# ---------------------------------------------------------------------------

FLIP = "flip"
NO_FLIP = "no_flip"
NOT_COMPARABLE = "not_comparable"


def triple_flip_status(predicted_query: str, gold_query: str, prefixes=None) -> str:
    try:
        pred = parse(predicted_query, prefixes)
        gold = normalize(parse(gold_query, prefixes))
    except SparqlError:
        return NOT_COMPARABLE
    if normalize(pred) == gold:
        return NO_FLIP
    if any(normalize(v) == gold for v in flip_triples(pred)):
        return FLIP
    return NO_FLIP


def detect_triple_flip(predicted_query: str, gold_query: str, prefixes=None) -> bool:
    """True when one subject/object swap turns the prediction into the gold query."""
    return triple_flip_status(predicted_query, gold_query, prefixes) == FLIP
