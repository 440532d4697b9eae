"""Loaders for QALD, LC-QuAD 2.0 and generic JSONL benchmark files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from ..endpoint import ExecutionFailure, parse_results
from ..kg import Term
from ..retrieval import Example, LabeledIri
from ..sparql import AnswerSet, SparqlError, parse

log = logging.getLogger(__name__)

FORMATS = ("qald_json", "lcquad2_json", "generic_jsonl")

GENERIC_FIELDS = {
    "id": "id",
    "question": "question",
    "entities": "entities",
    "relations": "relations",
    "query": "query",
    "answers": "answers",
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkRecord:
    question_id: str
    question: str
    gold_entities: tuple[LabeledIri, ...]
    gold_relations: tuple[LabeledIri, ...]
    gold_query: str
    gold_answers: Optional[AnswerSet] = None
    derived_annotations: bool = False

    def to_example(self) -> Example:
        return Example(self.question, self.gold_entities, self.gold_relations, self.gold_query)


class Dataset(list):
    """List of records that also remembers how many source rows were skipped."""

    def __init__(self, records=(), name: str = "", skipped: int = 0):
        super().__init__(records)
        self.name = name
        self.skipped = skipped

    def examples(self) -> list[Example]:
        return [r.to_example() for r in self]


def local_name(iri: str) -> str:
    for sep in ("#", "/", ":"):
        if sep in iri:
            tail = iri.rsplit(sep, 1)[1]
            if tail:
                return tail
    return iri


def derive_annotations(query: str, labels: Optional[Mapping[Term, str]] = None, prefixes=None):
    """Entities (subject/object IRIs) and relations (predicate IRIs) of a query."""
    labels = labels or {}
    try:
        ast = parse(query, prefixes)
    except SparqlError:
        return (), ()
    entities: dict[str, str] = {}
    relations: dict[str, str] = {}
    for pattern in ast.patterns:
        for term, bucket in ((pattern.subject, entities), (pattern.predicate, relations), (pattern.object, entities)):
            if term.is_iri and term.value not in bucket:
                bucket[term.value] = labels.get(term, local_name(term.value))
    for flt in ast.filters:
        if flt.operand.is_iri and flt.operand.value not in entities:
            entities[flt.operand.value] = labels.get(flt.operand, local_name(flt.operand.value))
    return tuple(entities.items()), tuple(relations.items())


def _pairs(raw) -> Optional[tuple[LabeledIri, ...]]:
    if raw is None:
        return None
    out = []
    for item in raw:
        if isinstance(item, Mapping):
            iri = item.get("iri") or item.get("uri") or item.get("id")
            out.append((iri, item.get("label") or local_name(iri)))
        elif isinstance(item, str):
            out.append((item, local_name(item)))
        else:
            iri, label = item
            out.append((iri, label))
    return tuple(out)


def _answers(raw) -> Optional[AnswerSet]:
    if raw is None:
        return None
    if isinstance(raw, list):
        if not raw:
            return None
        raw = raw[0]
    try:
        return parse_results(json.dumps(raw))
    except ExecutionFailure as exc:
        raise DatasetError(f"unreadable answers block: {exc}") from None


def _build(qid, question, entities, relations, query, answers, labels, prefixes) -> BenchmarkRecord:
    derived = False
    if entities is None or relations is None:
        d_ent, d_rel = derive_annotations(query, labels, prefixes)
        entities = d_ent if entities is None else entities
        relations = d_rel if relations is None else relations
        derived = True
    return BenchmarkRecord(str(qid), question.strip(), tuple(entities), tuple(relations), query.strip(), answers, derived)


def _load_qald(doc, labels, prefixes, language="en"):
    rows = doc["questions"] if isinstance(doc, dict) else doc
    records, skipped = [], 0
    for row in rows:
        question = next(
            (q.get("string") for q in row.get("question", []) if q.get("language") == language and q.get("string")),
            None,
        )
        query = (row.get("query") or {}).get("sparql")
        if not question or not query:
            skipped += 1
            continue
        records.append(
            _build(
                row.get("id"), question, _pairs(row.get("entities")), _pairs(row.get("relations")),
                query, _answers(row.get("answers")), labels, prefixes,
            )
        )
    return records, skipped


def _load_lcquad(doc, labels, prefixes):
    records, skipped = [], 0
    for row in doc:
        question = row.get("question") or row.get("paraphrased_question")
        query = row.get("sparql_wikidata") or row.get("sparql")
        if not isinstance(question, str) or not question.strip() or question.strip().lower() in ("n/a", "[]") or not query:
            skipped += 1
            continue
        records.append(
            _build(
                row.get("uid", len(records)), question, _pairs(row.get("entities")), _pairs(row.get("relations")),
                query, _answers(row.get("answers")), labels, prefixes,
            )
        )
    return records, skipped


def _load_generic(text, labels, prefixes, field_map):
    fields = {**GENERIC_FIELDS, **(field_map or {})}
    records, skipped = [], 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise DatasetError(f"line {line_no}: invalid JSON ({exc})") from None
        question = row.get(fields["question"])
        query = row.get(fields["query"])
        if not question or not query:
            skipped += 1
            continue
        records.append(
            _build(
                row.get(fields["id"], line_no), question, _pairs(row.get(fields["entities"])),
                _pairs(row.get(fields["relations"])), query, _answers(row.get(fields["answers"])), labels, prefixes,
            )
        )
    return records, skipped


def load_dataset(
    path,
    format: str,
    labels: Optional[Mapping[Term, str]] = None,
    prefixes=None,
    field_map: Optional[Mapping[str, str]] = None,
    name: Optional[str] = None,
) -> Dataset:
    """Read a benchmark file into :class:`BenchmarkRecord` objects.

    Rows without an English question or a gold query are skipped and
    counted in ``Dataset.skipped``.  Missing entity/relation annotations
    are derived from the gold query's IRIs, labelled from ``labels``.
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if format == "generic_jsonl":
            records, skipped = _load_generic(text, labels, prefixes, field_map)
        else:
            doc = json.loads(text)
            loader = _load_qald if format == "qald_json" else _load_lcquad
            records, skipped = loader(doc, labels, prefixes)
    except (KeyError, TypeError, AttributeError) as exc:
        raise DatasetError(f"{path}: does not look like {format}: {exc!r}") from None
    except ValueError as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"{path}: {exc}") from None
    if skipped:
        log.warning("%s: skipped %d record(s) without a usable question or gold query", path, skipped)
    if not records:
        raise DatasetError(f"{path}: no usable records")
    ids = [r.question_id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate question ids")
    return Dataset(records, name=name or path.stem, skipped=skipped)
