"""End-to-end benchmark orchestration: retrieve, prompt, generate, execute, score."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from ..endpoint import EndpointClient, EndpointConfig, ExecutionFailure, parse_results
from ..evaluation import (
    CandidateAnswer,
    EvalRecord,
    EvalReport,
    aggregate,
    detect_triple_flip,
    f1,
    select_fs,
    select_ls,
)
from ..generation import (
    EchoMockClient,
    ExtractionFailure,
    FlipMockClient,
    GenerationCache,
    GenerationClient,
    GenerationError,
    GenerationRequest,
    RemoteCompletionClient,
    ScriptedMockClient,
    dedupe_hypotheses,
    extract_all,
    extract_query,
    generate,
)
from ..kg import ContractViolation, load_graph_file
from ..prompting import ABLATIONS, MODES, ORDER_POLICIES, Prompt, PromptConfig, build_prompt, load_template, static_examples
from ..retrieval import Embedder, HashingEmbedder, RemoteEmbedder, build_store
from ..sparql import DEFAULT_PREFIXES, AnswerSet, SparqlError, execute
from .datasets import FORMATS, BenchmarkRecord, Dataset, load_dataset

log = logging.getLogger(__name__)

SELECTIONS = ("single", "ls", "fs")
EXECUTORS = ("hermetic", "remote")
EMBEDDINGS = ("full", "question_only")

Executor = Callable[[str], AnswerSet]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str
    dataset_format: str = "generic_jsonl"
    dataset_name: Optional[str] = None
    storage: Optional[str] = None
    storage_format: Optional[str] = None
    mode: str = "dfsl"
    kg_name: str = "Wikidata"
    k: int = 5
    b: Optional[int] = None
    selection: str = "single"
    executor: str = "hermetic"
    graph: Optional[str] = None
    endpoint_url: Optional[str] = None
    endpoint_timeout: float = 30.0
    backend: str = "echo"  # echo | flip | scripted | remote
    transcript: Optional[str] = None
    flip_correct: int = 2
    flip_flipped: int = 1
    beam_fallback: str = "error"
    embedder: str = "hashing"  # hashing | remote
    embedding: str = "full"
    ablation: str = "full"
    order: str = "most_similar_last"
    strict_retrieval: bool = False
    seed: int = 0
    template_version: str = "1"
    max_tokens: int = 256
    workers: int = 4
    out_dir: Optional[str] = None
    cache_dir: Optional[str] = None
    approach: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"unknown selection {self.selection!r}; expected one of {SELECTIONS}")
        if self.executor not in EXECUTORS:
            raise ConfigError(f"unknown executor {self.executor!r}; expected one of {EXECUTORS}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.embedding not in EMBEDDINGS:
            raise ConfigError(f"unknown embedding {self.embedding!r}; expected one of {EMBEDDINGS}")
        if self.order not in ORDER_POLICIES:
            raise ConfigError(f"unknown order {self.order!r}")
        for fmt in (self.dataset_format, self.storage_format):
            if fmt is not None and fmt not in FORMATS:
                raise ConfigError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
        if self.backend not in ("echo", "flip", "scripted", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.embedder not in ("hashing", "remote"):
            raise ConfigError(f"unknown embedder {self.embedder!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.b is not None and self.b < 1:
            raise ConfigError("b must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def num_hypotheses(self) -> int:
        if self.b is not None:
            return self.b
        return 10 if self.mode == "dfsl" and self.selection != "single" else 3

    @property
    def encoding_mode(self) -> str:
        return self.ablation if self.ablation != "full" else self.embedding

    @property
    def label(self) -> str:
        if self.approach:
            return self.approach
        base = {
            "plain": "Plain",
            "zero_shot": "Zero-shot",
            "few_shot_static": "Few-shot",
            "dfsl": "DFSL",
            "dfsl_mqp": "DFSL-MQP",
        }[self.mode]
        if self.mode == "dfsl" and self.selection != "single":
            base += "-MQ"
        if self.selection != "single":
            base += "_" + self.selection.upper()
        suffix = {"no_entities": " w/o E", "no_relations": " w/o R", "no_both": " w/o E,R"}.get(self.ablation, "")
        if self.embedding == "question_only" and self.ablation == "full":
            suffix += " (q-only)"
        return base + suffix

    def to_dict(self) -> dict:
        return {**dataclasses.asdict(self), "b": self.num_hypotheses}

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "RunConfig":
        """Build from string-valued settings, e.g. a config file section."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(fields)
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, raw in values.items():
            kwargs[name] = _coerce(fields[name].type, raw, name)
        if "dataset" not in kwargs:
            raise ConfigError("setting 'dataset' is required")
        return cls(**kwargs)


def _coerce(type_name: str, raw: Any, name: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "Optional" in type_name and text.lower() in ("", "none"):
        return None
    try:
        if "bool" in type_name:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in type_name:
            return int(text)
        if "float" in type_name:
            return float(text)
    except ValueError:
        raise ConfigError(f"setting {name!r}: cannot read {raw!r} as {type_name}") from None
    return text


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------


def make_client(config: RunConfig) -> GenerationClient:
    if config.backend == "echo":
        return EchoMockClient()
    if config.backend == "flip":
        return FlipMockClient(config.flip_correct, config.flip_flipped)
    if config.backend == "scripted":
        if not config.transcript:
            raise ConfigError("backend 'scripted' needs a transcript file")
        return ScriptedMockClient.from_file(config.transcript)
    try:
        return RemoteCompletionClient.from_env(beam_fallback=config.beam_fallback)
    except GenerationError as exc:
        raise ConfigError(str(exc)) from None


def make_embedder(config: RunConfig) -> Embedder:
    if config.embedder == "hashing":
        return HashingEmbedder()
    try:
        return RemoteEmbedder.from_env()
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(str(exc)) from None


def hermetic_executor(graph, prefixes=None) -> Executor:
    prefixes = DEFAULT_PREFIXES if prefixes is None else prefixes

    def run(query: str) -> AnswerSet:
        try:
            return execute(query, graph, prefixes)
        except (SparqlError, ContractViolation) as exc:
            raise ExecutionFailure(ExecutionFailure.QUERY_ERROR, str(exc)) from None

    return run


def make_executor(config: RunConfig) -> Executor:
    if config.executor == "hermetic":
        if not config.graph:
            raise ConfigError("hermetic executor needs a graph file")
        return hermetic_executor(load_graph_file(config.graph))
    url = config.endpoint_url or os.environ.get("DFSL_ENDPOINT_URL")
    if not url:
        raise ConfigError("remote executor needs endpoint_url or DFSL_ENDPOINT_URL")
    client = EndpointClient(EndpointConfig(url, timeout=config.endpoint_timeout))
    return client.execute


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class RecordResult:
    record: EvalRecord
    artifact: dict
    degraded: bool = False


@dataclass
class Pipeline:
    """All run components, resolved and validated before any record is processed."""

    config: RunConfig
    dataset: Dataset
    client: GenerationClient
    executor: Executor
    embedder: Optional[Embedder] = None
    store: Any = None
    cache: Optional[GenerationCache] = None
    prefixes: Mapping[str, str] = field(default_factory=lambda: DEFAULT_PREFIXES)

    @classmethod
    def build(
        cls,
        config: RunConfig,
        client: Optional[GenerationClient] = None,
        executor: Optional[Executor] = None,
        embedder: Optional[Embedder] = None,
    ) -> "Pipeline":
        try:
            load_template(f"prompt_v{config.template_version}.txt")
        except (FileNotFoundError, ValueError):
            raise ConfigError(f"no prompt template with version {config.template_version!r}") from None
        graph = load_graph_file(config.graph) if config.executor == "hermetic" and config.graph else None
        labels = graph.labels if graph is not None else None
        dataset = load_dataset(config.dataset, config.dataset_format, labels=labels, name=config.dataset_name)
        if executor is None and graph is not None:
            executor = hermetic_executor(graph)
        store = None
        if config.mode in ("dfsl", "dfsl_mqp"):
            if not config.storage:
                raise ConfigError(f"mode {config.mode} needs a storage file of solved examples")
            storage = load_dataset(config.storage, config.storage_format or config.dataset_format, labels=labels)
            embedder = embedder or make_embedder(config)
            store = build_store(storage.examples(), embedder, mode=config.encoding_mode)
        if config.mode == "few_shot_static" and config.k != len(static_examples()):
            raise ConfigError(f"static few-shot ships {len(static_examples())} examples; k={config.k} does not match")
        cache = GenerationCache(config.cache_dir) if config.cache_dir else None
        return cls(
            config=config,
            dataset=dataset,
            client=client or make_client(config),
            executor=executor or make_executor(config),
            embedder=embedder,
            store=store,
            cache=cache,
        )

    def prompt_config(self) -> PromptConfig:
        c = self.config
        statics = tuple(static_examples()) if c.mode == "few_shot_static" else ()
        k = c.k if c.mode in ("dfsl", "dfsl_mqp", "few_shot_static") else 0
        return PromptConfig(c.mode, c.kg_name, k, c.ablation, statics, c.order)

    def prompt_for(self, record: BenchmarkRecord) -> Prompt:
        c = self.config
        pconfig = self.prompt_config()
        demos = None
        if self.store is not None:
            hits = self.store.retrieve(
                self.embedder, record.question, record.gold_entities, record.gold_relations,
                c.k, strict=c.strict_retrieval,
            )
            demos = [ex for ex, _ in hits]
            if len(demos) < c.k:
                raise ContractViolation(f"storage holds only {len(demos)} usable examples, k={c.k}")
        template = load_template(f"prompt_v{c.template_version}.txt")
        return build_prompt(pconfig, record.question, record.gold_entities, record.gold_relations, demos, template)

    def _candidates(self, hypotheses, flags: set) -> list[str]:
        """Extracted queries in beam order, deduplicated."""
        c = self.config
        considered = hypotheses if c.selection != "single" or c.mode == "dfsl_mqp" else hypotheses[:1]
        queries = []
        for hyp in considered:
            try:
                found = extract_all(hyp) if c.mode == "dfsl_mqp" else [extract_query(hyp)]
            except ExtractionFailure:
                flags.add("extraction_failure")
                continue
            for ex in found:
                if ex.lenient:
                    flags.add("lenient_extraction")
                queries.append(ex.query)
        queries = dedupe_hypotheses(queries, self.prefixes)
        if c.selection == "single":
            queries = queries[:1]
        return queries

    def _gold(self, record: BenchmarkRecord, flags: set) -> AnswerSet:
        if record.gold_answers is not None:
            return record.gold_answers
        try:
            return self.executor(record.gold_query)
        except ExecutionFailure as exc:
            log.warning("gold query of %s failed: %s", record.question_id, exc)
            flags.add("gold_execution_failure")
            return AnswerSet.empty()

    def run_record(self, record: BenchmarkRecord) -> RecordResult:
        c = self.config
        flags: set[str] = set()
        prompt = self.prompt_for(record)
        b = c.num_hypotheses
        request = GenerationRequest(prompt, b, c.max_tokens, "beam" if b > 1 else "single", c.seed)
        try:
            output = generate(self.client, request, self.cache)
            hypotheses, degraded = list(output.hypotheses), output.degraded
        except GenerationError as exc:
            log.warning("generation failed for %s: %s", record.question_id, exc)
            hypotheses, degraded = [], False
        queries = self._candidates(hypotheses, flags)
        if not queries:
            flags.add("extraction_failure")

        executed: dict[str, Any] = {}

        def run(query: str) -> AnswerSet:
            try:
                answer = self.executor(query)
            except ExecutionFailure as exc:
                flags.add("execution_failure")
                executed[query] = exc
                raise
            executed[query] = answer
            return answer

        if not queries:
            predicted, rank = AnswerSet.empty(), None
        elif c.selection == "fs":
            predicted, rank = select_fs(queries, run)
        else:
            cands = []
            for i, q in enumerate(queries, start=1):
                try:
                    outcome = run(q)
                except ExecutionFailure as exc:
                    outcome = exc
                cands.append(CandidateAnswer(q, i, outcome))
            predicted, rank = select_ls(cands)
        selected = queries[rank - 1] if rank is not None else None

        gold = self._gold(record, flags)
        score = f1(predicted, gold)
        if queries and detect_triple_flip(queries[0], record.gold_query, self.prefixes):
            flags.add("triple_flip_detected")
        result = EvalRecord(record.question_id, score, selected, rank, frozenset(flags))
        artifact = {
            "question_id": record.question_id,
            "question": record.question,
            "prompt": prompt.text,
            "prompt_fingerprint": prompt.fingerprint,
            "hypotheses": hypotheses,
            "candidates": [
                {
                    "rank": i,
                    "query": q,
                    "executed": q in executed,
                    "failure": str(executed[q]) if isinstance(executed.get(q), ExecutionFailure) else None,
                    "answer": executed[q].to_json() if isinstance(executed.get(q), AnswerSet) else None,
                }
                for i, q in enumerate(queries, start=1)
            ],
            "predicted": predicted.to_json(),
            "gold": gold.to_json(),
            "degraded_generation": degraded,
            "record": result.to_dict(),
        }
        return RecordResult(result, artifact, degraded)


def _artifact_name(index: int, question_id: str) -> str:
    return f"{index:05d}_{re.sub(r'[^A-Za-z0-9_.-]', '_', question_id)[:80]}.json"


def run_benchmark(
    config: RunConfig,
    client: Optional[GenerationClient] = None,
    executor: Optional[Executor] = None,
    embedder: Optional[Embedder] = None,
) -> EvalReport:
    """Run every record through the pipeline and aggregate the scores.

    Configuration problems raise :class:`ConfigError` before any record is
    processed; per-record problems only set flags on that record.
    """
    pipeline = Pipeline.build(config, client, executor, embedder)
    records = list(pipeline.dataset)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(pipeline.run_record, records))
    labels = dict(
        approach=config.label,
        dataset=pipeline.dataset.name,
        template_version=config.template_version,
        degraded_generation=any(r.degraded for r in results),
        config=config.to_dict(),
    )
    report = aggregate([r.record for r in results], **labels)
    if config.out_dir:
        write_artifacts(Path(config.out_dir), results, report)
    return report


def write_artifacts(out_dir: Path, results: list[RecordResult], report: EvalReport) -> None:
    records_dir = out_dir / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    for i, res in enumerate(results):
        path = records_dir / _artifact_name(i, res.record.question_id)
        path.write_text(json.dumps(res.artifact, indent=1, sort_keys=True), encoding="utf-8")
    meta = {k: v for k, v in report.to_dict().items() if k not in ("records", "count", "f1", "flag_counts", "rank_histogram")}
    (out_dir / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")


def replay(out_dir) -> EvalReport:
    """Recompute a report from persisted per-question artifacts alone."""
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "run.json").read_text(encoding="utf-8"))
    records = []
    for path in sorted((out_dir / "records").glob("*.json")):
        art = json.loads(path.read_text(encoding="utf-8"))
        stored = EvalRecord.from_dict(art["record"])
        predicted = parse_results(json.dumps(art["predicted"]))
        gold = parse_results(json.dumps(art["gold"]))
        records.append(dataclasses.replace(stored, f1=f1(predicted, gold)))
    return aggregate(records, **meta)
