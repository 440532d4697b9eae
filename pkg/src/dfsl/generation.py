"""Language-model clients, response caching, and query extraction.

A client turns a :class:`GenerationRequest` into a ranked list of raw
hypotheses.  The real backend speaks a JSON completion protocol; the mock
backends make every downstream step testable without a model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import httpx

from .prompting import Prompt
from .sparql import SparqlError, flip_triples, normalize, parse, render

log = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 256
DECODE_MODES = ("beam", "single")


class GenerationError(RuntimeError):
    pass


class BeamUnsupported(GenerationError):
    pass


class ExtractionFailure(ValueError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: Prompt
    num_hypotheses: int = 1
    max_tokens: int = DEFAULT_MAX_TOKENS
    decode_mode: str = "beam"
    seed: int = 0

    def __post_init__(self):
        if self.num_hypotheses < 1:
            raise ValueError("num_hypotheses must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.decode_mode not in DECODE_MODES:
            raise ValueError(f"unknown decode mode {self.decode_mode!r}")
        if self.decode_mode == "single" and self.num_hypotheses != 1:
            raise ValueError("single decoding produces exactly one hypothesis")


@dataclass(frozen=True)
class GenerationOutput:
    hypotheses: tuple[str, ...]
    backend_id: str
    scores: Optional[tuple[float, ...]] = None
    degraded: bool = False  # sampled completions stood in for beams
    cached: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "hypotheses": list(self.hypotheses),
            "backend_id": self.backend_id,
            "scores": None if self.scores is None else list(self.scores),
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict, cached: bool = False) -> "GenerationOutput":
        scores = d.get("scores")
        return cls(tuple(d["hypotheses"]), d["backend_id"], None if scores is None else tuple(scores), d.get("degraded", False), cached)


class GenerationClient(Protocol):
    backend_id: str

    def complete(self, request: GenerationRequest) -> GenerationOutput: ...


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


class GenerationCache:
    """Content-addressed cache of generation outputs.

    Held in memory and, when ``directory`` is given, mirrored to one JSON
    record per key.  Concurrent writers of the same key write identical
    values, so last-writer-wins is harmless.
    """

    def __init__(self, directory: Optional[Path | str] = None):
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(backend_id: str, request: GenerationRequest) -> str:
        raw = json.dumps([backend_id, request.prompt.fingerprint, request.num_hypotheses, request.max_tokens])
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def get(self, key: str) -> Optional[GenerationOutput]:
        with self._lock:
            record = self._mem.get(key)
        if record is None and self.directory is not None:
            path = self.directory / f"{key}.json"
            if path.exists():
                record = json.loads(path.read_text())["output"]
                with self._lock:
                    self._mem[key] = record
        with self._lock:
            if record is None:
                self.misses += 1
                return None
            self.hits += 1
        return GenerationOutput.from_dict(record, cached=True)

    def put(self, key: str, output: GenerationOutput, request: Optional[GenerationRequest] = None) -> None:
        record = output.to_dict()
        with self._lock:
            self._mem[key] = record
        if self.directory is not None:
            meta = {}
            if request is not None:
                meta = {"fingerprint": request.prompt.fingerprint, "b": request.num_hypotheses, "max_tokens": request.max_tokens}
            tmp = self.directory / f".{key}.{threading.get_ident()}.tmp"
            tmp.write_text(json.dumps({"key": key, "request": meta, "output": record}, indent=1))
            os.replace(tmp, self.directory / f"{key}.json")

    def entries(self) -> list[str]:
        keys = set(self._mem)
        if self.directory is not None:
            keys.update(p.stem for p in self.directory.glob("*.json"))
        return sorted(keys)

    def clear(self) -> int:
        removed = len(self.entries())
        with self._lock:
            self._mem.clear()
        if self.directory is not None:
            for path in self.directory.glob("*.json"):
                path.unlink()
        return removed


def generate(client: GenerationClient, request: GenerationRequest, cache: Optional[GenerationCache] = None) -> GenerationOutput:
    """Up to ``request.num_hypotheses`` hypotheses, best first."""
    key = GenerationCache.key(client.backend_id, request) if cache is not None else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    output = client.complete(request)
    if len(output.hypotheses) > request.num_hypotheses:
        scores = output.scores[: request.num_hypotheses] if output.scores is not None else None
        output = GenerationOutput(output.hypotheses[: request.num_hypotheses], output.backend_id, scores, output.degraded)
    if cache is not None:
        cache.put(key, output, request)
    return output


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


def wrap(query: str) -> str:
    return f"<SPARQL>{query}</SPARQL>"


class RemoteCompletionClient:
    """Client for a JSON completion server.

    Request: ``{model, prompt, n, max_tokens, use_beam_search, best_of,
    temperature, seed}``.  The response may carry ``completions`` or
    ``choices``, each a list of ``{text, score}`` objects.
    """

    def __init__(
        self,
        url: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        max_retries: int = 2,
        backoff: float = 1.0,
        beam_fallback: str = "error",
        transport: Optional[httpx.BaseTransport] = None,
    ):
        if beam_fallback not in ("error", "sampled"):
            raise ValueError("beam_fallback must be 'error' or 'sampled'")
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        self.beam_fallback = beam_fallback
        self.backend_id = f"remote:{model}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteCompletionClient":
        url = os.environ.get("DFSL_BACKEND_URL")
        if not url:
            raise GenerationError("DFSL_BACKEND_URL is not set")
        model = os.environ.get("DFSL_BACKEND_MODEL", "default")
        return cls(url, model, api_key=os.environ.get("DFSL_BACKEND_API_KEY"), **kwargs)

    def _post(self, payload: dict) -> httpx.Response:
        last: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._http.post(self.url, json=payload)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code in (429, 500, 502, 503, 504):
                last = GenerationError(f"HTTP {resp.status_code}")
                continue
            return resp
        raise GenerationError(f"completion backend unreachable after {self.max_retries + 1} attempts: {last}")

    @staticmethod
    def _parse(resp: httpx.Response) -> list[tuple[str, Optional[float]]]:
        try:
            doc = resp.json()
            items = doc if isinstance(doc, list) else doc.get("completions", doc.get("choices"))
            out = []
            for item in items:
                if isinstance(item, str):
                    out.append((item, None))
                else:
                    score = item.get("score", item.get("logprob"))
                    out.append((item["text"], None if score is None else float(score)))
            return out
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise GenerationError(f"malformed completion response: {exc}") from None

    def _payload(self, request: GenerationRequest, n: int, seed: int) -> dict:
        beam = request.decode_mode == "beam" and n > 1
        return {
            "model": self.model,
            "prompt": request.prompt.text,
            "n": n,
            "max_tokens": request.max_tokens,
            "use_beam_search": beam,
            "best_of": n,
            "temperature": 0.0,
            "seed": seed,
        }

    def _sampled(self, request: GenerationRequest) -> GenerationOutput:
        texts, scores = [], []
        for i in range(request.num_hypotheses):
            resp = self._post(self._payload(request, 1, request.seed + i))
            if resp.status_code >= 400:
                raise GenerationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            (text, score), *_ = self._parse(resp) or [("", None)]
            texts.append(text)
            scores.append(score)
        has_scores = all(s is not None for s in scores)
        return GenerationOutput(tuple(texts), self.backend_id, tuple(scores) if has_scores else None, degraded=True)

    def complete(self, request: GenerationRequest) -> GenerationOutput:
        b = request.num_hypotheses
        resp = self._post(self._payload(request, b, request.seed))
        refused = resp.status_code in (400, 422) and b > 1
        if not refused and resp.status_code >= 400:
            raise GenerationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        items = [] if refused else self._parse(resp)
        if b > 1 and (refused or len(items) < min(b, 2)):
            if self.beam_fallback == "sampled":
                log.warning("backend %s returned no beams; using %d sampled completions", self.backend_id, b)
                return self._sampled(request)
            raise BeamUnsupported(
                f"backend {self.backend_id} cannot return {b} hypotheses; "
                "configure beam_fallback='sampled' or request a single hypothesis"
            )
        scores = [s for _, s in items]
        has_scores = bool(items) and all(s is not None for s in scores)
        return GenerationOutput(tuple(t for t, _ in items), self.backend_id, tuple(scores) if has_scores else None)


class EchoMockClient:
    """Answers with the queries of the most similar demonstrations."""

    backend_id = "echo-mock"
    fallback_text = "I cannot answer this question."

    def __init__(self):
        self.calls = 0

    def complete(self, request: GenerationRequest) -> GenerationOutput:
        self.calls += 1
        queries = request.prompt.demo_queries[: request.num_hypotheses]
        hyps = tuple(wrap(q) for q in queries) or (self.fallback_text,)
        return GenerationOutput(hyps, self.backend_id)


class ScriptedMockClient:
    """Replays a fixed transcript keyed by prompt fingerprint."""

    def __init__(self, transcript: Mapping[str, Sequence[str]], default: Optional[Sequence[str]] = None, backend_id: str = "scripted-mock"):
        self.transcript = {k: tuple(v) for k, v in transcript.items()}
        self.default = tuple(default) if default is not None else None
        self.backend_id = backend_id
        self.calls = 0

    @classmethod
    def from_file(cls, path, **kwargs) -> "ScriptedMockClient":
        doc = json.loads(Path(path).read_text())
        return cls(doc["transcript"] if "transcript" in doc else doc, **kwargs)

    def complete(self, request: GenerationRequest) -> GenerationOutput:
        self.calls += 1
        hyps = self.transcript.get(request.prompt.fingerprint, self.default)
        if hyps is None:
            raise GenerationError(f"no scripted response for prompt {request.prompt.fingerprint[:12]}")
        return GenerationOutput(tuple(hyps), self.backend_id)


def flip_first(query_text: str) -> Optional[str]:
    """The query with its first flippable pattern reversed, or None."""
    try:
        variants = flip_triples(parse(query_text))
    except SparqlError:
        return None
    return render(variants[0]) if variants else None


class FlipMockClient:
    """Emits a correct query and its triple-flip at chosen beam positions.

    The correct query is looked up by question in ``answers`` when given,
    otherwise it is the most similar demonstration's query.  Beam positions
    are 1-based.
    """

    def __init__(self, correct_position: int = 2, flipped_position: int = 1, answers: Optional[Mapping[str, str]] = None):
        if correct_position == flipped_position or min(correct_position, flipped_position) < 1:
            raise ValueError("beam positions must be distinct and >= 1")
        self.correct_position = correct_position
        self.flipped_position = flipped_position
        self.answers = dict(answers or {})
        self.backend_id = f"flip-mock:{flipped_position}-{correct_position}"
        self.calls = 0

    def complete(self, request: GenerationRequest) -> GenerationOutput:
        self.calls += 1
        correct = self.answers.get(request.prompt.question)
        if correct is None and request.prompt.demo_queries:
            correct = request.prompt.demo_queries[0]
        if correct is None:
            return GenerationOutput((EchoMockClient.fallback_text,), self.backend_id)
        flipped = flip_first(correct)
        slots = {self.correct_position: correct}
        if flipped is not None:
            slots[self.flipped_position] = flipped
        hyps = tuple(wrap(slots[pos]) for pos in sorted(slots))
        return GenerationOutput(hyps[: request.num_hypotheses], self.backend_id)


# ---------------------------------------------------------------------------
# Extraction and deduplication
# ---------------------------------------------------------------------------

_TAGGED = re.compile(r"<SPARQL>(.*?)</SPARQL>", re.DOTALL | re.IGNORECASE)
_QUERY_START = re.compile(r"\b(SELECT|ASK|PREFIX)\b", re.IGNORECASE)
_FENCE = re.compile(r"\s*```\s*$")


@dataclass(frozen=True)
class Extraction:
    query: str
    lenient: bool = False


def extract_query(raw: str) -> Extraction:
    """Content of the first ``<SPARQL>...</SPARQL>`` pair, else a bare query."""
    m = _TAGGED.search(raw)
    if m is not None:
        return Extraction(m.group(1).strip())
    start = _QUERY_START.search(raw)
    if start is None:
        raise ExtractionFailure("no <SPARQL> tags and no query-like text in model output")
    text = _FENCE.sub("", raw[start.start():]).strip()
    return Extraction(text, lenient=True)


def extract_all(raw: str) -> list[Extraction]:
    """Every tagged query in order; falls back to :func:`extract_query`."""
    found = [Extraction(m.group(1).strip()) for m in _TAGGED.finditer(raw)]
    found = [e for e in found if e.query]
    return found or [extract_query(raw)]


def dedupe_key(query: str, prefixes=None) -> str:
    try:
        return "normal:" + normalize(parse(query, prefixes))
    except SparqlError:
        return "text:" + query.strip()


def dedupe_hypotheses(hyps: Sequence[str], prefixes=None) -> list[str]:
    seen: set[str] = set()
    out = []
    for h in hyps:
        key = dedupe_key(h, prefixes)
        if key not in seen:
            seen.add(key)
            out.append(h)
    return out
