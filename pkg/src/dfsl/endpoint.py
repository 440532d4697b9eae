"""SPARQL protocol client returning :class:`~dfsl.sparql.AnswerSet`.

Also ships :class:`LocalEndpoint`, a tiny HTTP server that answers the
same protocol from an in-memory graph, so remote and hermetic execution
can be compared.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Sequence
from urllib.parse import parse_qs, urlparse

import httpx

from .kg import KnowledgeGraph, Term
from .sparql import DEFAULT_PREFIXES, AnswerSet, SparqlError, execute

log = logging.getLogger(__name__)

RESULTS_JSON = "application/sparql-results+json"
TRANSIENT_STATUS = frozenset({429, 500, 502, 503, 504})
MAX_GET_LENGTH = 2000


class ExecutionFailure(Exception):
    """A query could not be executed; ``category`` says why."""

    TIMEOUT = "timeout"
    HTTP_ERROR = "http_error"
    MALFORMED = "malformed_response"
    TRANSPORT = "transport"
    QUERY_ERROR = "query_error"

    def __init__(self, category: str, message: str):
        super().__init__(f"{category}: {message}")
        self.category = category


class MalformedResponse(ExecutionFailure):
    def __init__(self, message: str):
        super().__init__(ExecutionFailure.MALFORMED, message)


@dataclass
class EndpointConfig:
    url: str
    timeout: float = 30.0
    max_retries: int = 3
    user_agent: str = "dfsl-kgqa/0.1"
    backoff: float = 0.5
    min_interval: float = 0.2
    max_concurrency: int = 4
    headers: dict[str, str] = field(default_factory=dict)
    method: str = "auto"  # "get" | "post" | "auto"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


def _term_from_json(node: dict) -> Term:
    kind = node.get("type")
    value = node.get("value")
    if not isinstance(value, str):
        raise MalformedResponse(f"binding without string value: {node!r}")
    if kind == "uri":
        return Term.iri(value)
    if kind in ("literal", "typed-literal"):
        return Term.literal(value, node.get("datatype"), node.get("xml:lang"))
    if kind == "bnode":
        return Term.iri("_:" + value)
    raise MalformedResponse(f"unknown term type {kind!r}")


def parse_results(body: bytes | str) -> AnswerSet:
    """Parse a SPARQL JSON results document."""
    try:
        doc = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedResponse(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedResponse("results document is not an object")
    if "boolean" in doc:
        if not isinstance(doc["boolean"], bool):
            raise MalformedResponse("'boolean' is not true/false")
        return AnswerSet.boolean(doc["boolean"])
    results = doc.get("results")
    if not isinstance(results, dict) or not isinstance(results.get("bindings"), list):
        raise MalformedResponse("document has neither 'boolean' nor 'results.bindings'")
    variables = list((doc.get("head") or {}).get("vars") or [])
    rows = []
    try:
        for binding in results["bindings"]:
            for name in binding:
                if name not in variables:
                    variables.append(name)
            rows.append(binding)
        parsed = [tuple(_term_from_json(b[v]) if v in b else None for v in variables) for b in rows]
    except (TypeError, AttributeError, ValueError) as exc:
        raise MalformedResponse(f"bad binding: {exc}") from None
    return AnswerSet.bindings(variables, parsed)


class _RateLimiter:
    def __init__(self, min_interval: float):
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + self.min_interval
        if delay > 0:
            time.sleep(delay)


class EndpointClient:
    """Thread-safe client for one endpoint.

    Retries transport errors and 429/5xx responses with exponential backoff.
    """

    def __init__(self, config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {"Accept": RESULTS_JSON, "User-Agent": config.user_agent, **config.headers}
        self._http = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self._limiter = _RateLimiter(config.min_interval)
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self.requests_sent = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, query: str) -> httpx.Response:
        use_post = self.config.method == "post" or (self.config.method == "auto" and len(query) > MAX_GET_LENGTH)
        self._limiter.wait()
        self.requests_sent += 1
        if use_post:
            return self._http.post(self.config.url, data={"query": query})
        return self._http.get(self.config.url, params={"query": query})

    def execute(self, query: str) -> AnswerSet:
        if not query or not query.strip():
            raise ValueError("query text is empty")
        attempts = self.config.max_retries + 1
        last: Optional[ExecutionFailure] = None
        with self._slots:
            for attempt in range(attempts):
                if attempt:
                    time.sleep(self.config.backoff * (2 ** (attempt - 1)))
                try:
                    response = self._send(query)
                except httpx.TimeoutException as exc:
                    last = ExecutionFailure(ExecutionFailure.TIMEOUT, str(exc) or "request timed out")
                    continue
                except httpx.TransportError as exc:
                    last = ExecutionFailure(ExecutionFailure.TRANSPORT, str(exc))
                    continue
                if response.status_code in TRANSIENT_STATUS:
                    last = ExecutionFailure(ExecutionFailure.HTTP_ERROR, f"HTTP {response.status_code}")
                    continue
                if response.status_code >= 400:
                    raise ExecutionFailure(ExecutionFailure.HTTP_ERROR, f"HTTP {response.status_code}: {response.text[:200]}")
                return parse_results(response.content)
        log.warning("giving up on query after %d attempts: %s", attempts, last)
        assert last is not None
        raise last

    def execute_many(self, queries: Sequence[str]) -> list[AnswerSet | ExecutionFailure]:
        """Run queries concurrently; failures are returned in place, not raised."""

        def run(q: str):
            try:
                return self.execute(q)
            except ExecutionFailure as exc:
                return exc

        with ThreadPoolExecutor(max_workers=self.config.max_concurrency) as pool:
            return list(pool.map(run, queries))


def execute_remote(config: EndpointConfig, query: str, transport: Optional[httpx.BaseTransport] = None) -> AnswerSet:
    with EndpointClient(config, transport=transport) as client:
        return client.execute(query)


# ---------------------------------------------------------------------------
# Local stub endpoint
# ---------------------------------------------------------------------------


class LocalEndpoint:
    """Serve a graph over the SPARQL protocol on localhost.

    Use as a context manager; ``url`` is valid while it is open.
    """

    def __init__(self, graph: KnowledgeGraph, prefixes=None, host: str = "127.0.0.1", port: int = 0):
        self.graph = graph
        self.prefixes = DEFAULT_PREFIXES if prefixes is None else prefixes
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug("stub endpoint: " + fmt, *args)

            def _answer(self, query: Optional[str]):
                if not query:
                    self._reply(400, b"missing query parameter", "text/plain")
                    return
                try:
                    answer = execute(query, endpoint.graph, endpoint.prefixes)
                except SparqlError as exc:
                    self._reply(400, str(exc).encode(), "text/plain")
                    return
                self._reply(200, json.dumps(answer.to_json()).encode(), RESULTS_JSON)

            def _reply(self, status: int, body: bytes, ctype: str):
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                params = parse_qs(urlparse(self.path).query)
                self._answer((params.get("query") or [None])[0])

            def do_POST(self):
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length).decode("utf-8")
                if self.headers.get("Content-Type", "").startswith("application/sparql-query"):
                    self._answer(raw)
                else:
                    self._answer((parse_qs(raw).get("query") or [None])[0])

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/sparql"

    def start(self) -> "LocalEndpoint":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "LocalEndpoint":
        return self.start()

    def __exit__(self, *exc):
        self.stop()
