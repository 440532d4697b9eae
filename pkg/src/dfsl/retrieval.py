"""Storage of solved text-to-SPARQL examples and cosine top-k retrieval."""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx
import numpy as np

ENCODING_MODES = ("full", "question_only", "no_entities", "no_relations", "no_both")

# Retrieval scores closer than this are treated as ties (broken by source_index).
SCORE_TIE_DECIMALS = 12

DEFAULT_REMOTE_MODEL = "sentence-transformers/all-mpnet-base-v2"

LabeledIri = tuple[str, str]  # (iri, label)


class EmbeddingError(RuntimeError):
    pass


class EncoderMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    question: str
    entities: tuple[LabeledIri, ...] = ()
    relations: tuple[LabeledIri, ...] = ()
    query: str = ""
    source_index: int = -1

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("example question is empty")
        if not self.query.strip():
            raise ValueError("example query is empty")
        object.__setattr__(self, "entities", tuple(tuple(e) for e in self.entities))
        object.__setattr__(self, "relations", tuple(tuple(r) for r in self.relations))

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "entities": [list(e) for e in self.entities],
            "relations": [list(r) for r in self.relations],
            "query": self.query,
            "source_index": self.source_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Example":
        return cls(
            question=d["question"],
            entities=tuple(tuple(e) for e in d.get("entities", ())),
            relations=tuple(tuple(r) for r in d.get("relations", ())),
            query=d["query"],
            source_index=d.get("source_index", -1),
        )


def format_items(items: Sequence[LabeledIri]) -> str:
    """``label (iri)`` pairs joined by ``"; "``."""
    return "; ".join(f"{label} ({iri})" for iri, label in items)


def encode_input(question: str, entities: Sequence[LabeledIri], relations: Sequence[LabeledIri], mode: str = "full") -> str:
    if mode not in ENCODING_MODES:
        raise ValueError(f"unknown encoding mode {mode!r}")
    lines = [question]
    if mode in ("full", "no_relations"):
        lines.append("Entities: " + format_items(entities))
    if mode in ("full", "no_entities"):
        lines.append("Relations: " + format_items(relations))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------


class Embedder(Protocol):
    id: str
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Character-trigram counts hashed into ``dim`` buckets, L2-normalized.

    Texts shorter than three characters contribute themselves as one gram;
    the empty string maps to the zero vector.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.id = f"trigram-hash-{dim}"

    def counts(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        grams = [text[i : i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else ([text] if text else [])
        for gram in grams:
            vec[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
        return vec

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        return np.vstack([_unit(self.counts(t)) for t in texts]) if texts else np.zeros((0, self.dim))


class RemoteEmbedder:
    """JSON-over-HTTP embedding service: ``{model_id, texts}`` -> ``{vectors}``."""

    def __init__(
        self,
        url: str,
        model_id: str = DEFAULT_REMOTE_MODEL,
        dim: Optional[int] = None,
        timeout: float = 60.0,
        batch_size: int = 64,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.url = url
        self.model_id = model_id
        self.dim = dim
        self.batch_size = batch_size
        self.id = f"remote:{model_id}"
        self._http = httpx.Client(timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteEmbedder":
        url = os.environ.get("DFSL_EMBEDDER_URL")
        if not url:
            raise EmbeddingError("DFSL_EMBEDDER_URL is not set")
        return cls(url, model_id=os.environ.get("DFSL_EMBEDDER_MODEL", DEFAULT_REMOTE_MODEL), **kwargs)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        chunks = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            try:
                resp = self._http.post(self.url, json={"model_id": self.model_id, "texts": batch})
                resp.raise_for_status()
                vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                raise EmbeddingError(f"embedding service failed: {exc}") from exc
            if vectors.ndim != 2 or vectors.shape[0] != len(batch):
                raise EmbeddingError(f"expected {len(batch)} vectors, got shape {vectors.shape}")
            if self.dim is None:
                self.dim = vectors.shape[1]
            elif vectors.shape[1] != self.dim:
                raise EmbeddingError(f"expected dimension {self.dim}, got {vectors.shape[1]}")
            if not np.all(np.isfinite(vectors)):
                raise EmbeddingError("embedding contains NaN or Inf")
            chunks.append(vectors)
        return np.vstack(chunks) if chunks else np.zeros((0, self.dim or 0))


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embed(encoder: Embedder, text: str) -> np.ndarray:
    return encoder.embed_batch([text])[0]


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


@dataclass
class ExampleStore:
    examples: list[Example]
    vectors: np.ndarray
    encoder_id: str
    dim: int
    mode: str = "full"
    _by_question: dict[str, list[int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.examples) != len(self.vectors):
            raise ValueError("examples and vectors differ in length")
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(len(self.examples), self.dim)
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("store vectors contain NaN or Inf")
        self._by_question = {}
        for i, ex in enumerate(self.examples):
            self._by_question.setdefault(ex.question, []).append(i)

    def __len__(self) -> int:
        return len(self.examples)

    def concat(self, other: "ExampleStore") -> "ExampleStore":
        if (self.encoder_id, self.mode, self.dim) != (other.encoder_id, other.mode, other.dim):
            raise EncoderMismatch("cannot concatenate stores built with different encoders")
        offset = len(self.examples)
        shifted = [Example(e.question, e.entities, e.relations, e.query, e.source_index + offset) for e in other.examples]
        return ExampleStore(self.examples + shifted, np.vstack([self.vectors, other.vectors]), self.encoder_id, self.dim, self.mode)

    def save(self, path) -> None:
        doc = {
            "encoder_id": self.encoder_id,
            "mode": self.mode,
            "dim": self.dim,
            "examples": [e.to_dict() for e in self.examples],
            "vectors": self.vectors.tolist(),
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "ExampleStore":
        doc = json.loads(Path(path).read_text())
        examples = [Example.from_dict(d) for d in doc["examples"]]
        vectors = np.asarray(doc["vectors"], dtype=np.float64).reshape(len(examples), doc["dim"])
        return cls(examples, vectors, doc["encoder_id"], doc["dim"], doc["mode"])

    def retrieve(
        self,
        encoder: Embedder,
        question: str,
        entities: Sequence[LabeledIri],
        relations: Sequence[LabeledIri],
        k: int,
        mode: Optional[str] = None,
        strict: bool = False,
    ) -> list[tuple[Example, float]]:
        """Encode the input the same way the store was built and return top-k."""
        mode = self.mode if mode is None else mode
        if mode != self.mode or encoder.id != self.encoder_id:
            raise EncoderMismatch(
                f"store built with {self.encoder_id}/{self.mode}, queried with {encoder.id}/{mode}"
            )
        vec = embed(encoder, encode_input(question, entities, relations, mode))
        exclude = self._by_question.get(question, []) if strict else []
        return top_k(self, vec, k, exclude=exclude)


def build_store(examples: Sequence[Example], encoder: Embedder, mode: str = "full", batch_size: int = 256) -> ExampleStore:
    indexed = [Example(e.question, e.entities, e.relations, e.query, i) for i, e in enumerate(examples)]
    texts = [encode_input(e.question, e.entities, e.relations, mode) for e in indexed]
    chunks = []
    for start in range(0, len(texts), batch_size):
        try:
            chunks.append(encoder.embed_batch(texts[start : start + batch_size]))
        except EmbeddingError as exc:
            raise EmbeddingError(f"embedding failed for examples starting at index {start}: {exc}") from exc
    dim = encoder.dim or (chunks[0].shape[1] if chunks else 0)
    vectors = np.vstack(chunks) if chunks else np.zeros((0, dim))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)
    return ExampleStore(indexed, vectors, encoder.id, dim, mode)


def top_k(store: ExampleStore, query_vec, k: int, exclude: Sequence[int] = ()) -> list[tuple[Example, float]]:
    """The ``k`` most cosine-similar examples, best first, ties by source_index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (store.dim,):
        raise ValueError(f"query vector has shape {q.shape}, store dimension is {store.dim}")
    if len(store) == 0:
        return []
    norm = np.linalg.norm(q)
    scores = store.vectors @ (q / norm) if norm > 0 else np.zeros(len(store))
    ranked_scores = np.round(scores, SCORE_TIE_DECIMALS)
    if len(exclude):
        ranked_scores = ranked_scores.copy()
        ranked_scores[list(exclude)] = -np.inf
    source = np.array([e.source_index for e in store.examples])
    order = np.lexsort((source, -ranked_scores))
    keep = [i for i in order if ranked_scores[i] != -np.inf][:k]
    return [(store.examples[i], float(scores[i])) for i in keep]
