import json
import random

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfsl.bench.datasets import load_dataset
from dfsl.retrieval import (
    EmbeddingError,
    EncoderMismatch,
    Example,
    ExampleStore,
    HashingEmbedder,
    RemoteEmbedder,
    build_store,
    embed,
    encode_input,
    top_k,
)
from oracles import brute_force_top_k, trigram_counts

Q1 = ("http://www.wikidata.org/entity/Q1", "universe")
P31 = ("http://www.wikidata.org/prop/direct/P31", "instance of")

WORDS = "capital city river author population born country book wrote france germany italy who what which".split()


def random_examples(rng, n, pool=None):
    out = []
    for i in range(n):
        q = rng.choice(pool) if pool else " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 6)))
        out.append(Example(q, query=f"ASK {{ <http://kg/{i}> <http://kg/p> ?o }}"))
    return out


# ---------------------------------------------------------------------------
# Input encoding
# ---------------------------------------------------------------------------


class TestEncodeInput:
    def test_full_with_empty_lists(self):
        assert encode_input("Who?", [], [], "full") == "Who?\nEntities: \nRelations: "

    def test_question_only(self):
        assert encode_input("Who?", [Q1], [P31], "question_only") == "Who?"

    def test_ablations(self):
        assert encode_input("Who?", [Q1], [P31], "no_entities") == f"Who?\nRelations: instance of ({P31[0]})"
        assert encode_input("Who?", [Q1], [P31], "no_relations") == f"Who?\nEntities: universe ({Q1[0]})"
        assert encode_input("Who?", [Q1], [P31], "no_both") == "Who?"

    def test_items_joined_in_order(self):
        text = encode_input("q", [Q1, ("http://kg/b", "bee")], [], "full")
        assert text.splitlines()[1] == f"Entities: universe ({Q1[0]}); bee (http://kg/b)"

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            encode_input("q", [], [], "everything")

    def test_qald_row_matches_golden(self, fixtures):
        record = load_dataset(fixtures / "qald_sample.json", "qald_json")[0]
        text = encode_input(record.question, record.gold_entities, record.gold_relations, "full")
        assert text == (fixtures / "golden" / "encode_qald_full.txt").read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------


class TestHashingEmbedder:
    def test_deterministic(self):
        e = HashingEmbedder()
        assert np.array_equal(embed(e, "What is the capital?"), embed(e, "What is the capital?"))

    def test_distinct_texts(self):
        e = HashingEmbedder()
        a, b = embed(e, "abc"), embed(e, "xyz")
        assert a.shape == (256,)
        assert float(a @ b) < 1.0

    def test_matches_trigram_definition(self):
        text = "Which river?"
        counts = np.array(trigram_counts(text), dtype=float)
        assert np.allclose(embed(HashingEmbedder(), text), counts / np.linalg.norm(counts))

    def test_short_and_empty(self):
        e = HashingEmbedder()
        assert np.count_nonzero(embed(e, "ab")) == 1
        assert not embed(e, "").any()


class TestRemoteEmbedder:
    def test_fixed_vector(self):
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return httpx.Response(200, json={"vectors": [[0.5, 0.5, 0.5, 0.5]] * len(seen[-1]["texts"])})

        e = RemoteEmbedder("http://emb.invalid", model_id="m", transport=httpx.MockTransport(handler))
        assert embed(e, "hello").tolist() == [0.5, 0.5, 0.5, 0.5]
        assert e.dim == 4
        assert seen[0] == {"model_id": "m", "texts": ["hello"]}

    @pytest.mark.parametrize(
        "response",
        [
            httpx.Response(500, text="down"),
            httpx.Response(200, json={"nope": []}),
            httpx.Response(200, text='{"vectors": [[1.0, NaN]]}'),
            httpx.Response(200, json={"vectors": []}),
        ],
    )
    def test_failures_raise(self, response):
        e = RemoteEmbedder("http://emb.invalid", transport=httpx.MockTransport(lambda r: response))
        with pytest.raises(EmbeddingError):
            embed(e, "hello")

    def test_build_store_reports_failing_index(self):
        def handler(request):
            texts = json.loads(request.content)["texts"]
            if any("bad" in t for t in texts):
                return httpx.Response(500)
            return httpx.Response(200, json={"vectors": [[1.0, 0.0]] * len(texts)})

        e = RemoteEmbedder("http://emb.invalid", transport=httpx.MockTransport(handler))
        examples = [Example("good", query="ASK {?s ?p ?o}"), Example("bad", query="ASK {?s ?p ?o}")]
        with pytest.raises(EmbeddingError, match="index 1"):
            build_store(examples, e, batch_size=1)

    def test_from_env(self, monkeypatch):
        monkeypatch.delenv("DFSL_EMBEDDER_URL", raising=False)
        with pytest.raises(EmbeddingError):
            RemoteEmbedder.from_env()
        monkeypatch.setenv("DFSL_EMBEDDER_URL", "http://emb.invalid")
        monkeypatch.setenv("DFSL_EMBEDDER_MODEL", "mini")
        assert RemoteEmbedder.from_env().id == "remote:mini"


# ---------------------------------------------------------------------------
# Store and top-k
# ---------------------------------------------------------------------------


class TestStore:
    def test_build_three(self):
        store = build_store(random_examples(random.Random(1), 3), HashingEmbedder())
        assert len(store) == 3
        assert store.vectors.shape == (3, 256)
        assert [e.source_index for e in store.examples] == [0, 1, 2]

    def test_rebuild_is_byte_identical(self):
        ex = random_examples(random.Random(2), 20)
        assert build_store(ex, HashingEmbedder()).vectors.tobytes() == build_store(ex, HashingEmbedder()).vectors.tobytes()

    def test_chunked_build_equals_single_build(self):
        ex = random_examples(random.Random(3), 30)
        enc = HashingEmbedder()
        whole = build_store(ex, enc)
        joined = build_store(ex[:12], enc).concat(build_store(ex[12:], enc))
        assert joined.examples == whole.examples
        assert np.array_equal(joined.vectors, whole.vectors)
        assert build_store(ex, enc, batch_size=7).vectors.tobytes() == whole.vectors.tobytes()

    def test_concat_rejects_other_encoder(self):
        ex = random_examples(random.Random(3), 3)
        with pytest.raises(EncoderMismatch):
            build_store(ex, HashingEmbedder()).concat(build_store(ex, HashingEmbedder(128)))

    def test_save_and_load(self, tmp_path):
        store = build_store(random_examples(random.Random(4), 10), HashingEmbedder(), mode="question_only")
        store.save(tmp_path / "store.json")
        again = ExampleStore.load(tmp_path / "store.json")
        assert again.examples == store.examples
        assert np.array_equal(again.vectors, store.vectors)
        assert (again.encoder_id, again.mode) == (store.encoder_id, "question_only")

    def test_empty_store(self):
        store = build_store([], HashingEmbedder())
        assert top_k(store, np.ones(256), 3) == []


class TestTopK:
    def test_single_example(self):
        store = build_store(random_examples(random.Random(5), 1), HashingEmbedder())
        assert [e.source_index for e, _ in top_k(store, np.ones(256), 4)] == [0]

    def test_self_similarity(self):
        store = build_store(random_examples(random.Random(6), 50), HashingEmbedder())
        (best, score), *_ = top_k(store, store.vectors[17], 3)
        assert score == pytest.approx(1.0)
        assert best.question == store.examples[17].question

    def test_random_500_matches_brute_force(self):
        ex = random_examples(random.Random(7), 500)
        store = build_store(ex, HashingEmbedder(), mode="question_only")
        q = "which city wrote the river"
        got = [e.source_index for e, _ in top_k(store, embed(HashingEmbedder(), q), 5)]
        assert got == brute_force_top_k([trigram_counts(e.question) for e in ex], trigram_counts(q), 5)

    def test_dimension_mismatch(self):
        store = build_store(random_examples(random.Random(8), 3), HashingEmbedder())
        with pytest.raises(ValueError):
            top_k(store, np.ones(10), 1)
        with pytest.raises(ValueError):
            top_k(store, np.ones(256), 0)

    def test_ties_by_source_index(self):
        ex = [Example("same text", query=f"ASK {{ <http://kg/{i}> ?p ?o }}") for i in range(6)]
        store = build_store(ex, HashingEmbedder())
        assert [e.source_index for e, _ in top_k(store, store.vectors[3], 4)] == [0, 1, 2, 3]

    def test_duplicate_question_is_rank_one(self, fixtures):
        storage = load_dataset(fixtures / "toy_storage.jsonl", "generic_jsonl")
        enc = HashingEmbedder()
        store = build_store(storage.examples(), enc)
        for rec in load_dataset(fixtures / "toy_test.jsonl", "generic_jsonl"):
            (best, _), *_ = store.retrieve(enc, rec.question, rec.gold_entities, rec.gold_relations, 5)
            assert best.question == rec.question

    def test_strict_mode_excludes_exact_question(self, fixtures):
        storage = load_dataset(fixtures / "toy_storage.jsonl", "generic_jsonl")
        enc = HashingEmbedder()
        store = build_store(storage.examples(), enc)
        rec = load_dataset(fixtures / "toy_test.jsonl", "generic_jsonl")[0]
        hits = store.retrieve(enc, rec.question, rec.gold_entities, rec.gold_relations, 5, strict=True)
        assert len(hits) == 5
        assert rec.question not in [e.question for e, _ in hits]

    def test_retrieve_checks_encoder_and_mode(self):
        store = build_store(random_examples(random.Random(9), 5), HashingEmbedder())
        with pytest.raises(EncoderMismatch):
            store.retrieve(HashingEmbedder(), "q", [], [], 1, mode="question_only")
        with pytest.raises(EncoderMismatch):
            store.retrieve(HashingEmbedder(64), "q", [], [], 1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.floats(1e-3, 1e3))
    def test_brute_force_and_scale_invariance(self, seed, k, scale):
        rng = random.Random(seed)
        pool = [" ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 4))) for _ in range(15)]
        ex = random_examples(rng, rng.randint(1, 60), pool)
        store = build_store(ex, HashingEmbedder(), mode="question_only")
        q = rng.choice(pool + ["a fresh question"])
        qvec = embed(HashingEmbedder(), q)
        ranked = [e.source_index for e, _ in top_k(store, qvec, k)]
        assert ranked == brute_force_top_k([trigram_counts(e.question) for e in ex], trigram_counts(q), k)
        assert [e.source_index for e, _ in top_k(store, qvec * scale, k)] == ranked
