from __future__ import annotations

import math
import random
import threading

import pytest

from damp.bitcode import BitCode, OperandError, SimilarityConfig, similarity
from damp.memory import (
    FuzzyStore,
    ListEncoding,
    StoreConfig,
    TraversalError,
    encode_list,
    make_list_encoding,
    recover_index,
    store_list,
    traverse_list,
)

JACCARD = SimilarityConfig("jaccard")


def filled_store(n, seed, saturation=12, config=None):
    rng = random.Random(seed)
    store = FuzzyStore(config or StoreConfig())
    codes = [BitCode.random(128, saturation, rng) for _ in range(n)]
    for c in codes:
        store.store(c)
    return store, codes, rng


class TestStore:
    def test_store_then_exact_query(self):
        store, codes, _ = filled_store(50, seed=1)
        hits = store.query(codes[7], JACCARD, epsilon=0.0)
        assert any(h.code == codes[7] for h in hits)

    def test_entry_count(self):
        store, _, _ = filled_store(1000, seed=2)
        assert len(store) == 1000

    def test_duplicate_store_keeps_multiset_semantics(self):
        store = FuzzyStore()
        code = BitCode.random(128, 12, random.Random(3))
        a = store.store(code)
        b = store.store(code)
        assert a != b
        assert len(store) == 2
        hits = store.query(code, JACCARD, epsilon=0.0)
        assert {h.entry_id for h in hits} == {a, b}

    def test_length_mismatch(self):
        store = FuzzyStore()
        with pytest.raises(OperandError):
            store.store(BitCode(64, 1))
        with pytest.raises(OperandError):
            store.query(BitCode(64, 1), JACCARD, 0.5)

    def test_disjoint_probe_returns_nothing(self):
        store, codes, rng = filled_store(20, seed=4, saturation=4)
        used = set()
        for c in codes:
            used.update(c.bits())
        free = [b for b in range(128) if b not in used][:4]
        probe = BitCode.from_bits(128, free)
        assert store.query(probe, JACCARD, epsilon=0.99) == []

    def test_query_equals_scan_oracle(self):
        store, codes, rng = filled_store(1000, seed=5)
        for _ in range(40):
            probe = BitCode.random(128, 12, rng)
            # Epsilon set from the oracle so that about 10 entries qualify.
            all_hits = store.scan(probe, JACCARD, epsilon=1.0)
            epsilon = all_hits[9].distance if len(all_hits) > 9 else 1.0
            got = store.query(probe, JACCARD, epsilon)
            want = store.scan(probe, JACCARD, epsilon)
            assert [(h.entry_id, h.distance) for h in got] == [
                (h.entry_id, h.distance) for h in want
            ]

    def test_no_false_inclusions(self):
        store, codes, rng = filled_store(300, seed=6)
        probe = BitCode.random(128, 12, rng)
        eps = 0.9
        for hit in store.query(probe, JACCARD, eps):
            assert 1.0 - similarity(probe, hit.code, JACCARD) <= eps

    def test_query_mask_subset_semantics(self):
        store, codes, _ = filled_store(100, seed=7)
        target = codes[13]
        sub = BitCode.from_bits(128, target.bits()[:5])
        hits = store.query_mask(sub)
        assert any(h.code == target for h in hits)
        for h in hits:
            assert (h.code & sub) == sub

    def test_index_prunes_someting_sometimes(self):
        store, codes, rng = filled_store(2000, seed=8, saturation=8)
        fractions = [
            store.candidate_fraction(BitCode.random(128, 8, rng)) for _ in range(20)
        ]
        assert all(f <= 1.0 for f in fractions)

    def test_payload_round_trip(self, tmp_path):
        store = FuzzyStore()
        rng = random.Random(9)
        codes = [BitCode.random(128, 12, rng) for _ in range(30)]
        for i, c in enumerate(codes):
            store.store(c, payload=f"item-{i}" if i % 2 == 0 else None)
        path = tmp_path / "store.jsonl"
        store.save(path)
        loaded = FuzzyStore.load(path)
        assert len(loaded) == 30
        assert loaded.entries() == store.entries()
        # Rebuilt index answers identically.
        probe = codes[3]
        assert [h.entry_id for h in loaded.query(probe, JACCARD, 0.4)] == [
            h.entry_id for h in store.query(probe, JACCARD, 0.4)
        ]

    def test_concurrent_reads_during_writes(self):
        config = StoreConfig()
        store = FuzzyStore(config)
        rng = random.Random(10)
        codes = [BitCode.random(128, 12, rng) for _ in range(400)]
        errors = []

        def writer():
            for c in codes:
                store.store(c)

        def reader():
            try:
                for _ in range(200):
                    probe = codes[0]
                    hits = store.query(probe, JACCARD, 0.5)
                    for h in hits:
                        assert 1.0 - similarity(probe, h.code, JACCARD) <= 0.5
            except Exception as exc:  # pragma: no cover - failure reporting
                errors.append(exc)

        threads = [threading.Thread(target=writer)] + [
            threading.Thread(target=reader) for _ in range(3)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert len(store) == 400


class TestRecall:
    def test_recall_against_oracle_on_10k(self):
        store, codes, rng = filled_store(10_000, seed=11)
        recalls = []
        for _ in range(30):
            probe = BitCode.random(128, 12, rng)
            ranked = store.scan(probe, JACCARD, epsilon=1.0)
            epsilon = ranked[9].distance if len(ranked) > 9 else 1.0
            want = {h.entry_id for h in store.scan(probe, JACCARD, epsilon)}
            got = {h.entry_id for h in store.query(probe, JACCARD, epsilon)}
            assert got <= want
            recalls.append(len(got & want) / len(want) if want else 1.0)
        assert sum(recalls) / len(recalls) >= 0.95


def items_for(rng, n, length=128, saturation=10):
    return [BitCode.random(length, saturation, rng) for _ in range(n)]


class TestLists:
    def make_store(self, cfg):
        return FuzzyStore(StoreConfig(code_length=cfg.entry_length(), seed=3))

    def test_pair_structure(self):
        cfg = make_list_encoding(code_length=64, seed=12)
        rng = random.Random(13)
        items = items_for(rng, 3, length=64)
        list_id = BitCode.random(64, 6, rng)
        entries = encode_list(items, list_id, cfg)
        assert len(entries) == 4  # top->a, a->b, b->c, c->bottom
        key0, value0 = cfg.split(entries[0])
        assert key0 == (list_id | cfg.top)
        assert value0 == items[0]
        key_last, value_last = cfg.split(entries[-1])
        assert key_last == (list_id | items[-1])
        assert value_last == cfg.bottom

    def test_singleton_list(self):
        cfg = make_list_encoding(code_length=64, seed=14)
        rng = random.Random(15)
        [item] = items_for(rng, 1, length=64)
        list_id = BitCode.random(64, 6, rng)
        entries = encode_list([item], list_id, cfg)
        assert len(entries) == 2
        store = self.make_store(cfg)
        for e in entries:
            store.store(e)
        assert traverse_list(store, list_id, cfg) == [item]

    def test_round_trip_various_lengths(self):
        for seed in range(10):
            rng = random.Random(100 + seed)
            cfg = make_list_encoding(code_length=128, seed=seed)
            store = self.make_store(cfg)
            items = items_for(rng, rng.randint(1, 20))
            list_id = BitCode.random(128, 8, rng)
            store_list(store, items, list_id, cfg)
            assert traverse_list(store, list_id, cfg) == items

    def test_interleaved_lists_stay_isolated(self):
        rng = random.Random(16)
        cfg = make_list_encoding(code_length=128, seed=17)
        store = self.make_store(cfg)
        id_a = BitCode.random(128, 8, rng)
        id_b = BitCode.random(128, 8, rng)
        items_a = items_for(rng, 7)
        items_b = items_for(rng, 5)
        store_list(store, items_a, id_a, cfg)
        store_list(store, items_b, id_b, cfg)
        assert traverse_list(store, id_a, cfg) == items_a
        assert traverse_list(store, id_b, cfg) == items_b

    def test_empty_store_fails(self):
        cfg = make_list_encoding(code_length=64, seed=18)
        store = self.make_store(cfg)
        with pytest.raises(TraversalError):
            traverse_list(store, BitCode.random(64, 6, random.Random(19)), cfg)

    def test_broken_chain_carries_prefix(self):
        rng = random.Random(20)
        cfg = make_list_encoding(code_length=128, seed=21)
        store = FuzzyStore(StoreConfig(code_length=cfg.entry_length(), seed=4))
        items = items_for(rng, 5)
        list_id = BitCode.random(128, 8, rng)
        entries = encode_list(items, list_id, cfg)
        for e in entries[:3]:  # drop the tail of the chain
            store.store(e)
        with pytest.raises(TraversalError) as err:
            traverse_list(store, list_id, cfg)
        assert err.value.recovered == items[:3]

    def test_indexed_list_recovers_length(self):
        rng = random.Random(22)
        cfg = make_list_encoding(code_length=128, seed=23)
        store = self.make_store(cfg)
        items = items_for(rng, 7)
        list_id = BitCode.random(128, 8, rng)
        store_list(store, items, list_id, cfg, indexed=True)
        assert recover_index(store, list_id, cfg) == 7

    def test_merge_mode_respects_budget_and_rejects_traversal(self):
        rng = random.Random(24)
        cfg = make_list_encoding(code_length=128, seed=25, pair_mode="merge", merge_budget=20)
        items = items_for(rng, 4)
        list_id = BitCode.random(128, 8, rng)
        entries = encode_list(items, list_id, cfg)
        assert all(e.length == 128 for e in entries)
        assert all(e.saturation <= 20 for e in entries)
        store = FuzzyStore(StoreConfig(code_length=128, seed=5))
        for e in entries:
            store.store(e)
        with pytest.raises(ValueError):
            traverse_list(store, list_id, cfg)
