"""Fuzzy associative store over bit codes, plus list encoding and traversal.

The store keeps every entry in a flat multiset and accelerates approximate
queries with a bank of random-mask buckets: an entry joins a bucket when its
overlap with the bucket mask clears an admission threshold. The index is
only ever an accelerator; query results are always re-verified against the
exact metric (zero false positives) and a probe that lands in no bucket
falls back to the exhaustive scan.

Writes are serialized by a lock; any number of readers may query
concurrently with a writer and observe a consistent prefix of the entries.
"""

from __future__ import annotations

import json
import math
import random
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from damp.bitcode import (
    BitCode,
    OperandError,
    SimilarityConfig,
    bit_or,
    concat,
    from_literal,
    similarity,
    to_literal,
)
from damp.chroma import ColouredCode, MergePolicy, colour_merge
from damp.encoders import LexicalAlphabet, encode_integer_lexical


@dataclass(frozen=True)
class StoreConfig:
    code_length: int = 128
    bucket_count: int = 64
    mask_density: float = 0.25
    seed: int = 0

    @property
    def mask_bits(self) -> int:
        return max(1, round(self.mask_density * self.code_length))

    @property
    def admission_threshold(self) -> int:
        # Half of the expected in-mask overlap, ties rounded up.
        return max(1, math.ceil(math.ceil(self.mask_density * self.mask_bits) * 0.5))


@dataclass(frozen=True)
class QueryHit:
    entry_id: int
    code: BitCode
    payload: Optional[str]
    distance: float


class FuzzyStore:
    """Multiset of codes with a random-subspace bucket index."""

    def __init__(self, config: StoreConfig = StoreConfig()):
        self.config = config
        self._entries: list[tuple[BitCode, Optional[str]]] = []
        self._lock = threading.Lock()
        rng = random.Random(f"store:{config.seed}")
        self._masks = [
            BitCode.random(config.code_length, config.mask_bits, rng)
            for _ in range(config.bucket_count)
        ]
        self._buckets: list[list[int]] = [[] for _ in self._masks]
        self._overflow: list[int] = []

    def __len__(self) -> int:
        return len(self._entries)

    def _bucket_ids(self, code: BitCode) -> list[int]:
        tau = self.config.admission_threshold
        return [
            b
            for b, mask in enumerate(self._masks)
            if (code.value & mask.value).bit_count() >= tau
        ]

    def store(self, code: BitCode, payload: Optional[str] = None) -> int:
        """Insert a code (duplicates allowed) and index it; returns the entry id."""
        if code.length != self.config.code_length:
            raise OperandError(
                f"code length {code.length} does not match store ({self.config.code_length})"
            )
        with self._lock:
            entry_id = len(self._entries)
            self._entries.append((code, payload))
            buckets = self._bucket_ids(code)
            for b in buckets:
                self._buckets[b].append(entry_id)
            if not buckets:
                self._overflow.append(entry_id)
        return entry_id

    def entries(self) -> list[tuple[BitCode, Optional[str]]]:
        with self._lock:
            return list(self._entries)

    def _candidates(self, probe: BitCode) -> tuple[list[int], int]:
        """Candidate entry ids for a probe plus the snapshot length."""
        with self._lock:
            size = len(self._entries)
            buckets = self._bucket_ids(probe)
            if not buckets:
                return list(range(size)), size
            seen: set[int] = set(self._overflow)
            for b in buckets:
                seen.update(self._buckets[b])
            return sorted(seen), size

    def query(
        self, probe: BitCode, cfg: SimilarityConfig, epsilon: float
    ) -> list[QueryHit]:
        """Entries within ``epsilon`` of the probe, where distance = 1 - similarity.

        Index candidates are post-verified with the exact metric, so the
        result never contains a false inclusion.
        """
        if probe.length != self.config.code_length:
            raise OperandError("probe length does not match the store")
        candidate_ids, _ = self._candidates(probe)
        hits = []
        for i in candidate_ids:
            code, payload = self._entries[i]
            d = 1.0 - similarity(probe, code, cfg)
            if d <= epsilon:
                hits.append(QueryHit(i, code, payload, d))
        hits.sort(key=lambda h: (h.distance, h.entry_id))
        return hits

    def scan(self, probe: BitCode, cfg: SimilarityConfig, epsilon: float) -> list[QueryHit]:
        """Exhaustive reference query; the authority the index must agree with."""
        with self._lock:
            snapshot = list(self._entries)
        hits = [
            QueryHit(i, code, payload, 1.0 - similarity(probe, code, cfg))
            for i, (code, payload) in enumerate(snapshot)
        ]
        hits = [h for h in hits if h.distance <= epsilon]
        hits.sort(key=lambda h: (h.distance, h.entry_id))
        return hits

    def query_mask(self, probe: BitCode) -> list[QueryHit]:
        """Entries whose codes contain every set bit of the probe.

        Subset probes are index-safe: an entry that contains the probe has
        at least the probe's overlap with every mask, so it shares all the
        probe's buckets.
        """
        candidate_ids, _ = self._candidates(probe)
        hits = [
            QueryHit(i, self._entries[i][0], self._entries[i][1], 0.0)
            for i in candidate_ids
            if (self._entries[i][0].value & probe.value) == probe.value
        ]
        hits.sort(key=lambda h: h.entry_id)
        return hits

    def candidate_fraction(self, probe: BitCode) -> float:
        """Share of the store inspected for a probe; 1.0 means full scan."""
        ids, size = self._candidates(probe)
        return len(ids) / size if size else 0.0

    def save(self, path) -> None:
        """One JSON entry per line: code literal plus optional payload."""
        with self._lock:
            snapshot = list(self._entries)
        with open(path, "w", encoding="utf-8") as fh:
            for code, payload in snapshot:
                record: dict = {"code": to_literal(code)}
                if payload is not None:
                    record["payload"] = payload
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, config: StoreConfig = StoreConfig()) -> "FuzzyStore":
        """Rebuild a store (and its index) from a JSON-lines file."""
        store = cls(config)
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                store.store(from_literal(record["code"]), record.get("payload"))
        return store


# -- lists --------------------------------------------------------------------


class TraversalError(ValueError):
    """A list chain broke; carries the prefix recovered so far."""

    def __init__(self, message: str, recovered: list[BitCode]):
        super().__init__(message)
        self.recovered = recovered


@dataclass(frozen=True)
class ListEncoding:
    """Reserved marker codes and pairing configuration for list storage.

    Pairs are (key, value) tuples laid out by concatenation: the key slot
    occupies the low half of an entry, the value slot the high half. Merge
    mode unions key and value into a single code instead; it is denser but
    cannot be traversed exactly.
    """

    code_length: int
    top: BitCode
    bottom: BitCode
    index_alphabet: LexicalAlphabet
    pair_mode: str = "tuple"
    merge_budget: int = 48

    def __post_init__(self):
        if self.pair_mode not in ("tuple", "merge"):
            raise ValueError(f"unknown pair mode {self.pair_mode!r}")

    def entry_length(self) -> int:
        return 2 * self.code_length if self.pair_mode == "tuple" else self.code_length

    def split(self, entry: BitCode) -> tuple[BitCode, BitCode]:
        low_mask = (1 << self.code_length) - 1
        return (
            BitCode(self.code_length, entry.value & low_mask),
            BitCode(self.code_length, entry.value >> self.code_length),
        )


def make_list_encoding(
    code_length: int = 128,
    seed: int = 0,
    marker_saturation: int = 8,
    pair_mode: str = "tuple",
    merge_budget: int = 48,
) -> ListEncoding:
    """Draw the reserved top/bottom markers and the index alphabet."""
    rng = random.Random(f"list:{seed}")
    top = BitCode.random(code_length, marker_saturation, rng)
    bottom = BitCode.random(code_length, marker_saturation, rng)
    alphabet = LexicalAlphabet(
        code_length=code_length,
        bits_per_symbol=max(3, marker_saturation // 2),
        positions=6,
        indexing="from_low_digit",
        seed=seed,
    )
    return ListEncoding(code_length, top, bottom, alphabet, pair_mode, merge_budget)


def _pair_entry(key: BitCode, value: BitCode, cfg: ListEncoding) -> BitCode:
    if cfg.pair_mode == "tuple":
        return concat(key, value)
    merged = colour_merge(
        [ColouredCode.uniform(key, 0), ColouredCode.uniform(value, 1)],
        MergePolicy(cfg.merge_budget, "keep_long_wave"),
    )
    return merged.code


def encode_list(
    items: Sequence[BitCode], list_id: BitCode, cfg: ListEncoding, indexed: bool = False
) -> list[BitCode]:
    """Pair codes for an ordered list.

    Plain lists chain consecutive items, with the top marker opening the
    chain and the bottom marker as the final value. Indexed lists key each
    item by its 1-based lexical index instead, folding the bottom marker
    into the last key so the list length is discoverable by a mask query.
    """
    if not items:
        raise ValueError("cannot encode an empty list")
    entries = []
    if indexed:
        for i, item in enumerate(items, start=1):
            key = bit_or(encode_integer_lexical(i, cfg.index_alphabet).code, list_id)
            if i == len(items):
                key = bit_or(key, cfg.bottom)
            entries.append(_pair_entry(key, item, cfg))
        return entries
    prev = cfg.top
    for item in items:
        entries.append(_pair_entry(bit_or(list_id, prev), item, cfg))
        prev = item
    entries.append(_pair_entry(bit_or(list_id, prev), cfg.bottom, cfg))
    return entries


def store_list(
    store: FuzzyStore,
    items: Sequence[BitCode],
    list_id: BitCode,
    cfg: ListEncoding,
    indexed: bool = False,
) -> list[int]:
    return [store.store(entry) for entry in encode_list(items, list_id, cfg, indexed)]


def _find_value(store: FuzzyStore, key: BitCode, cfg: ListEncoding) -> Optional[BitCode]:
    probe = concat(key, BitCode(cfg.code_length))
    for hit in store.query_mask(probe):
        k, v = cfg.split(hit.code)
        if k == key:
            return v
    return None


def traverse_list(store: FuzzyStore, list_id: BitCode, cfg: ListEncoding) -> list[BitCode]:
    """Reconstruct a tuple-mode list by chaining key queries top to bottom."""
    if cfg.pair_mode != "tuple":
        raise ValueError("only tuple-mode lists can be traversed exactly")
    recovered: list[BitCode] = []
    prev = cfg.top
    limit = len(store) + 1
    for _ in range(limit):
        value = _find_value(store, bit_or(list_id, prev), cfg)
        if value is None:
            raise TraversalError(
                f"chain broken after {len(recovered)} items", recovered
            )
        if value == cfg.bottom:
            return recovered
        recovered.append(value)
        prev = value
    raise TraversalError("no terminator found (cycle?)", recovered)


def recover_index(store: FuzzyStore, list_id: BitCode, cfg: ListEncoding) -> int:
    """Length of an indexed list, via the key that carries the bottom marker."""
    probe = concat(bit_or(list_id, cfg.bottom), BitCode(cfg.code_length))
    hits = store.query_mask(probe)
    for hit in hits:
        key, _ = cfg.split(hit.code)
        for i in range(1, len(store) + 1):
            expected = bit_or(
                bit_or(encode_integer_lexical(i, cfg.index_alphabet).code, list_id),
                cfg.bottom,
            )
            if key == expected:
                return i
    raise TraversalError("no indexed terminator found", [])
