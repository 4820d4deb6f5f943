from __future__ import annotations

import random

import numpy as np
import pytest

from damp.bitcode import BitCode, FeatureVector, SimilarityConfig
from damp.formats import load_space, read_pgm, save_space, write_pgm, write_ppm
from damp.layout import CodeSpace, EnergyMap, energy_map


def bit_space(seed=0):
    rng = random.Random(seed)
    space = CodeSpace(5, 7, "bit", code_bits=64)
    for i in rng.sample(range(35), 20):
        payload = {"idx": i} if i % 3 == 0 else None
        space.set_code((i // 7, i % 7), BitCode.random(64, 6, rng), payload)
    return space


def real_space(seed=1):
    rng = random.Random(seed)
    space = CodeSpace(4, 4, "real", feature_length=5)
    for i in rng.sample(range(16), 9):
        space.set_code((i // 4, i % 4), FeatureVector([rng.random() for _ in range(5)]))
    return space


class TestContainer:
    def test_bit_round_trip_byte_identical(self, tmp_path):
        space = bit_space()
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save_space(space, p1)
        save_space(load_space(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_real_round_trip_byte_identical(self, tmp_path):
        space = real_space()
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save_space(space, p1)
        save_space(load_space(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_payload_round_trip(self, tmp_path):
        space = bit_space()
        path = tmp_path / "space.jsonl"
        save_space(space, path)
        loaded = load_space(path)
        for cell in space.occupied_cells():
            assert loaded.payload(cell) == space.payload(cell)
            assert loaded.get_code(cell) == space.get_code(cell)

    def test_header_fields(self, tmp_path):
        import json

        space = bit_space()
        path = tmp_path / "space.jsonl"
        save_space(space, path)
        header = json.loads(path.read_text().splitlines()[0])
        assert header == {"version": 1, "m": 5, "n": 7, "code_bits": 64, "kind": "bit"}

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "space.jsonl"
        path.write_text('{"version": 99, "m": 1, "n": 1, "code_bits": 8, "kind": "bit"}\n')
        with pytest.raises(ValueError):
            load_space(path)


class TestPgm:
    def test_header_and_round_trip(self, tmp_path):
        values = np.linspace(0.0, 1.0, 12).reshape(3, 4)
        emap = EnergyMap(values, 3.0, 1.0)
        path = tmp_path / "map.pgm"
        write_pgm(emap, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n4 3\n65535\n")
        back = read_pgm(path)
        assert np.allclose(back, values, atol=1.0 / 65535)

    def test_16bit_big_endian_values(self, tmp_path):
        emap = EnergyMap(np.array([[1.0, 0.5]]), 3.0, 1.0)
        path = tmp_path / "map.pgm"
        write_pgm(emap, path)
        body = path.read_bytes().split(b"65535\n", 1)[1]
        assert body[:2] == (65535).to_bytes(2, "big")
        assert body[2:4] == (round(0.5 * 65535)).to_bytes(2, "big")


class TestPpm:
    def test_header_exact(self, tmp_path):
        space = bit_space()
        emap = energy_map(space, 2.0, SimilarityConfig("jaccard", lam=0.1))
        path = tmp_path / "composite.ppm"
        write_ppm(space, emap, path)
        assert path.read_bytes().startswith(b"P6\n7 5\n255\n")
        header, body = path.read_bytes().split(b"255\n", 1)
        assert len(body) == 5 * 7 * 3

    def test_all_zero_energy_is_black(self, tmp_path):
        space = bit_space()
        emap = EnergyMap(np.zeros((5, 7)), 3.0, 1.0)
        path = tmp_path / "black.ppm"
        write_ppm(space, emap, path)
        body = path.read_bytes().split(b"255\n", 1)[1]
        assert set(body) == {0}

    def test_deterministic_bytes(self, tmp_path):
        space = bit_space()
        emap = energy_map(space, 2.0, SimilarityConfig("jaccard", lam=0.1))
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(space, emap, p1)
        write_ppm(space, emap, p2)
        assert p1.read_bytes() == p2.read_bytes()
