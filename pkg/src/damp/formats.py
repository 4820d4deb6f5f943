"""File formats: the code-space container, PGM energy maps, PPM composites.

The container is a single text file: a JSON header line holding {version,
m, n, code_bits, kind}, then one JSON line per occupied cell in row-major
order with {y, x, code | values, payload?}. For real-valued spaces the
``code_bits`` field carries the feature-vector length. Writing is
deterministic, so write -> read -> write is byte identical.

Images use the binary netpbm formats: energy maps as 16-bit big-endian PGM
(P5), composites as 8-bit PPM (P6) with hue taken from the colour-weighted
set-bit sum (low bit indices toward red, high toward violet) and brightness
from the normalised energy.
"""

from __future__ import annotations

import colorsys
import json

import numpy as np

from damp.bitcode import BitCode, FeatureVector, from_literal, to_literal
from damp.layout import CodeSpace, EnergyMap

CONTAINER_VERSION = 1


def save_space(space: CodeSpace, path) -> None:
    header = {
        "version": CONTAINER_VERSION,
        "m": space.m,
        "n": space.n,
        "code_bits": space.code_bits if space.kind == "bit" else space.feature_length,
        "kind": space.kind,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for y in range(space.m):
            for x in range(space.n):
                code = space.get_code((y, x))
                if code is None:
                    continue
                record: dict = {"y": y, "x": x}
                if isinstance(code, BitCode):
                    record["code"] = to_literal(code)
                else:
                    record["values"] = list(code.values)
                payload = space.payload((y, x))
                if payload is not None:
                    record["payload"] = payload
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_space(path) -> CodeSpace:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("version") != CONTAINER_VERSION:
            raise ValueError(f"unsupported container version {header.get('version')!r}")
        if header["kind"] == "bit":
            space = CodeSpace(header["m"], header["n"], "bit", code_bits=header["code_bits"])
        else:
            space = CodeSpace(
                header["m"], header["n"], "real", feature_length=header["code_bits"]
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            cell = (record["y"], record["x"])
            if "code" in record:
                space.set_code(cell, from_literal(record["code"]), record.get("payload"))
            else:
                space.set_code(cell, FeatureVector(record["values"]), record.get("payload"))
    return space


def write_pgm(emap: EnergyMap, path) -> None:
    """16-bit binary PGM of the normalised energies, big-endian row-major."""
    values = np.asarray(emap.values, dtype=np.float64)
    h, w = values.shape
    data = np.round(np.clip(values, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        w, h = (int(v) for v in fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ValueError("expected a 16-bit PGM")
        data = np.frombuffer(fh.read(w * h * 2), dtype=">u2")
    return (data.reshape(h, w).astype(np.float64)) / 65535.0


def _cell_hue(space: CodeSpace, cell) -> float:
    """Mean index of the set bits (or value-weighted component index), in [0, 1]."""
    code = space.get_code(cell)
    if code is None:
        return 0.0
    if isinstance(code, BitCode):
        bits = code.bits()
        span = max(code.length - 1, 1)
        return sum(bits) / len(bits) / span
    total = sum(abs(v) for v in code.values)
    if total == 0.0:
        return 0.0
    span = max(code.length - 1, 1)
    return sum(i * abs(v) for i, v in enumerate(code.values)) / total / span


def write_ppm(space: CodeSpace, emap: EnergyMap, path) -> None:
    """Composite view: hue from the code spectrum, brightness from energy.

    The hue sweep runs red (low bit indices) to violet (high indices) over
    270 degrees of the HSV wheel; empty cells render black.
    """
    if emap.values.shape != (space.m, space.n):
        raise ValueError("energy map does not match the space dimensions")
    pixels = bytearray()
    for y in range(space.m):
        for x in range(space.n):
            if not space.is_occupied((y, x)):
                pixels.extend((0, 0, 0))
                continue
            hue = _cell_hue(space, (y, x)) * 0.75  # 270 degrees: red to violet
            value = float(np.clip(emap.values[y, x], 0.0, 1.0))
            r, g, b = colorsys.hsv_to_rgb(hue, 1.0, value)
            pixels.extend((round(r * 255), round(g * 255), round(b * 255)))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{space.n} {space.m}\n255\n".encode("ascii"))
        fh.write(bytes(pixels))
