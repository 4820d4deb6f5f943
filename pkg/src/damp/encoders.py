"""Wide-detector encoders producing similarity-preserving colour codes.

Every encoder is a stack of detector layers with overlapping receptive
fields. Layer 0 holds the few widest detectors (the "red", long-wavelength
end that gives distant values common bits), deeper layers geometrically
refine the receptive fields and provide uniqueness. Encoding a value ORs
the output bits of every detector whose field contains it; the bit colour
rank is the layer index.

Output bits are drawn uniformly with replacement, so distinct detectors may
share a bit; such collisions are tolerated by design and can be measured
with :func:`bit_collisions`.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from damp.bitcode import BitCode
from damp.chroma import ColouredCode, MergePolicy, colour_merge

SCALES = ("linear", "logarithmic")


class OutOfRangeError(ValueError):
    """Input falls outside the encoder's configured range."""


@dataclass(frozen=True)
class Detector1D:
    lo: float
    hi: float
    bits: tuple[int, ...]

    def contains(self, t: float) -> bool:
        return self.lo <= t <= self.hi


@dataclass(frozen=True)
class Layer1D:
    rank: int
    detectors: tuple[Detector1D, ...]


@dataclass(frozen=True)
class DetectorSpace1D:
    """Layered 1D detector space over ``[lo, hi]`` on a linear or log scale."""

    lo: float
    hi: float
    scale: str
    code_length: int
    layers: tuple[Layer1D, ...]
    config: dict = field(compare=False)

    def _transform(self, x: float) -> float:
        return math.log(x) if self.scale == "logarithmic" else x

    def detector_count(self) -> int:
        return sum(len(layer.detectors) for layer in self.layers)


def _layer_intervals(t_lo: float, t_hi: float, count: int, overlap: float):
    """Evenly spaced intervals whose adjacent overlap is ``overlap`` of the width."""
    width = (t_hi - t_lo) / count
    pad = overlap * width / 2.0
    return [(t_lo + i * width - pad, t_lo + (i + 1) * width + pad) for i in range(count)]


def _draw_bits(rng: random.Random, code_length: int, count: int) -> tuple[int, ...]:
    return tuple(rng.randrange(code_length) for _ in range(count))


def build_scalar_space(
    lo: float,
    hi: float,
    scale: str = "linear",
    layer_count: int = 7,
    overlap_fraction: float = 0.5,
    code_length: int = 128,
    bits_per_detector: int = 1,
    seed: int = 0,
    layer_multiplier: int = 2,
) -> DetectorSpace1D:
    """Build a scalar encoder with geometric layer refinement.

    Layer ``k`` holds ``layer_multiplier**k`` detectors, so with one bit per
    detector an in-range value sets about ``layer_count`` bits (one per
    layer, two where same-layer fields overlap).
    """
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    if not hi > lo:
        raise ValueError("empty input range")
    if scale == "logarithmic" and lo <= 0:
        raise ValueError("logarithmic scale needs a positive lower bound")
    if layer_count < 2:
        raise ValueError("need at least 2 layers for long- and short-range order")
    if not 0.0 < overlap_fraction < 1.0:
        raise ValueError("overlap fraction must be in (0, 1)")

    t_lo = math.log(lo) if scale == "logarithmic" else lo
    t_hi = math.log(hi) if scale == "logarithmic" else hi
    rng = random.Random(f"scalar:{seed}")
    layers = []
    for k in range(layer_count):
        intervals = _layer_intervals(t_lo, t_hi, layer_multiplier**k, overlap_fraction)
        detectors = tuple(
            Detector1D(a, b, _draw_bits(rng, code_length, bits_per_detector))
            for a, b in intervals
        )
        layers.append(Layer1D(k, detectors))

    config = {
        "kind": "scalar",
        "lo": lo,
        "hi": hi,
        "scale": scale,
        "layer_count": layer_count,
        "overlap_fraction": overlap_fraction,
        "code_length": code_length,
        "bits_per_detector": bits_per_detector,
        "seed": seed,
        "layer_multiplier": layer_multiplier,
        "refinements": [],
        "kept_layers": None,
    }
    return DetectorSpace1D(lo, hi, scale, code_length, tuple(layers), config)


def encode_scalar(space: DetectorSpace1D, x: float) -> ColouredCode:
    """OR of the bits of all detectors containing ``x``; rank = layer index."""
    if not space.lo <= x <= space.hi:
        raise OutOfRangeError(f"{x} outside [{space.lo}, {space.hi}]")
    t = space._transform(x)
    colours: dict[int, int] = {}
    for layer in space.layers:
        for det in layer.detectors:
            if det.contains(t):
                for b in det.bits:
                    colours[b] = min(layer.rank, colours.get(b, layer.rank))
    return ColouredCode(BitCode.from_bits(space.code_length, colours), colours)


def refine_region(
    space: DetectorSpace1D, sub_lo: float, sub_hi: float, extra_layers: int
) -> DetectorSpace1D:
    """Continue the fractal refinement over a subrange only.

    New layers keep the global width progression (the width a full-range
    layer of that depth would have), so values outside the subrange encode
    exactly as before.
    """
    if not (space.lo <= sub_lo < sub_hi <= space.hi):
        raise ValueError("subrange must lie within the encoder range")
    if extra_layers == 0:
        return space

    t_lo, t_hi = space._transform(space.lo), space._transform(space.hi)
    s_lo, s_hi = space._transform(sub_lo), space._transform(sub_hi)
    cfg = space.config
    mult = cfg["layer_multiplier"]
    start = max(layer.rank for layer in space.layers) + 1
    rng = random.Random(f"refine:{cfg['seed']}:{start}:{extra_layers}")
    new_layers = list(space.layers)
    for j in range(extra_layers):
        depth = start + j
        width = (t_hi - t_lo) / (mult**depth)
        count = max(1, math.ceil((s_hi - s_lo) / width))
        intervals = _layer_intervals(s_lo, s_hi, count, cfg["overlap_fraction"])
        # Clamp outer pads: values outside the subrange must encode as before.
        detectors = tuple(
            Detector1D(
                max(a, s_lo),
                min(b, s_hi),
                _draw_bits(rng, space.code_length, cfg["bits_per_detector"]),
            )
            for a, b in intervals
        )
        new_layers.append(Layer1D(depth, detectors))

    config = dict(cfg)
    config["refinements"] = list(cfg["refinements"]) + [[sub_lo, sub_hi, extra_layers]]
    return DetectorSpace1D(
        space.lo, space.hi, space.scale, space.code_length, tuple(new_layers), config
    )


def with_layers(space: DetectorSpace1D, ranks: Sequence[int]) -> DetectorSpace1D:
    """Keep only the layers with the given ranks (degenerate-order experiments)."""
    keep = set(ranks)
    layers = tuple(layer for layer in space.layers if layer.rank in keep)
    if not layers:
        raise ValueError("no layers left")
    config = dict(space.config)
    config["kept_layers"] = sorted(keep)
    return DetectorSpace1D(
        space.lo, space.hi, space.scale, space.code_length, layers, config
    )


def scalar_space_from_config(cfg: dict) -> DetectorSpace1D:
    """Rebuild a scalar space from its JSON config, replaying refinements."""
    space = build_scalar_space(
        cfg["lo"],
        cfg["hi"],
        cfg["scale"],
        cfg["layer_count"],
        cfg["overlap_fraction"],
        cfg["code_length"],
        cfg["bits_per_detector"],
        cfg["seed"],
        cfg["layer_multiplier"],
    )
    for sub_lo, sub_hi, extra in cfg.get("refinements", []):
        space = refine_region(space, sub_lo, sub_hi, extra)
    if cfg.get("kept_layers") is not None:
        space = with_layers(space, cfg["kept_layers"])
    return space


def bit_collisions(space) -> int:
    """Number of detector output bits shared by more than one detector."""
    seen: dict[int, int] = {}
    if isinstance(space, DetectorSpace1D):
        detectors = [d for layer in space.layers for d in layer.detectors]
    else:
        detectors = list(space.detectors)
    for det in detectors:
        for b in det.bits:
            seen[b] = seen.get(b, 0) + 1
    return sum(n - 1 for n in seen.values() if n > 1)


# -- polar / cyclic -----------------------------------------------------------


@dataclass(frozen=True)
class PolarDetector:
    centre_deg: float
    half_width_deg: float
    m_lo: float
    m_hi: float
    bits: tuple[int, ...]
    rank: int

    def contains(self, angle_deg: float, modulus: float) -> bool:
        delta = (angle_deg - self.centre_deg + 180.0) % 360.0 - 180.0
        return abs(delta) <= self.half_width_deg and self.m_lo <= modulus <= self.m_hi


@dataclass(frozen=True)
class PolarLayer:
    rank: int
    n_angle: int
    n_mod: int
    sector_deg: float
    half_width_deg: float
    ring: float
    m_pad: float
    grid: tuple[tuple[PolarDetector, ...], ...]  # [angle index][mod index]

    def candidates(self, angle_deg: float, modulus: float, mod_lo: float):
        """Detectors whose fields may contain the point; verify with contains()."""
        k0 = angle_deg / self.sector_deg - 0.5
        reach = self.half_width_deg / self.sector_deg
        i_lo, i_hi = math.floor(k0 - reach), math.ceil(k0 + reach)
        if i_hi - i_lo + 1 >= self.n_angle:
            i_set = range(self.n_angle)
        else:
            i_set = sorted({i % self.n_angle for i in range(i_lo, i_hi + 1)})
        u = modulus - mod_lo
        j_lo = max(0, math.floor((u - self.m_pad) / self.ring))
        j_hi = min(self.n_mod - 1, math.ceil((u + self.m_pad) / self.ring))
        for i in i_set:
            row = self.grid[i]
            for j in range(j_lo, j_hi + 1):
                yield row[j]


@dataclass(frozen=True)
class PolarEncoder:
    """Detector tiling of an (angle, modulus) annulus; angle wraps mod 360."""

    mod_lo: float
    mod_hi: float
    min_modulus: float
    code_length: int
    layers: tuple[PolarLayer, ...]
    config: dict = field(compare=False)

    @property
    def detectors(self) -> tuple[PolarDetector, ...]:
        return tuple(d for layer in self.layers for row in layer.grid for d in row)

    @property
    def layer_count(self) -> int:
        return len(self.layers)


def build_polar_encoder(
    angle_overlap_deg: float = 170.0,
    modulus_overlap: float = 0.3,
    layers: int = 5,
    code_length: int = 128,
    seed: int = 0,
    mod_lo: float = 0.0,
    mod_hi: float = 100.0,
    layer_bit_weights: Optional[Sequence[int]] = (4, 3, 2, 1, 1),
    angle_divisions: int = 2,
    mod_divisions: int = 2,
    multiplier: int = 2,
    min_modulus_fraction: float = 0.01,
) -> PolarEncoder:
    """Tile the annulus with overlapping angular sectors and modulus rings.

    Layer ``k`` splits the angle into ``angle_divisions * multiplier**k``
    sectors and the modulus range into ``mod_divisions * multiplier**k``
    rings. The configured overlaps apply to the root layer and shrink with
    the same geometric factor, so relative overlap stays constant down the
    hierarchy.

    ``layer_bit_weights`` gives each layer's bits per detector, padded with
    its last entry. Weighting the coarse layers heavily makes similarity
    decay slowly with distance, which the layout needs to establish
    long-range order; one bit everywhere maximises resolution instead.
    """
    if angle_overlap_deg <= 0 or modulus_overlap <= 0:
        raise ValueError("overlaps must be positive")
    if not mod_hi > mod_lo:
        raise ValueError("empty modulus range")
    weights = list(layer_bit_weights) if layer_bit_weights else [1]
    if any(w < 1 for w in weights):
        raise ValueError("layer bit weights must be positive")

    rng = random.Random(f"polar:{seed}")
    span = mod_hi - mod_lo
    built_layers = []
    for k in range(layers):
        bits_per = weights[min(k, len(weights) - 1)]
        n_a = angle_divisions * multiplier**k
        n_m = mod_divisions * multiplier**k
        sector = 360.0 / n_a
        a_half = (sector + angle_overlap_deg / multiplier**k) / 2.0
        ring = span / n_m
        m_pad = (modulus_overlap * span / multiplier**k) / 2.0
        grid = []
        for i in range(n_a):
            centre = (i + 0.5) * sector
            grid.append(
                tuple(
                    PolarDetector(
                        centre,
                        a_half,
                        mod_lo + j * ring - m_pad,
                        mod_lo + (j + 1) * ring + m_pad,
                        _draw_bits(rng, code_length, bits_per),
                        k,
                    )
                    for j in range(n_m)
                )
            )
        built_layers.append(PolarLayer(k, n_a, n_m, sector, a_half, ring, m_pad, tuple(grid)))

    config = {
        "kind": "polar",
        "angle_overlap_deg": angle_overlap_deg,
        "modulus_overlap": modulus_overlap,
        "layers": layers,
        "code_length": code_length,
        "seed": seed,
        "mod_lo": mod_lo,
        "mod_hi": mod_hi,
        "layer_bit_weights": list(weights),
        "angle_divisions": angle_divisions,
        "mod_divisions": mod_divisions,
        "multiplier": multiplier,
        "min_modulus_fraction": min_modulus_fraction,
    }
    return PolarEncoder(
        mod_lo,
        mod_hi,
        mod_lo + min_modulus_fraction * span,
        code_length,
        tuple(built_layers),
        config,
    )


def polar_from_config(cfg: dict) -> PolarEncoder:
    kwargs = {k: v for k, v in cfg.items() if k != "kind"}
    return build_polar_encoder(**kwargs)


def encode_polar(enc: PolarEncoder, angle_deg: float, modulus: float) -> ColouredCode:
    """Encode a gradient vector given by direction and length.

    Near-zero moduli are lifted to a small minimum length so the gradient
    keeps a usable direction; the angle wraps modulo 360.
    """
    if not enc.mod_lo <= modulus <= enc.mod_hi:
        raise OutOfRangeError(f"modulus {modulus} outside [{enc.mod_lo}, {enc.mod_hi}]")
    modulus = max(modulus, enc.min_modulus)
    angle = angle_deg % 360.0
    colours: dict[int, int] = {}
    for layer in enc.layers:
        for det in layer.candidates(angle, modulus, enc.mod_lo):
            if det.contains(angle, modulus):
                for b in det.bits:
                    colours[b] = min(det.rank, colours.get(b, det.rank))
    return ColouredCode(BitCode.from_bits(enc.code_length, colours), colours)


def encode_cyclic_componentwise(
    f_sin: DetectorSpace1D,
    f_cos: DetectorSpace1D,
    f_mod: DetectorSpace1D,
    angle_deg: float,
    modulus: float,
) -> ColouredCode:
    """Cyclic closure via component codes: merge of f1(sin), f2(cos), f3(rho)."""
    phi = math.radians(angle_deg)
    parts = [
        encode_scalar(f_sin, math.sin(phi)),
        encode_scalar(f_cos, math.cos(phi)),
        encode_scalar(f_mod, modulus),
    ]
    return colour_merge(parts, MergePolicy(f_sin.code_length))


# -- lexical ------------------------------------------------------------------


INDEXINGS = ("from_low_digit", "from_start", "from_end")


@dataclass(frozen=True)
class LexicalAlphabet:
    """Derives per-(position, symbol) codes from a seeded hash; no storage.

    Each (position, symbol) pair owns a deterministic permutation of the bit
    indices; a code of saturation ``s`` takes the first ``s`` entries, so
    lower-saturation codes are always subsets of higher-saturation ones.
    """

    code_length: int = 128
    bits_per_symbol: int = 4
    positions: int = 20
    indexing: str = "from_start"
    seed: int = 0
    symbols: Optional[frozenset[str]] = None

    def __post_init__(self):
        if self.indexing not in INDEXINGS:
            raise ValueError(f"unknown indexing {self.indexing!r}")
        if self.bits_per_symbol > self.code_length:
            raise ValueError("per-symbol saturation exceeds code length")

    def _permutation(self, key: str) -> list[int]:
        digest = hashlib.blake2b(
            key.encode("utf-8"), key=str(self.seed).encode("utf-8"), digest_size=16
        ).digest()
        rng = random.Random(int.from_bytes(digest, "big"))
        return rng.sample(range(self.code_length), self.code_length)

    def bit_sequence(self, position: int, symbol: str) -> list[int]:
        if self.symbols is not None and symbol not in self.symbols:
            raise ValueError(f"unsupported symbol {symbol!r}")
        if not 0 <= position < self.positions:
            raise OutOfRangeError(f"position {position} outside 0..{self.positions - 1}")
        return self._permutation(f"sym:{position}:{symbol}")

    def code(self, position: int, symbol: str, saturation: Optional[int] = None) -> BitCode:
        sat = self.bits_per_symbol if saturation is None else saturation
        return BitCode.from_bits(self.code_length, self.bit_sequence(position, symbol)[:sat])

    def marker_code(self, name: str) -> BitCode:
        """Position-free reserved code, e.g. the minus sign."""
        return BitCode.from_bits(
            self.code_length, self._permutation(f"marker:{name}")[: self.bits_per_symbol]
        )

    @property
    def config(self) -> dict:
        return {
            "kind": "lexical",
            "code_length": self.code_length,
            "bits_per_symbol": self.bits_per_symbol,
            "positions": self.positions,
            "indexing": self.indexing,
            "seed": self.seed,
            "symbols": sorted(self.symbols) if self.symbols is not None else None,
        }


def alphabet_from_config(cfg: dict) -> LexicalAlphabet:
    symbols = cfg.get("symbols")
    return LexicalAlphabet(
        cfg["code_length"],
        cfg["bits_per_symbol"],
        cfg["positions"],
        cfg["indexing"],
        cfg["seed"],
        frozenset(symbols) if symbols is not None else None,
    )


def _merge_positional(parts: list[tuple[BitCode, int]], code_length: int) -> ColouredCode:
    colours: dict[int, int] = {}
    for code, rank in parts:
        for b in code.bits():
            colours[b] = min(rank, colours.get(b, rank))
    return ColouredCode(BitCode.from_bits(code_length, colours), colours)


def encode_integer_lexical(
    n: int, alphabet: LexicalAlphabet, omit_zeros: bool = False
) -> ColouredCode:
    """Lexical integer code: digit ``a`` at decimal position ``i`` becomes a_i.

    Position 0 is the lowest digit. Higher orders carry lower colour ranks
    so that truncation keeps the significant end. A negative number adds the
    reserved minus code at rank 0.
    """
    digits = str(abs(n))
    if len(digits) > alphabet.positions:
        raise OutOfRangeError(f"{n} needs {len(digits)} positions, have {alphabet.positions}")
    parts = []
    for pos, ch in enumerate(reversed(digits)):
        if omit_zeros and ch == "0" and n != 0:
            continue
        parts.append((alphabet.code(pos, ch), alphabet.positions - 1 - pos))
    if n < 0:
        parts.append((alphabet.marker_code("-"), 0))
    return _merge_positional(parts, alphabet.code_length)


def encode_word_positional(s: str, alphabet: LexicalAlphabet) -> ColouredCode:
    """Positional word code: "hello" becomes h_0 | e_1 | l_2 | l_3 | o_4."""
    if len(s) > alphabet.positions:
        raise OutOfRangeError(f"word of {len(s)} characters exceeds {alphabet.positions}")
    parts = []
    for i, ch in enumerate(s):
        pos = len(s) - 1 - i if alphabet.indexing == "from_end" else i
        parts.append((alphabet.code(pos, ch), pos))
    return _merge_positional(parts, alphabet.code_length)
