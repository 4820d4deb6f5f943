"""Fixed-length sparse bit vectors, feature vectors and similarity measures.

Codes are immutable values: every operation returns a new object, so codes
can be shared freely across threads. Bit index 0 is the least significant
bit; the textual literal form is lowercase hex with the highest bit index
leftmost, prefixed with the length, e.g. ``8:0f``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

METRICS = ("jaccard", "jaccard_quadratic", "cosine_discrete", "cosine_real", "cosine_relaxed")

#: Metrics defined only for bit codes.
_DISCRETE_ONLY = frozenset({"cosine_discrete"})


class OperandError(ValueError):
    """Raised when operands have mismatched lengths or incompatible kinds."""


class BitCode:
    """A fixed-length bit vector stored as an arbitrary-precision integer.

    The length is fixed at creation and all binary operations require equal
    lengths; mixed lengths are rejected rather than padded.
    """

    __slots__ = ("length", "value")

    def __init__(self, length: int, value: int = 0):
        if length <= 0:
            raise ValueError(f"code length must be positive, got {length}")
        if value < 0 or value >> length:
            raise ValueError("value has bits outside the code length")
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "value", value)

    def __setattr__(self, name, val):  # pragma: no cover - immutability guard
        raise AttributeError("BitCode is immutable")

    @classmethod
    def from_bits(cls, length: int, bits: Iterable[int]) -> "BitCode":
        """Build a code from an iterable of set-bit indices."""
        value = 0
        for b in bits:
            if not 0 <= b < length:
                raise ValueError(f"bit index {b} outside code of length {length}")
            value |= 1 << b
        return cls(length, value)

    @classmethod
    def random(cls, length: int, saturation: int, rng: random.Random) -> "BitCode":
        """Draw a code with exactly ``saturation`` distinct set bits."""
        if saturation > length:
            raise ValueError("saturation exceeds code length")
        return cls.from_bits(length, rng.sample(range(length), saturation))

    @property
    def saturation(self) -> int:
        """Number of set bits."""
        return self.value.bit_count()

    def bits(self) -> tuple[int, ...]:
        """Indices of the set bits, ascending."""
        v = self.value
        out = []
        while v:
            low = v & -v
            out.append(low.bit_length() - 1)
            v ^= low
        return tuple(out)

    def get(self, i: int) -> int:
        return (self.value >> i) & 1

    def __or__(self, other: "BitCode") -> "BitCode":
        _check_lengths(self, other)
        return BitCode(self.length, self.value | other.value)

    def __and__(self, other: "BitCode") -> "BitCode":
        _check_lengths(self, other)
        return BitCode(self.length, self.value & other.value)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitCode)
            and self.length == other.length
            and self.value == other.value
        )

    def __hash__(self) -> int:
        return hash((self.length, self.value))

    def __repr__(self) -> str:
        return f"BitCode({to_literal(self)!r})"


def bit_or(a: BitCode, b: BitCode) -> BitCode:
    """Element-wise union: the code of a description holding both operands."""
    return a | b


def bit_and(a: BitCode, b: BitCode) -> BitCode:
    """Element-wise intersection: probabilistic membership test."""
    return a & b


def concat(a: BitCode, b: BitCode) -> BitCode:
    """Tuple combination: ``a`` occupies the low indices, ``b`` the high ones."""
    return BitCode(a.length + b.length, a.value | (b.value << a.length))


def to_literal(code: BitCode) -> str:
    """Render the textual literal, e.g. ``8:0f``."""
    nibbles = (code.length + 3) // 4
    return f"{code.length}:{code.value:0{nibbles}x}"


def from_literal(text: str) -> BitCode:
    """Parse a literal produced by :func:`to_literal`."""
    try:
        length_s, hex_s = text.split(":", 1)
        length = int(length_s)
        value = int(hex_s, 16) if hex_s else 0
    except ValueError as exc:
        raise ValueError(f"malformed code literal {text!r}") from exc
    return BitCode(length, value)


class FeatureVector:
    """A fixed-length vector of finite reals, the continuous code variant."""

    __slots__ = ("values",)

    def __init__(self, values: Sequence[float]):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("feature vector must be nonempty")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("feature vector components must be finite")
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, val):  # pragma: no cover - immutability guard
        raise AttributeError("FeatureVector is immutable")

    @classmethod
    def from_range(cls, values: Sequence[float], lo: float, hi: float) -> "FeatureVector":
        """Normalise raw channel values into [0, 1], clamping outliers."""
        if not hi > lo:
            raise ValueError("empty normalisation range")
        return cls([min(1.0, max(0.0, (v - lo) / (hi - lo))) for v in values])

    @property
    def length(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureVector) and self.values == other.values

    def __hash__(self) -> int:
        return hash(self.values)

    def __repr__(self) -> str:
        return f"FeatureVector({list(self.values)!r})"


Code = Union[BitCode, FeatureVector]


@dataclass(frozen=True)
class SimilarityConfig:
    """Similarity metric plus the threshold function parameters.

    ``lam`` is the noise threshold in [0, 1]; ``eta`` is the sigmoid slope
    around it, with ``math.inf`` meaning a hard cutoff below ``lam``.
    """

    metric: str = "jaccard"
    lam: float = 0.0
    eta: float = math.inf

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if not self.eta > 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")


def _check_lengths(a, b):
    if a.length != b.length:
        raise OperandError(f"operand lengths differ: {a.length} vs {b.length}")


def _bit_similarity(a: BitCode, b: BitCode, metric: str) -> float:
    inter = (a.value & b.value).bit_count()
    if metric in ("jaccard", "jaccard_quadratic"):
        # On 0/1 components the quadratic variant reduces to the plain index.
        union = (a.value | b.value).bit_count()
        return inter / union if union else 0.0
    denom = math.sqrt(a.saturation * b.saturation)
    return inter / denom if denom else 0.0


def _real_similarity(a: FeatureVector, b: FeatureVector, metric: str) -> float:
    xs, ys = a.values, b.values
    if metric == "jaccard":
        num = sum(min(x, y) for x, y in zip(xs, ys))
        den = sum(max(x, y) for x, y in zip(xs, ys))
    elif metric == "jaccard_quadratic":
        num = sum(x * y for x, y in zip(xs, ys))
        den = sum(max(x * x, y * y) for x, y in zip(xs, ys))
    elif metric == "cosine_real":
        num = sum(x * y for x, y in zip(xs, ys))
        den = math.sqrt(sum(x * x for x in xs)) * math.sqrt(sum(y * y for y in ys))
    elif metric == "cosine_relaxed":
        num = sum(x * y for x, y in zip(xs, ys))
        den = math.sqrt(sum(xs)) * math.sqrt(sum(ys))
    else:
        raise OperandError(f"metric {metric!r} requires bit codes")
    return num / den if den else 0.0


def similarity(a: Code, b: Code, cfg: SimilarityConfig) -> float:
    """Raw similarity of two codes of the same kind and length, in [0, 1]."""
    _check_lengths(a, b)
    if isinstance(a, BitCode) and isinstance(b, BitCode):
        return _bit_similarity(a, b, cfg.metric)
    if isinstance(a, FeatureVector) and isinstance(b, FeatureVector):
        return _real_similarity(a, b, cfg.metric)
    raise OperandError("cannot compare a bit code with a feature vector")


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def threshold(x: float, cfg: SimilarityConfig) -> float:
    """Noise-suppressing threshold: ``x * sigmoid(eta * (x - lam))``.

    With ``eta = inf`` this is a hard cutoff that passes ``x`` unchanged at
    or above ``lam`` and returns 0 below it.
    """
    if math.isinf(cfg.eta):
        return x if x >= cfg.lam else 0.0
    return x * sigmoid(cfg.eta * (x - cfg.lam))


def sim_lambda(a: Code, b: Code, cfg: SimilarityConfig) -> float:
    """Thresholded similarity: composition of :func:`similarity` and :func:`threshold`."""
    return threshold(similarity(a, b, cfg), cfg)


def concept_capacity(length: int, saturation: int) -> int:
    """Number of distinct codes of a given length with exactly ``saturation`` set bits."""
    return math.comb(length, saturation)
