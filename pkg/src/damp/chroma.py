"""Colour-ranked bit codes and the saturation-bounded merge.

Each set bit of a coloured code carries an integer rank: rank 0 is the
"red", long-wavelength end of the spectrum and expresses long-range
comparability, higher ranks express short-range uniqueness. Merging unions
codes until a saturation budget is hit, then drops bits from whichever end
of the spectrum the retention policy sacrifices.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from damp.bitcode import BitCode, OperandError, from_literal, to_literal

RETENTIONS = ("keep_long_wave", "keep_short_wave", "keep_mid")


class ColouredCode:
    """A bit code plus one colour rank per set bit."""

    __slots__ = ("code", "colours")

    def __init__(self, code: BitCode, colours: Mapping[int, int]):
        bits = set(code.bits())
        if set(colours) != bits:
            raise ValueError("colour ranks must cover exactly the set bits")
        if any(r < 0 for r in colours.values()):
            raise ValueError("colour ranks must be non-negative")
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "colours", dict(colours))

    def __setattr__(self, name, val):  # pragma: no cover - immutability guard
        raise AttributeError("ColouredCode is immutable")

    @classmethod
    def uniform(cls, code: BitCode, rank: int = 0) -> "ColouredCode":
        """Colour every set bit with the same rank."""
        return cls(code, {b: rank for b in code.bits()})

    @property
    def length(self) -> int:
        return self.code.length

    @property
    def saturation(self) -> int:
        return self.code.saturation

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ColouredCode)
            and self.code == other.code
            and self.colours == other.colours
        )

    def __hash__(self) -> int:
        return hash((self.code, tuple(sorted(self.colours.items()))))

    def __repr__(self) -> str:
        return f"ColouredCode({coloured_literal(self)!r})"


@dataclass(frozen=True)
class MergePolicy:
    """Saturation budget plus the spectrum end to sacrifice when over it."""

    saturation_budget: int
    retention: str = "keep_long_wave"

    def __post_init__(self):
        if self.saturation_budget <= 0:
            raise ValueError("saturation budget must be positive")
        if self.retention not in RETENTIONS:
            raise ValueError(f"unknown retention {self.retention!r}")


def _drop_sequence(bits: list[tuple[int, int]], retention: str) -> list[tuple[int, int]]:
    """Order (rank, index) entries by drop priority, first dropped first.

    Within one colour, bits drop in descending index order. The sequence is
    a fixed permutation of the candidate set, so truncating to different
    budgets yields nested results.
    """
    if retention == "keep_long_wave":
        return sorted(bits, key=lambda rb: (-rb[0], -rb[1]))
    if retention == "keep_short_wave":
        return sorted(bits, key=lambda rb: (rb[0], -rb[1]))
    # keep_mid: alternate drops between the two spectrum ends, starting at
    # the short-wave end.
    short_first = sorted(bits, key=lambda rb: (-rb[0], -rb[1]))
    long_first = sorted(bits, key=lambda rb: (rb[0], -rb[1]))
    order: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    si = li = 0
    for turn in range(2 * len(bits)):
        source, idx = (short_first, si) if turn % 2 == 0 else (long_first, li)
        while idx < len(source) and source[idx] in seen:
            idx += 1
        if turn % 2 == 0:
            si = idx
        else:
            li = idx
        if idx < len(source):
            order.append(source[idx])
            seen.add(source[idx])
        if len(order) == len(bits):
            break
    return order


def colour_merge(inputs: Sequence[ColouredCode], policy: MergePolicy) -> ColouredCode:
    """Union coloured codes, truncating to the saturation budget.

    Under budget the result is exactly the bitwise OR with colours carried
    over; a colour conflict on a shared bit keeps the smaller rank. Over
    budget, bits drop per the retention policy until saturation equals the
    budget. The result never depends on input order.
    """
    if not inputs:
        raise ValueError("colour_merge needs at least one input")
    length = inputs[0].length
    ranks: dict[int, int] = {}
    for cc in inputs:
        if cc.length != length:
            raise OperandError(f"operand lengths differ: {length} vs {cc.length}")
        for bit, rank in cc.colours.items():
            cur = ranks.get(bit)
            ranks[bit] = rank if cur is None else min(cur, rank)

    if len(ranks) > policy.saturation_budget:
        drops = _drop_sequence([(r, b) for b, r in ranks.items()], policy.retention)
        for rank, bit in drops[: len(ranks) - policy.saturation_budget]:
            del ranks[bit]

    return ColouredCode(BitCode.from_bits(length, ranks), ranks)


def merge_detector_outputs(
    pairs: Sequence[tuple[BitCode, float]], budget: int
) -> ColouredCode:
    """Merge detector output codes, colouring by detection threshold.

    The colour rank of each output is the rank of its threshold in the
    ascending sorted list of distinct thresholds, so low-threshold (broad)
    detectors occupy the long-wave end and survive truncation first.
    """
    if not pairs:
        raise ValueError("nothing to merge")
    levels = sorted({lam for _, lam in pairs})
    rank_of = {lam: i for i, lam in enumerate(levels)}
    coloured = [ColouredCode.uniform(code, rank_of[lam]) for code, lam in pairs]
    return colour_merge(coloured, MergePolicy(budget, "keep_long_wave"))


def coloured_literal(cc: ColouredCode) -> str:
    """Fixture form: hex literal plus a colour array, e.g. ``8:05;colours=[(0,1),(2,0)]``."""
    pairs = ",".join(f"({b},{r})" for b, r in sorted(cc.colours.items()))
    return f"{to_literal(cc.code)};colours=[{pairs}]"


def coloured_from_literal(text: str) -> ColouredCode:
    """Parse the fixture form produced by :func:`coloured_literal`."""
    m = re.fullmatch(r"([^;]+);colours=\[(.*)\]", text)
    if not m:
        raise ValueError(f"malformed coloured literal {text!r}")
    code = from_literal(m.group(1))
    colours = {}
    body = m.group(2)
    if body:
        for pair in re.findall(r"\((\d+),(\d+)\)", body):
            colours[int(pair[0])] = int(pair[1])
    return ColouredCode(code, colours)
