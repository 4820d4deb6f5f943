"""Stochastic swap-based layout of a 2D code space.

The space is an m x n grid of cells, each empty or holding one code.
Layout repeatedly draws batches of candidate cell pairs, speculatively
computes for each pair the interaction energy with the rest of the space
both as-is (phi_c) and as-if swapped (phi_s), and applies the favourable
swaps. The long-range variant sums similarity * distance over the whole
space and is minimised; the short-range variant sums similarity / distance
over a local disc and is maximised.

All pair energies within one batch are computed against a frozen snapshot
of the space; swapping is serialized afterwards, and batches never mention
a cell twice, so the swaps of a batch commute. Per-pair term sums use a
strict left-to-right accumulation so a plain sequential reference
implementation reproduces them bit for bit.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from damp.bitcode import BitCode, FeatureVector, SimilarityConfig
from damp.bitcode import similarity as scalar_similarity
from damp.chroma import ColouredCode

Cell = tuple[int, int]  # (y, x)

LN_EPS_FLOOR = 1e-6  # floor for -ln(E) first-point weighting
REDRAW_ATTEMPTS = 8  # per batch slot before the slot is dropped


def _pack_bits(value: int, words: int) -> np.ndarray:
    mask = (1 << 64) - 1
    return np.array([(value >> (64 * i)) & mask for i in range(words)], dtype=np.uint64)


class CodeSpace:
    """Grid of cells, each empty or holding one bit code or feature vector.

    Cell contents move only by swapping; the multiset of points is invariant
    under layout. An all-zero code counts as an empty cell.
    """

    def __init__(self, m: int, n: int, kind: str, code_bits: int = 0, feature_length: int = 0):
        if kind not in ("bit", "real"):
            raise ValueError(f"unknown space kind {kind!r}")
        self.m = m
        self.n = n
        self.kind = kind
        self.code_bits = code_bits
        self.feature_length = feature_length
        size = m * n
        if kind == "bit":
            if code_bits <= 0:
                raise ValueError("bit space needs a positive code length")
            self._words = (code_bits + 63) // 64
            # One row per 64-bit word, cells along the fast axis.
            self._packedT = np.zeros((self._words, size), dtype=np.uint64)
            self._satf = np.zeros(size, dtype=np.float64)
        else:
            if feature_length <= 0:
                raise ValueError("real space needs a positive feature length")
            self._values = np.zeros((size, feature_length), dtype=np.float64)
        self._payloads: list = [None] * size
        yy, xx = np.divmod(np.arange(size), n)
        self._yy = yy.astype(np.float64)
        self._xx = xx.astype(np.float64)
        # Distances from any cell to the whole grid are slices of one template.
        dy = np.arange(-(m - 1), m, dtype=np.float64)
        dx = np.arange(-(n - 1), n, dtype=np.float64)
        self._dist_template = np.sqrt(dy[:, None] ** 2 + dx[None, :] ** 2)

    # -- cell access ----------------------------------------------------------

    def _flat(self, cell: Cell) -> int:
        y, x = cell
        if not (0 <= y < self.m and 0 <= x < self.n):
            raise IndexError(f"cell {cell} outside {self.m}x{self.n} grid")
        return y * self.n + x

    def is_occupied(self, cell: Cell) -> bool:
        i = self._flat(cell)
        if self.kind == "bit":
            return bool(self._satf[i])
        return bool(np.any(self._values[i]))

    def get_code(self, cell: Cell):
        i = self._flat(cell)
        if self.kind == "bit":
            if not self._satf[i]:
                return None
            value = 0
            for w in range(self._words - 1, -1, -1):
                value = (value << 64) | int(self._packedT[w, i])
            return BitCode(self.code_bits, value)
        if not np.any(self._values[i]):
            return None
        return FeatureVector(self._values[i])

    def set_code(self, cell: Cell, code, payload=None) -> None:
        """Place or hot-patch a cell in place; ``None`` clears it."""
        i = self._flat(cell)
        if code is None:
            if self.kind == "bit":
                self._packedT[:, i] = 0
                self._satf[i] = 0.0
            else:
                self._values[i] = 0.0
            self._payloads[i] = None
            return
        if isinstance(code, ColouredCode):
            code = code.code
        if self.kind == "bit":
            if not isinstance(code, BitCode) or code.length != self.code_bits:
                raise ValueError("code does not match the space")
            self._packedT[:, i] = _pack_bits(code.value, self._words)
            self._satf[i] = float(code.saturation)
        else:
            if not isinstance(code, FeatureVector) or code.length != self.feature_length:
                raise ValueError("vector does not match the space")
            self._values[i] = code.values
        self._payloads[i] = payload

    def payload(self, cell: Cell):
        return self._payloads[self._flat(cell)]

    def swap_cells(self, a: Cell, b: Cell) -> None:
        i, j = self._flat(a), self._flat(b)
        if i == j:
            return
        if self.kind == "bit":
            self._packedT[:, [i, j]] = self._packedT[:, [j, i]]
            self._satf[[i, j]] = self._satf[[j, i]]
        else:
            self._values[[i, j]] = self._values[[j, i]]
        pl = self._payloads
        pl[i], pl[j] = pl[j], pl[i]

    def occupied_cells(self) -> list[Cell]:
        if self.kind == "bit":
            idx = np.nonzero(self._satf)[0]
        else:
            idx = np.nonzero(np.any(self._values != 0.0, axis=1))[0]
        return [(int(i) // self.n, int(i) % self.n) for i in idx]

    @property
    def point_count(self) -> int:
        if self.kind == "bit":
            return int(np.count_nonzero(self._satf))
        return int(np.count_nonzero(np.any(self._values != 0.0, axis=1)))

    def clone(self) -> "CodeSpace":
        dup = CodeSpace(self.m, self.n, self.kind, self.code_bits, self.feature_length)
        if self.kind == "bit":
            dup._packedT = self._packedT.copy()
            dup._satf = self._satf.copy()
        else:
            dup._values = self._values.copy()
        dup._payloads = list(self._payloads)
        return dup

    def distance_field(self, cell: Cell) -> np.ndarray:
        """Euclidean distances from ``cell`` to every cell, flat (m*n,)."""
        y, x = cell
        view = self._dist_template[
            self.m - 1 - y : 2 * self.m - 1 - y, self.n - 1 - x : 2 * self.n - 1 - x
        ]
        return np.ascontiguousarray(view).ravel()

    # -- vectorized similarity ------------------------------------------------

    def sims_to(self, code, cfg: SimilarityConfig, subset: Optional[np.ndarray] = None) -> np.ndarray:
        """Thresholded similarity of ``code`` against every cell, flat (m*n,).

        Empty cells come out as 0; ``subset`` restricts the computation to
        the given flat cell indices. Raw metric values are bit-identical to
        the scalar path in :mod:`damp.bitcode` for the same operands.
        """
        raw = self.raw_sims_to(code, cfg, subset)
        if math.isinf(cfg.eta):
            return np.where(raw >= cfg.lam, raw, 0.0)
        return raw / (1.0 + np.exp(-cfg.eta * (raw - cfg.lam)))

    def raw_sims_to(self, code, cfg: SimilarityConfig, subset: Optional[np.ndarray] = None) -> np.ndarray:
        size = self.m * self.n if subset is None else len(subset)
        if code is None:
            return np.zeros(size, dtype=np.float64)
        if isinstance(code, ColouredCode):
            code = code.code
        if self.kind == "bit":
            return self._bit_sims(code, cfg.metric, subset)
        return self._real_sims(code, cfg.metric, subset)

    def _intersections(self, code: BitCode, subset: Optional[np.ndarray] = None) -> np.ndarray:
        """Popcount of (cell AND code) per cell, as float64."""
        words = _pack_bits(code.value, self._words)
        packed = self._packedT if subset is None else self._packedT[:, subset]
        counts = np.bitwise_count(packed[0] & words[0])
        if self._words == 1:
            return counts.astype(np.float64)
        if self._words == 2:
            return np.add(counts, np.bitwise_count(packed[1] & words[1]), dtype=np.float64)
        acc = counts.astype(np.int16)
        for w in range(1, self._words):
            acc += np.bitwise_count(packed[w] & words[w])
        return acc.astype(np.float64)

    def _bit_sims(self, code: BitCode, metric: str, subset: Optional[np.ndarray] = None) -> np.ndarray:
        if code.length != self.code_bits:
            raise ValueError("code length does not match the space")
        inter = self._intersections(code, subset)
        sat = float(code.saturation)
        cell_sat = self._satf if subset is None else self._satf[subset]
        out = np.zeros(inter.shape, dtype=np.float64)
        if metric in ("jaccard", "jaccard_quadratic"):
            union = cell_sat + sat - inter
            np.divide(inter, union, out=out, where=union > 0)
        else:
            denom = np.sqrt(cell_sat * sat)
            np.divide(inter, denom, out=out, where=denom > 0)
        return out

    def _real_sims(self, vec: FeatureVector, metric: str, subset: Optional[np.ndarray] = None) -> np.ndarray:
        if vec.length != self.feature_length:
            raise ValueError("vector length does not match the space")
        v = np.asarray(vec.values, dtype=np.float64)
        vals = self._values if subset is None else self._values[subset]
        out = np.zeros(vals.shape[0], dtype=np.float64)
        if metric == "jaccard":
            num = np.minimum(vals, v).sum(axis=1)
            den = np.maximum(vals, v).sum(axis=1)
        elif metric == "jaccard_quadratic":
            num = vals @ v
            den = np.maximum(vals * vals, v * v).sum(axis=1)
        elif metric == "cosine_real":
            num = vals @ v
            den = np.sqrt((vals * vals).sum(axis=1)) * math.sqrt(float(v @ v))
        elif metric == "cosine_relaxed":
            num = vals @ v
            den = np.sqrt(vals.sum(axis=1)) * math.sqrt(float(v.sum()))
        else:
            raise ValueError(f"metric {metric!r} requires bit codes")
        np.divide(num, den, out=out, where=den > 0)
        return out


def _serial_sum(terms: np.ndarray) -> float:
    """Strict left-to-right float64 sum, matching a plain accumulation loop."""
    if terms.size == 0:
        return 0.0
    return float(np.add.accumulate(terms)[-1])


# -- batch selection ----------------------------------------------------------


@dataclass(frozen=True)
class PairBatch:
    """p rows of (first cell, second cell); no cell appears twice."""

    pairs: tuple[tuple[Cell, Cell], ...]

    def __len__(self) -> int:
        return len(self.pairs)


def init_space(
    points: Sequence,
    fill_margin: float = 0.15,
    seed: int = 0,
    payloads: Optional[Sequence] = None,
) -> CodeSpace:
    """Square space of side ceil(sqrt(n*(1+margin))) with random placement."""
    if not points:
        raise ValueError("need at least one point")
    d = math.ceil(math.sqrt(len(points) * (1.0 + fill_margin)))
    first = points[0]
    if isinstance(first, ColouredCode):
        first = first.code
    if isinstance(first, BitCode):
        space = CodeSpace(d, d, "bit", code_bits=first.length)
    else:
        space = CodeSpace(d, d, "real", feature_length=first.length)
    rng = random.Random(f"init:{seed}")
    cells = rng.sample(range(d * d), len(points))
    for k, slot in enumerate(cells):
        payload = payloads[k] if payloads is not None else None
        space.set_code((slot // d, slot % d), points[k], payload)
    return space


def select_pairs(
    space: CodeSpace,
    p: int,
    radius: float,
    early_cutoff: Optional[float] = None,
    seed: int = 0,
    cfg: Optional[SimilarityConfig] = None,
    first_cells: Optional[Sequence[Cell]] = None,
    rng: Optional[random.Random] = None,
) -> PairBatch:
    """Draw up to ``p`` candidate pairs: first point random, second within radius.

    Pairs whose raw similarity falls below ``early_cutoff`` are redrawn, a
    pair may include at most one empty cell, and no cell enters the batch
    twice. Slots that fail repeatedly are dropped, so the batch may be
    smaller than ``p``.
    """
    occupied = space.occupied_cells()
    if len(occupied) < 2:
        raise ValueError("layout needs at least two points")
    rng = rng or random.Random(f"pairs:{seed}")
    if early_cutoff is not None and cfg is None:
        raise ValueError("early cutoff needs a similarity config")
    used: set[Cell] = set()
    pairs: list[tuple[Cell, Cell]] = []
    r2 = radius * radius
    ir = max(1, math.floor(radius))
    for slot in range(p):
        for _ in range(REDRAW_ATTEMPTS):
            first = (
                first_cells[slot]
                if first_cells is not None and slot < len(first_cells)
                else occupied[rng.randrange(len(occupied))]
            )
            if first in used:
                if first_cells is not None:
                    break
                continue
            dy = rng.randint(-ir, ir)
            dx = rng.randint(-ir, ir)
            if dy == dx == 0 or dy * dy + dx * dx > r2:
                continue
            second = (first[0] + dy, first[1] + dx)
            if not (0 <= second[0] < space.m and 0 <= second[1] < space.n):
                continue
            if second in used or second == first:
                continue
            if early_cutoff is not None:
                code2 = space.get_code(second)
                sim = (
                    scalar_similarity(space.get_code(first), code2, cfg)
                    if code2 is not None
                    else 0.0
                )
                if sim < early_cutoff:
                    continue
            used.add(first)
            used.add(second)
            pairs.append((first, second))
            break
    return PairBatch(tuple(pairs))


def energy_weighted_first_points(
    space: CodeSpace,
    emap: "EnergyMap",
    count: int,
    seed: int = 0,
    rng: Optional[random.Random] = None,
) -> list[Cell]:
    """Sample occupied cells with probability proportional to -ln(E).

    Weakly organised regions (low normalised energy) are favoured; cells at
    the normalisation maximum have weight 0. Equal energies degrade to
    uniform sampling. Cells are distinct within one draw.
    """
    rng = rng or random.Random(f"weighted:{seed}")
    cells = space.occupied_cells()
    weights = []
    for cell in cells:
        e = max(float(emap.values[cell[0], cell[1]]), LN_EPS_FLOOR)
        weights.append(-math.log(e))
    total = sum(weights)
    chosen: list[Cell] = []
    taken: set[int] = set()
    if total <= 0.0:
        idx = list(range(len(cells)))
        rng.shuffle(idx)
        return [cells[i] for i in idx[:count]]
    cum = np.cumsum(weights)
    for _ in range(count * REDRAW_ATTEMPTS):
        if len(chosen) >= count or len(taken) >= len(cells):
            break
        u = rng.random() * float(cum[-1])
        i = int(np.searchsorted(cum, u, side="right"))
        i = min(i, len(cells) - 1)
        if i in taken or weights[i] <= 0.0:
            continue
        taken.add(i)
        chosen.append(cells[i])
    return chosen


# -- pair energies ------------------------------------------------------------


@dataclass(frozen=True)
class PairEnergy:
    """Energies of one pair against the frozen snapshot: stay vs swap."""

    phi_c: float
    phi_s: float


def _pair_energy_long(space: CodeSpace, pair, cfg: SimilarityConfig) -> PairEnergy:
    (y1, x1), (y2, x2) = pair
    i1, i2 = y1 * space.n + x1, y2 * space.n + x2
    c1, c2 = space.get_code(pair[0]), space.get_code(pair[1])
    d1 = space.distance_field(pair[0])
    d2 = space.distance_field(pair[1])
    same = c1 is not None and c2 is not None and c1 == c2
    s1 = space.sims_to(c1, cfg)
    s2 = s1 if same else space.sims_to(c2, cfg)
    # The pair's own cells never act as third points.
    s1[i1] = s1[i2] = 0.0
    if s2 is not s1:
        s2[i1] = s2[i2] = 0.0
    terms_c = s1 * d1 + s2 * d2
    if same:
        phi = _serial_sum(terms_c)
        return PairEnergy(phi, phi)
    terms_s = s2 * d1 + s1 * d2
    return PairEnergy(_serial_sum(terms_c), _serial_sum(terms_s))


def _pair_energy_short(space: CodeSpace, pair, r: float, cfg: SimilarityConfig) -> PairEnergy:
    (y1, x1), (y2, x2) = pair
    i1, i2 = y1 * space.n + x1, y2 * space.n + x2
    sep2 = (y1 - y2) ** 2 + (x1 - x2) ** 2
    r_eff2 = max(r * r, float(sep2))
    cy, cx = (y1 + y2) / 2.0, (x1 + x2) / 2.0
    # Bounding box first, exact disc membership inside it.
    reach = math.ceil(math.sqrt(r_eff2))
    ys = np.arange(max(0, math.floor(cy) - reach), min(space.m, math.ceil(cy) + reach + 1))
    xs = np.arange(max(0, math.floor(cx) - reach), min(space.n, math.ceil(cx) + reach + 1))
    box = (ys[:, None] * space.n + xs[None, :]).ravel()
    by = space._yy[box]
    bx = space._xx[box]
    inside = (by - cy) ** 2 + (bx - cx) ** 2 <= r_eff2
    inside &= (box != i1) & (box != i2)
    idx = box[inside]
    if idx.size == 0:
        return PairEnergy(0.0, 0.0)
    c1, c2 = space.get_code(pair[0]), space.get_code(pair[1])
    d1 = np.sqrt((space._yy[idx] - y1) ** 2 + (space._xx[idx] - x1) ** 2)
    d2 = np.sqrt((space._yy[idx] - y2) ** 2 + (space._xx[idx] - x2) ** 2)
    same = c1 is not None and c2 is not None and c1 == c2
    s1 = space.sims_to(c1, cfg, subset=idx)
    s2 = s1 if same else space.sims_to(c2, cfg, subset=idx)
    terms_c = s1 / d1 + s2 / d2
    if same:
        phi = _serial_sum(terms_c)
        return PairEnergy(phi, phi)
    terms_s = s2 / d1 + s1 / d2
    return PairEnergy(_serial_sum(terms_c), _serial_sum(terms_s))


def _map_pairs(fn, batch: PairBatch, threads: int) -> list[PairEnergy]:
    if threads <= 1 or len(batch) <= 1:
        return [fn(pair) for pair in batch.pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, batch.pairs))


def pair_energies_long(
    space: CodeSpace, batch: PairBatch, cfg: SimilarityConfig, threads: int = 1
) -> list[PairEnergy]:
    """Whole-space energies sim*distance for every pair; minimised by layout."""
    return _map_pairs(lambda pair: _pair_energy_long(space, pair, cfg), batch, threads)


def pair_energies_short(
    space: CodeSpace, batch: PairBatch, r: float, cfg: SimilarityConfig, threads: int = 1
) -> list[PairEnergy]:
    """Local-disc energies sim/distance around each pair; maximised by layout."""
    return _map_pairs(lambda pair: _pair_energy_short(space, pair, r, cfg), batch, threads)


def apply_swaps(
    space: CodeSpace, batch: PairBatch, energies: Sequence[PairEnergy], mode: str
) -> int:
    """Swap the favourable pairs; ties stay put. Returns the swap count."""
    if mode not in ("long_range", "short_range"):
        raise ValueError(f"unknown mode {mode!r}")
    swaps = 0
    for pair, e in zip(batch.pairs, energies):
        better = e.phi_s < e.phi_c if mode == "long_range" else e.phi_s > e.phi_c
        if better:
            space.swap_cells(*pair)
            swaps += 1
    return swaps


# -- point energy and quality -------------------------------------------------


@dataclass(frozen=True)
class EnergyMap:
    """Normalised per-cell energies in [0, 1]; empty cells carry 0."""

    values: np.ndarray
    r_e: float
    e_max: float


def point_energy(space: CodeSpace, cell: Cell, r: float, cfg: SimilarityConfig) -> float:
    """Sum of sim/distance over occupied neighbours within ``r``; 0 for empty cells."""
    code = space.get_code(cell)
    if code is None:
        return 0.0
    y, x = cell
    i = y * space.n + x
    reach = math.ceil(r)
    ys = np.arange(max(0, y - reach), min(space.m, y + reach + 1))
    xs = np.arange(max(0, x - reach), min(space.n, x + reach + 1))
    box = (ys[:, None] * space.n + xs[None, :]).ravel()
    sq = (space._yy[box] - y) ** 2 + (space._xx[box] - x) ** 2
    inside = (sq <= r * r) & (box != i)
    idx = box[inside]
    if idx.size == 0:
        return 0.0
    s = space.sims_to(code, cfg, subset=idx)
    return _serial_sum(s / np.sqrt(sq[inside]))


def _raw_energies(space: CodeSpace, r_e: float, cfg: SimilarityConfig) -> np.ndarray:
    raw = np.zeros((space.m, space.n), dtype=np.float64)
    for cell in space.occupied_cells():
        raw[cell[0], cell[1]] = point_energy(space, cell, r_e, cfg)
    return raw


def energy_map(
    space: CodeSpace, r_e: float, cfg: SimilarityConfig, normalize: str = "global"
) -> EnergyMap:
    """Per-cell normalised energies; all-zero spaces normalise against 1."""
    raw = _raw_energies(space, r_e, cfg)
    if normalize == "global":
        e_max = float(raw.max())
        if e_max <= 0.0:
            e_max = 1.0
        return EnergyMap(raw / e_max, r_e, e_max)
    if normalize != "local":
        raise ValueError(f"unknown normalisation {normalize!r}")
    # Local variant: each cell normalised by the maximum over its own disc.
    values = np.zeros_like(raw)
    rr = max(1, math.ceil(r_e))
    for y in range(space.m):
        for x in range(space.n):
            if raw[y, x] <= 0.0:
                continue
            window = raw[
                max(0, y - rr) : y + rr + 1, max(0, x - rr) : x + rr + 1
            ]
            local_max = float(window.max())
            values[y, x] = raw[y, x] / local_max if local_max > 0 else 0.0
    return EnergyMap(values, r_e, float(raw.max()) if raw.max() > 0 else 1.0)


def layout_quality(space: CodeSpace, r_e: float, cfg: SimilarityConfig) -> float:
    """Mean normalised energy over occupied cells; 0 for an empty space."""
    occupied = space.occupied_cells()
    if not occupied:
        return 0.0
    emap = energy_map(space, r_e, cfg)
    return float(sum(emap.values[y, x] for y, x in occupied) / len(occupied))


# -- the annealing loop -------------------------------------------------------


@dataclass(frozen=True)
class LayoutSchedule:
    """Parameter ramp for one layout phase.

    The threshold climbs from ``lambda_start`` to ``lambda_end`` while the
    pair-selection radius halves from ``radius_start`` (default: half the
    grid side) down to ``radius_end``; both advance together whenever the
    per-step swap rate falls below ``stop_fraction`` of the stage-initial
    rate, mirroring a classic annealing schedule.
    """

    mode: str = "long_range"
    metric: str = "cosine_discrete"
    eta: float = math.inf
    lambda_start: float = 0.65
    lambda_end: float = 0.8
    lambda_step: float = 0.05
    radius_start: Optional[float] = None
    radius_end: float = 1.0
    pairs_per_step: int = 256
    stop_fraction: float = 0.01
    short_range_radius: float = 5.0
    early_cutoff: Optional[float] = None
    energy_weighted: bool = False
    energy_map_radius: float = 3.0
    energy_map_every: int = 25
    max_steps: int = 4000
    min_steps_per_stage: int = 4
    quality_every: int = 0
    threads: int = 1
    seed: int = 0

    def stages(self, space: CodeSpace) -> list[tuple[float, float]]:
        lams = [self.lambda_start]
        while lams[-1] < self.lambda_end - 1e-12:
            lams.append(min(lams[-1] + self.lambda_step, self.lambda_end))
        r0 = self.radius_start if self.radius_start is not None else max(space.m, space.n) / 2
        radii = [float(r0)]
        while radii[-1] > self.radius_end + 1e-12:
            radii.append(max(radii[-1] / 2.0, self.radius_end))
        count = max(len(lams), len(radii))
        lams += [lams[-1]] * (count - len(lams))
        radii += [radii[-1]] * (count - len(radii))
        return list(zip(lams, radii))


@dataclass(frozen=True)
class StepRecord:
    step: int
    stage: int
    lam: float
    radius: float
    swaps: int
    pairs: int
    quality: Optional[float] = None


@dataclass
class LayoutReport:
    steps: list[StepRecord] = field(default_factory=list)
    converged: bool = True
    total_swaps: int = 0

    @property
    def step_count(self) -> int:
        return len(self.steps)


def run_layout(
    space: CodeSpace,
    schedule: LayoutSchedule,
    progress: Optional[Callable[[StepRecord], None]] = None,
) -> LayoutReport:
    """Iterate select -> energies -> swap until every schedule stage converges.

    A stage converges when its per-step swap count falls below
    ``stop_fraction`` of the stage's first-step count. Hitting ``max_steps``
    first flags the report as non-converged.
    """
    report = LayoutReport()
    rng = random.Random(f"layout:{schedule.seed}")
    step = 0
    emap: Optional[EnergyMap] = None
    for stage_idx, (lam, radius) in enumerate(schedule.stages(space)):
        cfg = SimilarityConfig(schedule.metric, lam=lam, eta=schedule.eta)
        first_rate: Optional[int] = None
        stage_steps = 0
        while True:
            if step >= schedule.max_steps:
                report.converged = False
                return report
            first_cells = None
            if schedule.energy_weighted:
                if emap is None or step % schedule.energy_map_every == 0:
                    emap = energy_map(space, schedule.energy_map_radius, cfg)
                first_cells = energy_weighted_first_points(
                    space, emap, schedule.pairs_per_step, rng=rng
                )
            batch = select_pairs(
                space,
                schedule.pairs_per_step,
                radius,
                early_cutoff=schedule.early_cutoff,
                cfg=cfg,
                first_cells=first_cells,
                rng=rng,
            )
            if schedule.mode == "long_range":
                energies = pair_energies_long(space, batch, cfg, schedule.threads)
            else:
                energies = pair_energies_short(
                    space, batch, schedule.short_range_radius, cfg, schedule.threads
                )
            swaps = apply_swaps(space, batch, energies, schedule.mode)
            quality = None
            if schedule.quality_every and step % schedule.quality_every == 0:
                quality = layout_quality(space, schedule.energy_map_radius, cfg)
            record = StepRecord(step, stage_idx, lam, radius, swaps, len(batch), quality)
            report.steps.append(record)
            report.total_swaps += swaps
            if progress is not None:
                progress(record)
            step += 1
            stage_steps += 1
            if first_rate is None:
                first_rate = swaps
            if first_rate == 0 or swaps == 0:
                break
            if (
                stage_steps >= schedule.min_steps_per_stage
                and swaps < schedule.stop_fraction * first_rate
            ):
                break
    return report
