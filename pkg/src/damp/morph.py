"""Subword morphology pipeline: fragment dictionary, accented codes, spaces.

Words are tiled by dictionary fragments in every way the dictionary allows;
each retained tiling is encoded twice, once with the bit budget accented on
the word head and once on the tail, and all these codes become points of a
morphology code space. After layout and detector construction, a word's
embedding is the detector response to the set of its fragmentation codes.
"""

from __future__ import annotations

import heapq
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from damp.bitcode import BitCode
from damp.chroma import ColouredCode, MergePolicy, colour_merge
from damp.detect import DetectionConfig, DetectorHierarchy, activate, embed
from damp.encoders import LexicalAlphabet
from damp.layout import CodeSpace, EnergyMap, init_space

START_MARKER = "^"
END_MARKER = "$"
MIN_WORD_LEN = 2
MAX_WORD_LEN = 20
MIN_PREFIX_LEN = 3
MAX_TILINGS = 64

ACCENTS = ("head", "tail")
TABLE_MODES = ("per_character", "per_fragment", "analytic_cdf")

# Saturation per character as a function of word length (rows 1..10; longer
# words reuse the last row padded with ones).
CHAR_SATURATION = {
    1: (7,),
    2: (7, 5),
    3: (7, 5, 3),
    4: (8, 7, 3, 2),
    5: (6, 5, 4, 3, 2),
    6: (6, 5, 4, 3, 2, 1),
    7: (6, 5, 4, 3, 2, 1, 1),
    8: (6, 5, 4, 3, 2, 1, 1, 1),
    9: (5, 5, 3, 3, 3, 1, 1, 1, 1),
    10: (5, 5, 3, 3, 3, 2, 1, 1, 1, 1),
}

# Saturation per fragment as a function of fragment count (rows 1..5; more
# fragments continue with single bits).
FRAGMENT_SATURATION = {
    1: (15,),
    2: (15, 5),
    3: (15, 7, 3),
    4: (15, 7, 3, 2),
    5: (15, 6, 5, 3, 1),
}

_WORD_SPLIT = re.compile(r"[^\W\d_]+", re.UNICODE)


@dataclass
class FragmentDictionary:
    """Fragment strings weighted by their ability to tile whole words."""

    tokens: dict[str, float] = field(default_factory=dict)
    min_word_len: int = MIN_WORD_LEN
    max_word_len: int = MAX_WORD_LEN
    min_prefix_len: int = MIN_PREFIX_LEN

    def weight(self, token: str) -> float:
        return self.tokens.get(token, 0.0)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.tokens, fh, ensure_ascii=False, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FragmentDictionary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


def corpus_words(text: str, min_len: int = MIN_WORD_LEN, max_len: int = MAX_WORD_LEN):
    """Lowercased words of acceptable length, split on non-letters."""
    for match in _WORD_SPLIT.finditer(text.lower()):
        word = match.group(0)
        if min_len <= len(word) <= max_len:
            yield word


def _recursive_splits(word: str, min_prefix: int, seen: set[str]) -> None:
    """Collect every part reachable by repeated prefix/suffix splitting."""
    if word in seen:
        return
    seen.add(word)
    for cut in range(min_prefix, len(word)):
        prefix, suffix = word[:cut], word[cut:]
        _recursive_splits(prefix, min_prefix, seen)
        _recursive_splits(suffix, min_prefix, seen)


def build_dictionary(corpus: Iterable[str], passes: int = 1) -> FragmentDictionary:
    """Token dictionary built from recursive splits plus tiling reinforcement.

    Marked words feed prefix statistics; emitted tokens are marker-free.
    Each reinforcement pass adds len(token)/len(word) for every token
    occurrence in every exact gapless tiling of every corpus word, ranking
    tokens by their ability to construct whole words rather than raw
    frequency.
    """
    if passes < 1:
        raise ValueError("need at least one reinforcement pass")
    dictionary = FragmentDictionary()
    words: list[str] = []
    for line in corpus:
        words.extend(corpus_words(line))
    if not words:
        raise ValueError("corpus contains no usable words")

    unique_words = sorted(set(words))
    for word in unique_words:
        marked = START_MARKER + word + END_MARKER
        # Unique prefixes longer than two letters, markers stripped.
        for cut in range(MIN_PREFIX_LEN, len(marked) + 1):
            token = marked[:cut].strip(START_MARKER + END_MARKER)
            if token:
                dictionary.tokens[token] = dictionary.tokens.get(token, 0.0)
        parts: set[str] = set()
        _recursive_splits(marked, MIN_PREFIX_LEN, parts)
        for part in parts:
            token = part.strip(START_MARKER + END_MARKER)
            if token:
                dictionary.tokens[token] = dictionary.tokens.get(token, 0.0)

    counts: dict[str, int] = {}
    for word in words:
        counts[word] = counts.get(word, 0) + 1

    for _ in range(passes):
        gains: dict[str, float] = {}
        for word, count in counts.items():
            participating: set[str] = set()
            for tiling in _enumerate_tilings(word, dictionary):
                participating.update(tiling)
            for token in participating:
                gains[token] = gains.get(token, 0.0) + count * len(token) / len(word)
        for token, gain in gains.items():
            dictionary.tokens[token] = dictionary.tokens.get(token, 0.0) + gain
    return dictionary


def _enumerate_tilings(word: str, dictionary: FragmentDictionary) -> list[tuple[str, ...]]:
    """Best-first enumeration of gapless tilings, bounded at MAX_TILINGS."""
    tokens = dictionary.tokens
    n = len(word)
    starts: dict[int, list[str]] = {}
    for i in range(n):
        opts = []
        for j in range(i + 1, n + 1):
            frag = word[i:j]
            if frag in tokens:
                opts.append(frag)
        starts[i] = opts
    # Heap orders partial tilings by accumulated negative weight, so heavy
    # tilings surface first when the bound truncates enumeration.
    results: list[tuple[str, ...]] = []
    heap = [(0.0, 0, ())]
    while heap and len(results) < MAX_TILINGS:
        neg, pos, frags = heapq.heappop(heap)
        if pos == n:
            results.append(frags)
            continue
        for frag in starts[pos]:
            heapq.heappush(
                heap, (neg - tokens[frag], pos + len(frag), frags + (frag,))
            )
    return results


@dataclass(frozen=True)
class Fragmentation:
    """One gapless tiling of a word, optionally coded with an accent."""

    word: str
    fragments: tuple[str, ...]
    weight: float
    accent: str = "head"
    code: Optional[ColouredCode] = None

    def __post_init__(self):
        if "".join(self.fragments) != self.word:
            raise ValueError("fragments do not reconstruct the word")
        if self.accent not in ACCENTS:
            raise ValueError(f"unknown accent {self.accent!r}")


def fragmentations(word: str, dictionary: FragmentDictionary) -> list[Fragmentation]:
    """Retained tilings of a word: those above the median tiling weight.

    A word with no tiling at all falls back to the whole-word fragmentation.
    When every tiling sits at the median (e.g. a single option), the best
    one is kept so no word encodes to nothing.
    """
    if not MIN_WORD_LEN <= len(word) <= MAX_WORD_LEN:
        raise ValueError(f"word length {len(word)} outside [{MIN_WORD_LEN}, {MAX_WORD_LEN}]")
    tilings = _enumerate_tilings(word, dictionary)
    if not tilings:
        return [Fragmentation(word, (word,), dictionary.weight(word))]
    weighted = [
        Fragmentation(word, frags, sum(dictionary.weight(f) for f in frags))
        for frags in tilings
    ]
    weights = sorted(f.weight for f in weighted)
    median = weights[(len(weights) - 1) // 2]
    retained = [f for f in weighted if f.weight > median]
    if not retained:
        retained = [max(weighted, key=lambda f: (f.weight, f.fragments))]
    retained.sort(key=lambda f: (-f.weight, f.fragments))
    return retained


@dataclass(frozen=True)
class SaturationTable:
    """Bit budgets per character or per fragment, by word length.

    ``analytic_cdf`` derives a per-character budget from the survival
    function of a normal distribution over the character index; table rows,
    where present, take priority in the tabular modes.
    """

    mode: str = "per_fragment"
    sigma_max: int = 12
    cdf_scale_divisor: float = 3.0

    def __post_init__(self):
        if self.mode not in TABLE_MODES:
            raise ValueError(f"unknown saturation mode {self.mode!r}")

    def char_budgets(self, length: int) -> tuple[int, ...]:
        if self.mode == "analytic_cdf":
            return self._analytic(length)
        if length <= max(CHAR_SATURATION):
            return CHAR_SATURATION[length]
        base = CHAR_SATURATION[max(CHAR_SATURATION)]
        return base + (1,) * (length - len(base))

    def fragment_budgets(self, count: int) -> tuple[int, ...]:
        if count <= max(FRAGMENT_SATURATION):
            return FRAGMENT_SATURATION[count]
        base = FRAGMENT_SATURATION[max(FRAGMENT_SATURATION)]
        return base + (1,) * (count - len(base))

    def _analytic(self, length: int) -> tuple[int, ...]:
        scale = max(length / self.cdf_scale_divisor, 1e-9)
        budgets = []
        for i in range(length):
            survival = 0.5 * (1.0 - math.erf(i / (scale * math.sqrt(2.0))))
            budgets.append(max(1, round(2.0 * survival * self.sigma_max)))
        return tuple(budgets)


def encode_fragmentation(
    frag: Fragmentation,
    alphabet: LexicalAlphabet,
    table: SaturationTable,
    accent: str = "head",
) -> ColouredCode:
    """Colour code of one tiling under one accent.

    Per-character budgets index the word globally (reversed for the tail
    accent); per-fragment budgets give each fragment a block spread evenly
    over its characters. Alphabet codes are always keyed by fragment-local
    position, so a fragment contributes the same bits wherever it occurs.
    Colour rank is the accent-ordered tier, and start/end markers carry no
    bits at all.
    """
    if accent not in ACCENTS:
        raise ValueError(f"unknown accent {accent!r}")
    word = frag.word
    length = len(word)
    colours: dict[int, int] = {}

    def add_bits(fragment, local_pos, budget, rank):
        if budget <= 0:
            return
        seq = alphabet.bit_sequence(local_pos, fragment[local_pos])
        for b in seq[:budget]:
            colours[b] = min(rank, colours.get(b, rank))

    if table.mode == "per_fragment":
        count = len(frag.fragments)
        budgets = table.fragment_budgets(count)
        for k, fragment in enumerate(frag.fragments):
            tier = k if accent == "head" else count - 1 - k
            block = budgets[tier]
            share, extra = divmod(block, len(fragment))
            for j in range(len(fragment)):
                add_bits(fragment, j, share + (1 if j < extra else 0), tier)
    else:
        budgets = table.char_budgets(length)
        global_index = 0
        for k, fragment in enumerate(frag.fragments):
            for j in range(len(fragment)):
                i = global_index + j
                tier = i if accent == "head" else length - 1 - i
                add_bits(fragment, j, budgets[tier], tier)
            global_index += len(fragment)

    code = BitCode.from_bits(alphabet.code_length, colours)
    return ColouredCode(code, colours)


def word_codes(
    word: str,
    dictionary: FragmentDictionary,
    alphabet: LexicalAlphabet,
    table: SaturationTable,
) -> list[Fragmentation]:
    """All retained fragmentations of a word, coded with both accents."""
    out = []
    for frag in fragmentations(word, dictionary):
        for accent in ACCENTS:
            code = encode_fragmentation(frag, alphabet, table, accent)
            out.append(
                Fragmentation(frag.word, frag.fragments, frag.weight, accent, code)
            )
    return out


def fill_morph_space(
    words: Sequence[str],
    dictionary: FragmentDictionary,
    alphabet: LexicalAlphabet,
    table: SaturationTable,
    fill_margin: float = 0.15,
    seed: int = 0,
) -> CodeSpace:
    """Place every retained accented fragmentation code at a random cell.

    Cell payloads record (word, fragments, accent) so any point of the laid
    out space can be traced back to the stimulus that produced it.
    """
    if not words:
        raise ValueError("no words to place")
    points = []
    payloads = []
    for word in words:
        for frag in word_codes(word, dictionary, alphabet, table):
            points.append(frag.code)
            payloads.append(
                {
                    "word": frag.word,
                    "fragments": list(frag.fragments),
                    "accent": frag.accent,
                }
            )
    return init_space(points, fill_margin=fill_margin, seed=seed, payloads=payloads)


def word_embedding(
    word: str,
    space: CodeSpace,
    energy: EnergyMap,
    hierarchy: DetectorHierarchy,
    dictionary: FragmentDictionary,
    alphabet: LexicalAlphabet,
    table: SaturationTable,
    cfg: DetectionConfig,
    lambda_a: float = 0.55,
    metric: str = "cosine_discrete",
) -> ColouredCode:
    """Detector embedding of a word: activate with all its fragmentation codes."""
    stimuli = [f.code.code for f in word_codes(word, dictionary, alphabet, table)]
    amap = activate(space, energy, stimuli, lambda_a, metric)
    return embed(hierarchy, amap, energy, cfg)


def similarity_heatmap(embeddings: Sequence[ColouredCode], power: float = 1.5,
                       lam: float = 0.5) -> list[list[float]]:
    """Thresholded-cosine similarity matrix, diagonal zeroed for readability."""
    from damp.bitcode import SimilarityConfig, sim_lambda

    cfg = SimilarityConfig("cosine_discrete", lam=lam, eta=math.inf)
    n = len(embeddings)
    matrix = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            value = sim_lambda(embeddings[i].code, embeddings[j].code, cfg) ** power
            matrix[i][j] = matrix[j][i] = value
    return matrix
