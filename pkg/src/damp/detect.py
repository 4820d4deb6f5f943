"""Space activation, detector hierarchies, stimulus detection, embeddings.

A laid-out code space responds to a stimulus with an activation map: the
thresholded similarity of the stimulus to every cell. Circular detectors
built over dense activation clusters turn such maps into sparse coloured
output codes (structural embeddings): each detector that re-activates
strongly enough contributes its output bit, coloured by the threshold of
its layer.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from damp.bitcode import BitCode, FeatureVector, SimilarityConfig, from_literal, to_literal
from damp.chroma import ColouredCode, merge_detector_outputs
from damp.layout import Cell, CodeSpace, EnergyMap

DBSCAN_EPS = 1.9  # 8-neighbourhood reach plus tolerance
DBSCAN_MIN_PTS = 4
RADIUS_FLOOR = 1.0


@dataclass(frozen=True)
class DetectionConfig:
    """Floors and budgets for hierarchy construction and detection.

    ``mu`` filters low-energy cells at detector creation, ``mu_e`` at
    detection time, ``mu_d`` is the detector activation floor, and the
    adaptive floor ``mu_c`` rises until at most ``k_active`` detectors
    contribute to an embedding. ``sigma`` caps embedding saturation.
    """

    mu: float = 0.05
    mu_e: float = 0.05
    mu_d: float = 0.5
    k_active: int = 50
    sigma: int = 50
    output_bits: int = 256
    dbscan_eps: float = DBSCAN_EPS
    dbscan_min_pts: int = DBSCAN_MIN_PTS

    def __post_init__(self):
        for name in ("mu", "mu_e", "mu_d"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.sigma > self.output_bits:
            raise ValueError("saturation budget exceeds the output code length")


@dataclass(frozen=True)
class ActivationMap:
    """Per-cell response of the space to a stimulus set; zeros on empty cells."""

    values: np.ndarray
    lambda_a: float
    stimuli: tuple


@dataclass(frozen=True)
class Detector:
    """One circular detector; parameters frozen at creation.

    The creation stimulus is the code of the sampled approximate centre
    cell; ``n_d`` and ``e_d`` summarise the activation it produced inside
    the receptive field, so re-presenting that code under the creation
    floors yields an activation level of exactly 1.
    """

    centre: tuple[float, float]
    radius: float
    lambda_d: float
    n_d: int
    e_d: float
    bits: BitCode
    layer: int
    seed_cell: Cell

    def field_cells(self, m: int, n: int) -> np.ndarray:
        """Flat indices of the grid cells inside the receptive field."""
        cy, cx = self.centre
        reach = math.ceil(self.radius)
        ys = np.arange(max(0, math.floor(cy) - reach), min(m, math.ceil(cy) + reach + 1))
        xs = np.arange(max(0, math.floor(cx) - reach), min(n, math.ceil(cx) + reach + 1))
        if ys.size == 0 or xs.size == 0:
            return np.zeros(0, dtype=np.int64)
        box = (ys[:, None] * n + xs[None, :]).ravel()
        yy, xx = np.divmod(box, n)
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= self.radius * self.radius
        return box[inside]


@dataclass
class DetectorHierarchy:
    """Detectors grouped into ascending-threshold layers."""

    lambdas: tuple[float, ...]
    output_bits: int
    layers: list[list[Detector]] = field(default_factory=list)

    def __post_init__(self):
        if list(self.lambdas) != sorted(self.lambdas):
            raise ValueError("layer thresholds must ascend")
        if not self.layers:
            self.layers = [[] for _ in self.lambdas]

    def all_detectors(self) -> list[Detector]:
        return [d for layer in self.layers for d in layer]

    def detector_count(self) -> int:
        return sum(len(layer) for layer in self.layers)


# -- activation ----------------------------------------------------------------


def activate(
    space: CodeSpace,
    energy_map: Optional[EnergyMap],
    stimuli: Sequence,
    lambda_a: float,
    metric: str = "cosine_discrete",
    eta: float = math.inf,
) -> ActivationMap:
    """Cellwise maximum of thresholded similarity over the stimulus set."""
    stimuli = tuple(stimuli)
    if not stimuli:
        raise ValueError("need at least one stimulus")
    if energy_map is not None and energy_map.values.shape != (space.m, space.n):
        raise ValueError("energy map does not match the space dimensions")
    cfg = SimilarityConfig(metric, lam=lambda_a, eta=eta)
    values = space.sims_to(stimuli[0], cfg)
    for stim in stimuli[1:]:
        values = np.maximum(values, space.sims_to(stim, cfg))
    return ActivationMap(values.reshape(space.m, space.n), lambda_a, stimuli)


def activate_local(
    space: CodeSpace,
    centre: Cell,
    r_a: float,
    lambda_a: float,
    metric: str = "cosine_discrete",
    eta: float = math.inf,
) -> ActivationMap:
    """Activation by the centre cell's own code, restricted to a disc."""
    code = space.get_code(centre)
    if code is None:
        raise ValueError(f"cell {centre} is empty")
    full = activate(space, None, [code], lambda_a, metric, eta)
    y, x = centre
    yy, xx = np.meshgrid(np.arange(space.m), np.arange(space.n), indexing="ij")
    mask = (yy - y) ** 2 + (xx - x) ** 2 <= r_a * r_a
    return ActivationMap(np.where(mask, full.values, 0.0), lambda_a, (code,))


def cluster_activated(
    fragment: ActivationMap,
    energy_map: EnergyMap,
    mu: float,
    eps: float = DBSCAN_EPS,
    min_pts: int = DBSCAN_MIN_PTS,
) -> list[list[Cell]]:
    """Density clusters of activated cells with energy at or above ``mu``.

    The cluster count is unknown up front and varies with the sampled
    centre, so density-based clustering is used; outliers are dropped.
    """
    ys, xs = np.nonzero((fragment.values > 0.0) & (energy_map.values >= mu))
    if len(ys) == 0:
        return []
    coords = np.stack([ys, xs], axis=1).astype(np.float64)
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(coords)
    clusters: dict[int, list[Cell]] = {}
    for (y, x), label in zip(coords.astype(int), labels):
        if label >= 0:
            clusters.setdefault(int(label), []).append((int(y), int(x)))
    return [clusters[k] for k in sorted(clusters)]


def cluster_centroid(
    cluster: Sequence[Cell], activation: ActivationMap, energy_map: EnergyMap
) -> tuple[float, float]:
    """Activation-and-energy weighted mean of the cluster cell coordinates."""
    if not cluster:
        raise ValueError("empty cluster")
    wy = wx = wsum = 0.0
    for y, x in cluster:
        w = float(activation.values[y, x]) * float(energy_map.values[y, x])
        wy += y * w
        wx += x * w
        wsum += w
    if wsum <= 0.0:
        raise ValueError("cluster weights sum to zero")
    return (wy / wsum, wx / wsum)


def optimal_radius(cluster: Sequence[Cell], centroid: tuple[float, float]) -> float:
    """Radius maximising point count over disc area; ties pick the smaller.

    Points at radius zero cannot define a disc; a lone such point falls
    back to the 1-cell floor, which is also the global minimum radius.
    """
    cy, cx = centroid
    radii = sorted(math.hypot(y - cy, x - cx) for y, x in cluster)
    best_r, best_f = None, -1.0
    for i, r in enumerate(radii):
        if r <= 0.0:
            continue
        covered = i + 1
        while covered < len(radii) and radii[covered] == r:
            covered += 1
        f = covered / (math.pi * r * r)
        if f > best_f:
            best_r, best_f = r, f
    if best_r is None:
        return RADIUS_FLOOR
    return max(best_r, RADIUS_FLOOR)


# -- hierarchy construction -----------------------------------------------------


def _fill_factor(d: Detector) -> float:
    return d.n_d / d.radius


def try_insert(hierarchy: DetectorHierarchy, candidate: Detector) -> bool:
    """Insert a detector unless an established same-layer detector covers it.

    A candidate overlapping existing centres only wins when its fill factor
    strictly exceeds every overlapped detector's; it then replaces them all.
    """
    layer = hierarchy.layers[candidate.layer]
    cy, cx = candidate.centre
    overlapped = [
        e
        for e in layer
        if math.hypot(cy - e.centre[0], cx - e.centre[1]) <= max(candidate.radius, e.radius)
    ]
    if not overlapped:
        layer.append(candidate)
        return True
    if all(_fill_factor(candidate) > _fill_factor(e) for e in overlapped):
        for e in overlapped:
            layer.remove(e)
        layer.append(candidate)
        return True
    return False


def _detector_stats(
    space: CodeSpace,
    energy_map: EnergyMap,
    seed_code,
    centre: tuple[float, float],
    radius: float,
    lam: float,
    mu: float,
    metric: str,
    eta: float,
) -> tuple[int, float]:
    """Count and total energy of activated cells inside the receptive field."""
    probe = Detector(centre, radius, lam, 1, 1.0, BitCode(1, 1), 0, (0, 0))
    cells = probe.field_cells(space.m, space.n)
    if cells.size == 0:
        return 0, 0.0
    cfg = SimilarityConfig(metric, lam=lam, eta=eta)
    a = space.sims_to(seed_code, cfg, subset=cells)
    e = energy_map.values.ravel()[cells]
    keep = (a > 0.0) & (e >= mu)
    return int(np.count_nonzero(keep)), float(np.sum(a[keep] * e[keep]))


def build_hierarchy(
    space: CodeSpace,
    energy_map: EnergyMap,
    layer_lambdas: Sequence[float],
    cfg: DetectionConfig = DetectionConfig(),
    seed: int = 0,
    budget: int = 64,
    r_a: float = 12.0,
    metric: str = "cosine_discrete",
    eta: float = math.inf,
) -> DetectorHierarchy:
    """Stochastically fill each threshold layer with detectors.

    Per layer: sample an occupied cell, activate its neighbourhood, cluster
    the activation, wrap each cluster in a candidate detector and offer it
    to the layer. The layer is done when ``budget`` consecutive samples
    change nothing.
    """
    hierarchy = DetectorHierarchy(tuple(layer_lambdas), cfg.output_bits)
    rng = random.Random(f"hierarchy:{seed}")
    occupied = space.occupied_cells()
    if not occupied:
        return hierarchy
    for layer_idx, lam in enumerate(hierarchy.lambdas):
        failures = 0
        while failures < budget:
            centre_cell = occupied[rng.randrange(len(occupied))]
            changed = False
            fragment = activate_local(space, centre_cell, r_a, lam, metric, eta)
            clusters = cluster_activated(
                fragment, energy_map, cfg.mu, cfg.dbscan_eps, cfg.dbscan_min_pts
            )
            seed_code = space.get_code(centre_cell)
            for cluster in clusters:
                try:
                    centroid = cluster_centroid(cluster, fragment, energy_map)
                except ValueError:
                    continue
                radius = min(optimal_radius(cluster, centroid), r_a)
                bits = BitCode.from_bits(cfg.output_bits, [rng.randrange(cfg.output_bits)])
                n_d, e_d = _detector_stats(
                    space, energy_map, seed_code, centroid, radius, lam, cfg.mu, metric, eta
                )
                if n_d < 1 or e_d <= 0.0:
                    continue
                candidate = Detector(
                    centroid, radius, lam, n_d, e_d, bits, layer_idx, centre_cell
                )
                changed |= try_insert(hierarchy, candidate)
            failures = 0 if changed else failures + 1
    return hierarchy


# -- detection ------------------------------------------------------------------


def detector_activation(
    d: Detector, activation: ActivationMap, energy_map: EnergyMap, mu_e: float
) -> float:
    """Stimulus energy inside the field relative to the creation energy.

    May exceed 1 when the presented activation is stronger than the
    creation-time one; the ratio is deliberately left unclamped.
    """
    m, n = activation.values.shape
    if energy_map.values.shape != (m, n):
        raise ValueError("activation and energy map dimensions differ")
    cells = d.field_cells(m, n)
    if cells.size == 0 or d.e_d <= 0.0:
        return 0.0
    a = activation.values.ravel()[cells]
    e = energy_map.values.ravel()[cells]
    keep = (a > 0.0) & (e >= mu_e)
    return float(np.sum(a[keep] * e[keep])) / d.e_d


def active_detectors(
    hierarchy: DetectorHierarchy,
    activation: ActivationMap,
    energy_map: EnergyMap,
    cfg: DetectionConfig,
) -> list[tuple[Detector, float]]:
    """Detectors whose activation level clears the floor, with their levels."""
    out = []
    for layer in hierarchy.layers:
        for d in layer:
            level = detector_activation(d, activation, energy_map, cfg.mu_e)
            if level >= cfg.mu_d and level > 0.0:
                out.append((d, level))
    return out


def embed(
    hierarchy: DetectorHierarchy,
    activation: ActivationMap,
    energy_map: EnergyMap,
    cfg: DetectionConfig,
) -> ColouredCode:
    """Structural embedding: colour merge of the strongest detectors' bits.

    The adaptive floor keeps at most ``k_active`` detectors (ties broken
    deterministically), then the merge truncates to the saturation budget
    with detector thresholds as colours.
    """
    actives = active_detectors(hierarchy, activation, energy_map, cfg)
    if not actives:
        return ColouredCode(BitCode(cfg.output_bits), {})
    if len(actives) > cfg.k_active:
        ranked = sorted(
            actives, key=lambda dl: (-dl[1], dl[0].layer, dl[0].bits.value)
        )
        actives = ranked[: cfg.k_active]
    pairs = [(d.bits, d.lambda_d) for d, _ in actives]
    return merge_detector_outputs(pairs, cfg.sigma)


def adaptive_floor(
    hierarchy: DetectorHierarchy,
    activation: ActivationMap,
    energy_map: EnergyMap,
    cfg: DetectionConfig,
) -> float:
    """The mu_c actually applied by :func:`embed` for this activation."""
    actives = active_detectors(hierarchy, activation, energy_map, cfg)
    if len(actives) <= cfg.k_active:
        return cfg.mu_d
    levels = sorted((lvl for _, lvl in actives), reverse=True)
    return levels[cfg.k_active - 1]


def activation_vector(
    hierarchy: DetectorHierarchy,
    activation: ActivationMap,
    energy_map: EnergyMap,
    cfg: DetectionConfig,
) -> FeatureVector:
    """Detector activation levels clamped to [0, 1], in (layer, id) order."""
    levels = []
    for layer in hierarchy.layers:
        for d in layer:
            level = detector_activation(d, activation, energy_map, cfg.mu_e)
            levels.append(min(1.0, max(0.0, level)))
    if not levels:
        raise ValueError("hierarchy has no detectors")
    return FeatureVector(levels)


# -- persistence ----------------------------------------------------------------


def hierarchy_to_json(hierarchy: DetectorHierarchy) -> dict:
    return {
        "version": 1,
        "output_bits": hierarchy.output_bits,
        "layers": [
            {
                "lambda": lam,
                "detectors": [
                    {
                        "centre": list(d.centre),
                        "radius": d.radius,
                        "lambda_d": d.lambda_d,
                        "n_d": d.n_d,
                        "e_d": d.e_d,
                        "bits": to_literal(d.bits),
                        "seed_cell": list(d.seed_cell),
                    }
                    for d in detectors
                ],
            }
            for lam, detectors in zip(hierarchy.lambdas, hierarchy.layers)
        ],
    }


def hierarchy_from_json(doc: dict) -> DetectorHierarchy:
    lambdas = tuple(layer["lambda"] for layer in doc["layers"])
    hierarchy = DetectorHierarchy(lambdas, doc["output_bits"])
    for layer_idx, layer in enumerate(doc["layers"]):
        for dd in layer["detectors"]:
            hierarchy.layers[layer_idx].append(
                Detector(
                    (dd["centre"][0], dd["centre"][1]),
                    dd["radius"],
                    dd["lambda_d"],
                    dd["n_d"],
                    dd["e_d"],
                    from_literal(dd["bits"]),
                    layer_idx,
                    (dd["seed_cell"][0], dd["seed_cell"][1]),
                )
            )
    return hierarchy


def save_hierarchy(hierarchy: DetectorHierarchy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(hierarchy_to_json(hierarchy), fh, sort_keys=True)
        fh.write("\n")


def load_hierarchy(path) -> DetectorHierarchy:
    with open(path, "r", encoding="utf-8") as fh:
        return hierarchy_from_json(json.load(fh))
