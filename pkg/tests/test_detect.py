from __future__ import annotations

import math
import random

import numpy as np
import pytest

from damp.bitcode import BitCode, SimilarityConfig, similarity
from damp.detect import (
    ActivationMap,
    DetectionConfig,
    Detector,
    DetectorHierarchy,
    activate,
    activate_local,
    activation_vector,
    active_detectors,
    adaptive_floor,
    build_hierarchy,
    cluster_activated,
    cluster_centroid,
    detector_activation,
    embed,
    hierarchy_from_json,
    hierarchy_to_json,
    optimal_radius,
    try_insert,
)
from damp.encoders import build_scalar_space, encode_scalar
from damp.layout import (
    CodeSpace,
    EnergyMap,
    LayoutSchedule,
    energy_map,
    init_space,
    run_layout,
)

COSINE = "cosine_discrete"


def small_space(seed=0, m=6, n=6, fill=0.7):
    rng = random.Random(seed)
    space = CodeSpace(m, n, "bit", code_bits=32)
    for i in rng.sample(range(m * n), int(m * n * fill)):
        space.set_code((i // n, i % n), BitCode.random(32, 6, rng))
    return space


def flat_energy(space, value=1.0):
    values = np.zeros((space.m, space.n))
    for y, x in space.occupied_cells():
        values[y, x] = value
    return EnergyMap(values, 3.0, 1.0)


class TestActivate:
    def test_stored_point_reaches_one(self):
        space = small_space(seed=1)
        cell = space.occupied_cells()[3]
        amap = activate(space, None, [space.get_code(cell)], 0.5, COSINE)
        assert amap.values[cell[0], cell[1]] == 1.0

    def test_disjoint_stimulus_all_zero(self):
        space = CodeSpace(3, 3, "bit", code_bits=32)
        space.set_code((0, 0), BitCode.from_bits(32, [0, 1, 2]))
        amap = activate(space, None, [BitCode.from_bits(32, [20, 21])], 0.3, COSINE)
        assert amap.values.max() == 0.0

    def test_multi_stimulus_is_cellwise_max(self):
        space = small_space(seed=2)
        rng = random.Random(3)
        s1 = BitCode.random(32, 6, rng)
        s2 = BitCode.random(32, 6, rng)
        joint = activate(space, None, [s1, s2], 0.2, COSINE)
        a1 = activate(space, None, [s1], 0.2, COSINE)
        a2 = activate(space, None, [s2], 0.2, COSINE)
        assert np.array_equal(joint.values, np.maximum(a1.values, a2.values))

    def test_empty_cells_stay_zero(self):
        space = small_space(seed=4, fill=0.4)
        amap = activate(space, None, [BitCode.random(32, 6, random.Random(5))], 0.0, COSINE)
        for y in range(space.m):
            for x in range(space.n):
                if not space.is_occupied((y, x)):
                    assert amap.values[y, x] == 0.0


class TestActivateLocal:
    def test_zero_radius_activates_centre_only(self):
        space = small_space(seed=6, fill=1.0)
        centre = (2, 3)
        amap = activate_local(space, centre, 0.0, 0.5, COSINE)
        assert amap.values[centre] == 1.0
        assert np.count_nonzero(amap.values) == 1

    def test_fragment_is_masked_global_activation(self):
        space = small_space(seed=7, fill=0.9)
        centre = space.occupied_cells()[0]
        r_a = 2.5
        local = activate_local(space, centre, r_a, 0.2, COSINE)
        full = activate(space, None, [space.get_code(centre)], 0.2, COSINE)
        for y in range(space.m):
            for x in range(space.n):
                d2 = (y - centre[0]) ** 2 + (x - centre[1]) ** 2
                want = full.values[y, x] if d2 <= r_a * r_a else 0.0
                assert local.values[y, x] == want

    def test_empty_centre_rejected(self):
        space = small_space(seed=8, fill=0.3)
        empty = next(
            (y, x)
            for y in range(space.m)
            for x in range(space.n)
            if not space.is_occupied((y, x))
        )
        with pytest.raises(ValueError):
            activate_local(space, empty, 2.0, 0.5, COSINE)

    def test_deterministic(self):
        space = small_space(seed=9)
        centre = space.occupied_cells()[1]
        a = activate_local(space, centre, 3.0, 0.4, COSINE)
        b = activate_local(space, centre, 3.0, 0.4, COSINE)
        assert np.array_equal(a.values, b.values)


def blob_activation(m, n, blobs, level=1.0):
    """ActivationMap with rectangular activated blobs."""
    values = np.zeros((m, n))
    for (y0, y1, x0, x1) in blobs:
        values[y0:y1, x0:x1] = level
    return ActivationMap(values, 0.5, ())


class TestClusterActivated:
    def test_two_separated_blobs(self):
        amap = blob_activation(12, 12, [(0, 3, 0, 3), (8, 11, 8, 11)])
        emap = EnergyMap(np.ones((12, 12)), 3.0, 1.0)
        clusters = cluster_activated(amap, emap, mu=0.1)
        assert len(clusters) == 2

    def test_single_dense_region(self):
        amap = blob_activation(8, 8, [(2, 6, 2, 6)])
        emap = EnergyMap(np.ones((8, 8)), 3.0, 1.0)
        clusters = cluster_activated(amap, emap, mu=0.1)
        assert len(clusters) == 1
        assert len(clusters[0]) == 16

    def test_energy_floor_empties_result(self):
        amap = blob_activation(8, 8, [(2, 6, 2, 6)])
        emap = EnergyMap(np.full((8, 8), 0.01), 3.0, 1.0)
        assert cluster_activated(amap, emap, mu=0.5) == []


class TestClusterCentroid:
    def test_uniform_weights_give_geometric_centre(self):
        cluster = [(0, 0), (0, 2), (2, 0), (2, 2)]
        amap = ActivationMap(np.ones((3, 3)), 0.5, ())
        emap = EnergyMap(np.ones((3, 3)), 3.0, 1.0)
        assert cluster_centroid(cluster, amap, emap) == (1.0, 1.0)

    def test_weighted_mean(self):
        cluster = [(0, 0), (0, 4)]
        a = np.zeros((1, 5))
        a[0, 0], a[0, 4] = 1.0, 1.0
        e = np.zeros((1, 5))
        e[0, 0], e[0, 4] = 0.25, 0.75
        centroid = cluster_centroid(
            cluster, ActivationMap(a, 0.5, ()), EnergyMap(e, 3.0, 1.0)
        )
        assert centroid == (0.0, 3.0)

    def test_matches_brute_force(self):
        rng = random.Random(10)
        m = n = 9
        a = np.clip(rng.random() + np.random.default_rng(1).random((m, n)), 0, 1)
        e = np.random.default_rng(2).random((m, n))
        cluster = [(rng.randrange(m), rng.randrange(n)) for _ in range(12)]
        cluster = list(dict.fromkeys(cluster))
        cy, cx = cluster_centroid(
            cluster, ActivationMap(a, 0.5, ()), EnergyMap(e, 3.0, 1.0)
        )
        ws = [a[y, x] * e[y, x] for y, x in cluster]
        assert cy == pytest.approx(sum(y * w for (y, _), w in zip(cluster, ws)) / sum(ws))
        assert cx == pytest.approx(sum(x * w for (_, x), w in zip(cluster, ws)) / sum(ws))

    def test_zero_weight_rejected(self):
        cluster = [(0, 0)]
        amap = ActivationMap(np.zeros((2, 2)), 0.5, ())
        emap = EnergyMap(np.zeros((2, 2)), 3.0, 1.0)
        with pytest.raises(ValueError):
            cluster_centroid(cluster, amap, emap)


class TestOptimalRadius:
    def test_outliers_excluded(self):
        # Dense ring of 20 points at radius <= 3 plus 3 outliers at 10.
        rng = random.Random(11)
        cluster = []
        for _ in range(20):
            r = rng.uniform(0.5, 3.0)
            phi = rng.uniform(0, 2 * math.pi)
            cluster.append((r * math.sin(phi) + 20, r * math.cos(phi) + 20))
        outliers = [(30.0, 20.0), (20.0, 30.0), (10.0, 20.0)]
        r_d = optimal_radius(cluster + outliers, (20.0, 20.0))
        assert r_d <= 3.0
        assert r_d >= 1.0
        # Oracle: evaluate f at every candidate radius.
        radii = sorted(
            math.hypot(y - 20, x - 20) for y, x in cluster + outliers
        )
        best = max(
            (sum(1 for q in radii if q <= r) / (math.pi * r * r), -r)
            for r in radii
            if r > 0
        )
        assert r_d == max(-best[1], 1.0)

    def test_single_point(self):
        assert optimal_radius([(0.0, 2.0)], (0.0, 0.0)) == 2.0

    def test_point_at_centroid_falls_back_to_floor(self):
        assert optimal_radius([(1.0, 1.0)], (1.0, 1.0)) == 1.0

    def test_scaling_doubles_radius(self):
        rng = random.Random(12)
        cluster = [(rng.uniform(-4, 4), rng.uniform(-4, 4)) for _ in range(15)]
        r1 = optimal_radius(cluster, (0.0, 0.0))
        scaled = [(2 * y, 2 * x) for y, x in cluster]
        r2 = optimal_radius(scaled, (0.0, 0.0))
        assert r2 == pytest.approx(2 * r1, rel=1e-12)


def make_detector(centre, radius, n_d, e_d=1.0, layer=0, lam=0.5, bit=0, bits_len=64):
    return Detector(
        centre, radius, lam, n_d, e_d, BitCode.from_bits(bits_len, [bit]), layer, (0, 0)
    )


class TestTryInsert:
    def hierarchy(self):
        return DetectorHierarchy((0.5, 0.75), 64)

    def test_empty_layer_accepts(self):
        h = self.hierarchy()
        assert try_insert(h, make_detector((2, 2), 2.0, 5))
        assert h.detector_count() == 1

    def test_weaker_incumbent_replaced(self):
        h = self.hierarchy()
        try_insert(h, make_detector((2, 2), 2.0, 4, bit=1))  # fill 2.0
        stronger = make_detector((2.5, 2.5), 2.0, 8, bit=2)  # fill 4.0
        assert try_insert(h, stronger)
        assert h.layers[0] == [stronger]

    def test_equal_fill_factor_rejected(self):
        h = self.hierarchy()
        incumbent = make_detector((2, 2), 2.0, 4, bit=1)
        try_insert(h, incumbent)
        challenger = make_detector((2.5, 2.5), 2.0, 4, bit=2)
        assert not try_insert(h, challenger)
        assert h.layers[0] == [incumbent]

    def test_non_overlapping_coexist(self):
        h = self.hierarchy()
        try_insert(h, make_detector((1, 1), 1.5, 4, bit=1))
        assert try_insert(h, make_detector((6, 6), 1.5, 4, bit=2))
        assert h.detector_count() == 2

    def test_other_layers_do_not_interfere(self):
        h = self.hierarchy()
        try_insert(h, make_detector((2, 2), 2.0, 4, layer=0, bit=1))
        assert try_insert(h, make_detector((2, 2), 2.0, 4, layer=1, bit=2))


def clustered_space(seed=20):
    """A 10x10 space with one tight cluster of near-identical codes."""
    rng = random.Random(seed)
    space = CodeSpace(10, 10, "bit", code_bits=64)
    base = BitCode.from_bits(64, range(10))
    for y in range(3, 7):
        for x in range(3, 7):
            extra = BitCode.from_bits(64, [rng.randrange(30, 60)])
            space.set_code((y, x), base | extra)
    return space


class TestBuildHierarchy:
    def test_single_cluster_space_gets_one_detector_per_layer(self):
        space = clustered_space()
        cfg = SimilarityConfig(COSINE, lam=0.5, eta=math.inf)
        emap = energy_map(space, 3.0, cfg)
        hierarchy = build_hierarchy(
            space, emap, [0.5, 0.7], DetectionConfig(output_bits=64), seed=1, budget=16
        )
        for layer in hierarchy.layers:
            assert len(layer) == 1
            d = layer[0]
            assert 3 <= d.centre[0] <= 6 and 3 <= d.centre[1] <= 6
            # The radius rule hugs the densest core of the lattice block.
            assert d.n_d >= 4
            assert d.e_d > 0

    def test_deterministic(self):
        space = clustered_space()
        cfg = SimilarityConfig(COSINE, lam=0.5, eta=math.inf)
        emap = energy_map(space, 3.0, cfg)
        h1 = build_hierarchy(space, emap, [0.5, 0.7], seed=5, budget=12)
        h2 = build_hierarchy(space, emap, [0.5, 0.7], seed=5, budget=12)
        assert hierarchy_to_json(h1) == hierarchy_to_json(h2)

    def test_no_same_layer_containment(self):
        space = small_space(seed=21, m=14, n=14, fill=0.85)
        cfg = SimilarityConfig(COSINE, lam=0.4, eta=math.inf)
        emap = energy_map(space, 3.0, cfg)
        hierarchy = build_hierarchy(
            space, emap, [0.4, 0.6], DetectionConfig(mu=0.01), seed=2, budget=24
        )
        for layer in hierarchy.layers:
            for i, d in enumerate(layer):
                for e in layer[i + 1 :]:
                    dist = math.hypot(d.centre[0] - e.centre[0], d.centre[1] - e.centre[1])
                    assert dist > max(d.radius, e.radius)


class TestDetectorActivation:
    def test_re_presentation_is_exactly_one(self):
        space = clustered_space()
        cfg = SimilarityConfig(COSINE, lam=0.5, eta=math.inf)
        emap = energy_map(space, 3.0, cfg)
        hierarchy = build_hierarchy(
            space, emap, [0.5, 0.7], DetectionConfig(output_bits=64), seed=3, budget=16
        )
        cfgd = DetectionConfig(output_bits=64)
        for layer, lam in zip(hierarchy.layers, hierarchy.lambdas):
            for d in layer:
                stim = space.get_code(d.seed_cell)
                amap = activate(space, emap, [stim], lam, COSINE)
                assert detector_activation(d, amap, emap, cfgd.mu) == pytest.approx(
                    1.0, abs=1e-9
                )

    def test_zero_activation_is_zero(self):
        d = make_detector((2, 2), 2.0, 4, e_d=2.0)
        amap = ActivationMap(np.zeros((5, 5)), 0.5, ())
        emap = EnergyMap(np.ones((5, 5)), 3.0, 1.0)
        assert detector_activation(d, amap, emap, 0.05) == 0.0

    def test_half_of_creation_points_gives_half(self):
        # Four field cells, e = 0.5 each, creation a = 1 on all: e_d = 2.
        d = make_detector((2, 2), 1.0, 4, e_d=2.0)
        values = np.zeros((5, 5))
        values[2, 1] = values[2, 3] = 1.0  # two of the four re-activate
        amap = ActivationMap(values, 0.5, ())
        emap = EnergyMap(np.full((5, 5), 0.5), 3.0, 1.0)
        assert detector_activation(d, amap, emap, 0.05) == pytest.approx(0.5)

    def test_may_exceed_one(self):
        d = make_detector((2, 2), 1.0, 2, e_d=0.5)
        values = np.zeros((5, 5))
        values[2, 1] = values[2, 3] = values[2, 2] = 1.0
        amap = ActivationMap(values, 0.5, ())
        emap = EnergyMap(np.ones((5, 5)), 3.0, 1.0)
        assert detector_activation(d, amap, emap, 0.0) > 1.0


def grid_hierarchy(levels, m=32, n=32, lam=0.5, bits_len=256):
    """Detectors on a sparse grid whose activation levels we fully control."""
    h = DetectorHierarchy((lam,), bits_len)
    values = np.zeros((m, n))
    for i, level in enumerate(levels):
        y, x = 3 * (i // 10) + 1, 3 * (i % 10) + 1
        h.layers[0].append(
            Detector((float(y), float(x)), 1.0, lam, 1, 1.0,
                     BitCode.from_bits(bits_len, [i]), 0, (y, x))
        )
        values[y, x] = level
    amap = ActivationMap(values, lam, ())
    emap = EnergyMap(np.ones((m, n)), 3.0, 1.0)
    return h, amap, emap


class TestActiveDetectorsAndEmbed:
    def test_floor_zero_takes_all_nonzero(self):
        h, amap, emap = grid_hierarchy([0.1, 0.4, 0.9, 0.0])
        cfg = DetectionConfig(mu_d=0.0, mu_e=0.0)
        assert len(active_detectors(h, amap, emap, cfg)) == 3

    def test_floor_above_max_empties(self):
        h, amap, emap = grid_hierarchy([0.1, 0.4, 0.9])
        cfg = DetectionConfig(mu_d=0.95, mu_e=0.0)
        assert active_detectors(h, amap, emap, cfg) == []
        code = embed(h, amap, emap, cfg)
        assert code.saturation == 0

    def test_fig_regime_thirty_of_eighty(self):
        # 80 activated detectors; 30 clear the 0.5 floor and enter the code.
        levels = [0.6] * 30 + [0.3] * 50
        h, amap, emap = grid_hierarchy(levels)
        cfg = DetectionConfig(mu_d=0.5, mu_e=0.0, sigma=50, k_active=50)
        actives = [
            (d, lvl)
            for d, lvl in (
                (d, detector_activation(d, amap, emap, 0.0)) for d in h.all_detectors()
            )
            if lvl > 0
        ]
        assert len(actives) == 80
        code = embed(h, amap, emap, cfg)
        assert code.saturation == 30

    def test_adaptive_floor_caps_survivors(self):
        levels = [0.5 + 0.005 * i for i in range(80)]
        h, amap, emap = grid_hierarchy(levels)
        cfg = DetectionConfig(mu_d=0.5, mu_e=0.0, sigma=256, k_active=20)
        code = embed(h, amap, emap, cfg)
        assert code.saturation == 20
        floor = adaptive_floor(h, amap, emap, cfg)
        assert floor > cfg.mu_d

    def test_identical_stimuli_identical_embeddings(self):
        space = clustered_space()
        cfg_sim = SimilarityConfig(COSINE, lam=0.5, eta=math.inf)
        emap = energy_map(space, 3.0, cfg_sim)
        h = build_hierarchy(space, emap, [0.5, 0.7], DetectionConfig(output_bits=64),
                            seed=4, budget=16)
        cfg = DetectionConfig(mu_d=0.3, output_bits=64, sigma=50)
        stim = space.get_code((4, 4))
        a1 = activate(space, emap, [stim], 0.5, COSINE)
        a2 = activate(space, emap, [stim], 0.5, COSINE)
        assert embed(h, a1, emap, cfg) == embed(h, a2, emap, cfg)

    def test_saturation_respects_sigma(self):
        levels = [0.9] * 80
        h, amap, emap = grid_hierarchy(levels)
        cfg = DetectionConfig(mu_d=0.1, mu_e=0.0, sigma=25, k_active=80)
        assert embed(h, amap, emap, cfg).saturation <= 25


class TestActivationVector:
    def test_zero_activation_gives_zero_vector(self):
        h, _, emap = grid_hierarchy([0.5, 0.5])
        amap = ActivationMap(np.zeros(emap.values.shape), 0.5, ())
        vec = activation_vector(h, amap, emap, DetectionConfig(mu_e=0.0))
        assert all(v == 0.0 for v in vec.values)

    def test_components_clamped(self):
        h, amap, emap = grid_hierarchy([0.4, 1.0])
        # Inflate one detector's activation past 1 by shrinking e_d.
        d = h.layers[0][0]
        h.layers[0][0] = Detector(
            d.centre, d.radius, d.lambda_d, d.n_d, 0.1, d.bits, d.layer, d.seed_cell
        )
        vec = activation_vector(h, amap, emap, DetectionConfig(mu_e=0.0))
        assert all(0.0 <= v <= 1.0 for v in vec.values)

    def test_support_matches_embedding_detectors(self):
        levels = [0.2, 0.7, 0.8, 0.1, 0.55]
        h, amap, emap = grid_hierarchy(levels)
        cfg = DetectionConfig(mu_d=0.5, mu_e=0.0, sigma=50, k_active=50)
        vec = activation_vector(h, amap, emap, cfg)
        above = {i for i, v in enumerate(vec.values) if v >= cfg.mu_d}
        code = embed(h, amap, emap, cfg)
        assert set(code.code.bits()) == above  # detector i carries bit i


class TestPersistence:
    def test_round_trip(self, tmp_path):
        space = clustered_space()
        cfg = SimilarityConfig(COSINE, lam=0.5, eta=math.inf)
        emap = energy_map(space, 3.0, cfg)
        h = build_hierarchy(space, emap, [0.5, 0.7], DetectionConfig(output_bits=64),
                            seed=6, budget=16)
        doc = hierarchy_to_json(h)
        rebuilt = hierarchy_from_json(doc)
        assert hierarchy_to_json(rebuilt) == doc


class TestEmbeddingTracksStimulus:
    def test_spearman_on_small_gradient(self):
        # Lay out a 1D gradient, then embeddings must order like the codes.
        enc = build_scalar_space(0.0, 100.0, layer_count=6, code_length=128,
                                 bits_per_detector=2, seed=31)
        codes = [encode_scalar(enc, float(v)).code for v in range(100)]
        space = init_space(codes, fill_margin=0.2, seed=8)
        sched = LayoutSchedule(
            metric=COSINE, lambda_start=0.4, lambda_end=0.6, lambda_step=0.1,
            pairs_per_step=64, max_steps=800, seed=9,
        )
        run_layout(space, sched)
        sim_cfg = SimilarityConfig(COSINE, lam=0.4, eta=math.inf)
        emap = energy_map(space, 3.0, sim_cfg)
        h = build_hierarchy(space, emap, [0.4, 0.55, 0.7], DetectionConfig(mu=0.01),
                            seed=10, budget=32, r_a=6.0)
        cfg = DetectionConfig(mu=0.01, mu_e=0.01, mu_d=0.3)
        embeddings = {}
        for v in (0, 10, 20, 40, 60, 80, 99):
            amap = activate(space, emap, [codes[v]], 0.4, COSINE)
            embeddings[v] = embed(h, amap, emap, cfg)
        ecfg = SimilarityConfig(COSINE)
        pairs = []
        vals = sorted(embeddings)
        for i, a in enumerate(vals):
            for b in vals[i + 1 :]:
                stim = similarity(codes[a], codes[b], ecfg)
                es = similarity(embeddings[a].code, embeddings[b].code, ecfg)
                pairs.append((stim, es))
        from scipy.stats import spearmanr

        rho = spearmanr([p[0] for p in pairs], [p[1] for p in pairs]).statistic
        assert rho >= 0.6
