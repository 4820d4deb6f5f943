"""Dev calibration: linear 2D gradient layout at chosen scale."""
import math
import random
import sys
import time

from damp.bitcode import SimilarityConfig, similarity
from damp.chroma import MergePolicy, colour_merge
from damp.encoders import build_scalar_space, encode_scalar
from damp.layout import LayoutSchedule, init_space, layout_quality, run_layout

side = int(sys.argv[1]) if len(sys.argv) > 1 else 60
max_long = int(sys.argv[2]) if len(sys.argv) > 2 else 8000
layers, bits = 5, 3

t0 = time.time()
fx = build_scalar_space(0.0, side - 1.0, layer_count=layers, code_length=128,
                        bits_per_detector=bits, seed=10)
fy = build_scalar_space(0.0, side - 1.0, layer_count=layers, code_length=128,
                        bits_per_detector=bits, seed=11)
points = []
for x in range(side):
    for y in range(side):
        cc = colour_merge([encode_scalar(fx, float(x)), encode_scalar(fy, float(y))],
                          MergePolicy(128))
        points.append(cc.code)
space = init_space(points, fill_margin=0.15, seed=42)
print(f"{side}x{side} linear gradient -> grid {space.m}x{space.n}")

cfg = SimilarityConfig("cosine_discrete", lam=0.65, eta=math.inf)

def spearman(space, n_pairs=10000, seed=1):
    rng = random.Random(seed)
    cells = space.occupied_cells()
    sims, dists = [], []
    for _ in range(n_pairs):
        a, b = rng.sample(cells, 2)
        sims.append(similarity(space.get_code(a), space.get_code(b), cfg))
        dists.append(-math.hypot(a[0] - b[0], a[1] - b[1]))
    from scipy.stats import spearmanr
    return spearmanr(sims, dists).statistic

q0 = layout_quality(space, 3.0, cfg)
print(f"initial q={q0:.4f} rho={spearman(space):.3f} ({time.time()-t0:.0f}s)")

long_sched = LayoutSchedule(
    mode="long_range", metric="cosine_discrete", eta=math.inf,
    lambda_start=0.65, lambda_end=0.8, lambda_step=0.05,
    radius_end=1.0, pairs_per_step=256, stop_fraction=0.01,
    max_steps=max_long, seed=7,
)
t1 = time.time()
rep = run_layout(space, long_sched)
stage_steps = {}
for s in rep.steps:
    stage_steps[s.stage] = stage_steps.get(s.stage, 0) + 1
print(f"long: {rep.step_count} steps {rep.total_swaps} swaps conv={rep.converged} "
      f"{time.time()-t1:.0f}s stages={stage_steps}")
print(f"after long: q={layout_quality(space, 3.0, cfg):.4f} rho={spearman(space):.3f}")

short_sched = LayoutSchedule(
    mode="short_range", metric="cosine_discrete", eta=math.inf,
    lambda_start=0.8, lambda_end=0.8,
    radius_start=6.0, radius_end=1.0, pairs_per_step=256,
    short_range_radius=6.0, stop_fraction=0.01, max_steps=2500, seed=8,
)
t2 = time.time()
rep2 = run_layout(space, short_sched)
print(f"short: {rep2.step_count} steps {rep2.total_swaps} swaps conv={rep2.converged} {time.time()-t2:.0f}s")
q2 = layout_quality(space, 3.0, cfg)
rho = spearman(space)
print(f"FINAL q={q2:.4f} ({q2/max(q0,1e-9):.1f}x) rho={rho:.3f} total={time.time()-t0:.0f}s")
