"""Dev calibration: full gradient-space layout, acceptance-criterion style."""
import math
import random
import time

import numpy as np

from damp.bitcode import SimilarityConfig, similarity
from damp.encoders import build_polar_encoder, encode_polar
from damp.layout import LayoutSchedule, init_space, layout_quality, run_layout

t0 = time.time()
enc = build_polar_encoder(seed=0)
points = []
for a in range(100):
    for m in range(100):
        points.append(encode_polar(enc, a * 3.6, float(m)).code)
print(f"encoded 10000 points in {time.time()-t0:.1f}s")

space = init_space(points, fill_margin=0.15, seed=42)
print("grid", space.m, "x", space.n)

cfg = SimilarityConfig("cosine_discrete", lam=0.65, eta=math.inf)


def spearman(space, n_pairs=10000, seed=1):
    rng = random.Random(seed)
    cells = space.occupied_cells()
    sims, dists = [], []
    for _ in range(n_pairs):
        a, b = rng.sample(cells, 2)
        ca, cb = space.get_code(a), space.get_code(b)
        sims.append(similarity(ca, cb, cfg))
        dists.append(-math.hypot(a[0] - b[0], a[1] - b[1]))
    from scipy.stats import spearmanr

    return spearmanr(sims, dists).statistic


q0 = layout_quality(space, 3.0, cfg)
s0 = spearman(space)
print(f"initial quality={q0:.4f} spearman={s0:.3f} ({time.time()-t0:.1f}s)")

long_sched = LayoutSchedule(
    mode="long_range", metric="cosine_discrete", eta=math.inf,
    lambda_start=0.65, lambda_end=0.8, lambda_step=0.05,
    radius_end=1.0, pairs_per_step=256, stop_fraction=0.01,
    max_steps=4000, seed=7,
)
t1 = time.time()
steps = [0]

def prog(rec):
    steps[0] += 1
    if rec.step % 50 == 0:
        print(f"  step {rec.step} stage {rec.stage} lam={rec.lam:.2f} r={rec.radius:.1f} swaps={rec.swaps} ({time.time()-t1:.0f}s)", flush=True)

report = run_layout(space, long_sched, progress=prog)
print(f"long phase: {report.step_count} steps, {report.total_swaps} swaps, converged={report.converged}, {time.time()-t1:.0f}s")
q1 = layout_quality(space, 3.0, cfg)
s1 = spearman(space)
print(f"after long: quality={q1:.4f} spearman={s1:.3f}")

short_sched = LayoutSchedule(
    mode="short_range", metric="cosine_discrete", eta=math.inf,
    lambda_start=0.8, lambda_end=0.8, lambda_step=0.05,
    radius_start=8.0, radius_end=1.0, pairs_per_step=256,
    short_range_radius=6.0, stop_fraction=0.01, max_steps=2000, seed=8,
)
t2 = time.time()
report2 = run_layout(space, short_sched, progress=prog)
print(f"short phase: {report2.step_count} steps, {report2.total_swaps} swaps, converged={report2.converged}, {time.time()-t2:.0f}s")

q2 = layout_quality(space, 3.0, cfg)
s2 = spearman(space)
print(f"final: quality={q2:.4f} spearman={s2:.3f} total={time.time()-t0:.0f}s")
print(f"quality ratio {q2/max(q0,1e-9):.2f}x (need >2), spearman {s2:.3f} (need >=0.5), initial {s0:.3f} (need <=0.1)")
