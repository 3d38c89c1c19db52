"""The four-layer similarity CNN and the three scoring variants.

Feeds a frame-to-frame matrix through the CNN (spatial size drops to a
quarter), then reduces to a single video similarity per variant.
"""

import numpy as np

from vidsim.model import (
    ModelParams,
    SimCnnParams,
    VARIANT_FRAME,
    VARIANT_SYM,
    VARIANT_VIDEO,
    score_pair,
    sim_cnn_forward,
)
from vidsim.similarity import SimilarityMatrix, video_pair_matrix
from vidsim.synthetic import compose_video, make_scene

params = SimCnnParams.init(seed=1)
print(f"CNN parameter count: {params.param_count}")

rng = np.random.default_rng(3)
s_f = SimilarityMatrix(rng.uniform(-1, 1, (64, 48)).astype(np.float32))
s_v = sim_cnn_forward(s_f, params)
print(f"S_f {s_f.rows}x{s_f.cols} -> S_v {s_v.rows}x{s_v.cols} (a quarter per axis)")

# a pair of videos sharing half their content (attention left out so the
# frame-level scores stay interpretable; demo 01 covers the weighting)
scenes = [make_scene(rng, 2, 32) for _ in range(4)]
q = compose_video(rng, "q", scenes, 4, 0.3)
p = compose_video(rng, "p", scenes[:2] + [make_scene(rng, 2, 32) for _ in range(2)], 4, 0.3)

model = ModelParams(params)
for variant in (VARIANT_FRAME, VARIANT_SYM, VARIANT_VIDEO):
    score = score_pair(q, p, model, variant)
    print(f"{variant:10s} score: {score.value:+.4f}")
print("(an untrained CNN scores near zero; see the training demo)")

matrix = video_pair_matrix(q, q)
print(f"\nself-similarity diagonal mean: {np.diag(matrix.values).mean():.4f}")
