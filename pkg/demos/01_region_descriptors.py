"""From raw activation maps to attention-weighted regional descriptors.

Walks one frame through the feature pipeline: grid max-pooling over two
backbone layers, PCA whitening, and saliency weighting against a context
vector.
"""

import numpy as np

from vidsim.features import (
    FeatureMapStack,
    attention_weight,
    apply_whitening,
    fit_whitening,
    l2_normalize,
    region_pool,
)

rng = np.random.default_rng(0)

# two convolutional layers of one frame: 14x14x24 and 7x7x40
stack = FeatureMapStack([rng.random((14, 14, 24)).astype(np.float32),
                         rng.random((7, 7, 40)).astype(np.float32)])
print(f"input layers: {[m.shape for m in stack.maps]} -> {stack.channels} channels total")

desc = region_pool(stack, level=3)
print(f"level-3 descriptor: {desc.regions.shape}")
norms = np.linalg.norm(desc.region_vectors(), axis=1)
print(f"region vector norms after pooling: {np.round(norms, 6)}")

# whitening, fitted on a sample of region vectors from many frames
sample = np.concatenate([
    region_pool(FeatureMapStack([rng.random((14, 14, 24)).astype(np.float32),
                                 rng.random((7, 7, 40)).astype(np.float32)]), 3).region_vectors()
    for _ in range(80)
])
model = fit_whitening(sample, output_dim=32)
white = apply_whitening(desc, model)
print(f"whitened + reduced descriptor: {white.regions.shape}")

# attention: regions aligned with the context vector keep their length,
# anti-aligned regions vanish
u = l2_normalize(rng.standard_normal(32))
weighted = attention_weight(white, u)
weights = np.linalg.norm(weighted.region_vectors(), axis=1)
print(f"attention weights per region: {np.round(weights, 3)}")
print("all weights live in [0, 1]; the direction of every region vector is preserved")
