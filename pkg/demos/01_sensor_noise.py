"""
Sensor noise along a chain of edits
===================================

A synthetic camera leaves a faint multiplicative pattern in the root image.
The first edit already washes out much of it, so the root's residual stands
apart from every descendant.  Summing a node's distances to the others is
what link prediction uses to pick one root among several candidates.
"""

import numpy as np

from ndphylo.sensornoise import enhanced_residual, pairwise_distances
from ndphylo.transforms import (chain_config, embed_sensor_pattern, procedural_source,
                                sensor_pattern, synthesize_ipt)

rng = np.random.default_rng(1)

# a textured root carrying the pattern of "camera" 0
root = embed_sensor_pattern(procedural_source(rng, 96), sensor_pattern(0, 96))

# five images, each one photometric edit away from the previous
images, truth, specs = synthesize_ipt(root, chain_config(5), "photometric", rng)
for node, spec in sorted(specs.items()):
    print(f"node {node}: {spec}")

residuals = [enhanced_residual(im) for im in images]
d = pairwise_distances(residuals)
np.set_printoptions(precision=0, suppress=True)
print("\nresidual distances (row = from node):")
print(d)

# the root has the largest summed distance
print("\nsummed distance per node:", [round(v) for v in d.sum(axis=1)])
