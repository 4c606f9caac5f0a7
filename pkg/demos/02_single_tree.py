"""
Training the depth network and rebuilding one tree
==================================================

Trees of configurations A to F are grown from procedural sources.  A two layer
Chebyshev network learns depth labels on the training sources, then link
prediction turns its labels into parent links on an unseen set.
"""

import numpy as np

from ndphylo import experiments as E
from ndphylo.config import load_config
from ndphylo.evaluation import ipt_reconstruction_accuracy
from ndphylo.imageio import export_dot
from ndphylo.phylogeny import PhyloForest

cfg = load_config("demos/exp_photometric.toml", n_sources=30)
sets = E.make_corpus(cfg.n_sources, cfg.configs, cfg.cls, np.random.default_rng(0))
train, val, test = E.split_by_source(sets, cfg.test_fraction, cfg.val_fraction)
print(f"{len(train)} training, {len(val)} validation and {len(test)} test sets")

model, history = E.train_depth_model(train, val, cfg, seed=0)
print(f"stopped after {len(history)} epochs, best validation loss {model.meta['best_loss']:.3f}")

# one held-out set: predicted labels against the truth
st = test[0]
tree = E.reconstruct_sets(model, [st], cfg)[0]
print("\nset", st.set_id)
print("true depths     ", st.depths)
print("network labels  ", tree.diagnostics["predicted_labels"])
print("tree depths     ", [tree.depth[i] for i in range(len(st.images))])
print("accuracy        ", round(ipt_reconstruction_accuracy(tree, st.truth), 3))
print()
print(export_dot(PhyloForest(None, [tree]), "demo"))

report, _ = E.evaluate_sets(model, test, cfg)
print(report.to_table())
