"""
Greedy baseline on the same residual distances
==============================================

Oriented Kruskal only sees pairwise dissimilarities.  On symmetric residual
distances it has no sense of direction, which is where the learned depth
labels help.
"""

import numpy as np

from ndphylo import experiments as E
from ndphylo.config import load_config
from ndphylo.evaluation import ipt_reconstruction_accuracy, oriented_kruskal

cfg = load_config("demos/exp_photometric.toml", n_sources=30)
sets = E.make_corpus(cfg.n_sources, cfg.configs, cfg.cls, np.random.default_rng(0))
train, val, test = E.split_by_source(sets, cfg.test_fraction, cfg.val_fraction)
model, _ = E.train_depth_model(train, val, cfg, seed=0)
recons = E.reconstruct_sets(model, test, cfg)

greedy = [ipt_reconstruction_accuracy(oriented_kruskal(st.distances), st.truth) for st in test]
learned = [ipt_reconstruction_accuracy(t, st.truth) for t, st in zip(recons, test)]
greedy_root = np.mean([oriented_kruskal(st.distances).root == st.truth.root for st in test])
learned_root = np.mean([t.root == st.truth.root for t, st in zip(recons, test)])
print(f"oriented kruskal   root {greedy_root:.3f}   reconstruction {np.mean(greedy):.3f}")
print(f"depth network      root {learned_root:.3f}   reconstruction {np.mean(learned):.3f}")
