"""Reconstruction metrics and the Oriented Kruskal baseline."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .imageio import ancestral_closure
from .phylogeny import assemble_ipt


def root_identification_accuracy(predictions, truths, rank=1):
    """Fraction of trees whose true root is among the first ``rank`` predicted roots.

    ``predictions`` holds one ranked list per tree; ``truths`` the true roots
    (or objects with a ``root`` attribute).  An empty list is a miss.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if len(predictions) != len(truths):
        raise ValueError("one prediction list per tree required")
    if not truths:
        raise ValueError("no trees to score")
    hits = 0
    for ranked, t in zip(predictions, truths):
        root = getattr(t, "root", t)
        hits += root in list(ranked)[:rank]
    return hits / len(truths)


def _edge_set(tree, ancestral=True):
    imm = set(map(tuple, tree.immediate_edges))
    if not ancestral:
        return imm
    anc = getattr(tree, "ancestral_edges", None)
    anc = set(map(tuple, anc)) if anc is not None else ancestral_closure(imm)
    return imm | anc


def ipt_reconstruction_accuracy(recon, truth, include_ancestral=True):
    """``|truth edges & recon edges| / |truth edges|`` over directed edges.

    By default both sides include their ancestral links.  With
    ``include_ancestral=False`` the reconstruction contributes immediate edges
    only while the truth keeps its full edge set.
    """
    if set(recon.nodes) != set(truth.nodes):
        raise ValueError("reconstruction and truth cover different nodes")
    tru = _edge_set(truth)
    if not tru:
        return 1.0
    got = _edge_set(recon, include_ancestral)
    return len(tru & got) / len(tru)


@dataclass
class ClusterScore:
    accuracy: float
    k_hat: int
    k_true: int


def clustering_accuracy(predicted, truth):
    """Fraction of images in an optimally matched predicted/true cluster pair.

    ``predicted`` is a label array or an object with ``labels``.  Matching is
    one-to-one; unmatched clusters score nothing.
    """
    pred = np.asarray(getattr(predicted, "labels", predicted))
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise ValueError("predicted and true labels cover different images")
    pu, pi = np.unique(pred, return_inverse=True)
    tu, ti = np.unique(true, return_inverse=True)
    table = np.zeros((len(pu), len(tu)), dtype=int)
    np.add.at(table, (pi, ti), 1)
    rows, cols = linear_sum_assignment(-table)
    return ClusterScore(float(table[rows, cols].sum() / len(pred)), len(pu), len(tu))


# ------------------------------------------------------------------ baseline

def oriented_kruskal(dissimilarity):
    """Greedy tree over an asymmetric dissimilarity matrix.

    Directed edges ``u -> v`` are scanned by increasing weight (ties by edge
    index) and kept when ``v`` has no parent yet and no cycle forms.
    """
    d = np.asarray(dissimilarity, dtype=np.float64)
    n = len(d)
    if d.shape != (n, n) or n == 0:
        raise ValueError("need a non-empty square matrix")
    off = ~np.eye(n, dtype=bool)
    if not np.all(np.isfinite(d[off])):
        raise ValueError("off-diagonal dissimilarities must be finite")
    us, vs = np.nonzero(off)
    order = np.lexsort((us * n + vs, d[us, vs]))
    comp = list(range(n))

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    parent = {}
    for e in order:
        u, v = int(us[e]), int(vs[e])
        if v in parent:
            continue
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        # v has no parent, so v is the root of its component; joining keeps one root per component
        comp[rv] = ru
        parent[v] = u
        if len(parent) == n - 1:
            break
    labels = np.ones(n, dtype=int)
    tree = assemble_ipt(range(n), labels, parent)
    tree.diagnostics.pop("depth_overrides", None)
    return tree


def tree_weight(tree, dissimilarity):
    d = np.asarray(dissimilarity)
    return float(sum(d[p, c] for p, c in tree.immediate_edges))


# -------------------------------------------------------------------- report

@dataclass
class EvalReport:
    root_id_accuracy: dict
    ipt_recon_accuracy: float
    clustering: dict = None
    per_config: dict = field(default_factory=dict)
    n_trees: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_table(self):
        ranks = sorted(self.root_id_accuracy, key=int)
        head = ["config", "n"] + [f"root@{r}" for r in ranks] + ["recon"]
        rows = []
        for name in sorted(self.per_config):
            c = self.per_config[name]
            rows.append([name, str(c["n"])] + [f"{100 * c['root_id_accuracy'][r]:.2f}"
                                               for r in ranks] + [f"{100 * c['ipt_recon_accuracy']:.2f}"])
        rows.append(["average", str(self.n_trees)]
                    + [f"{100 * self.root_id_accuracy[r]:.2f}" for r in ranks]
                    + [f"{100 * self.ipt_recon_accuracy:.2f}"])
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(head)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
        if self.clustering:
            c = self.clustering
            lines.append(f"clusters: mean k {c['mean_k']:.2f} (sd {c['sd_k']:.2f}), "
                         f"accuracy {100 * c['cluster_accuracy']:.2f}")
        return "\n".join(lines) + "\n"


def _summary(ranked, truths, recons, ranks):
    return {
        "n": len(truths),
        "root_id_accuracy": {str(r): root_identification_accuracy(ranked, truths, r) for r in ranks},
        "ipt_recon_accuracy": float(np.mean([ipt_reconstruction_accuracy(rc, t)
                                             for rc, t in zip(recons, truths)])),
    }


def build_report(recons, truths, ranked=None, groups=None, ranks=(1, 2), cluster_scores=None,
                 meta=None):
    """Aggregate per-tree results; averages are unweighted over trees.

    ``ranked`` defaults to each reconstruction's own root; ``groups`` names the
    configuration of each tree for the breakdown table.
    """
    if ranked is None:
        ranked = [t.diagnostics.get("ranked_roots", [t.root]) for t in recons]
    total = _summary(ranked, truths, recons, ranks)
    per = {}
    if groups is not None:
        for g in sorted(set(groups)):
            idx = [i for i, x in enumerate(groups) if x == g]
            per[g] = _summary([ranked[i] for i in idx], [truths[i] for i in idx],
                              [recons[i] for i in idx], ranks)
    clus = None
    if cluster_scores:
        ks = np.array([c.k_hat for c in cluster_scores], dtype=float)
        clus = {"mean_k": float(ks.mean()), "sd_k": float(ks.std()),
                "cluster_accuracy": float(np.mean([c.accuracy for c in cluster_scores]))}
    return EvalReport(total["root_id_accuracy"], total["ipt_recon_accuracy"], clus, per,
                      total["n"], meta or {})

