"""Link prediction: depth-label correction, root ranking, parent inference and tree assembly."""

from dataclasses import dataclass, field

import numpy as np

from .clustering import ETA, ClusterAssignment, cluster_images
from .imageio import ancestral_closure
from .sensornoise import enhanced_residual, pairwise_distances
from .gnn import build_adjacency, predict_depths


def _distances(residuals=None, distances=None):
    if distances is not None:
        return np.asarray(distances, dtype=np.float64)
    if residuals is None:
        raise ValueError("need residuals or a distance matrix")
    return pairwise_distances(residuals)


def find_candidate_roots(labels):
    """Indices labelled 1; if there are none, the (first) minimum-label node."""
    labels = np.asarray(labels, dtype=int)
    cands = np.flatnonzero(labels == 1)
    if len(cands) == 0:
        cands = np.array([int(np.argmin(labels))])
    return [int(c) for c in cands]


def root_scores(candidates, dist, aggregation="sum"):
    """Aggregate residual distance from each candidate to every other node."""
    scores = []
    for c in candidates:
        row = np.delete(dist[c], c)
        if len(row) == 0:
            scores.append(0.0)
        elif aggregation == "sum":
            scores.append(float(row.sum()))
        elif aggregation == "max":
            scores.append(float(row.max()))
        else:
            raise ValueError(f"unknown aggregation {aggregation!r}")
    return np.array(scores)


def correct_depth_labels(labels, residuals=None, distances=None, aggregation="sum"):
    """Keep label 1 only for the candidate farthest from the rest; other candidates become 2.

    Ties go to the lower index.
    """
    labels = np.asarray(labels, dtype=int).copy()
    cands = find_candidate_roots(labels)
    if len(cands) == 1:
        labels[cands[0]] = 1
        return labels
    d = _distances(residuals, distances)
    scores = root_scores(cands, d, aggregation)
    best = cands[int(np.argmax(scores))]  # argmax returns the first maximum
    for c in cands:
        labels[c] = 1 if c == best else 2
    return labels


def rank_roots(labels, residuals=None, distances=None, topk=1, aggregation="sum"):
    """Node indices ordered by (label ascending, aggregate distance descending, index)."""
    if topk < 1:
        raise ValueError("topk must be >= 1")
    labels = np.asarray(labels, dtype=int)
    d = _distances(residuals, distances)
    corrected = correct_depth_labels(labels, distances=d, aggregation=aggregation)
    scores = root_scores(range(len(labels)), d, aggregation)
    order = sorted(range(len(labels)), key=lambda i: (corrected[i], -scores[i], i))
    return order[:topk]


def infer_links(labels, residuals=None, distances=None):
    """Parent of each non-root node: the closest node at the next shallower populated depth.

    ``labels`` must contain exactly one 1.  Returns ``{child: parent}`` on indices.
    """
    labels = np.asarray(labels, dtype=int)
    if np.sum(labels == 1) != 1:
        raise ValueError("link inference needs exactly one node at depth 1")
    d = _distances(residuals, distances)
    by_depth = {}
    for i, l in enumerate(labels):
        by_depth.setdefault(int(l), []).append(i)
    parent = {}
    for t, l in enumerate(labels):
        if l == 1:
            continue
        k = l - 1
        while k not in by_depth:
            k -= 1
        pool = by_depth[k]
        parent[t] = pool[int(np.argmin(d[t, pool]))]
    return parent


@dataclass
class PhyloTree:
    nodes: list
    root: object
    parent: dict
    depth: dict
    immediate_edges: list
    ancestral_edges: list
    diagnostics: dict = field(default_factory=dict)

    def to_record(self):
        return {
            "nodes": list(self.nodes), "root": self.root,
            "parent": [[c, p] for c, p in sorted(self.parent.items())],
            "depth": [[n, self.depth[n]] for n in self.nodes],
            "immediate_edges": [list(e) for e in self.immediate_edges],
            "ancestral_edges": [list(e) for e in self.ancestral_edges],
            "diagnostics": self.diagnostics,
        }


def _tree_depths(n, root, parent):
    # topological pass; fails on cycles or nodes unreachable from the root
    children = {}
    for c, p in parent.items():
        children.setdefault(p, []).append(c)
    depth = {root: 1}
    stack = [root]
    while stack:
        u = stack.pop()
        for c in children.get(u, []):
            if c in depth:
                raise RuntimeError("cycle in parent map")
            depth[c] = depth[u] + 1
            stack.append(c)
    if len(depth) != n:
        raise RuntimeError("parent map contains a cycle or detached nodes")
    return depth


def assemble_ipt(node_ids, labels, parent_map):
    """Build a :class:`PhyloTree` from index-based labels and parents.

    Depths are recomputed from the tree; any disagreement with ``labels`` is
    reported in ``diagnostics["depth_overrides"]``.
    """
    node_ids = list(node_ids)
    n = len(node_ids)
    labels = np.asarray(labels, dtype=int)
    roots = [i for i in range(n) if i not in parent_map]
    if len(roots) != 1:
        raise RuntimeError(f"expected one root, found {len(roots)}")
    root = roots[0]
    depth = _tree_depths(n, root, parent_map)
    overrides = {node_ids[i]: [int(labels[i]), depth[i]] for i in range(n) if depth[i] != labels[i]}
    imm = sorted((node_ids[p], node_ids[c]) for c, p in parent_map.items())
    return PhyloTree(
        nodes=node_ids, root=node_ids[root],
        parent={node_ids[c]: node_ids[p] for c, p in parent_map.items()},
        depth={node_ids[i]: depth[i] for i in range(n)},
        immediate_edges=imm, ancestral_edges=sorted(ancestral_closure(imm)),
        diagnostics={"depth_overrides": overrides} if overrides else {},
    )


def link_prediction(node_ids, labels, residuals=None, distances=None, aggregation="sum",
                    topk=None):
    """Correct labels, infer parents and assemble one tree; optionally record a root ranking."""
    d = _distances(residuals, distances)
    corrected = correct_depth_labels(labels, distances=d, aggregation=aggregation)
    tree = assemble_ipt(node_ids, corrected, infer_links(corrected, distances=d))
    tree.diagnostics["predicted_labels"] = [int(v) for v in labels]
    if topk:
        ranked = rank_roots(labels, distances=d, topk=topk, aggregation=aggregation)
        tree.diagnostics["ranked_roots"] = [node_ids[i] for i in ranked]
    if len(node_ids) > 1:
        off = d[~np.eye(len(d), dtype=bool)]
        if np.any(off == 0):
            tree.diagnostics["zero_distance_tie"] = True
    return tree


def reconstruct_ipt(images, model, node_ids=None, residuals=None, aggregation="sum", topk=None,
                    **noise_kw):
    """Depth labels from the network, then link prediction on residual distances."""
    n = len(images)
    node_ids = list(range(n)) if node_ids is None else list(node_ids)
    if residuals is None:
        residuals = [enhanced_residual(im, **noise_kw) for im in images]
    d = pairwise_distances(residuals)
    if n == 1:
        labels = np.array([1])
    else:
        x = model.features(images, residuals)
        labels = predict_depths(model, x, build_adjacency("test", distances=d))
    return link_prediction(node_ids, labels, distances=d, aggregation=aggregation, topk=topk)


@dataclass
class PhyloForest:
    assignment: ClusterAssignment
    trees: list

    def to_record(self):
        return {"k": self.assignment.k, "labels": [int(v) for v in self.assignment.labels],
                "trees": [t.to_record() for t in self.trees]}


def reconstruct_ipf(images, model, eta=ETA, rng=None, node_ids=None, aggregation="sum",
                    topk=None, cluster_kw=None, **noise_kw):
    """Cluster the images into trees, then reconstruct each tree independently."""
    if len(images) == 0:
        raise ValueError("no images to reconstruct")
    node_ids = list(range(len(images))) if node_ids is None else list(node_ids)
    residuals = [enhanced_residual(im, **noise_kw) for im in images]
    if len(images) == 1:
        assignment = ClusterAssignment(np.ones(1, dtype=int), 1)
    else:
        assignment = cluster_images(images, eta=eta, rng=rng, residuals=residuals,
                                    **(cluster_kw or {}))
    trees = []
    for members in assignment.members():
        trees.append(reconstruct_ipt([images[i] for i in members], model,
                                     [node_ids[i] for i in members],
                                     [residuals[i] for i in members], aggregation, topk))
    return PhyloForest(assignment, trees)
