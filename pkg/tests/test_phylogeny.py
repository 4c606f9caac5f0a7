import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndphylo.gnn import ChebNetModel
from ndphylo.phylogeny import (assemble_ipt, correct_depth_labels, find_candidate_roots,
                               infer_links, link_prediction, rank_roots, reconstruct_ipf,
                               reconstruct_ipt)
from ndphylo.transforms import CONFIGS_5
from oracles import depths, path_lengths, rooted_trees, undirected_key


def _two_candidate_distances():
    # D_0 = 10, D_1 = 4
    d = np.zeros((3, 3))
    d[0, 1] = d[1, 0] = 2
    d[0, 2] = d[2, 0] = 8
    d[1, 2] = d[2, 1] = 2
    return d


def test_candidate_roots():
    assert find_candidate_roots([1, 2, 2, 3, 3]) == [0]
    assert find_candidate_roots([1, 1, 2, 3, 3]) == [0, 1]
    assert find_candidate_roots([2, 2, 3]) == [0]
    assert find_candidate_roots([3, 2, 2]) == [1]


def test_correct_labels_examples():
    d = _two_candidate_distances()
    assert correct_depth_labels([1, 2, 3], distances=d).tolist() == [1, 2, 3]
    assert correct_depth_labels([1, 1, 3], distances=d).tolist() == [1, 2, 3]
    tie = np.ones((3, 3)) - np.eye(3)
    assert correct_depth_labels([1, 1, 2], distances=tie).tolist() == [1, 2, 2]
    assert correct_depth_labels([2, 3, 3], distances=tie).tolist() == [1, 3, 3]


def test_max_aggregation():
    d = np.array([[0, 1, 1, 1], [1, 0, 5, 0], [1, 5, 0, 0], [1, 0, 0, 0.0]])
    # sums 3 vs 6 and maxima 1 vs 5 both favour node 1
    assert correct_depth_labels([1, 1, 2, 2], distances=d, aggregation="max").tolist() == [2, 1, 2, 2]
    d[0, 3] = d[3, 0] = 9
    assert correct_depth_labels([1, 1, 2, 2], distances=d, aggregation="max").tolist() == [1, 2, 2, 2]
    with pytest.raises(ValueError):
        correct_depth_labels([1, 1, 2], distances=d[:3, :3], aggregation="mean")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=8), st.integers(0, 10_000))
def test_correction_properties(labels, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(len(labels), 3))
    d = ((x[:, None] - x[None]) ** 2).sum(-1)
    out = correct_depth_labels(labels, distances=d)
    lab = np.array(labels)
    assert np.sum(out == 1) == 1
    cands = set(find_candidate_roots(lab))
    for i in range(len(lab)):
        if i not in cands:
            assert out[i] == lab[i]
    parents = infer_links(out, distances=d)
    assert all(out[p] < out[c] for c, p in parents.items())
    tree = assemble_ipt(range(len(lab)), out, parents)
    assert len(tree.immediate_edges) == len(lab) - 1


def test_rank_roots_examples():
    d = _two_candidate_distances()
    assert rank_roots([1, 1, 3], distances=d, topk=1) == [0]
    assert rank_roots([1, 1, 3], distances=d, topk=2) == [0, 1]
    assert rank_roots([1, 1, 3], distances=d, topk=10) == [0, 1, 2]
    assert rank_roots([2, 1, 3], distances=d, topk=3) == [1, 0, 2]
    with pytest.raises(ValueError):
        rank_roots([1, 2], distances=d[:2, :2], topk=0)


def test_infer_links_examples():
    assert infer_links([1, 2], distances=np.ones((2, 2))) == {1: 0}
    d = np.full((4, 4), 5.0)
    d[3, 2] = d[2, 3] = 1.0
    assert infer_links([1, 2, 2, 3], distances=d) == {1: 0, 2: 0, 3: 2}
    d = np.zeros((3, 3))
    d[2, 0] = d[0, 2] = 1
    d[2, 1] = d[1, 2] = 9
    assert infer_links([2, 1, 3], distances=d)[2] == 0  # only depth-2 node
    d = np.array([[0, 1, 9], [1, 0, 9], [9, 9, 0.0]])
    # depth 2 empty: node at depth 3 attaches to the nearest shallower populated depth
    assert infer_links([1, 3, 4], distances=d) == {1: 0, 2: 1}
    with pytest.raises(ValueError):
        infer_links([1, 1, 2], distances=np.ones((3, 3)))


def test_assemble_examples():
    chain = assemble_ipt([1, 2, 3], [1, 2, 3], {1: 0, 2: 1})
    assert chain.immediate_edges == [(1, 2), (2, 3)] and chain.ancestral_edges == [(1, 3)]
    star = assemble_ipt([1, 2, 3], [1, 2, 2], {1: 0, 2: 0})
    assert star.ancestral_edges == [] and star.root == 1
    cfg = CONFIGS_5["D"]
    d_tree = assemble_ipt(range(5), [1, 2, 2, 2, 2], {c: p for p, c in cfg.immediate_edges})
    assert len(d_tree.immediate_edges) == 4 and d_tree.ancestral_edges == []
    assert "depth_overrides" not in d_tree.diagnostics


def test_assemble_overrides_and_errors():
    t = assemble_ipt(["a", "b", "c"], [1, 2, 2], {1: 0, 2: 1})
    assert t.diagnostics["depth_overrides"] == {"c": [2, 3]} and t.depth["c"] == 3
    with pytest.raises(RuntimeError):
        assemble_ipt(range(3), [1, 2, 2], {1: 2, 2: 1})
    with pytest.raises(RuntimeError):
        assemble_ipt(range(3), [1, 2, 2], {0: 1, 1: 0, 2: 0})
    rec = t.to_record()
    assert rec["root"] == "a" and rec["parent"] == [["b", "a"], ["c", "b"]]


def test_oracle_recovers_every_labelled_tree():
    trees = rooted_trees(5)
    assert len({undirected_key(p) for _, p in trees}) == 125
    for root, parent in trees:
        d = path_lengths(5, parent)
        tree = link_prediction(list(range(5)), depths(5, root, parent), distances=d)
        assert tree.root == root and tree.parent == parent


def test_link_prediction_diagnostics():
    d = _two_candidate_distances()
    t = link_prediction(["x", "y", "z"], [1, 1, 3], distances=d, topk=2)
    assert t.diagnostics["predicted_labels"] == [1, 1, 3]
    assert t.diagnostics["ranked_roots"] == ["x", "y"]
    assert t.root == "x" and t.parent == {"y": "x", "z": "y"}
    assert "zero_distance_tie" not in t.diagnostics


class _ConstantModel:
    """Stand-in network predicting depth 1 for the first image and 2 elsewhere."""

    def features(self, images, residuals=None):
        return np.zeros((len(images), 1))


def test_reconstruct_ipt_with_stub(monkeypatch, source):
    import ndphylo.phylogeny as ph
    monkeypatch.setattr(ph, "predict_depths", lambda m, x, a: np.array([1] + [2] * (len(x) - 1)))
    t = reconstruct_ipt([source, source + 1.0, source * 0.9], _ConstantModel(), ["a", "b", "c"])
    assert t.root == "a" and set(t.parent) == {"b", "c"}
    single = reconstruct_ipt([source], _ConstantModel())
    assert single.root == 0 and single.parent == {}


def _tiny_model(in_dim):
    return ChebNetModel.init(in_dim, rng=np.random.default_rng(0), feature_mode="levels")


def test_reconstruct_ipf_identical_pair(source):
    img = np.round(source)
    forest = reconstruct_ipf([img, img.copy()], _tiny_model(512), rng=np.random.default_rng(0))
    assert forest.assignment.k == 1 and len(forest.trees) == 1
    t = forest.trees[0]
    assert len(t.immediate_edges) == 1 and t.diagnostics.get("zero_distance_tie")
    assert forest.to_record()["k"] == 1


def test_reconstruct_ipf_edge_cases(source):
    with pytest.raises(ValueError):
        reconstruct_ipf([], _tiny_model(512))
    forest = reconstruct_ipf([np.round(source)], _tiny_model(512))
    assert forest.trees[0].nodes == [0]
