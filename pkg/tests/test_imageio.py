import json

import numpy as np
import pytest
from PIL import Image as PILImage

from ndphylo.imageio import (DatasetManifest, GroundTruthTree, ManifestEntry, ManifestError,
                             ancestral_closure, check_image, export_dot, load_image, read_manifest,
                             save_image, write_manifest)
from ndphylo.phylogeny import PhyloForest, assemble_ipt


def test_load_zero_pgm(tmp_path):
    p = tmp_path / "z.pgm"
    PILImage.fromarray(np.zeros((96, 96), np.uint8)).save(p)
    img = load_image(p, 96)
    assert img.shape == (96, 96) and not img.any()


def test_center_crop(tmp_path):
    arr = (np.arange(128 * 128) % 251).reshape(128, 128).astype(np.uint8)
    p = tmp_path / "a.png"
    PILImage.fromarray(arr).save(p)
    assert np.array_equal(load_image(p, 96), arr[16:112, 16:112])


def test_rgb_keeps_first_channel(tmp_path, rng):
    arr = rng.integers(0, 256, (80, 80, 3)).astype(np.uint8)
    p = tmp_path / "c.png"
    PILImage.fromarray(arr, "RGB").save(p)
    img = load_image(p, 64)
    # reference decoder: PIL's own band split, same crop
    ref = np.asarray(PILImage.open(p).split()[0], dtype=float)[8:72, 8:72]
    assert np.array_equal(img, ref) and img.max() <= 255


def test_small_input_resized(tmp_path, rng):
    p = tmp_path / "s.png"
    PILImage.fromarray(rng.integers(0, 256, (48, 60)).astype(np.uint8)).save(p)
    img = load_image(p, 96)
    assert img.shape == (96, 96) and 0 <= img.min() and img.max() <= 255


def test_too_small_rejected(tmp_path):
    p = tmp_path / "t.png"
    PILImage.fromarray(np.zeros((20, 20), np.uint8)).save(p)
    with pytest.raises(ValueError):
        load_image(p)


def test_load_deterministic_and_save_roundtrip(tmp_path, source):
    p = tmp_path / "r.png"
    save_image(source, p)
    a, b = load_image(p, 64), load_image(p, 64)
    assert np.array_equal(a, b)
    assert np.array_equal(a, np.clip(np.rint(source), 0, 255))


def test_check_image():
    with pytest.raises(ValueError):
        check_image(np.zeros((40, 41)))
    with pytest.raises(ValueError):
        check_image(np.full((40, 40), 256.0))


def test_ground_truth_depths():
    gt = GroundTruthTree("t", [1, 2, 3, 4, 5], [(1, 2), (1, 3), (3, 4), (3, 5)])
    assert gt.root == 1
    assert [gt.depth_labels[n] for n in [1, 2, 3, 4, 5]] == [1, 2, 2, 3, 3]
    assert gt.ancestral_edges == [(1, 4), (1, 5)]


@pytest.mark.parametrize("edges", [
    [(1, 2), (3, 4), (3, 5), (4, 5)],       # two roots plus a cycle
    [(1, 2), (1, 3), (3, 4)],               # wrong edge count
    [(1, 2), (2, 1), (3, 4), (3, 5)],       # cycle
])
def test_ground_truth_rejects(edges):
    with pytest.raises(ManifestError):
        GroundTruthTree("t", [1, 2, 3, 4, 5], edges)


def test_two_depth_one_nodes_rejected():
    with pytest.raises(ManifestError):
        GroundTruthTree("t", [1, 2, 3], [(1, 2), (1, 3)], depth_labels={1: 1, 2: 1, 3: 2})


def _manifest():
    entries = [ManifestEntry(f"img/{n}.png", "t", n) for n in [1, 2, 3, 4, 5]]
    gt = GroundTruthTree("t", [1, 2, 3, 4, 5], [(1, 2), (1, 3), (3, 4), (3, 5)])
    return DatasetManifest(entries, [gt], {"note": "x"})


def test_manifest_roundtrip(tmp_path):
    m = _manifest()
    p = tmp_path / "m.jsonl"
    write_manifest(m, p)
    back = read_manifest(p)
    assert back == m
    assert back.truth_for("t").depth_labels == {1: 1, 2: 2, 3: 2, 4: 3, 5: 3}


def test_manifest_two_roots_rejected(tmp_path):
    p = tmp_path / "bad.jsonl"
    rec = {"ground_truth": {"set_id": "t", "nodes": [1, 2, 3], "immediate_edges": [[1, 2], [1, 3]],
                            "depth_labels": [[1, 1], [2, 1], [3, 2]]}}
    p.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ManifestError):
        read_manifest(p)


def test_empty_manifest(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    m = read_manifest(p)
    assert m.entries == [] and m.ground_truth == []


def test_manifest_duplicates_and_missing_nodes():
    with pytest.raises(ManifestError):
        DatasetManifest([ManifestEntry("a", "t", 1), ManifestEntry("b", "t", 1)])
    with pytest.raises(ManifestError):
        DatasetManifest([ManifestEntry("a", "t", 1)],
                        [GroundTruthTree("t", [1, 2], [(1, 2)])])


def test_ancestral_closure_chain():
    assert ancestral_closure([(1, 2), (2, 3), (3, 4)]) == [(1, 3), (1, 4), (2, 4)]


def _tree(nodes, parent):
    labels = np.ones(len(nodes), int)
    return assemble_ipt(nodes, labels, parent)


def _edges(dot, style):
    return sorted(line.strip() for line in dot.splitlines() if f"style={style}" in line)


def test_dot_single_edge():
    dot = export_dot(PhyloForest(None, [_tree([1, 2], {1: 0})]))
    assert dot.startswith("digraph") and _edges(dot, "solid") == ['"1" -> "2" [style=solid];']
    assert _edges(dot, "dashed") == []


def test_dot_chain_has_dashed_ancestral():
    dot = export_dot(PhyloForest(None, [_tree([1, 2, 3], {1: 0, 2: 1})]))
    assert len(_edges(dot, "solid")) == 2
    assert _edges(dot, "dashed") == ['"1" -> "3" [style=dashed];']


def test_dot_two_trees_edge_count():
    t1 = _tree([1, 2, 3], {1: 0, 2: 1})
    t2 = _tree([4, 5], {1: 0})
    dot = export_dot(PhyloForest(None, [t1, t2]))
    assert dot.count("digraph") == 1
    assert dot.count("->") == sum(len(t.immediate_edges) + len(t.ancestral_edges) for t in (t1, t2))
    assert dot.count("doublecircle") == 2
