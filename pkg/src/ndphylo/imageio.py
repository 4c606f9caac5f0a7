"""Image loading/saving, JSON-lines dataset manifests and Graphviz export."""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

MIN_SIDE = 32


class ManifestError(ValueError):
    """Manifest or ground-truth record violates its invariants."""


def check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"image must be a square 2-D array, got shape {img.shape}")
    if img.shape[0] < MIN_SIDE:
        raise ValueError(f"image side {img.shape[0]} < {MIN_SIDE}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 255.0:
        raise ValueError("image values must be finite and within [0, 255]")
    return img


def load_image(path, side=96):
    """Read a PNG/PGM file as a single-channel ``side`` x ``side`` float array.

    Colour files keep their first channel.  The largest centred square (or a
    centred ``side`` crop when the file is big enough) is cut out and resized
    bilinearly when its size differs from ``side``.
    """
    with PILImage.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            arr = arr * (255.0 / max(arr.max(), 1.0)) if arr.max() > 255 else arr
        elif im.mode == "F":
            arr = np.asarray(im, dtype=np.float64)
        else:
            bands = im.split()
            arr = np.asarray(bands[0], dtype=np.float64)
    h, w = arr.shape
    if min(h, w) < MIN_SIDE:
        raise ValueError(f"{path}: image {w}x{h} smaller than {MIN_SIDE}px")
    crop = side if min(h, w) >= side else min(h, w)
    top, left = (h - crop) // 2, (w - crop) // 2
    arr = arr[top:top + crop, left:left + crop]
    if crop != side:
        resized = PILImage.fromarray(arr.astype(np.float32), mode="F").resize(
            (side, side), PILImage.BILINEAR)
        arr = np.asarray(resized, dtype=np.float64)
    return np.clip(arr, 0.0, 255.0)


def save_image(img, path):
    """Write as 8-bit grayscale (values rounded), format picked by extension."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path)


def quantize(img):
    """Round to the 8-bit grid that :func:`save_image` would store."""
    return np.clip(np.rint(img), 0.0, 255.0)


# ---------------------------------------------------------------- ground truth

def _depths_from_edges(nodes, edges):
    parent = {}
    for p, c in edges:
        if c in parent:
            raise ManifestError(f"node {c!r} has two parents")
        parent[c] = p
    roots = [n for n in nodes if n not in parent]
    if len(roots) != 1:
        raise ManifestError(f"tree must have exactly one depth-1 node, found {len(roots)}")
    children = {}
    for p, c in edges:
        children.setdefault(p, []).append(c)
    depth = {roots[0]: 1}
    stack = [roots[0]]
    while stack:
        u = stack.pop()
        for v in children.get(u, ()):
            depth[v] = depth[u] + 1
            stack.append(v)
    if len(depth) != len(nodes):
        raise ManifestError("edges do not form a connected tree")
    return roots[0], depth


@dataclass
class GroundTruthTree:
    """Known phylogeny of one near-duplicate set.

    ``depth_labels`` and ``root`` are derived from the edges when omitted and
    checked against them when given.
    """

    set_id: str
    nodes: list
    immediate_edges: list
    root: object = None
    depth_labels: dict = None

    def __post_init__(self):
        self.nodes = list(self.nodes)
        self.immediate_edges = [tuple(e) for e in self.immediate_edges]
        if len(set(self.nodes)) != len(self.nodes):
            raise ManifestError(f"set {self.set_id!r}: duplicate node ids")
        known = set(self.nodes)
        for e in self.immediate_edges:
            if e[0] not in known or e[1] not in known:
                raise ManifestError(f"set {self.set_id!r}: edge {e} references unknown node")
        if len(self.immediate_edges) != len(self.nodes) - 1:
            raise ManifestError(f"set {self.set_id!r}: a tree on {len(self.nodes)} nodes "
                                f"needs {len(self.nodes) - 1} edges")
        root, depth = _depths_from_edges(self.nodes, self.immediate_edges)
        if self.root is not None and self.root != root:
            raise ManifestError(f"set {self.set_id!r}: stated root {self.root!r} != {root!r}")
        if self.depth_labels is not None:
            given = {k: int(v) for k, v in dict(self.depth_labels).items()}
            if sum(1 for v in given.values() if v == 1) != 1:
                raise ManifestError(f"set {self.set_id!r}: exactly one node must have depth 1")
            if given != depth:
                raise ManifestError(f"set {self.set_id!r}: depth labels inconsistent with edges")
        self.root = root
        self.depth_labels = depth

    @property
    def ancestral_edges(self):
        return ancestral_closure(self.immediate_edges)

    def to_record(self):
        return {"set_id": self.set_id, "nodes": self.nodes, "root": self.root,
                "immediate_edges": [list(e) for e in self.immediate_edges],
                "depth_labels": [[n, self.depth_labels[n]] for n in self.nodes]}

    @classmethod
    def from_record(cls, rec):
        depth = rec.get("depth_labels")
        if isinstance(depth, list):
            depth = {n: d for n, d in depth}
        elif isinstance(depth, dict):
            # JSON object keys are strings; map back onto the node ids
            lookup = {str(n): n for n in rec.get("nodes", [])}
            depth = {lookup.get(k, k): v for k, v in depth.items()}
        nodes = rec.get("nodes")
        if nodes is None:
            seen = []
            for p, c in rec["immediate_edges"]:
                for n in (p, c):
                    if n not in seen:
                        seen.append(n)
            nodes = seen or [rec["root"]]
        return cls(set_id=rec["set_id"], nodes=nodes, immediate_edges=rec["immediate_edges"],
                   root=rec.get("root"), depth_labels=depth)


def ancestral_closure(immediate_edges):
    """Transitive-closure edges that are not immediate, sorted."""
    parent = {c: p for p, c in immediate_edges}
    anc = set()
    for child in parent:
        p = parent.get(parent[child])
        guard = 0
        while p is not None:
            anc.add((p, child))
            p = parent.get(p)
            guard += 1
            if guard > len(parent):
                raise RuntimeError("cycle in parent map")
    return sorted(anc, key=repr)


# -------------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    path: str
    set_id: str
    node_id: object


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    ground_truth: list = field(default_factory=list)
    meta: dict = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            key = (e.set_id, e.node_id)
            if key in seen:
                raise ManifestError(f"duplicate node_id {e.node_id!r} in set {e.set_id!r}")
            seen.add(key)
        by_set = self.nodes_by_set()
        for gt in self.ground_truth:
            members = by_set.get(gt.set_id)
            if members is None:
                continue
            missing = set(gt.nodes) - set(members)
            if missing:
                raise ManifestError(f"set {gt.set_id!r}: ground truth references missing "
                                    f"node ids {sorted(missing, key=repr)}")

    def nodes_by_set(self):
        out = {}
        for e in self.entries:
            out.setdefault(e.set_id, []).append(e.node_id)
        return out

    def truth_for(self, set_id):
        for gt in self.ground_truth:
            if gt.set_id == set_id:
                return gt
        return None


def read_manifest(path):
    entries, truths, meta = [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if "ground_truth" in rec:
                truths.append(GroundTruthTree.from_record(rec["ground_truth"]))
            elif "meta" in rec:
                meta = rec["meta"]
            else:
                try:
                    entries.append(ManifestEntry(rec["path"], rec["set_id"], rec["node_id"]))
                except KeyError as exc:
                    raise ManifestError(f"{path}:{lineno}: missing field {exc}") from None
    return DatasetManifest(entries, truths, meta)


def manifest_lines(manifest):
    lines = []
    if manifest.meta is not None:
        lines.append(json.dumps({"meta": manifest.meta}, sort_keys=True))
    for e in manifest.entries:
        lines.append(json.dumps({"path": e.path, "set_id": e.set_id, "node_id": e.node_id}))
    for gt in manifest.ground_truth:
        lines.append(json.dumps({"ground_truth": gt.to_record()}))
    return lines


def write_manifest(manifest, path):
    atomic_write_text(path, "\n".join(manifest_lines(manifest)) + "\n")


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------------ DOT

def _dot_id(node):
    return json.dumps(str(node))


def export_dot(forest, name="ipf"):
    """Render a forest as one Graphviz digraph.

    Immediate edges are solid, ancestral edges dashed and roots double-circled.
    """
    trees = forest.trees
    if not trees:
        raise ValueError("forest has no trees")
    out = [f"digraph {name} {{", "  node [shape=circle];"]
    for t in trees:
        for n in t.nodes:
            shape = "doublecircle" if n == t.root else "circle"
            out.append(f"  {_dot_id(n)} [shape={shape}];")
        for p, c in t.immediate_edges:
            out.append(f"  {_dot_id(p)} -> {_dot_id(c)} [style=solid];")
        for p, c in t.ancestral_edges:
            out.append(f"  {_dot_id(p)} -> {_dot_id(c)} [style=dashed];")
    out.append("}")
    return "\n".join(out) + "\n"
