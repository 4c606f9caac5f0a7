"""Near-duplicate synthesis: photometric/geometric edits, tree configurations,
procedural source images and simulated sensor patterns."""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imageio import GroundTruthTree, check_image, quantize

PHOTOMETRIC = ("Brightness", "MedianFilter", "GaussianSmooth", "Gamma")
GEOMETRIC = ("Translate", "Scale", "Rotate")
KINDS = PHOTOMETRIC + GEOMETRIC

# parameter ranges used when sampling
RANGES = {
    "a": (0.9, 1.5), "b": (-30.0, 30.0),
    "m": (2, 6), "n": (2, 6),
    "sigma": (1.0, 3.0),
    "gamma": (0.5, 1.5),
    "tx": (5.0, 20.0), "ty": (5.0, 20.0),
    "percent": (90.0, 110.0),
    "theta": (-5.0, 5.0),
}

_PARAM_NAMES = {
    "Brightness": ("a", "b"),
    "MedianFilter": ("m", "n"),
    "GaussianSmooth": ("sigma",),
    "Gamma": ("gamma",),
    "Translate": ("tx", "ty"),
    "Scale": ("percent",),
    "Rotate": ("theta",),
}


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        missing = set(_PARAM_NAMES[self.kind]) - set(self.params)
        if missing:
            raise ValueError(f"{self.kind} needs params {sorted(missing)}")
        for k, v in self.params.items():
            if not np.isfinite(v):
                raise ValueError(f"non-finite parameter {k}={v!r}")


def identity_spec(kind):
    ident = {"Brightness": {"a": 1.0, "b": 0.0}, "Gamma": {"gamma": 1.0},
             "GaussianSmooth": {"sigma": 0.0}, "MedianFilter": {"m": 1, "n": 1},
             "Translate": {"tx": 0.0, "ty": 0.0}, "Scale": {"percent": 100.0},
             "Rotate": {"theta": 0.0}}
    return TransformSpec(kind, ident[kind])


def _scale_about_center(img, factor):
    d = img.shape[0]
    c = (d - 1) / 2.0
    # output coordinate o maps to input c + (o - c) / factor
    inv = 1.0 / factor
    offset = c - inv * c
    return ndimage.affine_transform(img, np.diag([inv, inv]), offset=offset,
                                    order=1, mode="nearest")


def apply_transform(img, spec):
    """Apply one edit; output stays d x d and is clamped to [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    p = spec.params
    k = spec.kind
    if k == "Brightness":
        out = p["a"] * img + p["b"]
    elif k == "Gamma":
        out = img.copy() if p["gamma"] == 1 else 255.0 * (np.clip(img, 0.0, 255.0) / 255.0) ** p["gamma"]
    elif k == "GaussianSmooth":
        out = img.copy() if p["sigma"] == 0 else ndimage.gaussian_filter(
            img, p["sigma"], mode="nearest")
    elif k == "MedianFilter":
        size = (int(round(p["m"])), int(round(p["n"])))
        out = img.copy() if size == (1, 1) else ndimage.median_filter(
            img, size=size, mode="nearest")
    elif k == "Translate":
        if p["tx"] == 0 and p["ty"] == 0:
            out = img.copy()
        else:
            out = ndimage.shift(img, (p["ty"], p["tx"]), order=1, mode="nearest")
    elif k == "Scale":
        out = img.copy() if p["percent"] == 100 else _scale_about_center(img, p["percent"] / 100.0)
    else:  # Rotate
        out = img.copy() if p["theta"] == 0 else ndimage.rotate(
            img, p["theta"], reshape=False, order=1, mode="nearest")
    return np.clip(out, 0.0, 255.0)


def sample_transform_spec(rng, cls="photometric"):
    """Draw a kind uniformly from the class and its parameters uniformly in range.

    ``"mixed"`` draws from all seven kinds.
    """
    if cls == "photometric":
        kinds = PHOTOMETRIC
    elif cls == "geometric":
        kinds = GEOMETRIC
    elif cls == "mixed":
        kinds = KINDS
    else:
        raise ValueError(f"class must be 'photometric', 'geometric' or 'mixed', got {cls!r}")
    kind = kinds[rng.integers(len(kinds))]
    params = {}
    for name in _PARAM_NAMES[kind]:
        lo, hi = RANGES[name]
        if name in ("m", "n"):
            params[name] = int(rng.integers(lo, hi + 1))
        else:
            params[name] = float(rng.uniform(lo, hi))
    return TransformSpec(kind, params)


# ------------------------------------------------------------- configurations

@dataclass(frozen=True)
class TreeConfig:
    """Rooted tree on nodes ``0..n_nodes-1``; node 0 is the root."""

    n_nodes: int
    immediate_edges: tuple
    name: str = ""

    def __post_init__(self):
        edges = tuple(tuple(e) for e in self.immediate_edges)
        object.__setattr__(self, "immediate_edges", edges)
        GroundTruthTree("_", range(self.n_nodes), edges)

    @property
    def depths(self):
        return GroundTruthTree("_", range(self.n_nodes), self.immediate_edges).depth_labels


def _cfg(name, n, edges):
    return TreeConfig(n, tuple(edges), name)


# five-node training/test configurations, spanning breadth and depth
CONFIGS_5 = {
    "A": _cfg("A", 5, [(0, 1), (0, 2), (1, 3), (2, 4)]),
    "B": _cfg("B", 5, [(0, 1), (1, 2), (2, 3), (3, 4)]),
    "C": _cfg("C", 5, [(0, 1), (0, 2), (1, 3), (1, 4)]),
    "D": _cfg("D", 5, [(0, 1), (0, 2), (0, 3), (0, 4)]),
    "E": _cfg("E", 5, [(0, 1), (0, 2), (0, 3), (1, 4)]),
    "F": _cfg("F", 5, [(0, 1), (1, 2), (2, 3), (2, 4)]),
}

# forest configurations: trees of 5, 10 and 15 nodes, all within depth 6
IPF_CONFIGS = {
    "IPT1": _cfg("IPT1", 5, [(0, 1), (1, 2), (1, 3), (0, 4)]),
    "IPT2": _cfg("IPT2", 10, [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 6),
                              (4, 7), (6, 8), (7, 9)]),
    "IPT3": _cfg("IPT3", 15, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6),
                              (3, 7), (3, 8), (4, 9), (5, 10), (6, 11), (6, 12),
                              (7, 13), (11, 14)]),
    "IPT4": _cfg("IPT4", 5, [(0, 1), (0, 2), (2, 3), (3, 4)]),
    "IPT5": _cfg("IPT5", 10, [(0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (3, 6),
                              (4, 7), (5, 8), (8, 9)]),
    "IPT6": _cfg("IPT6", 15, [(0, 1), (0, 2), (0, 3), (0, 4), (1, 5), (1, 6),
                              (2, 7), (3, 8), (4, 9), (5, 10), (7, 11), (8, 12),
                              (10, 13), (12, 14)]),
}

IPF_PAIRS = (("IPT1", "IPT2", "IPT3"), ("IPT4", "IPT5", "IPT6"))


def chain_config(n):
    return TreeConfig(n, tuple((i, i + 1) for i in range(n - 1)), f"chain{n}")


def enumerate_labeled_trees(n):
    """All labelled trees on ``n`` nodes, each as a sorted tuple of undirected edges.

    Brute force over (n-1)-edge subsets of the complete graph keeping the
    acyclic ones, so it is independent of any Prüfer-code shortcut.
    """
    if n == 1:
        return [()]
    all_edges = list(itertools.combinations(range(n), 2))
    trees = []
    for subset in itertools.combinations(all_edges, n - 1):
        parent = list(range(n))

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        ok = True
        for u, v in subset:
            ru, rv = find(u), find(v)
            if ru == rv:
                ok = False
                break
            parent[ru] = rv
        if ok:
            trees.append(subset)
    return trees


def orient_tree(undirected_edges, n, root=0):
    """Direct an undirected tree away from ``root``; returns a TreeConfig."""
    adj = {i: [] for i in range(n)}
    for u, v in undirected_edges:
        adj[u].append(v)
        adj[v].append(u)
    edges, seen, stack = [], {root}, [root]
    while stack:
        u = stack.pop()
        for v in sorted(adj[u]):
            if v not in seen:
                seen.add(v)
                edges.append((u, v))
                stack.append(v)
    return TreeConfig(n, tuple(edges))


# ------------------------------------------------------------ source images

def procedural_source(rng, side=96):
    """Random smooth scene with edges and fine texture, values in [0, 255]."""
    yy, xx = np.mgrid[0:side, 0:side] / side
    img = np.zeros((side, side))
    for _ in range(rng.integers(4, 9)):
        cy, cx = rng.uniform(0, 1, 2)
        s = rng.uniform(0.05, 0.3)
        img += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    for _ in range(rng.integers(2, 5)):
        f = rng.uniform(2, 12)
        ang = rng.uniform(0, np.pi)
        img += rng.uniform(0.1, 0.4) * np.sin(2 * np.pi * f * (np.cos(ang) * xx + np.sin(ang) * yy)
                                              + rng.uniform(0, 2 * np.pi))
    # a few hard-edged shapes
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.2, 0.8, 2)
        r = rng.uniform(0.05, 0.2)
        img += rng.uniform(-0.6, 0.6) * (((yy - cy) ** 2 + (xx - cx) ** 2) < r * r)
    img = (img - img.min()) / max(img.max() - img.min(), 1e-12)
    img = 30.0 + 190.0 * img
    img += ndimage.gaussian_filter(rng.normal(0, 6.0, (side, side)), 0.7)
    return np.clip(img, 0.0, 255.0)


def sensor_pattern(seed, side=96, amplitude=0.02):
    """Zero-mean multiplicative pattern K, uniform in [-amplitude, amplitude], keyed by seed."""
    k = np.random.default_rng(seed).uniform(-amplitude, amplitude, (side, side))
    return k - k.mean()


def embed_sensor_pattern(img, pattern):
    return np.clip(img * (1.0 + pattern), 0.0, 255.0)


# ----------------------------------------------------------------- synthesis

def synthesize_ipt(root_img, config, cls, rng, set_id="ipt", node_offset=0, quantized=True):
    """Grow a near-duplicate tree: each child is one sampled edit of its parent.

    Returns ``(images, truth, specs)`` where ``specs[child]`` is the edit that
    produced it.  With ``quantized`` every image is rounded to 8 bits as it
    would be when saved.
    """
    root_img = check_image(root_img)
    images = [None] * config.n_nodes
    images[0] = quantize(root_img) if quantized else root_img.copy()
    specs = {}
    depth = config.depths
    for parent, child in sorted(config.immediate_edges, key=lambda e: depth[e[1]]):
        spec = sample_transform_spec(rng, cls)
        out = apply_transform(images[parent], spec)
        images[child] = quantize(out) if quantized else out
        specs[child] = spec
    ids = [node_offset + i for i in range(config.n_nodes)]
    truth = GroundTruthTree(set_id, ids,
                            [(node_offset + p, node_offset + c) for p, c in config.immediate_edges])
    return images, truth, specs


def synthesize_ipf(sources, configs, cls, rng, noise_seeds, amplitude=0.02, quantized=True):
    """Build a forest: source ``s`` carries sensor pattern ``noise_seeds[s]`` and spans ``configs[s]``.

    Returns ``(images, truths, cluster_truth)``; node ids are global image
    indices and ``cluster_truth[i]`` is the source index of image ``i``.
    """
    if len(sources) < 2:
        raise ValueError("an image phylogeny forest needs at least 2 sources")
    if len(configs) != len(sources) or len(noise_seeds) != len(sources):
        raise ValueError("need one config and one noise seed per source")
    for i, j in itertools.combinations(range(len(sources)), 2):
        if np.array_equal(sources[i], sources[j]):
            raise ValueError(f"sources {i} and {j} are identical")
    images, truths, cluster_truth = [], [], []
    for s, (src, cfg, seed) in enumerate(zip(sources, configs, noise_seeds)):
        side = np.asarray(src).shape[0]
        root = embed_sensor_pattern(check_image(src), sensor_pattern(seed, side, amplitude))
        imgs, truth, _ = synthesize_ipt(root, cfg, cls, rng, set_id=f"tree{s}",
                                        node_offset=len(images), quantized=quantized)
        images.extend(imgs)
        truths.append(truth)
        cluster_truth.extend([s] * len(imgs))
    return images, truths, np.array(cluster_truth)
