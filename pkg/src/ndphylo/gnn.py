"""Two-layer Chebyshev graph convolution network predicting depth labels.

Plain numpy with hand-written backpropagation and Adam.  Graphs are batched
as block-diagonal sparse matrices, one block per near-duplicate set.
"""

import copy
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.stats import rankdata

from .descriptors import image_descriptor
from .sensornoise import enhanced_residual, extract_residual, pairwise_distances

MODEL_VERSION = 1
N_CLASSES = 6
HIDDEN = 16
DEFAULT_K = 3

DEFAULT_HP = {
    "lr": 0.01,
    "epochs": 100,
    "hidden": HIDDEN,
    "dropout": 0.5,
    "weight_decay": 5e-4,
    "patience": 10,
    "K": DEFAULT_K,
}
DEGREE_CHOICES = tuple(range(3, 10))


# ---------------------------------------------------------------- adjacency

def train_adjacency(n, immediate_edges, symmetric=True):
    """Adjacency from the true tree; ``symmetric=False`` keeps parent -> child only."""
    a = np.zeros((n, n))
    for p, c in immediate_edges:
        a[p, c] = 1.0
        if symmetric:
            a[c, p] = 1.0
    return a


def test_adjacency(distances):
    """Link every pair whose squared residual distance is below the mean off-diagonal distance."""
    d = np.asarray(distances, dtype=np.float64)
    n = len(d)
    if n < 2:
        return np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    a = ((d < d[off].mean()) & off).astype(np.float64)
    return np.maximum(a, a.T)


def build_adjacency(mode, n=None, immediate_edges=None, residuals=None, distances=None,
                    symmetric=True):
    if mode == "train":
        if immediate_edges is None or n is None:
            raise ValueError("train adjacency needs n and the true immediate edges")
        return train_adjacency(n, immediate_edges, symmetric)
    if mode == "test":
        if distances is None:
            if residuals is None:
                raise ValueError("test adjacency needs residuals or their distances")
            distances = pairwise_distances(residuals)
        return test_adjacency(distances)
    raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")


# ---------------------------------------------------------------- filters

def scaled_laplacian(a):
    """``L~ = 2L/lambda_max - I`` with ``lambda_max = 2``, i.e. ``L - I``.

    Symmetric ``a`` uses ``L = I - D^-1/2 A D^-1/2``, otherwise ``L = I - D^-1 A``.
    Zero degrees are floored at 1.
    """
    a = np.asarray(a, dtype=np.float64)
    deg = np.maximum(a.sum(axis=1), 1.0)
    if np.allclose(a, a.T):
        dinv = 1.0 / np.sqrt(deg)
        norm_a = dinv[:, None] * a * dinv[None, :]
    else:
        norm_a = a / deg[:, None]
    lap = np.eye(len(a)) - norm_a
    return lap - np.eye(len(a))


def chebyshev_filterbank(a, K):
    """``[T_0(L~), ..., T_{K-1}(L~)]`` by the three-term recurrence."""
    if K < 1:
        raise ValueError("K must be >= 1")
    lt = scaled_laplacian(a)
    n = len(lt)
    ts = [np.eye(n)]
    if K > 1:
        ts.append(lt)
    for _ in range(2, K):
        ts.append(2.0 * lt @ ts[-1] - ts[-2])
    return ts


# ---------------------------------------------------------------- features

FEATURE_MODES = ("pixel", "prnu", "descriptor", "levels", "hybrid", "stats")


def level_features(img):
    """256-bin intensity histogram (fractions) and bin occupancy indicators.

    Every edit followed by 8-bit rounding tends to merge intensity levels, so
    occupancy is a cheap record of how much processing an image has seen.
    """
    q = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(int)
    hist = np.bincount(q.ravel(), minlength=256) / q.size
    return np.concatenate([hist, (hist > 0).astype(np.float64)])


def _image_stats(img):
    q = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(int)
    return [len(np.unique(q)), np.log(np.sum(extract_residual(img) ** 2) + 1e-12),
            np.log(np.var(ndimage.laplace(np.asarray(img, dtype=np.float64))) + 1e-12),
            q.max() - q.min(), np.std(img)]


def _set_ranks(v):
    # 0 for the largest value, 1 for the smallest, ties averaged
    n = len(v)
    return np.stack([(rankdata(-v[:, j]) - 1) / max(n - 1, 1) for j in range(v.shape[1])], 1)


def set_statistics(images, residuals=None):
    """Compact per-node statistics read relative to the rest of the set.

    Per image: distinct intensity levels, log residual energy, log Laplacian
    variance, intensity range and spread.  These are kept raw, as gaps to the
    set maximum and as within-set ranks.  Residual distances contribute the
    mean, min and max distance to the other nodes (over the set's mean
    distance) and their ranks.  The width does not depend on the set size.
    """
    n = len(images)
    if residuals is None:
        residuals = [enhanced_residual(im) for im in images]
    f = np.array([_image_stats(im) for im in images], dtype=np.float64)
    if n > 1:
        d = pairwise_distances(residuals)
        off = ~np.eye(n, dtype=bool)
        scale = d[off].mean() if d[off].mean() > 0 else 1.0
        dd = np.where(off, d, np.nan) / scale
        g = np.stack([np.nanmean(dd, 1), np.nanmin(dd, 1), np.nanmax(dd, 1)], 1)
    else:
        g = np.zeros((1, 3))
    return np.hstack([f, f - f.max(axis=0), _set_ranks(f), g, _set_ranks(g)])


def node_features(images, mode="pixel", residuals=None):
    """Raw per-node input rows.

    ``pixel``: intensities scaled to [0,1]; ``prnu``: enhanced residual;
    ``descriptor``: global descriptor; ``levels``: intensity-level statistics;
    ``hybrid``: levels followed by the descriptor; ``stats``: see
    :func:`set_statistics`.
    """
    if mode == "pixel":
        return np.stack([np.asarray(im, dtype=np.float64).ravel() / 255.0 for im in images])
    if mode == "prnu":
        if residuals is None:
            residuals = [enhanced_residual(im) for im in images]
        return np.stack([np.asarray(r, dtype=np.float64).ravel() for r in residuals])
    if mode == "descriptor":
        return np.stack([image_descriptor(im) for im in images])
    if mode == "levels":
        return np.stack([level_features(im) for im in images])
    if mode == "hybrid":
        return np.stack([np.concatenate([level_features(im), image_descriptor(im)])
                         for im in images])
    if mode == "stats":
        return set_statistics(images, residuals)
    raise ValueError(f"unknown feature mode {mode!r}")


@dataclass
class GraphBatch:
    """Several near-duplicate sets stacked block-diagonally."""

    X: np.ndarray
    blocks: list
    labels: np.ndarray = None
    set_offsets: np.ndarray = None
    _bank: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        sizes = [len(b) for b in self.blocks]
        for b in self.blocks:
            b = np.asarray(b)
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise ValueError("adjacency blocks must be square")
            if np.any(b < 0):
                raise ValueError("adjacency must be nonnegative")
        if sum(sizes) != len(self.X):
            raise ValueError(f"{len(self.X)} feature rows but blocks cover {sum(sizes)} nodes")
        self.set_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)

    @classmethod
    def single(cls, X, A, labels=None):
        return cls(X, [np.asarray(A, dtype=np.float64)], labels)

    @classmethod
    def concat(cls, batches):
        X = np.concatenate([b.X for b in batches])
        blocks = [blk for b in batches for blk in b.blocks]
        if all(b.labels is not None for b in batches):
            labels = np.concatenate([b.labels for b in batches])
        else:
            labels = None
        return cls(X, blocks, labels)

    @property
    def A(self):
        return sparse.block_diag(self.blocks, format="csr")

    def filterbank(self, K):
        if K not in self._bank:
            per_block = [chebyshev_filterbank(b, K) for b in self.blocks]
            self._bank[K] = [sparse.block_diag([pb[k] for pb in per_block], format="csr")
                             for k in range(K)]
        return self._bank[K]


# ---------------------------------------------------------------- model

@dataclass
class ChebNetModel:
    """Weights plus the input preprocessing they were trained with.

    Inputs are standardised per column with ``mean``/``scale`` (fitted on the
    training set, identity when unset) and, with ``center``, shifted by the
    mean row of their own set.
    """

    K: int
    W1: np.ndarray  # (K, in_dim, hidden)
    W2: np.ndarray  # (K, hidden, n_classes)
    feature_mode: str = "pixel"
    center: bool = True
    mean: np.ndarray = None
    scale: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, in_dim, K=DEFAULT_K, hidden=HIDDEN, n_classes=N_CLASSES, rng=None,
             feature_mode="pixel", center=True):
        rng = np.random.default_rng(0) if rng is None else rng

        def glorot(shape):
            lim = np.sqrt(6.0 / (shape[-2] + shape[-1]))
            return rng.uniform(-lim, lim, shape)

        return cls(K, glorot((K, in_dim, hidden)), glorot((K, hidden, n_classes)), feature_mode,
                   center)

    @property
    def n_classes(self):
        return self.W2.shape[2]

    def fit_scaler(self, raw_blocks):
        """Column mean and standard deviation over all training rows."""
        x = np.concatenate(list(raw_blocks))
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.scale = np.where(sd > 1e-8, sd, 1.0)
        return self

    def preprocess(self, raw):
        x = np.asarray(raw, dtype=np.float64)
        if self.mean is not None:
            x = (x - self.mean) / self.scale
        if self.center:
            x = x - x.mean(axis=0)
        return x

    def features(self, images, residuals=None):
        return self.preprocess(node_features(images, self.feature_mode, residuals))

    def to_json(self):
        return json.dumps({
            "version": MODEL_VERSION, "K": self.K, "feature_mode": self.feature_mode,
            "dims": {"in": self.W1.shape[1], "hidden": self.W1.shape[2],
                     "n_classes": self.W2.shape[2]},
            "preprocess": {
                "center": self.center,
                "mean": None if self.mean is None else self.mean.tolist(),
                "scale": None if self.scale is None else self.scale.tolist(),
            },
            "weights": {"W1": self.W1.tolist(), "W2": self.W2.tolist()},
            "meta": self.meta,
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        W1 = np.array(d["weights"]["W1"], dtype=np.float64)
        W2 = np.array(d["weights"]["W2"], dtype=np.float64)
        dims = d["dims"]
        if W1.shape != (d["K"], dims["in"], dims["hidden"]) or \
                W2.shape != (d["K"], dims["hidden"], dims["n_classes"]):
            raise ValueError("weight shapes disagree with the declared dims")
        pre = d.get("preprocess", {})

        def vec(v):
            return None if v is None else np.array(v, dtype=np.float64)

        return cls(d["K"], W1, W2, d.get("feature_mode", "pixel"), bool(pre.get("center", True)),
                   vec(pre.get("mean")), vec(pre.get("scale")), d.get("meta", {}))


def _check_dims(model, batch):
    if batch.X.shape[1] != model.W1.shape[1]:
        raise ValueError(f"feature dim {batch.X.shape[1]} != model input dim {model.W1.shape[1]}")


def _forward(model, batch, dropout, rng):
    _check_dims(model, batch)
    ts = batch.filterbank(model.K)
    xw = [batch.X @ model.W1[k] for k in range(model.K)]
    z1 = sum(ts[k] @ xw[k] for k in range(model.K))
    h = np.maximum(z1, 0.0)
    if dropout > 0:
        keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
    else:
        keep = None
    hd = h * keep if keep is not None else h
    th = [ts[k] @ hd for k in range(model.K)]
    z2 = sum(th[k] @ model.W2[k] for k in range(model.K))
    return z2, (ts, z1, keep, hd, th)


def forward(model, batch, dropout_active=False, rng=None, dropout=0.5):
    """Logits ``sum_k T_k relu(sum_k T_k X W1_k) W2_k``; dropout on the hidden layer when active."""
    p = dropout if dropout_active else 0.0
    if p > 0 and rng is None:
        raise ValueError("dropout needs an rng")
    return _forward(model, batch, p, rng)[0]


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def depth_to_class(depths, n_classes=N_CLASSES):
    return np.clip(np.asarray(depths, dtype=int), 1, n_classes) - 1


def loss_and_grads(model, batch, weight_decay=0.0, dropout=0.0, rng=None):
    """Mean cross-entropy over labelled nodes plus ``wd/2 * sum W^2``, and its gradients."""
    if batch.labels is None:
        raise ValueError("batch has no labels")
    y = depth_to_class(batch.labels, model.n_classes)
    z2, (ts, z1, keep, hd, th) = _forward(model, batch, dropout, rng)
    logp = _log_softmax(z2)
    m = len(y)
    loss = -logp[np.arange(m), y].mean()
    loss += 0.5 * weight_decay * (np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2))

    dz2 = np.exp(logp)
    dz2[np.arange(m), y] -= 1.0
    dz2 /= m
    gW2 = np.stack([th[k].T @ dz2 for k in range(model.K)]) + weight_decay * model.W2
    dhd = sum(ts[k].T @ (dz2 @ model.W2[k].T) for k in range(model.K))
    dh = dhd * keep if keep is not None else dhd
    dz1 = dh * (z1 > 0)
    gW1 = np.stack([batch.X.T @ (ts[k].T @ dz1) for k in range(model.K)]) + weight_decay * model.W1
    return float(loss), {"W1": gW1, "W2": gW2}


def evaluate(model, batch):
    """``(loss without regularisation, accuracy)`` with dropout off."""
    z = forward(model, batch)
    y = depth_to_class(batch.labels, model.n_classes)
    logp = _log_softmax(z)
    return float(-logp[np.arange(len(y)), y].mean()), float(np.mean(z.argmax(axis=1) == y))


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(model, train_batches, val_batches=None, hp=None, rng=None):
    """Full-batch Adam on softmax cross-entropy with early stopping on validation loss.

    Returns ``(best_model, history)``; the best model is the one with the lowest
    validation loss seen (training loss when no validation set is given).
    """
    if not train_batches:
        raise ValueError("empty training set")
    hp = {**DEFAULT_HP, **(hp or {})}
    rng = np.random.default_rng(0) if rng is None else rng
    model = copy.deepcopy(model)
    tr = GraphBatch.concat(list(train_batches))
    va = GraphBatch.concat(list(val_batches)) if val_batches else None
    params = {"W1": model.W1, "W2": model.W2}
    opt = Adam(params, lr=hp["lr"])
    history = []
    best, best_loss, since = copy.deepcopy(model), np.inf, 0
    for epoch in range(hp["epochs"]):
        loss, grads = loss_and_grads(model, tr, hp["weight_decay"], hp["dropout"], rng)
        opt.step(params, grads)
        tr_loss, tr_acc = evaluate(model, tr)
        rec = {"epoch": epoch + 1, "train_objective": loss, "train_loss": tr_loss,
               "train_acc": tr_acc}
        if va is not None:
            rec["val_loss"], rec["val_acc"] = evaluate(model, va)
            watch = rec["val_loss"]
        else:
            watch = tr_loss
        history.append(rec)
        if watch < best_loss:
            best, best_loss, since = copy.deepcopy(model), watch, 0
        else:
            since += 1
            if since >= hp["patience"]:
                break
    best.meta = {**best.meta, "best_loss": best_loss, "epochs_run": len(history)}
    return best, history


def select_degree(train_batches, val_batches, template, degrees=DEGREE_CHOICES, hp=None, seed=0):
    """Train one model per Chebyshev degree and keep the lowest validation loss.

    ``template`` supplies input dim and preprocessing; its weights are ignored.
    """
    best = None
    for K in degrees:
        model = ChebNetModel.init(template.W1.shape[1], K=K,
                                  hidden=(hp or {}).get("hidden", HIDDEN),
                                  n_classes=template.n_classes, rng=np.random.default_rng(seed),
                                  feature_mode=template.feature_mode, center=template.center)
        model.mean, model.scale = template.mean, template.scale
        trained, hist = train(model, train_batches, val_batches, {**(hp or {}), "K": K},
                              rng=np.random.default_rng(seed + 1))
        score = trained.meta["best_loss"]
        if best is None or score < best[0]:
            best = (score, trained, hist)
    return best[1], best[2]


def predict_depths(model, X, A):
    """Arg-max class per node, as depth labels ``1..n_classes``."""
    batch = GraphBatch.single(X, A)
    return forward(model, batch).argmax(axis=1) + 1
