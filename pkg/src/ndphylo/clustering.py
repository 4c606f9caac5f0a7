"""Locally-scaled spectral clustering of near-duplicate images into trees."""

from dataclasses import dataclass

import numpy as np

from .descriptors import cosine_distance_matrix, feature_bundle, kde_local_bandwidths

ETA = 0.7
KMEANS_RESTARTS = 50
KMEANS_MAX_ITER = 300


@dataclass
class LocalBandwidths:
    F: np.ndarray
    N: np.ndarray
    P: np.ndarray


@dataclass
class ClusterAssignment:
    """Cluster id per image, ids ``1..k``."""

    labels: np.ndarray
    k: int
    eigenvalues: np.ndarray = None

    def members(self):
        return [np.flatnonzero(self.labels == c) for c in range(1, self.k + 1)]


def _stack(bundles, attr):
    return np.stack([getattr(b, attr) for b in bundles])


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def feature_distances(bundles, normalized=True):
    """Cosine-distance matrices ``(D_F, D_N, D_P)``."""
    return tuple(cosine_distance_matrix(_stack(bundles, a), normalized) for a in "FNP")


def local_bandwidths(bundles):
    """KDE density of each image in each feature space.

    Vectors are unit-normalised first: the distances being scaled are cosine
    distances, so the density is evaluated on the same sphere.
    """
    return LocalBandwidths(*(kde_local_bandwidths(_unit_rows(_stack(bundles, a))) for a in "FNP"))


def global_bandwidths(distances):
    """One bandwidth per feature: standard deviation of its off-diagonal distances."""
    out = []
    for dmat in distances:
        iu = np.triu_indices_from(dmat, 1)
        s = float(np.std(dmat[iu]))
        out.append(s if s > 0 else 1.0)
    return tuple(out)


def build_similarity(bundles, bw=None, normalized=True, mode="local"):
    """``S(i,j) = exp(-sum_f D_f(i,j)^2 / (p_f(i) p_f(j)))`` over descriptor, noise and pixel features.

    ``mode="global"`` replaces ``p_f(i) p_f(j)`` by ``sigma_f^2`` with
    ``sigma_f`` the spread of that feature's distances.
    """
    if len(bundles) < 2:
        raise ValueError("need at least 2 images")
    dists = feature_distances(bundles, normalized)
    if mode == "local":
        if bw is None:
            bw = local_bandwidths(bundles)
        scales = []
        for p in (bw.F, bw.N, bw.P):
            p = np.asarray(p, dtype=np.float64)
            if np.any(p <= 0) or not np.all(np.isfinite(p)):
                raise ValueError("bandwidths must be positive and finite")
            scales.append(np.outer(p, p))
    elif mode == "global":
        scales = [s * s for s in global_bandwidths(dists)]
    else:
        raise ValueError(f"unknown bandwidth mode {mode!r}")
    expo = sum(d * d / s for d, s in zip(dists, scales))
    expo = (expo + expo.T) / 2.0
    np.fill_diagonal(expo, 0.0)
    return np.exp(-expo)


def binarize_similarity(S, symmetrize=True):
    """1 where ``S(i,j)`` strictly exceeds its row median, then ``max(S_B, S_B^T)``."""
    S = np.asarray(S, dtype=np.float64)
    med = np.median(S, axis=1, keepdims=True)
    sb = (S > med).astype(np.float64)
    if symmetrize:
        sb = np.maximum(sb, sb.T)
    return sb


def normalized_adjacency(sb):
    """``Deg^-1/2 S_B Deg^-1/2``; isolated nodes get a self-loop first."""
    sb = np.array(sb, dtype=np.float64)
    deg = sb.sum(axis=1)
    iso = deg == 0
    sb[iso, iso] = 1.0
    deg = sb.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    n = dinv[:, None] * sb * dinv[None, :]
    return (n + n.T) / 2.0


def normalized_laplacian(sb, convention="standard"):
    """Normalised graph operator used for the spectral embedding.

    ``"standard"`` returns ``I - Deg^-1/2 S_B Deg^-1/2`` (eigenvalues in
    [0, 2], one zero per connected component).  ``"adjacency"`` returns the
    normalised adjacency itself (eigenvalues in [-1, 1]).
    """
    n = normalized_adjacency(sb)
    if convention == "adjacency":
        return n
    if convention == "standard":
        return np.eye(len(n)) - n
    raise ValueError(f"unknown spectrum convention {convention!r}")


def spectral_embed(L, eta=ETA):
    """Eigenvectors of ``L`` whose eigenvalues are below ``eta``, rows length-normalised.

    Falls back to the single smallest eigenpair when none qualifies.
    Returns ``(U_k, k, eigenvalues)`` with all eigenvalues ascending.
    """
    if not np.isfinite(eta):
        raise ValueError("eta must be finite")
    vals, vecs = np.linalg.eigh(L)
    k = int(np.sum(vals < eta))
    k = max(k, 1)
    u = vecs[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    u = u / np.where(norms > 0, norms, 1.0)
    return u, k, vals


# ---------------------------------------------------------------------- k-means

def _kmeans_pp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(x, centers, max_iter):
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        lab = d2.argmin(axis=1)
        new = centers.copy()
        for c in range(len(centers)):
            pts = x[lab == c]
            if len(pts):
                new[c] = pts.mean(axis=0)
        if np.allclose(new, centers, rtol=0, atol=1e-12):
            centers = new
            break
        centers = new
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    lab = d2.argmin(axis=1)
    return lab, float(d2[np.arange(len(x)), lab].sum())


def kmeans(x, k, rng, n_init=KMEANS_RESTARTS, max_iter=KMEANS_MAX_ITER):
    """Lloyd's algorithm with k-means++ seeding; best inertia over ``n_init`` restarts.

    Returns ``(labels 0..k-1, inertia)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= len(x):
        raise ValueError(f"k={k} outside [1, {len(x)}]")
    best = None
    for _ in range(n_init):
        lab, inertia = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if best is None or inertia < best[1] - 1e-12:
            best = (lab, inertia)
    return best


def _canonical(labels):
    # ids 1..k in order of first appearance; empty clusters dropped
    mapping = {}
    out = np.empty(len(labels), dtype=int)
    for i, c in enumerate(labels):
        if c not in mapping:
            mapping[c] = len(mapping) + 1
        out[i] = mapping[c]
    return out, len(mapping)


def kmeans_rows(U, k, rng):
    lab, _ = kmeans(U, k, rng)
    labels, kk = _canonical(lab)
    return ClusterAssignment(labels, kk)


def _unique_bundles(bundles):
    # exact duplicates (all three features equal) are merged before clustering
    keys, index, uniq = {}, [], []
    for b in bundles:
        key = (b.F.tobytes(), b.N.tobytes(), b.P.tobytes())
        if key not in keys:
            keys[key] = len(uniq)
            uniq.append(b)
        index.append(keys[key])
    return uniq, np.array(index)


def cluster_bundles(bundles, eta=ETA, rng=None, mode="local", convention="standard",
                    normalized=True):
    rng = np.random.default_rng(0) if rng is None else rng
    uniq, index = _unique_bundles(bundles)
    if len(uniq) == 1:
        return ClusterAssignment(np.ones(len(bundles), dtype=int), 1, np.zeros(1))
    S = build_similarity(uniq, normalized=normalized, mode=mode)
    L = normalized_laplacian(binarize_similarity(S), convention)
    U, k, vals = spectral_embed(L, eta)
    res = kmeans_rows(U, k, rng)
    labels, kk = _canonical(res.labels[index])
    return ClusterAssignment(labels, kk, vals)


def cluster_images(images, eta=ETA, rng=None, mode="local", convention="standard",
                   normalized=True, residuals=None, **noise_kw):
    """Group images into trees with locally-scaled spectral clustering."""
    if len(images) < 2:
        raise ValueError("need at least 2 images to cluster")
    if residuals is None:
        residuals = [None] * len(images)
    bundles = [feature_bundle(img, r, **noise_kw) for img, r in zip(images, residuals)]
    return cluster_bundles(bundles, eta, rng, mode, convention, normalized)
