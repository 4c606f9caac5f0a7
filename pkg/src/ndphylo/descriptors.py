"""Per-image feature vectors, cosine distances and KDE local bandwidths."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist, squareform
from scipy.stats import norm

from .sensornoise import enhanced_residual

DENSITY_FLOOR = 1e-12
DESCRIPTOR_LENGTH = 256


def pixel_vector(img):
    return np.asarray(img, dtype=np.float64).ravel()


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def image_descriptor(img):
    """Global 256-d descriptor.

    Concatenates an 8x8 grid of block means, a 64-bin intensity histogram and
    magnitude-weighted 8-bin gradient-orientation histograms over a 4x4 cell
    grid.  Each part is unit-normalised (zero parts stay zero) so none of them
    dominates a cosine comparison.
    """
    img = np.asarray(img, dtype=np.float64)
    d = img.shape[0]
    edges = np.linspace(0, d, 9).astype(int)
    blocks = np.array([[img[edges[i]:edges[i + 1], edges[j]:edges[j + 1]].mean()
                        for j in range(8)] for i in range(8)]).ravel()
    hist, _ = np.histogram(img, bins=64, range=(0.0, 256.0))
    hist = hist / img.size

    gy = ndimage.sobel(img, axis=0, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    obin = np.minimum((ang / np.pi * 8).astype(int), 7)
    cells = np.linspace(0, d, 5).astype(int)
    hog = np.zeros((4, 4, 8))
    for i in range(4):
        for j in range(4):
            sl = (slice(cells[i], cells[i + 1]), slice(cells[j], cells[j + 1]))
            hog[i, j] = np.bincount(obin[sl].ravel(), weights=mag[sl].ravel(), minlength=8)
    return np.concatenate([_unit(blocks), _unit(hist), _unit(hog.ravel())])


def cosine_distance(u, v, normalized=True):
    """``(1 - cos) / 2`` in [0, 1]; ``normalized=False`` gives ``1 - cos`` in [0, 2]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine distance undefined for a zero vector")
    cos = float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return (1.0 - cos) / 2.0 if normalized else 1.0 - cos


def cosine_distance_matrix(vectors, normalized=True):
    x = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine distance undefined for a zero vector")
    u = x / norms[:, None]
    cos = np.clip(u @ u.T, -1.0, 1.0)
    np.fill_diagonal(cos, 1.0)
    cos = (cos + cos.T) / 2.0
    return (1.0 - cos) / 2.0 if normalized else 1.0 - cos


def kde_density(points, queries, b):
    """Normal-kernel density of ``points`` with bandwidth ``b``, evaluated at ``queries``."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if queries.ndim == 1:
        queries = queries[:, None]
    r = np.sqrt(((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    return norm.pdf(r / b).sum(axis=1) / (len(points) * b)


def kde_local_bandwidths(vectors):
    """Gaussian-kernel density at each point of the set.

    ``p(x_j) = 1/(n b) * sum_i phi(||x_j - x_i|| / b)`` with ``b`` the mean
    pairwise Euclidean distance.  Floored at 1e-12.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for a density estimate")
    pair = pdist(x)
    b = pair.mean()
    if b == 0:
        # all points coincide: every kernel sits at 0, density is unbounded but equal
        return np.full(n, 1.0 / DENSITY_FLOOR)
    dens = norm.pdf(squareform(pair) / b).sum(axis=1) / (n * b)
    return np.maximum(dens, DENSITY_FLOOR)


@dataclass
class FeatureBundle:
    """Descriptor ``F``, pixel ``P`` and noise ``N`` vectors of one image."""

    F: np.ndarray
    P: np.ndarray
    N: np.ndarray


def feature_bundle(img, residual=None, **noise_kw):
    if residual is None:
        residual = enhanced_residual(img, **noise_kw)
    return FeatureBundle(F=image_descriptor(img), P=pixel_vector(img),
                         N=np.asarray(residual, dtype=np.float64).ravel())
