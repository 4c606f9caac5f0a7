"""PRNU-style noise residuals, their enhancement and squared-L2 distances."""

import struct

import numpy as np
from scipy import ndimage, signal
from scipy.spatial.distance import cdist

from . import _wavelet

SIGMA0 = 5.0
LEVELS = 4
ENHANCE_ALPHA = 6.0
_WINDOWS = (3, 5, 7, 9)

_MAGIC = b"PRNU"
_VERSION = 1


def _wiener_subband(coeff, noise_var):
    # local signal variance: minimum over window sizes of (mean energy - noise), floored at 0
    energy = coeff ** 2
    local = np.stack([ndimage.uniform_filter(energy, w, mode="wrap") for w in _WINDOWS])
    signal_var = np.maximum(local - noise_var, 0.0).min(axis=0)
    return coeff * signal_var / (signal_var + noise_var)


def wavelet_denoise(img, sigma0=SIGMA0, levels=LEVELS):
    """Adaptive Wiener filtering of every db8 detail subband; the approximation band is kept."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    block = 2 ** levels
    ph, pw = (-h) % block, (-w) % block
    padded = np.pad(img, ((0, ph), (0, pw)), mode="symmetric") if ph or pw else img
    coeffs = _wavelet.wavedec2(padded, p=8, levels=levels)
    noise_var = sigma0 ** 2
    filtered = [coeffs[0]]
    for bands in coeffs[1:]:
        filtered.append(tuple(_wiener_subband(b, noise_var) for b in bands))
    return _wavelet.waverec2(filtered, p=8)[:h, :w]


def spatial_denoise(img, sigma0=SIGMA0):
    """5x5 spatial Wiener filter; fallback when the wavelet path is not wanted."""
    img = np.asarray(img, dtype=np.float64)
    if np.ptp(img) == 0:
        return img.copy()
    return signal.wiener(img, (5, 5), noise=sigma0 ** 2)


def extract_residual(img, sigma0=SIGMA0, levels=LEVELS, method="wavelet"):
    """Noise residual ``img - denoise(img)``, zero-centred."""
    img = np.asarray(img, dtype=np.float64)
    if method == "wavelet":
        den = wavelet_denoise(img, sigma0, levels)
    elif method == "spatial":
        den = spatial_denoise(img, sigma0)
    else:
        raise ValueError(f"unknown denoiser {method!r}")
    res = img - den
    return res - res.mean()


def enhance_residual(res, alpha=ENHANCE_ALPHA):
    """Attenuate strong (scene-leaked) components with ``x * exp(-x^2 / (2 alpha^2))``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    res = np.asarray(res, dtype=np.float64)
    out = res * np.exp(-res ** 2 / (2.0 * alpha ** 2))
    return out - out.mean()


def enhanced_residual(img, sigma0=SIGMA0, alpha=ENHANCE_ALPHA, levels=LEVELS, method="wavelet"):
    return enhance_residual(extract_residual(img, sigma0, levels, method), alpha)


def residual_distance(a, b):
    """Squared Euclidean distance between two residuals."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"residual shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def pairwise_distances(residuals):
    """M x M matrix of squared-L2 residual distances."""
    flat = np.stack([np.asarray(r, dtype=np.float64).ravel() for r in residuals])
    # direct differences rather than the Gram expansion: identical residuals give exactly 0
    return cdist(flat, flat, "sqeuclidean")


def power_spectral_density(res):
    """Centred 2-D periodogram ``|FFT|^2 / n``."""
    res = np.asarray(res, dtype=np.float64)
    return np.fft.fftshift(np.abs(np.fft.fft2(res)) ** 2) / res.size


# ---------------------------------------------------------------------- cache

def dump_residual(res):
    """Serialize: b"PRNU", version u8, side u16, then side^2 little-endian float32 row-major."""
    res = np.asarray(res)
    if res.ndim != 2 or res.shape[0] != res.shape[1]:
        raise ValueError("residual must be square")
    side = res.shape[0]
    return _MAGIC + struct.pack("<BH", _VERSION, side) + res.astype("<f4").tobytes(order="C")


def load_residual(data):
    if data[:4] != _MAGIC:
        raise ValueError("not a PRNU residual file")
    version, side = struct.unpack("<BH", data[4:7])
    if version != _VERSION:
        raise ValueError(f"unsupported residual version {version}")
    body = data[7:]
    if len(body) != 4 * side * side:
        raise ValueError("truncated residual file")
    return np.frombuffer(body, dtype="<f4").reshape(side, side).astype(np.float64)


def write_residual(path, res):
    with open(path, "wb") as fh:
        fh.write(dump_residual(res))


def read_residual(path):
    with open(path, "rb") as fh:
        return load_residual(fh.read())
