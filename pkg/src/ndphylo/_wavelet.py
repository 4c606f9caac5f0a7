"""Periodized orthonormal Daubechies wavelet transform on square-ish 2-D arrays.

Only what the noise extractor needs: a multi-level ``wavedec2`` / ``waverec2``
pair with periodic boundary handling.  Each level is an orthogonal matrix, so
reconstruction is exact to floating point.
"""

from functools import lru_cache
from math import comb

import numpy as np


@lru_cache(maxsize=None)
def daubechies_lowpass(p):
    """Reconstruction lowpass filter of the Daubechies wavelet with ``p`` vanishing moments.

    Built by spectral factorization of the Daubechies polynomial, keeping the
    minimum-phase roots.  ``p=8`` gives the 16-tap ``db8`` filter.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return np.array([1.0, 1.0]) / np.sqrt(2.0)
    poly = [comb(p - 1 + k, k) for k in range(p)][::-1]
    yroots = np.roots(poly)
    q = np.poly1d([1.0])
    for y in yroots:
        part = 2.0 * np.sqrt(y * (y - 1.0))
        const = 1.0 - 2.0 * y
        z = const + part
        if abs(z) < 1.0:
            z = const - part
        q = q * np.poly1d([1.0, -z])
    h = np.poly1d([1.0, 1.0]) ** p * np.real(q)
    h = h.c[::-1]
    return h / h.sum() * np.sqrt(2.0)


@lru_cache(maxsize=64)
def _analysis_matrix(n, p):
    # rows 0..n/2-1: lowpass, rows n/2..n-1: highpass, circular shifts by 2
    h = daubechies_lowpass(p)
    taps = len(h)
    g = np.array([(-1) ** k * h[taps - 1 - k] for k in range(taps)])
    half = n // 2
    w = np.zeros((n, n))
    for k in range(half):
        for t in range(taps):
            col = (2 * k + t) % n
            w[k, col] += h[t]
            w[half + k, col] += g[t]
    w.flags.writeable = False
    return w


def wavedec2(x, p=8, levels=4):
    """Multi-level 2-D decomposition.

    Returns ``[approx, (H, V, D)_coarsest, ..., (H, V, D)_finest]`` like pywt.
    Both sides of ``x`` must be divisible by ``2**levels``.
    """
    x = np.asarray(x, dtype=np.float64)
    rows, cols = x.shape
    if rows % (2 ** levels) or cols % (2 ** levels):
        raise ValueError(f"shape {x.shape} not divisible by 2**{levels}")
    details = []
    approx = x
    for _ in range(levels):
        r, c = approx.shape
        wr = _analysis_matrix(r, p)
        wc = _analysis_matrix(c, p)
        y = wr @ approx @ wc.T
        hr, hc = r // 2, c // 2
        details.append((y[hr:, :hc], y[:hr, hc:], y[hr:, hc:]))
        approx = y[:hr, :hc]
    return [approx] + details[::-1]


def waverec2(coeffs, p=8):
    """Inverse of :func:`wavedec2`."""
    approx = np.asarray(coeffs[0], dtype=np.float64)
    for cH, cV, cD in coeffs[1:]:
        hr, hc = approx.shape
        y = np.block([[approx, cV], [cH, cD]])
        wr = _analysis_matrix(2 * hr, p)
        wc = _analysis_matrix(2 * hc, p)
        approx = wr.T @ y @ wc
    return approx
