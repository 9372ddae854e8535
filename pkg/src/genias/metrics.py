"""Reconstruction quality metrics."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = ["rre", "ssim"]

_SIGMA = 1.5
_WIN = 11
_K1, _K2 = 0.01, 0.03


def rre(x, truth) -> float:
    """Relative reconstruction error ``||x - truth|| / ||truth||``."""
    x = np.asarray(x, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if x.shape != truth.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {truth.shape}")
    nt = np.linalg.norm(truth)
    if nt == 0:
        raise ValueError("truth must be nonzero")
    return float(np.linalg.norm(x - truth) / nt)


def ssim(x, truth, data_range: float | None = None) -> float:
    """Mean structural similarity with a Gaussian window.

    Gaussian weights with ``sigma = 1.5`` over 11 samples per axis (1D
    signals or 2D images), ``K1 = 0.01``, ``K2 = 0.03``, and dynamic range
    ``max(truth) - min(truth)``. Local statistics use sample covariance
    normalisation and the mean is taken over the window-interior region.
    """
    x = np.asarray(x, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if x.shape != truth.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {truth.shape}")
    if data_range is None:
        data_range = float(truth.max() - truth.min())
    if data_range <= 0:
        raise ValueError("data range must be positive")
    ndim = x.ndim
    filt = dict(sigma=_SIGMA, truncate=((_WIN - 1) / 2) / _SIGMA, mode="reflect")
    npix = _WIN**ndim
    cov_norm = npix / (npix - 1.0)
    ux = gaussian_filter(x, **filt)
    uy = gaussian_filter(truth, **filt)
    uxx = gaussian_filter(x * x, **filt)
    uyy = gaussian_filter(truth * truth, **filt)
    uxy = gaussian_filter(x * truth, **filt)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    C1 = (_K1 * data_range) ** 2
    C2 = (_K2 * data_range) ** 2
    S = ((2 * ux * uy + C1) * (2 * vxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
    pad = (_WIN - 1) // 2
    inner = tuple(slice(pad, n - pad) if n > 2 * pad else slice(None) for n in S.shape)
    return float(S[inner].mean())
