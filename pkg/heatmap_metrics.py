"""
Gaussian-filter heatmaps of grid distributions and the four evaluation metrics.

A heatmap puts an isotropic Gaussian of std sigma (in unit-square coordinates) on
every grid point of p. The truncated variant keeps the grid and normalizes each
source's kernel to mass 1 inside it; the padded variant extends the grid by `pad`
cells per side and uses one constant normalizer, approximating the untruncated
heatmap of an infinite plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

import settings
from core_grid import SparseDist
from emd_oracle import CapacityError, emd_dense, emd_grid
from pyramid_transform import pyramid_l1

KL_SMOOTHING = 1e-12


@dataclass
class HeatmapGrid:
    values: np.ndarray
    sigma: float
    normalized: bool = True
    pad: int = 0
    # Grid steps per unit length; the original resolution for padded heatmaps.
    resolution: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"Heatmap values must be 2-D, got shape {self.values.shape}")
        if not self.resolution:
            self.resolution = max(self.values.shape) - 2 * self.pad

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def interior(self) -> np.ndarray:
        """Values restricted to the original (unpadded) grid."""
        if self.pad == 0:
            return self.values
        return self.values[self.pad:-self.pad, self.pad:-self.pad]


def _source_array(p) -> np.ndarray:
    if isinstance(p, SparseDist):
        return p.to_dense()
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"Heatmap input must be a 2-D grid, got shape {arr.shape}")
    return arr


def _check_sigma(sigma: float):
    if not (sigma > 0) or not math.isfinite(sigma):
        raise ValueError(f"Gaussian std sigma must be positive, got {sigma}")


def _kernel_1d(dest: np.ndarray, src: np.ndarray, sigma: float, delta: int) -> np.ndarray:
    """K[d, s] = exp(-((d - s) / delta)^2 / (2 sigma^2)) for grid offsets d - s."""
    offsets = (dest[:, None] - src[None, :]) / delta
    return np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))


def heatmap(p, sigma: float) -> HeatmapGrid:
    """
    Truncated heatmap: every source spreads exactly its own mass over the grid.

    The 2-D kernel is separable and so is its per-source normalizer, so the whole
    filter is H = Ky P Kx^T with column-normalized 1-D kernels.
    """
    _check_sigma(sigma)
    grid = _source_array(p)
    height, width = grid.shape
    delta = max(height, width)
    ky = _kernel_1d(np.arange(height), np.arange(height), sigma, delta)
    kx = _kernel_1d(np.arange(width), np.arange(width), sigma, delta)
    ky /= ky.sum(axis=0, keepdims=True)
    kx /= kx.sum(axis=0, keepdims=True)
    return HeatmapGrid(ky @ grid @ kx.T, sigma, normalized=True, pad=0, resolution=delta)


def default_pad(sigma: float, delta: int) -> int:
    return int(math.ceil(6.0 * sigma * delta))


def heatmap_padded(p, sigma: float, pad: int | None = None) -> HeatmapGrid:
    """Heatmap on the grid extended by `pad` cells per side, constant normalizer."""
    _check_sigma(sigma)
    grid = _source_array(p)
    height, width = grid.shape
    delta = max(height, width)
    if pad is None:
        pad = default_pad(sigma, delta)
    if pad < 0:
        raise ValueError(f"Padding must be nonnegative, got {pad}")
    if pad < default_pad(sigma, delta):
        settings.log_debug(f"Padding {pad} is below the recommended {default_pad(sigma, delta)} cells")

    # Normalizer of the untruncated kernel, summed far past any useful pad.
    reach = max(default_pad(sigma, delta) * 2, pad, 1)
    z1 = float(_kernel_1d(np.arange(-reach, reach + 1), np.zeros(1), sigma, delta).sum())
    ky = _kernel_1d(np.arange(height + 2 * pad) - pad, np.arange(height), sigma, delta) / z1
    kx = _kernel_1d(np.arange(width + 2 * pad) - pad, np.arange(width), sigma, delta) / z1
    return HeatmapGrid(ky @ grid @ kx.T, sigma, normalized=True, pad=pad, resolution=delta)


def _values(h) -> np.ndarray:
    return h.values if isinstance(h, HeatmapGrid) else np.asarray(h, dtype=float)


def _prepared(h, h_hat, mask=None) -> tuple[np.ndarray, np.ndarray]:
    a, b = _values(h), _values(h_hat)
    if a.shape != b.shape:
        raise ValueError(f"Heatmaps must share one shape, got {a.shape} and {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ValueError(f"Mask shape {mask.shape} differs from heatmap shape {a.shape}")
        a, b = np.where(mask, a, 0.0), np.where(mask, b, 0.0)
    return _renormalized(a), _renormalized(b)


def _renormalized(a: np.ndarray) -> np.ndarray:
    a = np.clip(a, 0.0, None)
    total = a.sum()
    return a / total if total > 0 else a


def similarity(h, h_hat, mask=None) -> float:
    """Histogram intersection sum(min(h, h_hat))."""
    a, b = _prepared(h, h_hat, mask)
    return float(np.minimum(a, b).sum())


def total_variation(h, h_hat, mask=None) -> float:
    a, b = _prepared(h, h_hat, mask)
    return 0.5 * float(np.abs(a - b).sum())


def pearson(h, h_hat, mask=None) -> float:
    a, b = _prepared(h, h_hat, mask)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        a, b = a[keep], b[keep]
    a, b = a.ravel(), b.ravel()
    if np.array_equal(a, b):
        return 1.0
    if a.std() == 0 or b.std() == 0:
        # Correlation is undefined against a constant map.
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def kl_divergence(h, h_hat, mask=None) -> float:
    """KL(h || h_hat) after adding KL_SMOOTHING to both and renormalizing."""
    a, b = _prepared(h, h_hat, mask)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        a, b = a[keep], b[keep]
    return float(stats.entropy(a.ravel() + KL_SMOOTHING, b.ravel() + KL_SMOOTHING))


def heatmap_emd(h, h_hat, mask=None, resolution: int | None = None) -> tuple[float, bool]:
    """
    EMD between two heatmaps, in units where one grid step is 1/resolution.

    Exact when the combined support fits the bipartite oracle or the grid fits the
    grid-flow solver; otherwise the pyramid l1 norm of the difference, which
    upper-bounds it, and the second value is True.
    """
    a, b = _prepared(h, h_hat, mask)
    if resolution is None:
        resolution = h.resolution if isinstance(h, HeatmapGrid) else max(a.shape)
    try:
        return emd_dense(a, b, unit=resolution), False
    except CapacityError:
        pass
    try:
        return emd_grid(a, b, unit=resolution), False
    except CapacityError:
        pass
    side = 1
    while side < max(a.shape):
        side *= 2
    diff = np.zeros((side, side))
    diff[:a.shape[0], :a.shape[1]] = a - b
    settings.log_debug(
        f"Heatmap of {a.size} cells exceeds both exact solvers; "
        f"reporting the pyramid surrogate"
    )
    return pyramid_l1(diff) * side / resolution, True


def metrics(h, h_hat, mask=None) -> dict:
    """sim, pearson, kl and emd of h_hat against the reference h."""
    a, b = _values(h), _values(h_hat)
    if a.shape != b.shape:
        raise ValueError(f"Heatmaps must share one shape, got {a.shape} and {b.shape}")
    resolution = h.resolution if isinstance(h, HeatmapGrid) else max(a.shape)
    emd_value, surrogate = heatmap_emd(h, h_hat, mask, resolution)
    return {
        "sim": similarity(h, h_hat, mask),
        "pearson": pearson(h, h_hat, mask),
        "kl": kl_divergence(h, h_hat, mask),
        "emd": emd_value,
        "emd_is_surrogate": surrogate,
    }
