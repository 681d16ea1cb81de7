"""Synthetic hyperspectral scenes with piecewise-constant ground truth.

Pixel spectra are class mean plus i.i.d. Gaussian noise, so the pixelwise
Bayes classifier is nearest-mean and its error rate can be estimated to
any precision, which the acceptance checks lean on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import HyperCube, LabelMap

DEFAULT_HEIGHT = 64
DEFAULT_WIDTH = 64
DEFAULT_K = 4
DEFAULT_BANDS = 20

# Offset between retries when a draw misses a class; keeps retry streams
# disjoint from seed+1, seed+2, ... scenes.
_RETRY_STRIDE = 0x9E3779B1


def default_class_means(k: int = DEFAULT_K, bands: int = DEFAULT_BANDS,
                        scale: float = 1.0) -> np.ndarray:
    """Smooth bump spectra with evenly spaced peaks, one per class."""
    centers = (np.arange(k) + 0.5) * bands / k
    width = bands / (2.0 * k)
    grid = np.arange(bands)
    means = np.exp(-0.5 * ((grid[None, :] - centers[:, None]) / width) ** 2)
    return scale * means


@dataclass(frozen=True)
class SynthSpec:
    height: int = DEFAULT_HEIGHT
    width: int = DEFAULT_WIDTH
    k: int = DEFAULT_K
    bands: int = DEFAULT_BANDS
    class_means: np.ndarray = field(default=None)  # (K, bands); None = defaults
    noise_sigma: float = 0.3
    region_kind: str = "blocks"
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.region_kind not in ("blocks", "voronoi"):
            raise ValueError(f"unknown region kind {self.region_kind!r}")
        means = self.class_means
        if means is None:
            means = default_class_means(self.k, self.bands)
        means = np.asarray(means, dtype=np.float64)
        if means.shape != (self.k, self.bands):
            raise ValueError(f"class_means must be ({self.k}, {self.bands})")
        for a in range(self.k):
            for b in range(a + 1, self.k):
                if np.array_equal(means[a], means[b]):
                    raise ValueError(f"classes {a + 1} and {b + 1} share a mean spectrum")
        object.__setattr__(self, "class_means", means)


def _block_labels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    # Irregular rectangular grid: random cut positions give a mix of large
    # regions and small slivers, so scenes carry both easy interiors and
    # the under-represented patches where a reject option earns its keep.
    cells_r = _cell_count(spec.height, spec.k)
    cells_c = _cell_count(spec.width, spec.k)
    row_cuts = np.sort(rng.choice(np.arange(1, spec.height), size=cells_r - 1,
                                  replace=False))
    col_cuts = np.sort(rng.choice(np.arange(1, spec.width), size=cells_c - 1,
                                  replace=False))
    row_of = np.searchsorted(row_cuts, np.arange(spec.height), side="right")
    col_of = np.searchsorted(col_cuts, np.arange(spec.width), side="right")
    block = rng.integers(1, spec.k + 1, size=(cells_r, cells_c))
    return block[np.ix_(row_of, col_of)]


def _cell_count(extent: int, k: int) -> int:
    cells = max(2, round(extent / 6))
    return min(max(cells, k), extent)


def _voronoi_labels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n_seeds = 3 * spec.k
    seed_rows = rng.uniform(0, spec.height, size=n_seeds)
    seed_cols = rng.uniform(0, spec.width, size=n_seeds)
    # First K seeds carry classes 1..K so every class owns a cell.
    seed_classes = np.concatenate([
        np.arange(1, spec.k + 1),
        rng.integers(1, spec.k + 1, size=n_seeds - spec.k),
    ])
    rr, cc = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    d2 = (rr[..., None] - seed_rows) ** 2 + (cc[..., None] - seed_cols) ** 2
    return seed_classes[np.argmin(d2, axis=-1)]


def generate(spec: SynthSpec) -> tuple[HyperCube, LabelMap]:
    """Deterministic scene: labeled regions plus Gaussian noise per band.

    If a region draw leaves some class empty the seed is advanced by a
    fixed stride and redrawn, so generation stays a pure function of spec.
    """
    attempt = 0
    while True:
        rng = np.random.default_rng(spec.seed + attempt * _RETRY_STRIDE)
        if spec.region_kind == "blocks":
            labels = _block_labels(spec, rng)
        else:
            labels = _voronoi_labels(spec, rng)
        present = np.unique(labels)
        if present.size == spec.k:
            break
        attempt += 1
    truth = LabelMap(labels, k=spec.k)
    clean = spec.class_means[labels - 1]  # (h, w, bands)
    noise = rng.standard_normal(size=clean.shape)
    data = (clean + spec.noise_sigma * noise).transpose(2, 0, 1)
    return HyperCube(data), truth


def nearest_mean_error(means: np.ndarray, sigma: float, n_draws: int = 40000,
                       seed: int = 0) -> float:
    """Monte Carlo estimate of the pixelwise Bayes error.

    Equal class priors, isotropic Gaussian noise: the Bayes rule is
    nearest-mean, so this estimates the best any pixelwise classifier
    can do on scenes generated with these means and sigma.
    """
    means = np.asarray(means, dtype=np.float64)
    k = means.shape[0]
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=n_draws)
    x = means[labels] + sigma * rng.standard_normal(size=(n_draws, means.shape[1]))
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d2, axis=1) != labels))


def sigma_for_bayes_error(means: np.ndarray, target: float, *, seed: int = 0,
                          n_draws: int = 40000, tol: float = 0.005) -> float:
    """Bisection on noise level until the Bayes error hits the target."""
    if not 0.0 < target < 1.0:
        raise ValueError("target error must be in (0, 1)")
    lo, hi = 1e-3, 1e-3
    while nearest_mean_error(means, hi, n_draws, seed) < target:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("could not bracket the target Bayes error")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        err = nearest_mean_error(means, mid, n_draws, seed)
        if abs(err - target) <= tol:
            return mid
        if err < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
