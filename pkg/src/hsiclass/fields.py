"""Core domain types: image cubes, label maps, probability and hidden fields.

All per-pixel matrices are K x n with pixels flattened row-major
(index = row * width + col). Types are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Floor applied to class probabilities so ln(p^T z) in the data term is
# always defined.
PROB_FLOOR = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HyperCube:
    """A d-band image, values indexed (band, row, col)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"cube must be 3-d (band, row, col), got shape {data.shape}")
        d, h, w = data.shape
        if d < 1 or h * w < 1:
            raise ValueError("cube needs at least one band and one pixel")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def as_feature_matrix(self) -> np.ndarray:
        """Return the d x n feature matrix (pixels row-major)."""
        return self.data.reshape(self.bands, -1)

    def drop_bands(self, exclude: list[int]) -> "HyperCube":
        """Remove the listed band indices (e.g. water absorption bands)."""
        keep = [b for b in range(self.bands) if b not in set(exclude)]
        if not keep:
            raise ValueError("band exclusion removes every band")
        return HyperCube(self.data[keep])


@dataclass(frozen=True)
class LabelMap:
    """Integer labels per pixel; 0 means unlabeled/background."""

    labels: np.ndarray
    k: int = 0  # class count; 0 = infer as max label

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("label map must be 2-d (row, col)")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integral")
            labels = labels.astype(np.int64)
        labels = labels.astype(np.int64)
        if labels.min(initial=0) < 0:
            raise ValueError("negative labels are not allowed")
        k = self.k if self.k else int(labels.max(initial=0))
        if labels.max(initial=0) > k:
            raise ValueError(f"label {labels.max()} exceeds class count {k}")
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "k", k)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def labeled_indices(self) -> np.ndarray:
        """Row-major indices of pixels with nonzero labels."""
        return np.flatnonzero(self.flat())


@dataclass(frozen=True)
class ProbabilityField:
    """Per-pixel class probabilities, K x n, columns on the simplex.

    Every entry is at least PROB_FLOOR and each column sums to one
    (within 1e-9).
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError("probability field must be K x n")
        if probs.min(initial=1.0) < PROB_FLOOR or probs.max(initial=0.0) > 1.0:
            raise ValueError("probabilities must lie in [PROB_FLOOR, 1]")
        colsum = probs.sum(axis=0)
        if np.abs(colsum - 1.0).max(initial=0.0) > 1e-9:
            raise ValueError("probability columns must sum to 1 within 1e-9")
        object.__setattr__(self, "probs", _freeze(probs))

    @classmethod
    def from_scores(cls, raw: np.ndarray) -> "ProbabilityField":
        """Build a valid field from nonnegative per-pixel weights.

        Normalizes columns, then floors at PROB_FLOOR. The final floor pass
        keeps every entry >= PROB_FLOOR exactly while perturbing column sums
        by at most O(K^2 * PROB_FLOOR^2), far below the 1e-9 tolerance.
        """
        p = np.asarray(raw, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError("expected a K x n array")
        if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0:
            raise ValueError("weights must be finite and nonnegative")
        for _ in range(2):
            p = np.maximum(p, PROB_FLOOR)
            p = p / p.sum(axis=0, keepdims=True)
        p = np.maximum(p, PROB_FLOOR)
        return cls(p)

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @property
    def n(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class HiddenField:
    """The K x n optimization variable with per-pixel simplex constraints.

    Solver output: entries >= -1e-7 and column sums within 1e-7 of one.
    """

    z: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2:
            raise ValueError("hidden field must be K x n")
        if z.shape[1] != self.height * self.width:
            raise ValueError("hidden field size does not match height*width")
        if z.min(initial=0.0) < -1e-7:
            raise ValueError("hidden field entries must be >= 0 within 1e-7")
        if np.abs(z.sum(axis=0) - 1.0).max(initial=0.0) > 1e-7:
            raise ValueError("hidden field columns must sum to 1 within 1e-7")
        object.__setattr__(self, "z", _freeze(z))

    @property
    def k(self) -> int:
        return self.z.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[1]

    def as_image_stack(self) -> np.ndarray:
        """Return the field as a (K, height, width) array."""
        return self.z.reshape(self.k, self.height, self.width)


@dataclass(frozen=True)
class Labeling:
    """Hard per-pixel classification, labels in {1..K}."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ValueError("labeling must be 2-d (row, col)")
        if labels.size and labels.min() < 1:
            raise ValueError("labeling must be in {1..K}; 0 is not a class")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)


@dataclass(frozen=True)
class RejectionField:
    """Per-pixel confidence of the hard labeling, used to order rejection.

    confidence[i] is the maximum of column i of the hidden field, so it
    lies in [1/K, 1] up to the field tolerance.
    """

    confidence: np.ndarray
    labeling: Labeling
    k: int

    def __post_init__(self):
        conf = np.asarray(self.confidence, dtype=np.float64)
        if conf.ndim != 1:
            raise ValueError("confidence must be a flat per-pixel vector")
        if conf.size != self.labeling.height * self.labeling.width:
            raise ValueError("confidence length does not match labeling")
        lo, hi = 1.0 / self.k - 1e-7, 1.0 + 1e-7
        if conf.size and (conf.min() < lo or conf.max() > hi):
            raise ValueError("confidence outside [1/K - 1e-7, 1 + 1e-7]")
        object.__setattr__(self, "confidence", _freeze(conf))

    @property
    def n(self) -> int:
        return self.confidence.size


@dataclass(frozen=True)
class RejectMask:
    """Boolean reject decision per pixel for one requested fraction.

    Only pixels in ``eval_indices`` can be rejected; exactly
    floor(fraction * len(eval_indices)) of them are.
    """

    rejected: np.ndarray
    fraction: float
    eval_indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        rejected = np.asarray(self.rejected, dtype=bool)
        if rejected.ndim != 1:
            raise ValueError("reject mask must be a flat boolean vector")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must be in [0, 1]")
        eval_indices = np.asarray(self.eval_indices, dtype=np.int64)
        outside = np.ones(rejected.size, dtype=bool)
        outside[eval_indices] = False
        if np.any(rejected & outside):
            raise ValueError("pixels outside the evaluation set are rejected")
        object.__setattr__(self, "rejected", _freeze(rejected))
        object.__setattr__(self, "eval_indices", _freeze(eval_indices))

    @property
    def n(self) -> int:
        return self.rejected.size

    @property
    def n_rejected(self) -> int:
        return int(np.count_nonzero(self.rejected))

    @property
    def achieved_fraction(self) -> float:
        if self.eval_indices.size == 0:
            return 0.0
        return self.n_rejected / self.eval_indices.size


def argmax_labeling(hidden: HiddenField) -> Labeling:
    """Hard labeling from the hidden field: per-pixel argmax.

    Ties break toward the smallest class index (np.argmax does this).
    Class indices are 1-based.
    """
    labels = np.argmax(hidden.z, axis=0).astype(np.int64) + 1
    return Labeling(labels.reshape(hidden.height, hidden.width))


def rejection_field(hidden: HiddenField) -> RejectionField:
    """Confidence field: per-pixel maximum of the hidden-field column.

    By construction confidence[i] == z[label_i - 1, i] with the labeling
    returned by argmax_labeling.
    """
    conf = np.max(hidden.z, axis=0)
    return RejectionField(conf, argmax_labeling(hidden), hidden.k)
