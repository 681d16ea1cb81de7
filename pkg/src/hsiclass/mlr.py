"""Multinomial logistic regression over (optionally kernelized) pixel spectra.

Class K is the reference class with implicit zero weights, so the weight
matrix is (K-1) x (m+1) with a leading bias column. Training minimizes the
l2-regularized negative log-likelihood with a majorize-minimize scheme
built on the fixed curvature bound H <= 0.5 * (I - 11^T/K) for the
multinomial Hessian: each step solves the bound's quadratic exactly in a
precomputed eigenbasis, which makes the objective provably non-increasing
and the whole fit deterministic.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import HyperCube, ProbabilityField

DEFAULT_LAMBDA_W = 1e-3
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6

_STD_FLOOR = 1e-12
_MODEL_MAGIC = "MLR1"


@dataclass(frozen=True)
class FeatureMap:
    """Feature expansion applied to standardized spectra."""

    kind: str  # "linear" | "rbf"
    rbf_gamma: float = 0.0
    anchors: np.ndarray | None = None  # (m, d) standardized training spectra

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        object.__setattr__(self, "rbf_gamma", float(self.rbf_gamma))
        if self.kind == "rbf":
            if self.rbf_gamma <= 0:
                raise ValueError("rbf_gamma must be positive")
            if self.anchors is None or len(self.anchors) == 0:
                raise ValueError("rbf feature map needs anchors")
            anchors = np.ascontiguousarray(self.anchors, dtype=np.float64)
            anchors.flags.writeable = False
            object.__setattr__(self, "anchors", anchors)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return x
        d2 = ((x[:, None, :] - self.anchors[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-self.rbf_gamma * d2)

    @property
    def n_features(self) -> int:
        return -1 if self.kind == "linear" else self.anchors.shape[0]


@dataclass(frozen=True)
class MlrModel:
    weights: np.ndarray  # (K-1, m+1), column 0 is the bias
    feature_map: FeatureMap
    k: int
    band_mean: np.ndarray
    band_std: np.ndarray
    objective_history: tuple = ()
    converged: bool = True

    @property
    def bands(self) -> int:
        return self.band_mean.size


def median_heuristic_gamma(x: np.ndarray) -> float:
    """gamma = 1 / (2 * median(pairwise distance)^2) over training points."""
    n = x.shape[0]
    if n < 2:
        return 1.0
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    med = np.median(np.sqrt(d2[np.triu_indices(n, k=1)]))
    if med <= 0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def _standardize_params(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < _STD_FLOOR, 1.0, std)
    return mean, std


def _design_matrix(model_like_features: np.ndarray) -> np.ndarray:
    n = model_like_features.shape[0]
    return np.hstack([np.ones((n, 1)), model_like_features])


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so it is overflow-safe
    and exactly invariant to adding a constant to every class score."""
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _softmax_full(scores_km1: np.ndarray) -> np.ndarray:
    """Probabilities over all K classes given the K-1 free scores."""
    n = scores_km1.shape[0]
    return softmax_rows(np.hstack([scores_km1, np.zeros((n, 1))]))


def _objective(weights: np.ndarray, phi: np.ndarray, y: np.ndarray,
               lam: float) -> float:
    scores = phi @ weights.T
    full = np.hstack([scores, np.zeros((phi.shape[0], 1))])
    mx = full.max(axis=1)
    lse = mx + np.log(np.exp(full - mx[:, None]).sum(axis=1))
    if weights.shape[0] == 0:
        picked = np.zeros(len(y))
    else:
        clamped = np.minimum(y, weights.shape[0] - 1)
        picked = np.where(y < weights.shape[0],
                          scores[np.arange(len(y)), clamped], 0.0)
    nll = float(np.sum(lse - picked))
    return nll + 0.5 * lam * float(np.sum(weights ** 2))


def train_mlr(x: np.ndarray, y: np.ndarray, k: int, *,
              lambda_w: float = DEFAULT_LAMBDA_W,
              max_iter: int = DEFAULT_MAX_ITER,
              tol: float = DEFAULT_TOL,
              feature_kind: str = "rbf",
              rbf_gamma: float | None = None) -> MlrModel:
    """Fit regression weights on (sample, label) training pairs.

    x is (N, d) raw spectra; y holds labels in {1..K}. Spectra are
    standardized per band over the training set; the rbf map anchors on
    the standardized training points with a median-heuristic gamma unless
    one is given. Stops when the objective gradient norm drops below tol.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a nonempty (N, d) feature array")
    if not np.all(np.isfinite(x)):
        raise ValueError("training features contain non-finite values")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must align with feature rows")
    if y.min() < 1 or y.max() > k:
        raise ValueError(f"labels must lie in 1..{k}")
    if lambda_w < 0:
        raise ValueError("lambda_w must be nonnegative")
    if k >= 2 and np.unique(y).size == 1:
        warnings.warn(f"all training samples carry class {int(y[0])}; "
                      "the fit will only learn a bias", stacklevel=2)

    mean, std = _standardize_params(x)
    xs = (x - mean) / std
    if feature_kind == "rbf":
        gamma = median_heuristic_gamma(xs) if rbf_gamma is None else float(rbf_gamma)
        fmap = FeatureMap("rbf", gamma, xs.copy())
    else:
        fmap = FeatureMap("linear")
    phi = _design_matrix(fmap.apply(xs))
    n, m1 = phi.shape

    y0 = y - 1  # 0-based; class k-1 is the reference
    t = np.zeros((n, k - 1))
    rows = np.flatnonzero(y0 < k - 1)
    t[rows, y0[rows]] = 1.0

    # Curvature bound eigenbases, computed once.
    b_mat = 0.5 * (np.eye(k - 1) - np.ones((k - 1, k - 1)) / k)
    b_vals, b_vecs = np.linalg.eigh(b_mat) if k > 1 else (np.ones(0), np.eye(0))
    r_mat = phi.T @ phi
    r_vals, r_vecs = np.linalg.eigh(r_mat)
    r_vals = np.maximum(r_vals, 0.0)
    denom = b_vals[:, None] * r_vals[None, :] + lambda_w
    live = denom > 1e-300
    safe_denom = np.where(live, denom, 1.0)

    weights = np.zeros((k - 1, m1))
    history = [_objective(weights, phi, y0, lambda_w)]
    converged = False
    for _ in range(max_iter):
        probs = _softmax_full(phi @ weights.T)
        grad = (probs[:, : k - 1] - t).T @ phi + lambda_w * weights
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        ghat = b_vecs.T @ grad @ r_vecs
        step = np.where(live, ghat / safe_denom, 0.0)
        weights = weights - b_vecs @ step @ r_vecs.T
        history.append(_objective(weights, phi, y0, lambda_w))

    return MlrModel(weights=weights, feature_map=fmap, k=k,
                    band_mean=mean, band_std=std,
                    objective_history=tuple(history), converged=converged)


def predict_proba(model: MlrModel, x: np.ndarray) -> np.ndarray:
    """Plain softmax probabilities, (N, K), no flooring."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.bands:
        raise ValueError(
            f"model expects {model.bands} bands, features have {x.shape[1]}"
        )
    xs = (x - model.band_mean) / model.band_std
    phi = _design_matrix(model.feature_map.apply(xs))
    return _softmax_full(phi @ model.weights.T)


def predict_probs(model: MlrModel, cube: HyperCube) -> ProbabilityField:
    """Per-pixel class probabilities as a floored, renormalized K x n field."""
    probs = predict_proba(model, cube.as_feature_matrix().T)
    return ProbabilityField.from_scores(probs.T)


def predict_labels(model: MlrModel, cube: HyperCube) -> np.ndarray:
    """Pixelwise argmax labels in {1..K}, flat row-major."""
    return np.argmax(predict_probs(model, cube).probs, axis=0) + 1


# ---------------------------------------------------------------------------
# Persistence: text metadata block, then raw little-endian f32 arrays in the
# documented order (band_mean, band_std, anchors if rbf, weights row-major).


def save_model(model: MlrModel, path) -> None:
    lines = [
        _MODEL_MAGIC,
        f"k = {model.k}",
        f"bands = {model.bands}",
        f"feature_kind = {model.feature_map.kind}",
        f"rbf_gamma = {model.feature_map.rbf_gamma!r}",
        f"n_anchors = {0 if model.feature_map.kind == 'linear' else model.feature_map.anchors.shape[0]}",
        "END",
        "",
    ]
    arrays = [model.band_mean, model.band_std]
    if model.feature_map.kind == "rbf":
        arrays.append(model.feature_map.anchors)
    arrays.append(model.weights)
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode())
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_model(path) -> MlrModel:
    raw = Path(path).read_bytes()
    end = raw.find(b"END\n")
    if not raw.startswith(_MODEL_MAGIC.encode()) or end < 0:
        raise ValueError(f"{path}: not a model file")
    meta = {}
    for line in raw[:end].decode().splitlines()[1:]:
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    k = int(meta["k"])
    bands = int(meta["bands"])
    kind = meta["feature_kind"]
    gamma = float(meta["rbf_gamma"])
    n_anchors = int(meta["n_anchors"])

    payload = np.frombuffer(raw[end + 4:], dtype="<f4").astype(np.float64)
    pos = 0

    def take(count, shape):
        nonlocal pos
        out = payload[pos: pos + count].reshape(shape)
        pos += count
        return out

    mean = take(bands, (bands,))
    std = take(bands, (bands,))
    if kind == "rbf":
        anchors = take(n_anchors * bands, (n_anchors, bands))
        fmap = FeatureMap("rbf", gamma, anchors)
        m = n_anchors
    else:
        fmap = FeatureMap("linear")
        m = bands
    weights = take((k - 1) * (m + 1), (k - 1, m + 1))
    if pos != payload.size:
        raise ValueError(f"{path}: trailing bytes in model payload")
    return MlrModel(weights=weights, feature_map=fmap, k=k,
                    band_mean=mean, band_std=std)
