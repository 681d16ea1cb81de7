"""Independent numeric oracles used by the module and acceptance tests.

Everything here recomputes expected values from first principles (scalar
minimization, bisection on optimality conditions, dense linear algebra,
explicit set arithmetic) without touching the library's closed forms, so
a test can only pass when both sides are right.
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(fn, lo: float, hi: float, iters: int = 200) -> float:
    """Minimize a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def prox_data_oracle(v: np.ndarray, p: np.ndarray, mu: float) -> np.ndarray:
    """Minimize -ln(p^T z) + (mu/2)||z - v||^2 numerically.

    Stationarity forces z - v parallel to p, so minimize over the scalar
    s in z = v + s p by golden section; no quadratic-root formula used.
    """
    pn2 = float(p @ p)
    pv = float(p @ v)

    def phi(s):
        inner = pv + s * pn2
        if inner <= 0:
            return np.inf
        return -math.log(inner) + 0.5 * mu * s * s * pn2

    s_lo = max(0.0, (1e-12 - pv) / pn2)
    s_hi = s_lo + 10.0 + 10.0 / (mu * pn2) + abs(pv)
    s_star = golden_section(phi, s_lo, s_hi, iters=300)
    return v + s_star * p


def group_shrink_oracle(a: np.ndarray, threshold: float) -> np.ndarray:
    """Minimize (1/2)||x - a||^2 + threshold*||x||_2 numerically.

    For fixed radius rho the best direction maximizes a^T x, i.e. x along
    a, leaving the scalar profile (1/2)(||a|| - rho)^2 + threshold*rho to
    golden section over rho >= 0.
    """
    norm_a = float(np.linalg.norm(a))
    if norm_a == 0.0:
        return np.zeros_like(a)

    def phi(rho):
        return 0.5 * (norm_a - rho) ** 2 + threshold * rho

    rho_star = golden_section(phi, 0.0, norm_a, iters=200)
    if phi(rho_star) >= phi(0.0):
        rho_star = 0.0
    return (rho_star / norm_a) * a


def simplex_projection_oracle(v: np.ndarray) -> np.ndarray:
    """Projection onto the simplex via bisection on the shift multiplier.

    The projection is max(v - theta, 0) for the unique theta that makes
    the coordinates sum to one; find theta by bisection.
    """
    lo = float(v.min()) - 1.0
    hi = float(v.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        total = np.maximum(v - mid, 0.0).sum()
        if total > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0.0)


def dense_difference_operator(height: int, width: int) -> np.ndarray:
    """Stacked cyclic horizontal/vertical first differences as a matrix."""
    n = height * width

    def flat(r, c):
        return (r % height) * width + (c % width)

    rows = []
    for r in range(height):
        for c in range(width):
            row = np.zeros(n)
            row[flat(r, c + 1)] += 1.0
            row[flat(r, c)] -= 1.0
            rows.append(row)
    for r in range(height):
        for c in range(width):
            row = np.zeros(n)
            row[flat(r + 1, c)] += 1.0
            row[flat(r, c)] -= 1.0
            rows.append(row)
    return np.asarray(rows)


def dense_fft_system_oracle(rhs: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Direct dense solve of (alpha I + beta D^T D) u = rhs per plane."""
    k, height, width = rhs.shape
    d = dense_difference_operator(height, width)
    a = alpha * np.eye(height * width) + beta * (d.T @ d)
    out = np.linalg.solve(a, rhs.reshape(k, -1).T)
    return out.T.reshape(k, height, width)


# ---------------------------------------------------------------------------
# Reference solver for the hidden-field problem: projected gradient with
# Armijo backtracking on a Huber-smoothed objective, annealing the
# smoothing down to 1e-6 (the smoothing bias is at most lambda*n*eps).
# The per-pixel simplex projection is shared with the library because it
# is verified on its own against the bisection and QP oracles here; the
# descent route, gradients, and objective are all independent.


def _grad_images(img):
    return np.roll(img, -1, axis=-1) - img, np.roll(img, -1, axis=-2) - img


def _div_adjoint(gh, gv):
    return (np.roll(gh, 1, axis=-1) - gh) + (np.roll(gv, 1, axis=-2) - gv)


def _project_columns(z2d: np.ndarray) -> np.ndarray:
    from hsiclass.solver import project_simplex

    return project_simplex(z2d)


def hidden_field_objective(z_images: np.ndarray, probs: np.ndarray,
                           lam: float, floor: float = 1e-10) -> float:
    k = z_images.shape[0]
    inner = (probs * z_images.reshape(k, -1)).sum(axis=0)
    data = -float(np.log(np.maximum(inner, floor)).sum())
    gh, gv = _grad_images(z_images)
    tv = float(np.sqrt((gh ** 2).sum(axis=0) + (gv ** 2).sum(axis=0)).sum())
    return data + lam * tv


def _smoothed(z, probs, lam, eps):
    k = z.shape[0]
    inner = (probs * z.reshape(k, -1)).sum(axis=0)
    data = -float(np.log(inner).sum())
    gdata = (-probs / inner).reshape(z.shape)
    gh, gv = _grad_images(z)
    mag = np.sqrt((gh ** 2).sum(axis=0) + (gv ** 2).sum(axis=0) + eps * eps)
    tv = float((mag - eps).sum())
    gtv = _div_adjoint(gh / mag, gv / mag)
    return data + lam * tv, gdata + lam * gtv


def projected_gradient_reference(probs: np.ndarray, k: int, height: int,
                                 width: int, lam: float,
                                 total_iters: int = 100000) -> float:
    """Best true objective reached by the smoothed projected-gradient run."""
    p = probs
    z = _project_columns(p.copy()).reshape(k, height, width)
    best = hidden_field_objective(z, p, lam)
    stages = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    per_stage = total_iters // len(stages)
    step = 1.0
    for eps in stages:
        f, g = _smoothed(z, p, lam, eps)
        for it in range(per_stage):
            while True:
                znew = _project_columns((z - step * g).reshape(k, -1)).reshape(z.shape)
                fnew, gnew = _smoothed(znew, p, lam, eps)
                diff = znew - z
                gap = fnew - (f + float((g * diff).sum()) + float((diff ** 2).sum()) / (2 * step))
                if gap <= 1e-12 or step < 1e-14:
                    break
                step *= 0.5
            if step < 1e-14:
                break
            z, f, g = znew, fnew, gnew
            step *= 1.1
            if it % 250 == 0:
                best = min(best, hidden_field_objective(z, p, lam))
        best = min(best, hidden_field_objective(z, p, lam))
        step = max(step, 1e-10)
    return best


# ---------------------------------------------------------------------------
# Independent trainer for the regularized multinomial logistic objective:
# plain gradient descent with Armijo backtracking, run to a tiny gradient.


def mlr_gd_oracle(phi: np.ndarray, y0: np.ndarray, k: int, lam: float,
                  tol: float = 1e-10, max_iter: int = 200000) -> float:
    n, m1 = phi.shape

    def obj_grad(w):
        scores = phi @ w.T
        full = np.hstack([scores, np.zeros((n, 1))])
        mx = full.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(full - mx).sum(axis=1))
        picked = np.where(y0 < k - 1, scores[np.arange(n), np.minimum(y0, k - 2)], 0.0)
        f = float((lse - picked).sum()) + 0.5 * lam * float((w ** 2).sum())
        probs = np.exp(full - mx)
        probs /= probs.sum(axis=1, keepdims=True)
        t = np.zeros((n, k - 1))
        rows = np.flatnonzero(y0 < k - 1)
        t[rows, y0[rows]] = 1.0
        g = (probs[:, : k - 1] - t).T @ phi + lam * w
        return f, g

    w = np.zeros((k - 1, m1))
    f, g = obj_grad(w)
    step = 1.0
    for _ in range(max_iter):
        if np.linalg.norm(g) < tol:
            break
        while True:
            w_new = w - step * g
            f_new, g_new = obj_grad(w_new)
            if f_new <= f - 0.5 * step * float((g ** 2).sum()) + 1e-14 or step < 1e-16:
                break
            step *= 0.5
        w, f, g = w_new, f_new, g_new
        step *= 1.05
    return f


# ---------------------------------------------------------------------------
# Set-arithmetic recomputation of the rejection measures.


def metrics_by_sets(labeling_flat, truth_flat, rejected_flat, eval_indices):
    eval_set = [int(i) for i in eval_indices if truth_flat[i] > 0]
    correct = {i for i in eval_set if labeling_flat[i] == truth_flat[i]}
    rejected = {i for i in eval_set if rejected_flat[i]}
    kept = [i for i in eval_set if i not in rejected]
    a = len(correct & set(kept)) / len(kept) if kept else None
    q = (len(correct & set(kept)) + len((set(eval_set) - correct) & rejected)) / len(eval_set)
    r = len(rejected) / len(eval_set)
    return a, q, r
