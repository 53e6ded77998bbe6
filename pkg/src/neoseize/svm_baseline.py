"""Gaussian-kernel SVM on the 55 epoch features.

Training solves the soft-margin dual with SMO using maximal-violating-pair
working-set selection (second-order choice of the partner index). Model
selection is a stratified 5-fold grid search over (C, gamma) scored by AUC,
and margins are mapped to probabilities with a Platt sigmoid fitted on the
pooled out-of-fold margins.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .features import FeatureNormalizer, fit_normalizer
from .postproc_metrics import auc, roc_curve

DEFAULT_C_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_GAMMA_GRID = (1 / 220, 1 / 55, 4 / 55, 16 / 55)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SvmTrainConfig:
    """Hyper-parameter grid and solver settings.

    ``max_train_samples`` caps the class-balanced subsample used for the
    final fit and ``max_cv_samples`` the one used for the grid search; the
    dense kernel matrix grows quadratically with either.
    """

    c_grid: tuple = DEFAULT_C_GRID
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    folds: int = 5
    smo_tolerance: float = 1e-3
    max_passes: int = 200
    max_train_samples: int = 1600
    max_cv_samples: int = 800
    seed: int = 0

    def __post_init__(self):
        if not self.c_grid or not self.gamma_grid:
            raise ValueError("grid empty")
        if min(self.c_grid) <= 0 or min(self.gamma_grid) <= 0:
            raise ValueError("C and gamma must be positive")
        if self.folds < 2:
            raise ValueError("need at least two folds")


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    alphas_signed: np.ndarray
    bias: float
    gamma: float
    platt_a: float = -1.0
    platt_b: float = 0.0
    normalizer: FeatureNormalizer | None = None
    C: float = float("nan")
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=float))
        self.alphas_signed = np.asarray(self.alphas_signed, dtype=float).ravel()
        if len(self.alphas_signed) != len(self.support_vectors):
            raise ValueError("one signed alpha per support vector")
        if len(self.alphas_signed) == 0:
            raise ValueError("a model needs at least one support vector")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.normalizer is None:
            dim = self.dim
            self.normalizer = FeatureNormalizer(np.zeros(dim), np.ones(dim))

    @property
    def dim(self):
        return self.support_vectors.shape[1]

    @property
    def n_support(self):
        return len(self.alphas_signed)


def rbf_kernel(A, B, gamma):
    """``exp(-gamma * ||a - b||^2)`` for every row pair."""
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"))


def _check_labels(y):
    y = np.asarray(y)
    values = set(np.unique(y).tolist())
    if not values <= {-1, 1}:
        raise ValueError("labels must be -1 or +1")
    if values != {-1, 1}:
        raise ValueError("training data must contain both classes")
    return y.astype(float)


def _smo_solve(K, y, C, tol, max_iter):
    """Dual coordinate pairs until the maximal KKT violation drops below ``tol``.

    Minimizes ``0.5 a'Qa - sum(a)`` with ``Q = yy' * K``, ``0 <= a <= C`` and
    ``y'a = 0``. Returns ``(alpha, bias, converged, n_iter)``.
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(K).copy()
    pos = y > 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        at_upper = alpha >= C
        at_lower = alpha <= 0
        score = -y * grad
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        i = int(np.argmax(np.where(up, score, -np.inf)))
        m_up = score[i]
        m_low = np.min(np.where(low, score, np.inf))
        if m_up - m_low < tol:
            converged = True
            break
        # partner: largest guaranteed decrease among violating low-set indices
        b = m_up - score
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, 1e-12)
        cand = low & (b > 0)
        j = int(np.argmax(np.where(cand, b * b / a, -np.inf)))

        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
                if ai > C:
                    ai, aj = C, C - diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
                if aj > C:
                    aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        # Q[:, t] = y * y_t * K[:, t]
        grad += y * (K[:, i] * (yi * (ai - ai_old)) + K[:, j] * (yj * (aj - aj_old)))

    score = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = np.mean(-score[free])
    else:
        # no free vector: midpoint of the feasible interval for the bias
        yg = -score
        upper = alpha >= C
        ub_mask = np.where(upper, ~pos, pos)
        lb_mask = ~ub_mask
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else \
            (ub if np.isfinite(ub) else lb)
    return alpha, -float(rho), converged, it


def smo_train(X, y, C, gamma, tol=1e-3, max_passes=200, kernel=None):
    """Fit an uncalibrated RBF SVM on normalized rows ``X`` with labels in {-1, +1}.

    ``kernel`` may carry a precomputed ``rbf_kernel(X, X, gamma)``. The solver
    stops after ``max_passes * len(X)`` pair updates; if that happens before
    the KKT conditions hold within ``tol`` the best-so-far model is returned
    with ``converged=False`` and a :class:`ConvergenceWarning`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = _check_labels(y)
    if len(X) != len(y):
        raise ValueError("X and y differ in length")
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    K = rbf_kernel(X, X, gamma) if kernel is None else kernel
    alpha, bias, converged, n_iter = _smo_solve(K, y, float(C), tol, max_passes * len(y))
    if not converged:
        warnings.warn(f"SMO stopped after {n_iter} updates without meeting tol={tol}",
                      ConvergenceWarning, stacklevel=2)
    sv = alpha > 0
    return SvmModel(X[sv], alpha[sv] * y[sv], bias, float(gamma), C=float(C),
                    converged=converged, n_iter=n_iter)


def decision_function(model, X, chunk=512):
    """Margins ``sum_i alpha_i y_i K(s_i, x) + bias`` for normalized rows ``X``."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.dim:
        raise ValueError(f"model expects {model.dim} features, got {X.shape[1]}")
    out = np.empty(len(X))
    for start in range(0, len(X), chunk):
        K = rbf_kernel(X[start:start + chunk], model.support_vectors, model.gamma)
        out[start:start + chunk] = K @ model.alphas_signed + model.bias
    return out[0] if single else out


def _sigmoid_prob(margins, a, b):
    # p = 1 / (1 + exp(a f + b)), evaluated without overflow
    z = a * np.asarray(margins, dtype=float) + b
    return np.where(z >= 0, np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))),
                    1 / (1 + np.exp(-np.abs(z))))


def platt_loss(a, b, margins, labels):
    """Cross-entropy of the sigmoid against Platt's smoothed targets."""
    f = np.asarray(margins, dtype=float)
    t = _platt_targets(np.asarray(labels))
    z = a * f + b
    # -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
    return float(np.sum(t * z + np.logaddexp(0.0, -z)))


def _platt_targets(labels):
    pos = labels > 0
    n_pos, n_neg = pos.sum(), (~pos).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("Platt scaling needs both classes")
    return np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def fit_platt(margins, labels, max_iter=100, grad_tol=1e-8):
    """Newton fit of ``p = 1 / (1 + exp(a f + b))`` to smoothed targets.

    Labels may be {-1, +1} or {0, 1}. Uses a backtracking line search and a
    tiny ridge on the Hessian for stability.
    """
    f = np.asarray(margins, dtype=float)
    labels = np.asarray(labels)
    t = _platt_targets(labels)
    n_pos = (labels > 0).sum()
    n_neg = len(labels) - n_pos
    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    loss = platt_loss(a, b, f, labels)
    for _ in range(max_iter):
        p = _sigmoid_prob(f, a, b)
        d1 = t - p
        g_a, g_b = np.dot(f, d1), d1.sum()
        if np.hypot(g_a, g_b) < grad_tol:
            break
        w = p * (1 - p)
        h11 = np.dot(f * f, w) + 1e-12
        h22 = w.sum() + 1e-12
        h21 = np.dot(f, w)
        det = h11 * h22 - h21 * h21
        da = -(h22 * g_a - h21 * g_b) / det
        db = -(-h21 * g_a + h11 * g_b) / det
        step = 1.0
        while step >= 1e-10:
            new_loss = platt_loss(a + step * da, b + step * db, f, labels)
            if new_loss < loss + 1e-4 * step * (g_a * da + g_b * db):
                break
            step /= 2
        else:
            break
        a, b, loss = a + step * da, b + step * db, new_loss
    return float(a), float(b)


def predict_probability(model, features, normalized=False):
    """Seizure probability for raw feature rows (normalized with the model's normalizer)."""
    X = features if normalized else model.normalizer.apply(features)
    return _sigmoid_prob(decision_function(model, X), model.platt_a, model.platt_b)


def stratified_folds(y, n_folds, seed):
    """Fold index per row; each class is shuffled then dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=int)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < n_folds:
            raise ValueError(f"class {cls} has fewer than {n_folds} examples")
        fold[rng.permutation(idx)] = np.arange(len(idx)) % n_folds
    return fold


def balanced_subsample(y, max_total, seed):
    """Sorted row indices: up to ``max_total // 2`` per class, drawn without replacement."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    per_class = max_total // 2
    picks = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) > per_class:
            idx = rng.choice(idx, per_class, replace=False)
        picks.append(idx)
    return np.sort(np.concatenate(picks))


@dataclass
class GridResult:
    C: float
    gamma: float
    fold_aucs: dict = field(default_factory=dict)
    oof_margins: np.ndarray | None = None
    labels: np.ndarray | None = None


def grid_search_cv(X, y, cfg=SvmTrainConfig()):
    """Pick (C, gamma) by mean fold AUC; ties go to smaller C, then smaller gamma.

    Returns a :class:`GridResult` whose ``fold_aucs`` maps ``(C, gamma)`` to
    the per-fold AUCs and whose ``oof_margins`` hold the out-of-fold margins
    of the winning point (used for Platt scaling).
    """
    X = np.asarray(X, dtype=float)
    y = _check_labels(y)
    folds = stratified_folds(y, cfg.folds, cfg.seed)
    fold_aucs, margins = {}, {}
    best_key, best_score = None, -np.inf
    for gamma in sorted(cfg.gamma_grid):
        K = rbf_kernel(X, X, gamma)
        for C in sorted(cfg.c_grid):
            oof = np.empty(len(y))
            scores = []
            for k in range(cfg.folds):
                tr, te = folds != k, folds == k
                Ktr = K[np.ix_(tr, tr)]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    alpha, bias, _, _ = _smo_solve(Ktr, y[tr], float(C), cfg.smo_tolerance,
                                                   cfg.max_passes * int(tr.sum()))
                oof[te] = K[np.ix_(te, tr)] @ (alpha * y[tr]) + bias
                scores.append(auc(roc_curve(oof[te], y[te] > 0)))
            fold_aucs[(C, gamma)] = scores
            margins[(C, gamma)] = oof
    for C in sorted(cfg.c_grid):
        for gamma in sorted(cfg.gamma_grid):
            score = np.mean(fold_aucs[(C, gamma)])
            if score > best_score:
                best_key, best_score = (C, gamma), score
    return GridResult(best_key[0], best_key[1], fold_aucs, margins[best_key], y)


def train_svm(features, labels, cfg=SvmTrainConfig()):
    """Full recipe: normalize, grid search, final SMO fit, Platt scaling.

    ``labels`` are 0/1 epoch labels. The normalizer is fitted on every
    training row; SMO and the grid search see class-balanced subsamples.
    """
    features = np.asarray(features, dtype=float)
    labels01 = np.asarray(labels).astype(int)
    if len(np.unique(labels01)) < 2:
        raise ValueError("training data must contain both classes")
    norm = fit_normalizer(features)
    Z = norm.apply(features)
    y = np.where(labels01 > 0, 1.0, -1.0)
    cv_idx = balanced_subsample(y, cfg.max_cv_samples, cfg.seed)
    grid = grid_search_cv(Z[cv_idx], y[cv_idx], cfg)
    fit_idx = balanced_subsample(y, cfg.max_train_samples, cfg.seed + 1)
    model = smo_train(Z[fit_idx], y[fit_idx], grid.C, grid.gamma,
                      tol=cfg.smo_tolerance, max_passes=cfg.max_passes)
    model.platt_a, model.platt_b = fit_platt(grid.oof_margins, grid.labels)
    model.normalizer = norm
    return model, grid


def channel_probabilities(model, channel_features):
    """Apply the model separately to each channel: ``(n_ch, n_ep, 55) -> (n_ch, n_ep)``."""
    F = np.asarray(channel_features, dtype=float)
    flat = F.reshape(-1, F.shape[-1])
    return predict_probability(model, flat).reshape(F.shape[:-1])


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"SVM1"


class ModelFormatError(ValueError):
    pass


def save_model(model, path):
    m, dim = model.support_vectors.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", m, dim))
        fh.write(struct.pack("<4d", model.gamma, model.bias, model.platt_a, model.platt_b))
        fh.write(np.asarray(model.normalizer.mean, "<f8").tobytes())
        fh.write(np.asarray(model.normalizer.std, "<f8").tobytes())
        rows = np.column_stack([model.alphas_signed, model.support_vectors])
        fh.write(rows.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ModelFormatError(f"{path}: not an SVM model file (bad magic)")
    head = 4 + 8 + 32
    if len(blob) < head:
        raise ModelFormatError(f"{path}: truncated header")
    m, dim = struct.unpack_from("<II", blob, 4)
    gamma, bias, a, b = struct.unpack_from("<4d", blob, 12)
    expected = head + 8 * (2 * dim + m * (dim + 1))
    if len(blob) != expected:
        raise ModelFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    body = np.frombuffer(blob, "<f8", offset=head).astype(float)
    mean, std = body[:dim], body[dim:2 * dim]
    rows = body[2 * dim:].reshape(m, dim + 1)
    try:
        return SvmModel(rows[:, 1:], rows[:, 0], bias, gamma, a, b,
                        FeatureNormalizer(mean.copy(), std.copy()))
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
