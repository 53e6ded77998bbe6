"""Network optimization and the leave-one-subject-out experiment harness.

The network is trained with categorical cross-entropy and SGD with Nesterov
momentum; the learning rate starts at 0.003 and is multiplied by 0.9 every
20 iterations. Seizure windows are rare, so every iteration draws a fresh
class-balanced sample of training windows (at most ``epochs_per_iteration``)
and makes one shuffled pass over it in mini-batches of ``batch_size``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fcnn, svm_baseline
from .pipeline import (epoch_labels, fcnn_epochs, score_subject, svm_features)
from .postproc_metrics import auc, roc_curve
from .preprocess import FCNN_POLICY, SVM_POLICY

HISTORY_COLUMNS = ("iteration", "train_loss", "train_auc", "val_auc")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.003
    lr_decay: float = 0.9
    decay_every: int = 20
    momentum: float = 0.9
    batch_size: int = 2048
    total_iterations: int = 60
    epochs_per_iteration: int = 1024
    history_samples: int = 512
    seed: int = 0

    def __post_init__(self):
        for name in ("initial_lr", "lr_decay", "decay_every", "batch_size",
                     "total_iterations", "epochs_per_iteration", "history_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class TrainHistory:
    iteration: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_auc: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    batch_size: int = 0
    lr: list = field(default_factory=list)

    def __len__(self):
        return len(self.iteration)

    def append(self, iteration, loss, train_auc, val_auc, lr):
        self.iteration.append(iteration)
        self.train_loss.append(loss)
        self.train_auc.append(train_auc)
        self.val_auc.append(val_auc)
        self.lr.append(lr)


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in zip(history.iteration, history.train_loss,
                       history.train_auc, history.val_auc):
            w.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])


def read_history(path):
    h = TrainHistory()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != HISTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected history header {header}")
        for row in reader:
            h.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]), float("nan"))
    return h


# ---------------------------------------------------------------------------
# loss, schedule, optimizer


def cross_entropy_from_logits(logits, target):
    """Mean ``-log softmax(logits)[target]`` via log-sum-exp."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=int))
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(target)), target]))


def cross_entropy(probs, target):
    """Mean ``-log probs[target]`` with probabilities clamped at 1e-38."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=int))
    picked = probs[np.arange(len(target)), target]
    return float(np.mean(-np.log(np.maximum(picked, 1e-38))))


def lr_at(iteration, cfg=TrainConfig()):
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return cfg.initial_lr * cfg.lr_decay ** (iteration // cfg.decay_every)


def nesterov_step(params, velocities, grad_fn, lr, mu):
    """One Nesterov update, in place on both dicts of arrays.

    ``v <- mu v - lr grad(theta + mu v)`` then ``theta <- theta + v``.
    ``grad_fn`` is called with ``params`` temporarily moved to the
    look-ahead point and returns a dict of gradients.
    """
    saved = {k: np.array(p, copy=True) for k, p in params.items()}
    for k, p in params.items():
        p += mu * velocities[k]
    grads = grad_fn(params)
    for k, p in params.items():
        v = velocities[k]
        v *= mu
        v -= lr * grads[k]
        p[...] = saved[k] + v
    return params, velocities


# ---------------------------------------------------------------------------
# network training


def balanced_indices(labels, n_total, rng):
    """Equal numbers of each class, ``min(n_total // 2, largest class)`` apiece.

    A class smaller than its quota is drawn with replacement, otherwise
    without. The result is shuffled.
    """
    labels = np.asarray(labels)
    classes = [np.flatnonzero(labels == c) for c in (0, 1)]
    if any(len(c) == 0 for c in classes):
        raise ValueError("training data must contain both classes")
    per_class = min(n_total // 2, max(len(c) for c in classes))
    picks = [rng.choice(c, per_class, replace=len(c) < per_class) for c in classes]
    return rng.permutation(np.concatenate(picks))


def _safe_auc(scores, labels):
    labels = np.asarray(labels)
    if labels.min() == labels.max():
        return float("nan")
    return auc(roc_curve(scores, labels))


def _probe(model, x, iteration):
    with np.errstate(over="ignore", invalid="ignore"):
        p = fcnn.predict_proba(model, x)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError(f"network outputs became non-finite at iteration {iteration}")
    return p


def train_fcnn(train_x, train_y, val_x=None, val_y=None, cfg=TrainConfig(), model=None,
               progress=None):
    """Train the network; returns ``(model, history)``.

    ``train_x`` holds standardized windows ``(n, 256)``, ``train_y`` their 0/1
    labels. History metrics are window-level AUCs in inference mode on fixed
    class-balanced subsets (``history_samples``) of the training and
    validation windows.
    """
    train_x = np.asarray(train_x, dtype=np.float32)
    train_y = np.asarray(train_y).astype(int)
    if len(np.unique(train_y)) < 2:
        raise ValueError("training data must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = fcnn.init_model(cfg.seed)
    params = model.params()
    velocities = {k: np.zeros_like(p) for k, p in params.items()}

    probe_tr = np.sort(balanced_indices(train_y, cfg.history_samples, rng))
    probe_val = None
    if val_x is not None and len(val_x):
        val_y = np.asarray(val_y).astype(int)
        if len(np.unique(val_y)) == 2:
            probe_val = np.sort(balanced_indices(val_y, cfg.history_samples, rng))
        else:
            probe_val = np.arange(min(len(val_y), cfg.history_samples))

    history = TrainHistory()
    for it in range(cfg.total_iterations):
        lr = lr_at(it, cfg)
        order = balanced_indices(train_y, cfg.epochs_per_iteration, rng)
        batch = min(cfg.batch_size, len(order))
        history.batch_size = batch
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            xb, yb = train_x[idx], train_y[idx]

            def grad_fn(_params, xb=xb, yb=yb):
                trace = fcnn.forward(model, xb, mode="train")
                losses.append((cross_entropy_from_logits(trace.logits, yb), len(yb)))
                return fcnn.backward(model, trace, yb)

            nesterov_step(params, velocities, grad_fn, lr, cfg.momentum)
        loss = sum(l * n for l, n in losses) / sum(n for _, n in losses)
        if not np.isfinite(loss):
            raise FloatingPointError(f"training loss became {loss} at iteration {it}")
        if not all(np.isfinite(p).all() for p in params.values()):
            raise FloatingPointError(f"parameters became non-finite at iteration {it}")
        tr_auc = _safe_auc(_probe(model, train_x[probe_tr], it), train_y[probe_tr])
        va_auc = float("nan")
        if probe_val is not None:
            va_auc = _safe_auc(_probe(model, val_x[probe_val], it), val_y[probe_val])
        history.append(it, loss, tr_auc, va_auc, lr)
        if progress:
            progress(f"iteration {it:2d} lr {lr:.6f} loss {loss:.4f} "
                     f"train_auc {tr_auc:.4f} val_auc {va_auc:.4f}")
    return model, history


# ---------------------------------------------------------------------------
# leave-one-subject-out


def loo_split(subjects, held_out, seed=0):
    """``(train, validation, test)`` subject-id lists for one fold.

    The validation subject rotates with the fold: it is the training subject
    ``offset`` places after the held-out one (cyclically), where ``offset``
    is drawn once from ``seed``.
    """
    subjects = list(subjects)
    if len(subjects) < 3:
        raise ValueError("leave-one-out with validation needs at least 3 subjects")
    if len(set(subjects)) != len(subjects):
        raise ValueError("subject ids must be unique")
    if held_out not in subjects:
        raise KeyError(f"unknown subject {held_out!r}")
    k = subjects.index(held_out)
    offset = int(np.random.default_rng(seed).integers(1, len(subjects)))
    val = subjects[(k + offset) % len(subjects)]
    train = [s for s in subjects if s not in (held_out, val)]
    return train, [val], [held_out]


def stack_fcnn_windows(subjects):
    """Concatenate every channel's windows and labels over ``subjects``."""
    xs, ys = [], []
    for s in subjects:
        ep, starts = fcnn_epochs(s.recording)
        xs.append(ep.reshape(-1, ep.shape[-1]))
        ys.append(epoch_labels(s, starts, FCNN_POLICY).ravel())
    return np.concatenate(xs), np.concatenate(ys)


def stack_svm_features(subjects, cache=None):
    xs, ys = [], []
    for s in subjects:
        if cache is not None and s.subject_id in cache:
            feats, starts = cache[s.subject_id]
        else:
            feats, starts = svm_features(s.recording)
            if cache is not None:
                cache[s.subject_id] = (feats, starts)
        xs.append(feats.reshape(-1, feats.shape[-1]))
        ys.append(epoch_labels(s, starts, SVM_POLICY).ravel())
    return np.concatenate(xs), np.concatenate(ys)


def train_fold(subjects, held_out, pipeline, train_cfg=TrainConfig(),
               svm_cfg=svm_baseline.SvmTrainConfig(), seed=0, progress=None,
               feature_cache=None):
    """Train one fold's model; returns ``(model, history_or_grid)``."""
    by_id = {s.subject_id: s for s in subjects}
    train_ids, val_ids, _ = loo_split(list(by_id), held_out, seed)
    if pipeline == "fcnn":
        tr_x, tr_y = stack_fcnn_windows([by_id[i] for i in train_ids])
        va_x, va_y = stack_fcnn_windows([by_id[i] for i in val_ids])
        return train_fcnn(tr_x, tr_y, va_x, va_y, train_cfg, progress=progress)
    if pipeline == "svm":
        # the SVM has its own internal cross-validation, so it also learns
        # from the validation subject
        tr_x, tr_y = stack_svm_features([by_id[i] for i in train_ids + val_ids],
                                        feature_cache)
        return svm_baseline.train_svm(tr_x, tr_y, svm_cfg)
    raise ValueError(f"unknown pipeline {pipeline!r}")


@dataclass
class LooTable:
    pipeline: str
    subjects: list
    auc: list
    auc90: list
    seconds: float = 0.0

    @property
    def mean_auc(self):
        return float(np.nanmean(self.auc))

    @property
    def mean_auc90(self):
        return float(np.nanmean(self.auc90))

    def rows(self):
        out = [(s, a, b) for s, a, b in zip(self.subjects, self.auc, self.auc90)]
        out.append(("average", self.mean_auc, self.mean_auc90))
        return out


def run_loo_experiment(subjects, pipeline, train_cfg=TrainConfig(),
                       svm_cfg=svm_baseline.SvmTrainConfig(), seed=0, progress=None,
                       on_fold=None):
    """Train and score every fold; returns a :class:`LooTable` in corpus order.

    ``on_fold(subject_id, model, extra)`` is called after each fold, which
    is where callers save models and histories.
    """
    t0 = time.perf_counter()
    cache = {}
    ids, aucs, auc90s = [], [], []
    for s in subjects:
        model, extra = train_fold(subjects, s.subject_id, pipeline, train_cfg, svm_cfg,
                                  seed, progress=None, feature_cache=cache)
        score = score_subject(model, s)
        ids.append(s.subject_id)
        aucs.append(score.auc)
        auc90s.append(score.auc90)
        if on_fold:
            on_fold(s.subject_id, model, extra)
        if progress:
            progress(f"{pipeline} fold {s.subject_id}: AUC {score.auc:.2f} "
                     f"AUC90 {score.auc90:.2f} ({time.perf_counter() - t0:.0f} s)")
    return LooTable(pipeline, ids, aucs, auc90s, time.perf_counter() - t0)


def config_dict(cfg):
    return asdict(cfg)
