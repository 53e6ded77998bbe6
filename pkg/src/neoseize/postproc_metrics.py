"""From per-epoch probabilities to 1 Hz decisions, and ROC-based scoring.

The decision chain is: epoch probabilities -> 1 Hz trace per channel ->
61 s centred moving average -> maximum over channels -> threshold -> 30 s
collar on each side of every positive run. Scores (AUC, AUC90) are taken on
the smoothed, fused trace before thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ProbabilityTrace:
    values: np.ndarray
    start_time_s: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("a trace is one-dimensional")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("probabilities must lie in [0, 1]")

    def __len__(self):
        return len(self.values)


@dataclass
class RocCurve:
    """ROC points ordered from the strictest threshold (sens 0, spec 1) to (1, 0)."""

    sensitivity: np.ndarray
    specificity: np.ndarray
    thresholds: np.ndarray

    @property
    def fpr(self):
        return 1.0 - self.specificity


@dataclass
class SubjectScore:
    auc: float
    auc90: float

    @property
    def defined(self):
        return not np.isnan(self.auc)


def trace_from_epoch_probs(starts, probs, duration_s, window_s=8.0):
    """1 Hz trace: second ``t`` takes the epoch whose centre is nearest ``t + 0.5``.

    Ties go to the earlier epoch. ``starts`` must be sorted.
    """
    starts = np.asarray(starts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if starts.size == 0:
        raise ValueError("no epochs to map")
    if starts.shape != probs.shape:
        raise ValueError("starts and probs must have the same length")
    if np.any(np.diff(starts) < 0):
        raise ValueError("epoch starts must be sorted")
    centers = starts + window_s / 2
    t = np.arange(int(duration_s)) + 0.5
    right = np.clip(np.searchsorted(centers, t, side="left"), 0, len(centers) - 1)
    left = np.clip(right - 1, 0, len(centers) - 1)
    use_left = np.abs(t - centers[left]) <= np.abs(centers[right] - t)
    return ProbabilityTrace(probs[np.where(use_left, left, right)])


def moving_average(trace, window_s=61):
    """Centred mean over ``window_s`` seconds, shrinking at the edges."""
    if window_s < 1 or window_s % 2 == 0:
        raise ValueError("smoothing window must be a positive odd number of seconds")
    values = trace.values if isinstance(trace, ProbabilityTrace) else np.asarray(trace, float)
    n = len(values)
    half = window_s // 2
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    smoothed = (csum[hi] - csum[lo]) / (hi - lo)
    # cumulative sums can drift a hair outside the input range
    smoothed = np.clip(smoothed, values.min(initial=0.0), values.max(initial=1.0)) if n else smoothed
    start = trace.start_time_s if isinstance(trace, ProbabilityTrace) else 0.0
    return ProbabilityTrace(smoothed, start)


def fuse_channels(traces):
    """Element-wise maximum across channel traces."""
    arrays = [t.values if isinstance(t, ProbabilityTrace) else np.asarray(t, float)
              for t in traces]
    if not arrays:
        raise ValueError("no channel traces to fuse")
    if len({len(a) for a in arrays}) != 1:
        raise ValueError("channel traces differ in length")
    return ProbabilityTrace(np.max(np.stack(arrays), axis=0))


def threshold_and_collar(trace, threshold, collar_s=30):
    """Binary mask of seconds above ``threshold``, each run widened by ``collar_s``."""
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    values = trace.values if isinstance(trace, ProbabilityTrace) else np.asarray(trace, float)
    positive = values > threshold
    if collar_s <= 0 or not positive.any():
        return positive.astype(np.int8)
    n = len(values)
    # +1 at each run's widened start, -1 after its widened end
    delta = np.zeros(n + 1, dtype=int)
    on = np.flatnonzero(positive)
    np.add.at(delta, np.maximum(on - collar_s, 0), 1)
    np.add.at(delta, np.minimum(on + collar_s + 1, n), -1)
    return (np.cumsum(delta)[:n] > 0).astype(np.int8)


def roc_curve(scores, labels):
    """Sweep every unique score as a threshold (positive iff ``score >= threshold``)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same shape")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each block of tied scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    sens = np.r_[0.0, tp / n_pos]
    spec = np.r_[1.0, 1.0 - fp / n_neg]
    thr = np.r_[np.inf, s[last]]
    return RocCurve(sens, spec, thr)


def auc(curve):
    """Trapezoidal area under sensitivity vs (1 - specificity)."""
    return float(np.trapezoid(curve.sensitivity, curve.fpr)) if hasattr(np, "trapezoid") \
        else float(np.trapz(curve.sensitivity, curve.fpr))


def auc90(curve, min_specificity=0.9):
    """Area over specificity in ``[min_specificity, 1]``, divided by that span."""
    span = 1.0 - min_specificity
    x, y = curve.fpr, curve.sensitivity
    area = 0.0
    for i in range(len(x) - 1):
        x0, x1, y0, y1 = x[i], x[i + 1], y[i], y[i + 1]
        if x0 >= span:
            break
        if x1 > span:
            y1 = y0 + (y1 - y0) * (span - x0) / (x1 - x0)
            x1 = span
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return float(area / span)


def evaluate_subject(fused_trace, fused_annotation):
    """AUC and AUC90 in percent for one subject; NaN when only one class is annotated."""
    scores = fused_trace.values if isinstance(fused_trace, ProbabilityTrace) \
        else np.asarray(fused_trace, float)
    labels = np.asarray(fused_annotation)
    if len(scores) != len(labels):
        raise ValueError(f"trace has {len(scores)} s, annotation {len(labels)} s")
    if labels.min(initial=0) == labels.max(initial=0):
        return SubjectScore(float("nan"), float("nan"))
    curve = roc_curve(scores, labels)
    return SubjectScore(100.0 * auc(curve), 100.0 * auc90(curve))


# ---------------------------------------------------------------------------
# plot-ready CSV files


def write_traces(path, channel_names, channel_traces, fused):
    """``t,<ch1>,...,<chN>,fused`` with one row per second."""
    cols = [np.asarray(getattr(t, "values", t), float) for t in channel_traces]
    cols.append(np.asarray(getattr(fused, "values", fused), float))
    table = np.column_stack([np.arange(len(cols[-1]))] + cols)
    with open(path, "w") as fh:
        fh.write(",".join(["t", *channel_names, "fused"]) + "\n")
        np.savetxt(fh, table, fmt=["%d"] + ["%.9g"] * len(cols), delimiter=",")


def read_traces(path):
    """Inverse of :func:`write_traces`: ``(channel_names, (n_ch, n_s) matrix, fused)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 3 or header[0] != "t" or header[-1] != "fused":
        raise ValueError(f"{path}: not a trace file")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header[1:-1], data[:, 1:-1].T, data[:, -1]


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write("t,seizure\n")
        np.savetxt(fh, np.column_stack([np.arange(len(mask)), mask]), fmt="%d", delimiter=",")


def read_mask(path):
    with open(path) as fh:
        if fh.readline().strip() != "t,seizure":
            raise ValueError(f"{path}: not a mask file")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)
    return data[:, 1].astype(np.int8)
