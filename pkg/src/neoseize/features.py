"""The 55 hand-crafted EEG epoch features and their train-set z-scoring.

Every function accepts a single 256-sample epoch or a stack of them with
shape ``(..., 256)`` and works along the last axis, so a whole recording
can be featurized without a Python loop over epochs.

Feature order (column index: meaning):

====== ==========================================================
0      total power, (0, 12] Hz
1      peak frequency in (0.5, 12.8] Hz
2-4    spectral edge frequency 80 / 90 / 95 %
5-15   power in the 2 Hz bands (0,2], (1,3], ..., (10,12]
16-26  the same band powers divided by total power
27     wavelet energy (db4 detail levels 1-5)
28     curve length
29     number of local maxima and minima
30     RMS amplitude
31-33  Hjorth activity, mobility, complexity
34-36  zero crossings of x, diff(x), diff(diff(x))
37-45  AR prediction-error variance, orders 1-9
46     skewness
47     kurtosis (non-excess)
48     mean Teager (nonlinear) energy
49-50  variance of diff(x), diff(diff(x))
51     Shannon entropy of a 64-bin amplitude histogram
52     SVD entropy (embedding dimension 20, delay 1)
53     Fisher information of the same singular spectrum
54     spectral entropy over (0, 12.8] Hz, normalized to [0, 1]
====== ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pywt
from scipy import signal

FS = 32.0
N_SAMPLES = 256
N_FEATURES = 55
BAND_EDGES = tuple((lo, lo + 2.0) for lo in range(11))
SEF_LEVELS = (0.80, 0.90, 0.95)
AR_MAX_ORDER = 9
HIST_BINS = 64
EMBED_DIM = 20
WAVELET = "db4"
WAVELET_LEVELS = 5

FEATURE_NAMES = (
    ["total_power", "peak_frequency", "sef80", "sef90", "sef95"]
    + [f"band_power_{lo:g}_{hi:g}" for lo, hi in BAND_EDGES]
    + [f"band_power_norm_{lo:g}_{hi:g}" for lo, hi in BAND_EDGES]
    + ["wavelet_energy", "curve_length", "n_extrema", "rms",
       "hjorth_activity", "hjorth_mobility", "hjorth_complexity",
       "zero_crossings", "zero_crossings_d1", "zero_crossings_d2"]
    + [f"ar_error_{p}" for p in range(1, AR_MAX_ORDER + 1)]
    + ["skewness", "kurtosis", "nonlinear_energy", "var_d1", "var_d2",
       "shannon_entropy", "svd_entropy", "fisher_information", "spectral_entropy"]
)
assert len(FEATURE_NAMES) == N_FEATURES


def _epochs(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N_SAMPLES:
        raise ValueError(f"expected {N_SAMPLES}-sample epochs, got shape {x.shape}")
    return x


def _safe_div(num, den):
    den = np.asarray(den, dtype=float)
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def periodogram(epoch, fs=FS):
    """Hann-windowed one-sided periodogram (density scaling, mean removed).

    Returns ``(freqs, psd)`` with 129 bins spaced ``fs / 256`` apart.
    """
    x = _epochs(epoch)
    return signal.periodogram(x, fs=fs, window="hann", detrend="constant",
                              scaling="density", axis=-1)


def spectral_feature_set(freqs, psd):
    """Features 0-26: total power, peak frequency, SEFs, band and relative band powers."""
    psd = np.asarray(psd, dtype=float)
    df = freqs[1] - freqs[0]
    in_total = (freqs > 0) & (freqs <= 12.0)
    power = psd * df
    total = power[..., in_total].sum(axis=-1)

    in_peak = (freqs > 0.5) & (freqs <= 12.8)
    peak = freqs[in_peak][np.argmax(psd[..., in_peak], axis=-1)]

    cum = np.cumsum(power[..., in_total], axis=-1)
    f_total = freqs[in_total]
    sefs = []
    for level in SEF_LEVELS:
        reached = cum >= level * total[..., None]
        sefs.append(f_total[np.argmax(reached, axis=-1)])

    bands = np.stack([power[..., (freqs > lo) & (freqs <= hi)].sum(axis=-1)
                      for lo, hi in BAND_EDGES], axis=-1)
    rel = _safe_div(bands, total[..., None])

    out = np.concatenate([total[..., None], peak[..., None], np.stack(sefs, axis=-1),
                          bands, rel], axis=-1)
    return np.where((total > 0)[..., None], out, 0.0)


def hjorth(epoch):
    """``(activity, mobility, complexity)``; zero variance gives zeros."""
    x = _epochs(epoch)
    d1 = np.diff(x, axis=-1)
    d2 = np.diff(d1, axis=-1)
    v0, v1, v2 = x.var(axis=-1), d1.var(axis=-1), d2.var(axis=-1)
    mobility = np.sqrt(_safe_div(v1, v0))
    mobility_d1 = np.sqrt(_safe_div(v2, v1))
    complexity = _safe_div(mobility_d1, mobility)
    return np.stack([v0, mobility, complexity], axis=-1)


def _biased_autocorr(x, max_lag):
    xc = x - x.mean(axis=-1, keepdims=True)
    n = x.shape[-1]
    return np.stack([np.sum(xc[..., : n - k] * xc[..., k:], axis=-1) / n
                     for k in range(max_lag + 1)], axis=-1)


def ar_errors(epoch, max_order=AR_MAX_ORDER):
    """Levinson-Durbin prediction-error variances for AR orders 1..max_order."""
    x = _epochs(epoch)
    r = _biased_autocorr(x, max_order)
    batch = r.shape[:-1]
    a = np.zeros(batch + (max_order + 1,))
    err = r[..., 0].copy()
    out = np.zeros(batch + (max_order,))
    for p in range(1, max_order + 1):
        acc = r[..., p] - np.sum(a[..., 1:p] * r[..., p - 1:0:-1], axis=-1)
        k = _safe_div(acc, err)
        a_prev = a.copy()
        a[..., p] = k
        a[..., 1:p] = a_prev[..., 1:p] - k[..., None] * a_prev[..., p - 1:0:-1]
        err = err * (1.0 - k * k)
        out[..., p - 1] = err
    return np.where((r[..., 0] > 0)[..., None], out, 0.0)


def zero_crossings(x):
    """Sign changes along the last axis; exact zeros keep the previous sign."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError("need at least two samples")
    s = np.sign(x)
    idx = np.where(s != 0, np.arange(x.shape[-1]), 0)
    idx = np.maximum.accumulate(idx, axis=-1)
    filled = np.take_along_axis(s, idx, axis=-1)
    return np.sum(filled[..., 1:] * filled[..., :-1] < 0, axis=-1)


def wavelet_energy(epoch):
    coeffs = pywt.wavedec(_epochs(epoch), WAVELET, mode="periodization",
                          level=WAVELET_LEVELS, axis=-1)
    return sum(np.sum(c * c, axis=-1) for c in coeffs[1:])


def misc_time_set(epoch):
    """Features 27-30 and 46-50 in that order (nine values)."""
    x = _epochs(epoch)
    d1 = np.diff(x, axis=-1)
    d2 = np.diff(d1, axis=-1)
    curve = np.sum(np.abs(d1), axis=-1)
    extrema = np.sum(d1[..., :-1] * d1[..., 1:] < 0, axis=-1)
    rms = np.sqrt(np.mean(x * x, axis=-1))
    xc = x - x.mean(axis=-1, keepdims=True)
    m2 = np.mean(xc ** 2, axis=-1)
    skew = _safe_div(np.mean(xc ** 3, axis=-1), m2 ** 1.5)
    kurt = _safe_div(np.mean(xc ** 4, axis=-1), m2 ** 2)
    nle = np.mean(x[..., 1:-1] ** 2 - x[..., :-2] * x[..., 2:], axis=-1)
    return np.stack([wavelet_energy(x), curve, extrema, rms,
                     skew, kurt, nle, d1.var(axis=-1), d2.var(axis=-1)], axis=-1)


def _histogram_counts(x, bins):
    """Row-wise equivalent of ``np.histogram(row, bins)`` over ``[min, max]``."""
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    edges = lo + span * (np.arange(bins + 1) / bins)
    edges[..., -1] = hi[..., 0]
    idx = np.floor((x - lo) * (bins / span)).astype(int)
    idx = np.clip(idx, 0, bins - 1)
    # same edge corrections as numpy's histogram
    left = np.take_along_axis(edges, idx, axis=-1)
    idx = np.where(x < left, idx - 1, idx)
    right = np.take_along_axis(edges, idx + 1, axis=-1)
    idx = np.where((x >= right) & (idx != bins - 1), idx + 1, idx)
    flat = idx.reshape(-1, x.shape[-1]) + bins * np.arange(idx.size // x.shape[-1])[:, None]
    counts = np.bincount(flat.ravel(), minlength=flat.shape[0] * bins)
    return counts.reshape(x.shape[:-1] + (bins,))


def _entropy(p, axis=-1):
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=axis)


def singular_spectrum(epoch, dim=EMBED_DIM):
    """Normalized singular values of the delay-embedding matrix (delay 1)."""
    x = _epochs(epoch)
    emb = np.lib.stride_tricks.sliding_window_view(x, dim, axis=-1)
    sv = np.linalg.svd(emb, compute_uv=False)
    return _safe_div(sv, sv.sum(axis=-1, keepdims=True))


def info_theory_set(epoch, psd=None, freqs=None):
    """Features 51-54: Shannon, SVD entropy, Fisher information, spectral entropy."""
    x = _epochs(epoch)
    if psd is None:
        freqs, psd = periodogram(x)
    flat = x.var(axis=-1) == 0

    counts = _histogram_counts(x, HIST_BINS)
    shannon = _entropy(counts / x.shape[-1])

    sbar = singular_spectrum(x)
    svd_ent = _entropy(sbar)
    ratio = _safe_div((sbar[..., 1:] - sbar[..., :-1]) ** 2, sbar[..., :-1])
    fisher = ratio.sum(axis=-1)

    band = (freqs > 0) & (freqs <= 12.8)
    p = psd[..., band]
    p = _safe_div(p, p.sum(axis=-1, keepdims=True))
    spec_ent = _entropy(p) / np.log(band.sum())

    out = np.stack([shannon, svd_ent, fisher, spec_ent], axis=-1)
    return np.where(flat[..., None], 0.0, out)


def extract_features(epoch):
    """Full 55-value feature vector(s) for one epoch or a ``(..., 256)`` stack."""
    x = _epochs(epoch)
    freqs, psd = periodogram(x)
    spectral = spectral_feature_set(freqs, psd)
    misc = misc_time_set(x)
    crossings = np.stack([zero_crossings(x), zero_crossings(np.diff(x, axis=-1)),
                          zero_crossings(np.diff(x, n=2, axis=-1))], axis=-1)
    out = np.concatenate([
        spectral,                # 0-26
        misc[..., 0:4],          # 27-30
        hjorth(x),               # 31-33
        crossings,               # 34-36
        ar_errors(x),            # 37-45
        misc[..., 4:9],          # 46-50
        info_theory_set(x, psd, freqs),  # 51-54
    ], axis=-1)
    return out


def feature_matrix(epochs, chunk=4096):
    """Features for a ``(n_epochs, 256)`` array, processed in chunks."""
    epochs = _epochs(epochs)
    out = np.empty((len(epochs), N_FEATURES))
    for start in range(0, len(epochs), chunk):
        out[start:start + chunk] = extract_features(epochs[start:start + chunk])
    return out


@dataclass
class FeatureNormalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, features):
        return (np.asarray(features, dtype=float) - self.mean) / self.std


def fit_normalizer(train_matrix):
    """Column-wise z-scoring fitted on training rows (population std, floored at 1e-12)."""
    X = np.asarray(train_matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty (n_rows, n_features) training matrix")
    if X.shape[0] < 2:
        raise ValueError("need at least two training rows")
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), 1e-12)
    # columns constant up to rounding would otherwise blow up to huge values
    std = np.where(np.ptp(X, axis=0) == 0, 1.0, std)
    return FeatureNormalizer(mean, std)


def apply_normalizer(features, norm):
    return norm.apply(features)
