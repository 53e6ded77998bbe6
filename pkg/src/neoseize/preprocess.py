"""Band-pass filtering, decimation to 32 Hz and 8 s epoching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .eeg_io import Recording

BAND_HZ = (0.5, 12.8)
FILTER_ORDER = 4
TARGET_FS = 32.0
EPOCH_S = 8
EPOCH_SAMPLES = 256


@dataclass
class Epoch:
    channel_index: int
    start_time_s: float
    samples: np.ndarray
    label: int | None = None

    def __post_init__(self):
        if len(self.samples) != EPOCH_SAMPLES:
            raise ValueError(f"an epoch holds {EPOCH_SAMPLES} samples, got {len(self.samples)}")


@dataclass(frozen=True)
class EpochingPolicy:
    window_s: float = EPOCH_S
    stride_s: float = 4.0
    label_threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.stride_s <= self.window_s:
            raise ValueError("stride_s must satisfy 0 < stride_s <= window_s")


SVM_POLICY = EpochingPolicy(stride_s=4.0)
FCNN_POLICY = EpochingPolicy(stride_s=1.0)


def _sos(fs):
    return signal.butter(FILTER_ORDER, BAND_HZ, btype="bandpass", fs=fs, output="sos")


def bandpass_filter(x, fs):
    """Zero-phase 4th-order Butterworth band-pass, 0.5-12.8 Hz.

    Applied forward and backward with odd reflection padding of three times
    the filter order at each edge. Works along the last axis.
    """
    x = np.asarray(x, dtype=float)
    if fs <= 2 * BAND_HZ[1]:
        raise ValueError(f"sample rate {fs} Hz too low for a {BAND_HZ[1]} Hz cutoff")
    padlen = 3 * FILTER_ORDER
    if x.shape[-1] <= padlen:
        raise ValueError("signal too short")
    return signal.sosfiltfilt(_sos(fs), x, axis=-1, padtype="odd", padlen=padlen)


def decimate(x, fs_in=256.0, fs_out=TARGET_FS):
    """Keep every ``fs_in / fs_out``-th sample of an already band-limited signal."""
    ratio = fs_in / fs_out
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"cannot decimate {fs_in} Hz to {fs_out} Hz by an integer factor")
    ratio = int(round(ratio))
    x = np.asarray(x)
    n_out = x.shape[-1] // ratio
    return x[..., : n_out * ratio : ratio]


def preprocess_recording(rec):
    """Filter and downsample every channel to 32 Hz."""
    if rec.sample_rate_hz == TARGET_FS:
        filtered = bandpass_filter(rec.samples, rec.sample_rate_hz)
        return Recording(rec.subject_id, TARGET_FS, rec.channel_names, filtered)
    filtered = bandpass_filter(rec.samples, rec.sample_rate_hz)
    return Recording(rec.subject_id, TARGET_FS, rec.channel_names,
                     decimate(filtered, rec.sample_rate_hz, TARGET_FS))


def epoch_starts(n_samples, fs=TARGET_FS, policy=SVM_POLICY):
    """Start times (s) of every full window: 0, stride, 2*stride, ..."""
    duration = n_samples / fs
    if duration < policy.window_s:
        return np.zeros(0)
    n = int(np.floor((duration - policy.window_s) / policy.stride_s + 1e-9)) + 1
    return np.arange(n) * policy.stride_s


def epoch_matrix(samples, fs=TARGET_FS, policy=SVM_POLICY):
    """Epochs of a 32 Hz ``(n_channels, n_samples)`` matrix as ``(n_channels, n_epochs, 256)``.

    Returns ``(epochs, starts)``; ``epochs`` is a read-only strided view.
    """
    samples = np.asarray(samples)
    if fs != TARGET_FS:
        raise ValueError(f"epoching expects {TARGET_FS:g} Hz input, got {fs:g} Hz")
    starts = epoch_starts(samples.shape[-1], fs, policy)
    if starts.size == 0:
        return np.zeros(samples.shape[:-1] + (0, EPOCH_SAMPLES)), starts
    step = int(round(policy.stride_s * fs))
    if abs(step - policy.stride_s * fs) > 1e-9:
        raise ValueError("stride must be a whole number of samples")
    windows = np.lib.stride_tricks.sliding_window_view(samples, EPOCH_SAMPLES, axis=-1)
    return windows[..., ::step, :][..., : starts.size, :], starts


def make_epochs(rec, policy=SVM_POLICY):
    """List of :class:`Epoch` per channel for a 32 Hz recording."""
    if rec.sample_rate_hz != TARGET_FS:
        raise ValueError(f"recording must be at {TARGET_FS:g} Hz, got {rec.sample_rate_hz:g} Hz")
    windows, starts = epoch_matrix(rec.samples, rec.sample_rate_hz, policy)
    return [Epoch(ch, float(start), np.array(windows[ch, k]))
            for ch in range(rec.n_channels) for k, start in enumerate(starts)]


def seizure_fraction(per_channel, starts, window_s=EPOCH_S):
    """Fraction of annotated seizure seconds inside each window, ``(n_channels, n_epochs)``."""
    per_channel = np.asarray(per_channel, dtype=float)
    starts = np.asarray(starts, dtype=float)
    first = np.floor(starts).astype(int)
    if starts.size:
        if np.any(first != starts):
            raise ValueError("epoch starts must fall on whole seconds")
        if first[-1] + window_s > per_channel.shape[-1]:
            raise ValueError("epoch extends past the end of the annotation")
    csum = np.concatenate([np.zeros(per_channel.shape[:-1] + (1,)),
                           np.cumsum(per_channel, axis=-1)], axis=-1)
    return (csum[..., first + int(window_s)] - csum[..., first]) / window_s


def label_epoch(epoch, ann, threshold=0.5):
    """1 iff strictly more than ``threshold`` of the epoch's seconds are seizure."""
    start = int(epoch.start_time_s)
    if start != epoch.start_time_s:
        raise ValueError("epoch starts must fall on whole seconds")
    if start < 0 or start + EPOCH_S > ann.n_seconds:
        raise ValueError("epoch extends past the end of the annotation")
    frac = ann.per_channel[epoch.channel_index, start:start + EPOCH_S].mean()
    return int(frac > threshold)


def standardize(x, axis=-1):
    """Zero mean, unit population std along ``axis``; flat inputs map to zeros."""
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    sd = np.sqrt(np.mean(centered * centered, axis=axis, keepdims=True))
    safe = np.where(sd < 1e-8, 1.0, sd)
    return np.where(sd < 1e-8, 0.0, centered / safe)


def standardize_epoch(epoch):
    return Epoch(epoch.channel_index, epoch.start_time_s, standardize(epoch.samples), epoch.label)
