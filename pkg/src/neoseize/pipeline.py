"""Glue between the building blocks: recording -> per-channel probabilities -> decisions.

Both classifiers share the same front end (band-pass, 32 Hz, 8 s windows)
and back end (1 Hz trace, 61 s smoothing, channel max, threshold, collar).
They differ only in the window stride and in what is fed to the model:
standardized raw samples for the network, 55 normalized features for the SVM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fcnn, svm_baseline
from .eeg_io import AnnotationSet, Recording
from .features import feature_matrix
from .postproc_metrics import (ProbabilityTrace, evaluate_subject, fuse_channels,
                               moving_average, threshold_and_collar,
                               trace_from_epoch_probs)
from .preprocess import (FCNN_POLICY, SVM_POLICY, TARGET_FS, epoch_matrix,
                         preprocess_recording, seizure_fraction, standardize)

SMOOTHING_S = 61
COLLAR_S = 30


@dataclass
class SubjectData:
    """One subject after preprocessing, with its per-second annotations."""

    subject_id: str
    recording: Recording  # 32 Hz
    annotations: AnnotationSet

    @property
    def n_seconds(self):
        return int(self.recording.n_samples // TARGET_FS)


def prepare_subject(rec, ann):
    """Band-pass and decimate ``rec``; the annotation must cover every whole second."""
    rec32 = preprocess_recording(rec)
    n_seconds = int(rec32.n_samples // TARGET_FS)
    if ann.per_channel.shape[0] != rec.n_channels:
        raise ValueError(f"{rec.subject_id}: annotation has {ann.per_channel.shape[0]} "
                         f"channels, recording {rec.n_channels}")
    if ann.per_channel.shape[1] < n_seconds:
        raise ValueError(f"{rec.subject_id}: annotation covers {ann.per_channel.shape[1]} s "
                         f"of a {n_seconds} s recording")
    return SubjectData(rec.subject_id, rec32, ann)


def fcnn_epochs(rec32, policy=FCNN_POLICY):
    """Standardized float32 windows ``(n_ch, n_ep, 256)`` and their start times."""
    windows, starts = epoch_matrix(rec32.samples, rec32.sample_rate_hz, policy)
    out = np.empty(windows.shape, dtype=np.float32)
    for ch in range(windows.shape[0]):
        out[ch] = standardize(windows[ch])
    return out, starts


def svm_features(rec32, policy=SVM_POLICY):
    """Raw (unnormalized) features ``(n_ch, n_ep, 55)`` and window start times."""
    windows, starts = epoch_matrix(rec32.samples, rec32.sample_rate_hz, policy)
    n_ch, n_ep = windows.shape[:2]
    feats = feature_matrix(np.ascontiguousarray(windows).reshape(n_ch * n_ep, -1))
    return feats.reshape(n_ch, n_ep, -1), starts


def epoch_labels(subject, starts, policy):
    """Per-channel 0/1 labels ``(n_ch, n_ep)`` by the majority-overlap rule."""
    frac = seizure_fraction(subject.annotations.per_channel, starts, policy.window_s)
    return (frac > policy.label_threshold).astype(np.int8)


def channel_probabilities(model, rec32):
    """Seizure probability per channel and window, plus the window starts.

    The window stride follows the model type: 1 s for the network, 4 s for
    the SVM.
    """
    if isinstance(model, fcnn.FcnnModel):
        epochs, starts = fcnn_epochs(rec32)
        n_ch, n_ep = epochs.shape[:2]
        probs = fcnn.predict_proba(model, epochs.reshape(n_ch * n_ep, -1))
        return probs.reshape(n_ch, n_ep), starts
    if isinstance(model, svm_baseline.SvmModel):
        feats, starts = svm_features(rec32)
        return svm_baseline.channel_probabilities(model, feats), starts
    raise TypeError(f"unsupported model type {type(model).__name__}")


@dataclass
class Detection:
    channel_traces: list  # smoothed ProbabilityTrace per channel
    fused: ProbabilityTrace
    mask: np.ndarray


def traces_from_probabilities(probs, starts, n_seconds, smoothing_s=SMOOTHING_S):
    """Smoothed per-channel 1 Hz traces and their channel-wise maximum."""
    channel = [moving_average(trace_from_epoch_probs(starts, p, n_seconds), smoothing_s)
               for p in probs]
    return channel, fuse_channels(channel)


def detect(model, rec32, threshold=0.5, collar_s=COLLAR_S):
    """Full decision chain on a preprocessed recording."""
    probs, starts = channel_probabilities(model, rec32)
    if len(starts) == 0:
        raise ValueError("recording shorter than one 8 s window")
    n_seconds = int(rec32.n_samples // TARGET_FS)
    channel, fused = traces_from_probabilities(probs, starts, n_seconds)
    return Detection(channel, fused, threshold_and_collar(fused, threshold, collar_s))


def score_subject(model, subject):
    """Held-out AUC / AUC90 (percent) against the fused annotation."""
    det = detect(model, subject.recording)
    labels = subject.annotations.fused[: subject.n_seconds]
    return evaluate_subject(det.fused, labels)
