"""Recordings, annotations, CSV containers and the synthetic EEG corpus.

A recording is a multichannel microvolt matrix with a sample rate; the
matching annotation set holds per-channel seizure labels at 1 Hz plus their
channel-wise OR. The synthetic generator renders pink-noise background with
rhythmic spike-and-wave bursts on a contiguous block of channels, which
gives a deterministic stand-in for annotated clinical neonatal EEG.
"""

from __future__ import annotations

import io
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

BIPOLAR_MONTAGE = ("F4-C4", "C4-O2", "F3-C3", "C3-O1", "T4-C4", "C4-Cz", "Cz-C3", "C3-T3")
RAW_FS = 256.0

# 3-pole/3-zero pinking filter, -10 dB/decade over most of the band
_PINK_B = np.array([0.049922035, -0.095993537, 0.050612699, -0.004408786])
_PINK_A = np.array([1.0, -2.494956002, 2.017265875, -0.522189400])


class FormatError(ValueError):
    """Malformed or inconsistent recording/annotation file."""


class ConfigError(ValueError):
    """Invalid synthetic-corpus configuration."""


@dataclass
class Recording:
    subject_id: str
    sample_rate_hz: float
    channel_names: list
    samples: np.ndarray  # (n_channels, n_samples), microvolts

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.channel_names = list(self.channel_names)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a (n_channels, n_samples) matrix")
        if self.samples.shape[0] < 1:
            raise ValueError("a recording needs at least one channel")
        if len(self.channel_names) != self.samples.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {self.samples.shape[0]} channels")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("recording contains non-finite samples")

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return self.n_samples / self.sample_rate_hz


@dataclass
class AnnotationSet:
    """Per-channel 1 Hz seizure labels; ``fused`` is their channel-wise OR."""

    per_channel: np.ndarray  # (n_channels, n_seconds) of 0/1
    channel_names: list = None
    subject_id: str = ""
    fused: np.ndarray = field(init=False)

    def __post_init__(self):
        per_channel = np.asarray(self.per_channel)
        if per_channel.ndim != 2:
            raise ValueError("per_channel must be (n_channels, n_seconds)")
        if not np.all((per_channel == 0) | (per_channel == 1)):
            raise ValueError("annotations must be binary")
        self.per_channel = per_channel.astype(np.int8)
        if self.channel_names is None:
            self.channel_names = [f"ch{i}" for i in range(per_channel.shape[0])]
        self.channel_names = list(self.channel_names)
        if len(self.channel_names) != per_channel.shape[0]:
            raise ValueError("channel_names length must match per_channel rows")
        self.fused = self.per_channel.max(axis=0) if per_channel.shape[0] else \
            np.zeros(per_channel.shape[1], dtype=np.int8)

    @property
    def n_seconds(self):
        return self.per_channel.shape[1]


@dataclass(frozen=True)
class SeizureEvent:
    onset_s: int
    duration_s: int
    channels: tuple
    f0_hz: float
    amplitude_uv: float


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus parameters. Ranges are inclusive ``(low, high)`` pairs."""

    n_subjects: int = 6
    duration_s: int = 1800
    seizure_events: tuple = (2, 4)
    seizure_duration_s: tuple = (40, 120)
    seizure_fundamental_hz: tuple = (1.0, 3.0)
    background_amplitude_uv: float = 20.0
    seizure_amplitude_ratio: tuple = (2.0, 3.0)
    subject_gain: tuple = (0.7, 1.4)
    onset_taper_s: float = 5.0
    fs: float = RAW_FS
    rng_seed: int = 0

    def validate(self):
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if self.duration_s < 8:
            raise ConfigError("duration_s must be at least one 8 s epoch")
        for name in ("seizure_events", "seizure_duration_s", "seizure_fundamental_hz",
                     "seizure_amplitude_ratio", "subject_gain"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is empty: {lo} > {hi}")
        if self.seizure_events[0] < 0:
            raise ConfigError("seizure_events must be non-negative")
        lo, hi = self.seizure_fundamental_hz
        if lo <= 0 or 3 * hi >= 12.8:
            raise ConfigError("seizure harmonics must stay inside the 0.5-12.8 Hz passband")
        if self.seizure_events[1] > 0 and self.seizure_duration_s[0] < 1:
            raise ConfigError("seizure durations must be at least 1 s")
        if self.seizure_events[1] * self.seizure_duration_s[1] > 0.5 * self.duration_s:
            raise ConfigError("requested seizure time can exceed 50% of the recording")
        if self.background_amplitude_uv <= 0:
            raise ConfigError("background_amplitude_uv must be positive")


# ---------------------------------------------------------------------------
# CSV containers

_HEADER_RE = re.compile(r"^#\s*(.*)$")


def _parse_header(line, required, path):
    m = _HEADER_RE.match(line.strip())
    if not m:
        raise FormatError(f"{path}:1: missing '#' metadata header")
    fields = {}
    for token in m.group(1).split():
        if "=" not in token:
            raise FormatError(f"{path}:1: malformed header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    missing = [k for k in required if k not in fields]
    if missing:
        raise FormatError(f"{path}:1: header lacks {', '.join(missing)}")
    return fields


def _locate_bad_row(lines, n_cols, path, first_line=2, integer=False):
    """Scan rows one by one and raise a FormatError naming the first bad line."""
    for offset, line in enumerate(lines):
        lineno = first_line + offset
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n_cols:
            raise FormatError(f"{path}:{lineno}: expected {n_cols} columns, found {len(cells)}")
        for cell in cells:
            try:
                value = float(cell)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell {cell.strip()!r}") from None
            if not math.isfinite(value):
                raise FormatError(f"{path}:{lineno}: non-finite value {cell.strip()!r}")
            if integer and value not in (0.0, 1.0) and cell is not cells[0]:
                raise FormatError(f"{path}:{lineno}: annotation cells must be 0 or 1")
    raise FormatError(f"{path}: unreadable data section")


def _read_matrix(path, lines, n_cols):
    body = "".join(lines)
    if not body.strip():
        raise FormatError(f"{path}: no samples")
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2, dtype=float)
    except ValueError:
        _locate_bad_row(lines, n_cols, path)
    if data.shape[1] != n_cols:
        _locate_bad_row(lines, n_cols, path)
    bad = ~np.all(np.isfinite(data), axis=1)
    if bad.any():
        _locate_bad_row(lines, n_cols, path)
    return data


def read_recording(path):
    """Parse a recording CSV (``# subject=.. fs=.. channels=a;b`` + sample rows)."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    meta = _parse_header(lines[0], ("fs", "channels"), path)
    try:
        fs = float(meta["fs"])
    except ValueError:
        raise FormatError(f"{path}:1: sample rate {meta['fs']!r} is not a number") from None
    if not fs > 0:
        raise FormatError(f"{path}:1: sample rate must be positive")
    channels = [c for c in meta["channels"].split(";") if c]
    if not channels:
        raise FormatError(f"{path}:1: no channel names")
    data = _read_matrix(path, lines[1:], len(channels))
    return Recording(meta.get("subject", ""), fs, channels, data.T.copy())


def write_recording(rec, path):
    if rec.n_samples == 0:
        raise ValueError("refusing to write a recording with no samples")
    header = (f"# subject={rec.subject_id} fs={rec.sample_rate_hz:g} "
              f"channels={';'.join(rec.channel_names)}")
    with open(path, "w") as fh:
        np.savetxt(fh, rec.samples.T, fmt="%.9g", delimiter=",", header=header, comments="")


def read_annotations(path):
    """Parse an annotation CSV and check the stored fused column against the OR."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    meta = _parse_header(lines[0], ("channels",), path)
    channels = [c for c in meta["channels"].split(";") if c]
    n_cols = len(channels) + 2
    body = lines[1:]
    if not "".join(body).strip():
        per_channel = np.zeros((len(channels), 0), dtype=np.int8)
        return AnnotationSet(per_channel, channels, meta.get("subject", ""))
    data = _read_matrix(path, body, n_cols)
    cells = data[:, 1:]
    if not np.all((cells == 0) | (cells == 1)):
        _locate_bad_row(body, n_cols, path, integer=True)
    t = data[:, 0]
    if not np.array_equal(t, np.arange(len(t))):
        raise FormatError(f"{path}: time column must count seconds from 0")
    ann = AnnotationSet(cells[:, :-1].T.astype(np.int8), channels, meta.get("subject", ""))
    stored = cells[:, -1].astype(np.int8)
    mismatch = np.flatnonzero(stored != ann.fused)
    if mismatch.size:
        raise FormatError(
            f"{path}:{mismatch[0] + 2}: fused column disagrees with the OR of channels")
    return ann


def write_annotations(ann, path):
    header = f"# subject={ann.subject_id} channels={';'.join(ann.channel_names)}"
    table = np.column_stack([np.arange(ann.n_seconds), ann.per_channel.T, ann.fused])
    with open(path, "w") as fh:
        np.savetxt(fh, table.astype(np.int64), fmt="%d", delimiter=",",
                   header=header, comments="")


# ---------------------------------------------------------------------------
# synthetic corpus


def _subject_rng(cfg, subject_index):
    return np.random.default_rng(np.random.SeedSequence([int(cfg.rng_seed) & (2**64 - 1),
                                                         int(subject_index)]))


def pink_noise(rng, n_channels, n_samples):
    """Unit-variance approximately 1/f noise, one row per channel."""
    warm = 2048  # discard the filter start-up transient
    white = rng.standard_normal((n_channels, n_samples + warm))
    pink = signal.lfilter(_PINK_B, _PINK_A, white, axis=1)[:, warm:]
    return pink / pink.std(axis=1, keepdims=True)


def seizure_waveform(t, f0_hz):
    """Sawtooth-like spike-and-wave: fundamental plus two harmonics at 1/h weights."""
    return sum(np.sin(2 * np.pi * h * f0_hz * t) / h for h in (1, 2, 3))


def seizure_envelope(n, fs, taper_s, rng=None):
    """Hann onset/offset ramps of ``taper_s`` seconds with slow amplitude modulation."""
    env = np.ones(n)
    ramp = min(int(round(taper_s * fs)), n // 2)
    if ramp > 0:
        rise = np.hanning(2 * ramp)[:ramp]
        env[:ramp] = rise
        env[n - ramp:] = rise[::-1]
    if rng is not None:
        t = np.arange(n) / fs
        period = rng.uniform(8.0, 20.0)
        env *= 1.0 + 0.25 * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    return env


def draw_events(cfg, rng):
    """Non-overlapping seizure events for one subject (per-subject f0 and channel block)."""
    n_channels = len(BIPOLAR_MONTAGE)
    n_events = int(rng.integers(cfg.seizure_events[0], cfg.seizure_events[1] + 1))
    f0 = float(rng.uniform(*cfg.seizure_fundamental_hz))
    width = int(rng.integers(1, n_channels + 1))
    first = int(rng.integers(0, n_channels - width + 1))
    channels = tuple(range(first, first + width))
    gain_ratio = float(rng.uniform(*cfg.seizure_amplitude_ratio))
    amplitude = gain_ratio * cfg.background_amplitude_uv
    events = []
    taken = np.zeros(cfg.duration_s, dtype=bool)
    for _ in range(n_events):
        duration = int(rng.integers(cfg.seizure_duration_s[0], cfg.seizure_duration_s[1] + 1))
        for _attempt in range(1000):
            onset = int(rng.integers(0, cfg.duration_s - duration + 1))
            # keep a 1 s guard so events never touch
            lo, hi = max(onset - 1, 0), min(onset + duration + 1, cfg.duration_s)
            if not taken[lo:hi].any():
                taken[onset:onset + duration] = True
                events.append(SeizureEvent(onset, duration, channels, f0, amplitude))
                break
        else:
            raise ConfigError("could not place non-overlapping seizure events")
    events.sort(key=lambda e: e.onset_s)
    return events


def render_subject(cfg, subject_index, events, rng=None):
    """Background for ``subject_index`` plus the given events, with exact annotations."""
    cfg.validate()
    if rng is None:
        rng = _subject_rng(cfg, subject_index)
    n_channels = len(BIPOLAR_MONTAGE)
    fs = cfg.fs
    n_samples = int(round(cfg.duration_s * fs))
    gain = rng.uniform(*cfg.subject_gain)
    samples = cfg.background_amplitude_uv * gain * pink_noise(rng, n_channels, n_samples)
    per_channel = np.zeros((n_channels, cfg.duration_s), dtype=np.int8)
    occupied = np.zeros(cfg.duration_s, dtype=bool)
    for ev in events:
        if ev.onset_s < 0 or ev.onset_s + ev.duration_s > cfg.duration_s:
            raise ConfigError(f"event {ev} outside the recording")
        if occupied[ev.onset_s:ev.onset_s + ev.duration_s].any():
            raise ConfigError("seizure events overlap")
        occupied[ev.onset_s:ev.onset_s + ev.duration_s] = True
        start, stop = int(ev.onset_s * fs), int((ev.onset_s + ev.duration_s) * fs)
        t = np.arange(stop - start) / fs
        burst = seizure_waveform(t, ev.f0_hz) * seizure_envelope(
            stop - start, fs, cfg.onset_taper_s, rng)
        for ch in ev.channels:
            scale = ev.amplitude_uv * gain * rng.uniform(0.8, 1.0)
            samples[ch, start:stop] += scale * burst
            per_channel[ch, ev.onset_s:ev.onset_s + ev.duration_s] = 1
    subject_id = f"subject_{subject_index}"
    rec = Recording(subject_id, fs, list(BIPOLAR_MONTAGE), samples)
    return rec, AnnotationSet(per_channel, list(BIPOLAR_MONTAGE), subject_id)


def generate_synthetic_subject(cfg, subject_index):
    """Deterministic ``(Recording, AnnotationSet)`` for one synthetic subject."""
    cfg.validate()
    rng = _subject_rng(cfg, subject_index)
    events = draw_events(cfg, rng)
    return render_subject(cfg, subject_index, events, rng)


def subject_events(cfg, subject_index):
    """The events :func:`generate_synthetic_subject` injects for this subject."""
    cfg.validate()
    return draw_events(cfg, _subject_rng(cfg, subject_index))


def burst_epoch(rng, start, stop, n_samples=256, fs=32.0, f0_hz=None,
                amplitude_ratio=None, taper_s=0.25):
    """One background epoch at ``fs`` with a seizure burst confined to ``[start, stop)``.

    Background is unit-variance pink noise. The burst is the spike-and-wave
    waveform with short Hann ramps, scaled relative to the background by
    ``amplitude_ratio`` (drawn from the corpus default range when ``None``).
    ``start == stop`` gives a pure background epoch.
    """
    if not 0 <= start <= stop <= n_samples:
        raise ConfigError(f"burst span [{start}, {stop}) outside 0..{n_samples}")
    lo, hi = SynthConfig.seizure_fundamental_hz
    f0 = float(rng.uniform(lo, hi)) if f0_hz is None else float(f0_hz)
    ratio = (float(rng.uniform(*SynthConfig.seizure_amplitude_ratio))
             if amplitude_ratio is None else float(amplitude_ratio))
    x = pink_noise(rng, 1, n_samples)[0]
    n = stop - start
    if n > 0:
        t = np.arange(n) / fs
        x[start:stop] += ratio * seizure_waveform(t + rng.uniform(0, 1 / f0), f0) * \
            seizure_envelope(n, fs, taper_s)
    return x


def corpus_paths(directory, subject_id):
    return (os.path.join(directory, f"{subject_id}.rec.csv"),
            os.path.join(directory, f"{subject_id}.ann.csv"))


def list_corpus(directory):
    """Subject ids with a ``<id>.rec.csv`` file, in natural order (subject_2 < subject_10)."""
    ids = [name[:-len(".rec.csv")] for name in os.listdir(directory)
           if name.endswith(".rec.csv")]

    def key(s):
        digits = re.findall(r"\d+", s)
        return (int(digits[-1]) if digits else -1, s)
    return sorted(ids, key=key)


def load_corpus(directory):
    """List of ``(Recording, AnnotationSet)`` for every subject in ``directory``."""
    out = []
    for sid in list_corpus(directory):
        rec_path, ann_path = corpus_paths(directory, sid)
        if not os.path.exists(ann_path):
            raise FormatError(f"{rec_path}: no matching annotation file {ann_path}")
        out.append((read_recording(rec_path), read_annotations(ann_path)))
    return out
