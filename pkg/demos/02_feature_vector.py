"""
The 55-feature vector
=====================

Generate one subject, cut an 8 s background window and an 8 s seizure
window from the same channel, and compare a few of their features.
"""

import numpy as np

from neoseize import eeg_io, pipeline
from neoseize.features import FEATURE_NAMES, extract_features

cfg = eeg_io.SynthConfig(n_subjects=1, duration_s=600, seizure_duration_s=(40, 70), rng_seed=4)
events = eeg_io.subject_events(cfg, 0)
subject = pipeline.prepare_subject(*eeg_io.generate_synthetic_subject(cfg, 0))
fs = int(subject.recording.sample_rate_hz)

event = events[0]
channel = event.channels[0]
inside = event.onset_s + event.duration_s // 2 - 4
outside = (event.onset_s + event.duration_s + 60) % (cfg.duration_s - 8)

x = subject.recording.samples[channel]
seizure = extract_features(x[inside * fs:(inside + 8) * fs])
background = extract_features(x[outside * fs:(outside + 8) * fs])

print(f"channel {subject.recording.channel_names[channel]}, seizure f0 {event.f0_hz:.2f} Hz")
print(f"{'feature':<28}{'background':>12}{'seizure':>12}")
for i in (0, 1, 16, 27, 28, 30, 31, 32, 51, 54):
    print(f"{FEATURE_NAMES[i]:<28}{background[i]:>12.4g}{seizure[i]:>12.4g}")
print("all finite:", bool(np.all(np.isfinite(seizure)) and np.all(np.isfinite(background))))
