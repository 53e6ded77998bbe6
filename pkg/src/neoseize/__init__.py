"""Neonatal EEG seizure detection: a 55-feature Gaussian SVM baseline and a
fully convolutional network on raw waveforms, with shared preprocessing,
post-processing and leave-one-subject-out evaluation."""

__version__ = "0.1.0"
