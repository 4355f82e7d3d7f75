"""Synthetic planted-channel benchmark.

Each class gets a fixed random waveform; each subject gets one "planted"
channel.  A trial is multi-channel Gaussian noise with ``snr`` times the
class waveform added to the subject's planted channel, then normalized like
real trials.  Ground truth (which channel carries signal for which subject)
is recoverable from the seed alone, which makes learned spatial filters
directly checkable.
"""

from __future__ import annotations

import numpy as np

from .data import Trial, TrialStore, normalize_trial

_WAVEFORM_KEY = 1
_CHANNEL_KEY = 2
_NOISE_KEY = 3


def _rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def subject_ids(n_subjects: int) -> list[str]:
    return [f"S{i + 1:02d}" for i in range(n_subjects)]


def stimulus_ids(n_classes: int) -> list[str]:
    return [f"C{k + 1:02d}" for k in range(n_classes)]


def synth_class_waveforms(seed: int, n_classes: int = 12,
                          samples: int = 64) -> np.ndarray:
    """The frozen per-class signals: unit-variance Gaussian sequences."""
    return _rng(seed, _WAVEFORM_KEY).standard_normal((n_classes, samples))


def synth_planted_channels(seed: int, n_subjects: int = 9,
                           channels: int = 64) -> dict[str, int]:
    """Per-subject signal channel, drawn without replacement while the
    channel budget lasts."""
    rng = _rng(seed, _CHANNEL_KEY)
    picks: list[int] = []
    while len(picks) < n_subjects:
        picks.extend(int(c) for c in rng.permutation(channels))
    return dict(zip(subject_ids(n_subjects), picks[:n_subjects]))


def synth_generate(seed: int, n_subjects: int = 9, n_classes: int = 12,
                   channels: int = 64, samples: int = 64, snr: float = 2.0,
                   n_blocks: int = 5, sample_rate: int = 64) -> TrialStore:
    """Generate the full benchmark store: ``n_blocks`` trials per
    (subject, class), normalized per channel after signal planting."""
    if snr < 0:
        raise ValueError(f"snr must be >= 0, got {snr}")
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    waveforms = synth_class_waveforms(seed, n_classes, samples)
    planted = synth_planted_channels(seed, n_subjects, channels)
    noise_rng = _rng(seed, _NOISE_KEY)

    subjects = subject_ids(n_subjects)
    stimuli = stimulus_ids(n_classes)
    trials = []
    for subject in subjects:
        for block in range(1, n_blocks + 1):
            for k, stimulus in enumerate(stimuli):
                data = noise_rng.standard_normal((channels, samples))
                data[planted[subject]] += snr * waveforms[k]
                trial = Trial(subject, stimulus, block, sample_rate,
                              data.astype(np.float32))
                trials.append(normalize_trial(trial))
    return TrialStore(trials)
