"""Trial storage, normalization, cropping/padding, and dataset splits.

A trial is one multi-channel recording segment with subject/stimulus/block
metadata.  Stores are immutable once built; every transformation returns new
trials.  The on-disk format is a directory with ``manifest.json`` (an array
of per-trial records) and ``trials.bin`` (concatenated little-endian float32,
channel-major within each trial).
"""

from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .evalstat import ConstantChannelWarning

# Trial lengths after cutting off at the shortest-stimulus duration.
CROP_SAMPLES = {64: 440, 512: 3520}


class StoreError(Exception):
    """Raised for malformed trial stores on disk."""


@dataclass(frozen=True)
class Trial:
    subject_id: str
    stimulus_id: str
    block: int
    sample_rate: int
    data: np.ndarray  # [channels, samples] float32
    original_length: int = -1  # samples before pad/crop; -1 means current length

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(
                f"trial data must be [channels, samples], got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.original_length < 0:
            object.__setattr__(self, "original_length", data.shape[1])

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.subject_id, self.stimulus_id, self.block)


def _label_key(label: str):
    return (0, int(label), "") if label.isdigit() else (1, 0, label)


class TrialStore:
    """Immutable ordered collection of trials.

    ``(subject, stimulus, block)`` uniquely identifies a trial.  Class labels
    are the sorted distinct stimulus ids; ``class_index`` maps a stimulus to
    its position in that ordering.
    """

    def __init__(self, trials: Iterable[Trial]):
        self._trials = tuple(trials)
        seen = set()
        for t in self._trials:
            if t.key in seen:
                raise ValueError(f"duplicate trial {t.key}")
            seen.add(t.key)
        self.class_labels = tuple(sorted({t.stimulus_id for t in self._trials},
                                         key=_label_key))
        self._class_index = {s: i for i, s in enumerate(self.class_labels)}
        self.subjects = tuple(sorted({t.subject_id for t in self._trials}))

    def __len__(self) -> int:
        return len(self._trials)

    def __getitem__(self, i: int) -> Trial:
        return self._trials[i]

    def __iter__(self) -> Iterator[Trial]:
        return iter(self._trials)

    @property
    def trials(self) -> tuple[Trial, ...]:
        return self._trials

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def class_index(self, stimulus_id: str) -> int:
        return self._class_index[stimulus_id]

    def class_indices(self) -> np.ndarray:
        """Per-trial class index, aligned with store order."""
        return np.array([self._class_index[t.stimulus_id] for t in self._trials])

    def stack(self, indices=None) -> np.ndarray:
        """Trials stacked into ``[n, channels, samples]`` (equal lengths only)."""
        trials = self._trials if indices is None else [self._trials[i] for i in indices]
        return np.stack([t.data for t in trials])

    def map(self, fn) -> "TrialStore":
        return TrialStore(fn(t) for t in self._trials)

    def manifest(self) -> list[dict]:
        records = []
        offset = 0
        for t in self._trials:
            records.append({
                "subject_id": t.subject_id,
                "stimulus_id": t.stimulus_id,
                "block": t.block,
                "sample_rate": t.sample_rate,
                "n_channels": t.n_channels,
                "n_samples": t.n_samples,
                "byte_offset": offset,
            })
            offset += t.data.nbytes
        return records


# ---------------------------------------------------------------------------
# Disk format
# ---------------------------------------------------------------------------

def save_store(store: TrialStore, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(store.manifest(), f, indent=1)
    with open(path / "trials.bin", "wb") as f:
        for t in store:
            f.write(t.data.astype("<f4", copy=False).tobytes())


def load_store(path) -> TrialStore:
    path = Path(path)
    manifest_path = path / "manifest.json"
    blob_path = path / "trials.bin"
    if not manifest_path.exists():
        raise StoreError(f"missing manifest: {manifest_path}")
    if not blob_path.exists():
        raise StoreError(f"missing trial data: {blob_path}")
    with open(manifest_path, encoding="utf-8") as f:
        records = json.load(f)
    blob = blob_path.read_bytes()
    trials = []
    for rec in records:
        name = f"({rec['subject_id']}, {rec['stimulus_id']}, block {rec['block']})"
        c, n = rec["n_channels"], rec["n_samples"]
        start = rec["byte_offset"]
        end = start + 4 * c * n
        if end > len(blob):
            raise StoreError(
                f"trial {name} claims {c}x{n} samples at offset {start} but "
                f"trials.bin holds only {len(blob)} bytes")
        data = np.frombuffer(blob[start:end], dtype="<f4").reshape(c, n)
        if not np.isfinite(data).all():
            raise StoreError(f"trial {name} contains non-finite values")
        trials.append(Trial(rec["subject_id"], rec["stimulus_id"], rec["block"],
                            rec["sample_rate"], data))
    return TrialStore(trials)


_CSV_NAME = re.compile(r"^(?P<subject>.+)_(?P<stimulus>[^_]+)_(?P<block>\d+)\.csv$")


def import_csv(path, sample_rate: int) -> TrialStore:
    """Build a store from per-trial CSV files named
    ``<subject>_<stimulus>_<block>.csv`` with one row per channel."""
    path = Path(path)
    trials = []
    for csv_path in sorted(path.glob("*.csv")):
        m = _CSV_NAME.match(csv_path.name)
        if m is None:
            raise StoreError(
                f"cannot parse trial metadata from file name {csv_path.name!r}; "
                f"expected <subject>_<stimulus>_<block>.csv")
        with open(csv_path, newline="", encoding="utf-8") as f:
            rows = [row for row in csv.reader(f) if row]
        if not rows:
            raise StoreError(f"{csv_path.name} is empty")
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]  # header row
        data = np.array([[float(v) for v in row] for row in rows], dtype=np.float32)
        trials.append(Trial(m["subject"], m["stimulus"], int(m["block"]),
                            sample_rate, data))
    return TrialStore(trials)


# ---------------------------------------------------------------------------
# Per-trial transforms
# ---------------------------------------------------------------------------

def normalize_trial(trial: Trial) -> Trial:
    """Per channel: subtract the mean, divide by the max absolute deviation.

    Constant channels become all-zeros (division by zero avoided) with a
    warning.
    """
    data = trial.data.astype(np.float64)
    centered = data - data.mean(axis=1, keepdims=True)
    peak = np.abs(centered).max(axis=1, keepdims=True)
    flat = peak[:, 0] == 0
    if flat.any():
        warnings.warn(
            f"trial {trial.key}: {int(flat.sum())} constant channel(s) "
            f"normalized to zeros", ConstantChannelWarning, stacklevel=2)
        peak[flat] = 1.0
    out = (centered / peak).astype(np.float32)
    return replace(trial, data=out)


def normalize_store(store: TrialStore) -> TrialStore:
    return store.map(normalize_trial)


def crop_trial(trial: Trial, target_samples: int) -> Trial:
    if trial.n_samples < target_samples:
        raise ValueError(
            f"trial {trial.key} has {trial.n_samples} samples, cannot crop to "
            f"{target_samples}")
    if trial.n_samples == target_samples:
        return trial
    return replace(trial, data=trial.data[:, :target_samples],
                   original_length=trial.original_length)


def crop_trials(store: TrialStore, sample_rate: int,
                target_samples: int | None = None) -> TrialStore:
    """Truncate every trial to the shortest-stimulus length: 440 samples at
    64 Hz, 3520 at 512 Hz (override with ``target_samples``)."""
    if target_samples is None:
        if sample_rate not in CROP_SAMPLES:
            raise ValueError(
                f"no default crop length for {sample_rate} Hz; pass target_samples")
        target_samples = CROP_SAMPLES[sample_rate]
    for t in store:
        if t.sample_rate != sample_rate:
            raise ValueError(
                f"trial {t.key} is sampled at {t.sample_rate} Hz, expected "
                f"{sample_rate}")
    return store.map(lambda t: crop_trial(t, target_samples))


def zero_pad(trial: Trial, target_samples: int) -> Trial:
    """Append zeros up to ``target_samples``; the pre-pad length is kept in
    ``original_length``."""
    if target_samples < trial.n_samples:
        raise ValueError(
            f"cannot pad trial {trial.key} of {trial.n_samples} samples down "
            f"to {target_samples}")
    if target_samples == trial.n_samples:
        return trial
    data = np.zeros((trial.n_channels, target_samples), dtype=np.float32)
    data[:, :trial.n_samples] = trial.data
    return replace(trial, data=data, original_length=trial.original_length)


def pad_store_to_longest(store: TrialStore) -> TrialStore:
    longest = max(t.n_samples for t in store)
    return store.map(lambda t: zero_pad(t, longest))


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """Test partition plus leave-one-subject-out cross-validation folds."""

    test: np.ndarray                       # trial indices of the test block
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]  # (train, validation)
    fold_subjects: tuple[str, ...]

    @property
    def train_pool(self) -> np.ndarray:
        """All non-test indices (the union of any fold's train+validation)."""
        train, val = self.folds[0]
        return np.sort(np.concatenate([train, val]))


def make_split(store: TrialStore, test_block: int = 3,
               blocks: tuple[int, ...] = (1, 2, 3, 4, 5)) -> SplitPlan:
    """Hold out ``test_block`` for every subject; build one fold per subject
    with that subject's remaining trials as validation."""
    expected = {(s, c, b) for s in store.subjects for c in store.class_labels
                for b in blocks}
    present = {t.key for t in store}
    missing = sorted(expected - present)
    if missing:
        shown = ", ".join(str(k) for k in missing[:8])
        more = "" if len(missing) <= 8 else f" (+{len(missing) - 8} more)"
        raise ValueError(f"store is missing trials: {shown}{more}")

    test = np.array([i for i, t in enumerate(store) if t.block == test_block])
    rest = [i for i, t in enumerate(store) if t.block != test_block]
    folds = []
    for subject in store.subjects:
        val = np.array([i for i in rest if store[i].subject_id == subject])
        train = np.array([i for i in rest if store[i].subject_id != subject])
        folds.append((train, val))
    return SplitPlan(test, tuple(folds), store.subjects)
