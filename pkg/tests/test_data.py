"""Trial store round trips, normalization, cropping/padding, and splits."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_store
from tuplenet.data import (CROP_SAMPLES, SplitPlan, StoreError, Trial,
                           TrialStore, crop_trials, import_csv, load_store,
                           make_split, normalize_trial, pad_store_to_longest,
                           save_store, zero_pad)
from tuplenet.evalstat import ConstantChannelWarning, msre


def _trial(subject="S01", stimulus="C01", block=1, rate=64, data=None, **kw):
    if data is None:
        data = np.arange(6, dtype=np.float32).reshape(2, 3)
    return Trial(subject, stimulus, block, rate, data, **kw)


class TestStoreRoundTrip:
    def test_empty_manifest_gives_empty_store(self, tmp_path):
        (tmp_path / "manifest.json").write_text("[]")
        (tmp_path / "trials.bin").write_bytes(b"")
        assert len(load_store(tmp_path)) == 0

    def test_save_load_is_byte_exact(self, tmp_path, rng):
        trials = [_trial("S01", "C01", 1, data=rng.normal(size=(3, 7)).astype(np.float32)),
                  _trial("S01", "C02", 1, data=rng.normal(size=(3, 5)).astype(np.float32)),
                  _trial("S02", "C01", 2, data=rng.normal(size=(3, 7)).astype(np.float32))]
        store = TrialStore(trials)
        save_store(store, tmp_path / "ds")
        loaded = load_store(tmp_path / "ds")
        assert len(loaded) == 3
        for orig, back in zip(store, loaded):
            assert back.key == orig.key
            assert back.sample_rate == orig.sample_rate
            np.testing.assert_array_equal(back.data, orig.data)

    def test_truncated_blob_names_offending_trial(self, tmp_path, rng):
        store = TrialStore([_trial(data=rng.normal(size=(2, 440)).astype(np.float32))])
        save_store(store, tmp_path / "ds")
        blob = (tmp_path / "ds" / "trials.bin").read_bytes()
        (tmp_path / "ds" / "trials.bin").write_bytes(blob[:-4])  # drop one float
        with pytest.raises(StoreError, match=r"S01.*C01.*block 1"):
            load_store(tmp_path / "ds")

    def test_non_finite_payload_names_offending_trial(self, tmp_path):
        data = np.zeros((1, 4), dtype=np.float32)
        data[0, 2] = np.nan
        path = tmp_path / "ds"
        path.mkdir()
        (path / "manifest.json").write_text(json.dumps([{
            "subject_id": "S03", "stimulus_id": "C09", "block": 2,
            "sample_rate": 64, "n_channels": 1, "n_samples": 4,
            "byte_offset": 0}]))
        (path / "trials.bin").write_bytes(data.tobytes())
        with pytest.raises(StoreError, match="S03.*C09.*non-finite"):
            load_store(path)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(StoreError, match="manifest"):
            load_store(tmp_path)

    def test_duplicate_trial_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            TrialStore([_trial(), _trial()])


class TestCsvImport:
    def test_import_with_and_without_header(self, tmp_path):
        (tmp_path / "S01_C01_1.csv").write_text("ch_a,ch_b,ch_c\n1,2,3\n4,5,6\n")
        (tmp_path / "S01_C02_1.csv").write_text("7,8,9\n")
        store = import_csv(tmp_path, sample_rate=64)
        assert [t.key for t in store] == [("S01", "C01", 1), ("S01", "C02", 1)]
        np.testing.assert_array_equal(store[0].data, [[1, 2, 3], [4, 5, 6]])
        assert store[1].sample_rate == 64

    def test_subject_names_may_contain_underscores(self, tmp_path):
        (tmp_path / "pilot_a_C01_3.csv").write_text("1,2\n")
        store = import_csv(tmp_path, sample_rate=512)
        assert store[0].key == ("pilot_a", "C01", 3)

    def test_unparseable_name_rejected(self, tmp_path):
        (tmp_path / "nometa.csv").write_text("1,2\n")
        with pytest.raises(StoreError, match="nometa"):
            import_csv(tmp_path, sample_rate=64)


class TestNormalize:
    def test_linear_ramp(self):
        t = normalize_trial(_trial(data=np.array([[0.0, 2.0, 4.0]], dtype=np.float32)))
        np.testing.assert_allclose(t.data, [[-1.0, 0.0, 1.0]], atol=1e-7)

    def test_idempotent_on_normalized_data(self, rng):
        t = normalize_trial(_trial(data=rng.normal(size=(4, 50)).astype(np.float32)))
        again = normalize_trial(t)
        np.testing.assert_allclose(again.data, t.data, atol=1e-6)

    def test_channel_mean_zero_and_peak_one(self, rng):
        t = normalize_trial(_trial(data=rng.normal(size=(8, 100)).astype(np.float32)))
        means = t.data.mean(axis=1)
        peaks = np.abs(t.data).max(axis=1)
        assert np.abs(means).max() < 1e-5
        np.testing.assert_array_equal(peaks, 1.0)

    def test_constant_channel_becomes_zero_with_warning(self):
        data = np.vstack([np.full(5, 3.0), np.arange(5.0)]).astype(np.float32)
        with pytest.warns(ConstantChannelWarning):
            t = normalize_trial(_trial(data=data))
        np.testing.assert_array_equal(t.data[0], 0.0)


class TestCropPad:
    def test_crop_lengths_match_rates(self, rng):
        assert CROP_SAMPLES == {64: 440, 512: 3520}
        # 28,160 inputs at 64 Hz / 64 channels; 225,280 at 512 Hz
        assert 64 * CROP_SAMPLES[64] == 28_160
        assert 64 * CROP_SAMPLES[512] == 225_280
        store = TrialStore([
            _trial("S01", "C01", 1, data=rng.normal(size=(2, 500)).astype(np.float32)),
            _trial("S01", "C02", 1, data=rng.normal(size=(2, 440)).astype(np.float32)),
        ])
        cropped = crop_trials(store, 64)
        assert all(t.n_samples == 440 for t in cropped)
        np.testing.assert_array_equal(cropped[1].data, store[1].data)

    def test_crop_512(self, rng):
        store = TrialStore([_trial(rate=512,
                                   data=rng.normal(size=(1, 4000)).astype(np.float32))])
        assert crop_trials(store, 512)[0].n_samples == 3520

    def test_too_short_trial_rejected(self):
        store = TrialStore([_trial(data=np.zeros((1, 10), dtype=np.float32))])
        with pytest.raises(ValueError, match="cannot crop"):
            crop_trials(store, 64)

    def test_zero_pad_appends_and_keeps_original_length(self):
        t = zero_pad(_trial(data=np.array([[1.0, 2.0, 3.0]], dtype=np.float32)), 5)
        np.testing.assert_array_equal(t.data, [[1, 2, 3, 0, 0]])
        assert t.original_length == 3

    def test_pad_to_current_length_is_identity(self):
        t = _trial()
        assert zero_pad(t, t.n_samples) is t

    def test_pad_below_current_length_rejected(self):
        with pytest.raises(ValueError):
            zero_pad(_trial(), 1)

    def test_padded_trial_msre_against_itself_is_zero(self, rng):
        t = zero_pad(_trial(data=rng.normal(size=(2, 6)).astype(np.float32)), 9)
        assert msre(t.data, t.data) == 0.0

    def test_pad_store_to_longest_equalizes(self, rng):
        store = TrialStore([
            _trial("S01", "C01", 1, data=rng.normal(size=(2, 4)).astype(np.float32)),
            _trial("S01", "C02", 1, data=rng.normal(size=(2, 9)).astype(np.float32)),
        ])
        padded = pad_store_to_longest(store)
        assert {t.n_samples for t in padded} == {9}


class TestSplit:
    def test_full_scale_split_shapes(self):
        store = toy_store(n_subjects=9, n_classes=12, n_blocks=5, channels=2,
                          samples=4)
        plan = make_split(store)
        assert len(plan.test) == 108
        assert len(plan.folds) == 9
        for train_idx, val_idx in plan.folds:
            assert len(train_idx) == 384
            assert len(val_idx) == 48

    def test_partitions_disjoint_and_exhaustive(self):
        store = toy_store(n_subjects=3, n_classes=4, n_blocks=5)
        plan = make_split(store)
        test = set(plan.test.tolist())
        val_union = set()
        for train_idx, val_idx in plan.folds:
            train, val = set(train_idx.tolist()), set(val_idx.tolist())
            assert not (train | val) & test
            assert not train & val
            assert val_union.isdisjoint(val)
            val_union |= val
        assert val_union | test == set(range(len(store)))
        assert len(val_union) == len(store) - len(test)

    def test_validation_subject_absent_from_fold_training(self):
        store = toy_store(n_subjects=3, n_classes=2, n_blocks=5)
        plan = make_split(store)
        for subject, (train_idx, _) in zip(plan.fold_subjects, plan.folds):
            assert all(store[i].subject_id != subject for i in train_idx)

    def test_missing_trials_listed(self):
        store = toy_store(n_subjects=2, n_classes=2, n_blocks=5)
        broken = TrialStore([t for t in store
                             if t.key != ("S02", "C01", 4)])
        with pytest.raises(ValueError, match=r"S02.*C01.*4"):
            make_split(broken)


class TestTrialStore:
    def test_class_labels_sorted_numerically_when_digit(self):
        trials = [_trial("S01", s, 1) for s in ["2", "11", "1", "21"]]
        assert TrialStore(trials).class_labels == ("1", "2", "11", "21")

    def test_trial_data_is_read_only(self):
        t = _trial()
        with pytest.raises(ValueError):
            t.data[0, 0] = 5.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 4))
    def test_stack_shape(self, channels, samples):
        store = TrialStore([_trial(data=np.zeros((channels, samples),
                                                 dtype=np.float32))])
        assert store.stack().shape == (1, channels, samples)
