import dataclasses

import numpy as np
import pytest

from drowsiness import pipelines as pl
from drowsiness.core import (FeatureSet, LabelVector, PipelineConfig, Recording, SampleGrid,
                             default_grid)
from drowsiness.errors import DataError
from drowsiness.synth import SynthProfile, generate_subject, subject_profile

FREQS = (32 + np.arange(67)) * 250 / 2048

TINY = PipelineConfig.from_dict({
    "seed": 1, "n_bootstrap": 3,
    "psd_training": {"epochs": 2, "batch_size": 16, "max_batches_per_epoch": 3},
    "raw_training": {"epochs": 1, "batch_size": 4, "max_batches_per_epoch": 2}})


@pytest.fixture(scope="module")
def small_dataset():
    base = SynthProfile(duration_s=120.0)
    recs = [generate_subject(subject_profile(base, i, 5), f"S{i + 1}") for i in range(3)]
    return [pl.subject_features(r, TINY) for r in recs]


def _quiet(C=3, seconds=60, fs=250.0, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((C, int(seconds * fs))) * 0.5


def _pre(data, fs=250.0, events=()):
    return Recording("p", fs, [f"c{i}" for i in range(data.shape[0])], None, data, events)


def test_loud_epoch_rejects_channel():
    data = _quiet()
    t = np.arange(30 * 250) / 250
    data[1, :30 * 250] += 60 * np.sin(2 * np.pi * 8 * t)
    sf = pl.extract_psd_features(_pre(data), PipelineConfig())
    assert sf.psd.db[:, 1].max() > 20
    assert sf.psd.channel_mask.tolist() == [True, False, True]


def test_quiet_channels_all_retained_and_standardised():
    sf = pl.extract_psd_features(_pre(_quiet(seconds=90)), PipelineConfig())
    assert sf.psd.channel_mask.all()
    assert sf.psd.tensor.shape == (21, 3, 67)
    z = sf.psd.tensor.reshape(21, -1)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)
    assert sf.labels is None
    assert np.allclose(sf.psd.freq_bins_hz, FREQS)


def _features(sid, db, labels=None):
    n = db.shape[0]
    grid = SampleGrid(30.0, 3.0, n)
    z = (db - db.mean(axis=0)) / np.where(db.std(axis=0) > 0, db.std(axis=0), 1)
    fs = FeatureSet(z, FREQS, np.ones(db.shape[1], bool), grid, db)
    return pl.SubjectFeatures(sid, fs, None if labels is None else LabelVector(labels, grid))


def _linear_subject(sid, seed, n=40, C=5):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, n)
    a = rng.uniform(1, 2, C)
    db = -10 + y[:, None, None] * a[None, :, None] + np.zeros((n, C, 67))
    return _features(sid, db, y)


def test_rr_memorises_an_identical_subject():
    s = _linear_subject("A", 0)
    pred = pl.run_algorithm(pl.AlgorithmId.RR, [s], s, PipelineConfig(), seed=0)
    assert np.corrcoef(pred, s.labels.values)[0, 1] == pytest.approx(1, abs=1e-6)


def test_rr_rank_one_features_keep_one_component():
    s = _linear_subject("A", 1)
    assert pl.fit_rr_transform([s], PipelineConfig()).pca.n_components == 1


def test_rr_identical_train_and_target_features():
    s = _linear_subject("A", 2)
    Xs, Xt, _ = pl.extract_rr_features([s], s, PipelineConfig())
    assert np.array_equal(Xs[0], Xt)


def test_rr_transform_ignores_target():
    train = [_linear_subject("A", 3), _linear_subject("B", 4)]
    rng = np.random.default_rng(0)
    t1 = _features("T", rng.standard_normal((30, 5, 67)))
    t2 = _features("T", 50 * rng.standard_normal((30, 5, 67)))
    _, _, a = pl.extract_rr_features(train, t1, PipelineConfig())
    _, _, b = pl.extract_rr_features(train, t2, PipelineConfig())
    for f in ("channel_mask", "mean", "std"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert np.array_equal(a.pca.components, b.pca.components)


def test_theta_band_edges():
    tr = pl.fit_rr_transform([_linear_subject("A", 5)], PipelineConfig())
    f = FREQS[tr.theta]
    assert f[0] >= 4 and f[-1] <= 8 and tr.theta.stop - tr.theta.start == 33


def test_common_channel_mask():
    a = _linear_subject("A", 6)
    b = dataclasses.replace(a, psd=dataclasses.replace(
        a.psd, channel_mask=np.array([True, False, True, True, False])))
    assert pl.common_channel_mask([a, b]).tolist() == [True, False, True, True, False]


def test_raw_epoch_containers():
    data = np.arange(40.0).reshape(2, 20)
    raw = pl.RawEpochs(data, np.array([0, 5, 10]), 6)
    assert len(raw) == 3 and raw.shape == (3, 2, 6)
    assert raw[np.array([1])][0, 0].tolist() == [5, 6, 7, 8, 9, 10]
    pooled = pl.PooledEpochs([raw, pl.RawEpochs(data + 100, np.array([2, 4]), 6)])
    got = pooled[np.array([0, 3, 4, 2])]
    assert got[:, 0, 0].tolist() == [0, 102, 104, 10]


def test_algorithm_names():
    assert [a.display_name for a in pl.ALGORITHMS] == [
        "RR", "RR-SMLR", "EEGNet", "EEGNet-PSD", "EEGNet-PSD-SMLR"]
    assert pl.AlgorithmId.parse("EEGNet-PSD") is pl.AlgorithmId.EEGNET_PSD
    with pytest.raises(DataError):
        pl.AlgorithmId.parse("SVR")


def test_synthetic_features(small_dataset):
    for sf in small_dataset:
        assert sf.n_samples == 31
        assert sf.psd.tensor.shape == (31, 30, 67)
        assert sf.raw_epochs.shape == (31, 30, 7500)
        assert sf.labels is not None
        assert sf.raw_epochs[np.arange(2)].dtype == np.float32


@pytest.mark.parametrize("alg", pl.ALGORITHMS)
def test_all_algorithms_smoke_and_determinism(small_dataset, alg):
    train, target = small_dataset[:2], small_dataset[2]
    a = pl.run_algorithm(alg, train, target, TINY, seed=11)
    assert a.shape == (target.n_samples,)
    assert np.all(np.isfinite(a)) and np.all(a > -0.5) and np.all(a < 1.5)
    b = pl.run_algorithm(alg, train, target, TINY, seed=11)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("alg", [pl.AlgorithmId.RR_SMLR, pl.AlgorithmId.EEGNET_PSD])
def test_target_labels_are_never_used(small_dataset, alg):
    train, target = small_dataset[:2], small_dataset[2]
    fake = LabelVector(np.zeros(target.n_samples), target.grid)
    a = pl.run_algorithm(alg, train, target, TINY, seed=3)
    b = pl.run_algorithm(alg, train, dataclasses.replace(target, labels=fake), TINY, seed=3)
    assert a.tobytes() == b.tobytes()


def test_psd_ensemble_with_identical_member_seeds(small_dataset):
    train, target = small_dataset[:2], small_dataset[2]
    seeds = [42] * TINY.n_bootstrap
    pred = pl.run_algorithm(pl.AlgorithmId.EEGNET_PSD_SMLR, train, target, TINY, seed=0,
                            member_seeds=seeds)
    mask = pl.common_channel_mask(list(train) + [target])
    X = np.concatenate([s.psd.tensor[:, mask] for s in train]).astype(TINY.eegnet_dtype)
    y = np.concatenate([s.labels.values for s in train])
    P = pl._psd_members(X, y, target.psd.tensor[:, mask].astype(TINY.eegnet_dtype), TINY, 0,
                        seeds)
    assert np.array_equal(pred, P[0])
    assert all(np.array_equal(P[0], p) for p in P)


def test_raw_requires_epochs(small_dataset):
    train = [dataclasses.replace(s, raw_epochs=None) for s in small_dataset[:2]]
    with pytest.raises(DataError):
        pl.run_algorithm(pl.AlgorithmId.EEGNET_RAW, train, small_dataset[2], TINY, seed=0)


def test_grid_matches_recording(small_dataset):
    rec = generate_subject(SynthProfile(duration_s=120.0))
    pre = pl.preprocess(rec, TINY)
    assert pre.fs_hz == 250 and pre.n_channels == 30 and pre.earlobe_indices is None
    assert default_grid(pre, TINY) == small_dataset[0].grid
