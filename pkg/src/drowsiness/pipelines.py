"""Feature assembly and the five compared regression algorithms.

Every algorithm maps (training subjects with labels, one unlabelled target
subject) to one prediction per target grid point.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dsp, eegnet
from .core import (FeatureSet, LabelVector, PipelineConfig, Recording, SampleGrid,
                   default_grid)
from .errors import DataError
from .labels import make_labels
from .numerics import PCAModel, pca_fit, ridge_fit
from .smlr import bootstrap_indices, smlr_aggregate

# epochs per Welch batch; bounds the segment buffer to a few hundred MB
_PSD_CHUNK = 16


class AlgorithmId(str, enum.Enum):
    RR = "RR"
    RR_SMLR = "RR_SMLR"
    EEGNET_RAW = "EEGNET_RAW"
    EEGNET_PSD = "EEGNET_PSD"
    EEGNET_PSD_SMLR = "EEGNET_PSD_SMLR"

    @property
    def display_name(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, name: str) -> "AlgorithmId":
        for a in cls:
            if name in (a.value, a.display_name):
                return a
        raise DataError(f"unknown algorithm {name!r}")


_DISPLAY = {
    AlgorithmId.RR: "RR",
    AlgorithmId.RR_SMLR: "RR-SMLR",
    AlgorithmId.EEGNET_RAW: "EEGNet",
    AlgorithmId.EEGNET_PSD: "EEGNet-PSD",
    AlgorithmId.EEGNET_PSD_SMLR: "EEGNet-PSD-SMLR",
}

ALGORITHMS: tuple[AlgorithmId, ...] = tuple(AlgorithmId)


class RawEpochs:
    """Lazily cut raw epochs of one subject, z-scored per channel.

    Supports ``len()`` and integer-array indexing returning (k, C, L) arrays,
    so a whole subject never has to be materialised as an epoch tensor.
    """

    def __init__(self, data: np.ndarray, starts: np.ndarray, length: int):
        self.data = data
        self.starts = np.asarray(starts, dtype=np.int64)
        self.length = int(length)
        self._view = dsp.epoch_windows(data, self.starts, self.length)

    def __len__(self) -> int:
        return self.starts.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self), self.data.shape[0], self.length)

    def __getitem__(self, idx) -> np.ndarray:
        return np.ascontiguousarray(self._view[idx])


class PooledEpochs:
    """Concatenation of several epoch sources behind one index space."""

    def __init__(self, sources: Sequence):
        self.sources = list(sources)
        self.offsets = np.cumsum([0] + [len(s) for s in self.sources])

    def __len__(self) -> int:
        return int(self.offsets[-1])

    def __getitem__(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        which = np.searchsorted(self.offsets, idx, side="right") - 1
        first = self.sources[0][idx[:1] - self.offsets[which[0]]]
        out = np.empty((idx.size,) + first.shape[1:], dtype=first.dtype)
        for s in np.unique(which):
            sel = which == s
            out[sel] = self.sources[s][idx[sel] - self.offsets[s]]
        return out


@dataclass(frozen=True, eq=False)
class SubjectFeatures:
    subject_id: str
    psd: FeatureSet
    labels: LabelVector | None
    raw_epochs: RawEpochs | None = None

    def __post_init__(self):
        if self.labels is not None and self.labels.grid != self.psd.grid:
            raise DataError(f"{self.subject_id}: labels and features use different grids")

    @property
    def grid(self) -> SampleGrid:
        return self.psd.grid

    @property
    def n_samples(self) -> int:
        return self.psd.grid.count

    def without_labels(self) -> "SubjectFeatures":
        return dataclasses.replace(self, labels=None)


# ---------------------------------------------------------------------------
# features


def preprocess(rec: Recording, cfg: PipelineConfig) -> Recording:
    """Band-pass, decimate and re-reference to the averaged earlobes."""
    out = dsp.bandpass(rec, cfg.band_lo, cfg.band_hi, cfg.filter_order)
    out = dsp.decimate(out, cfg.decimate_factor)
    if out.earlobe_indices is not None:
        out = dsp.rereference_earlobes(out)
    return out


def _zscore_columns(a: np.ndarray) -> np.ndarray:
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return np.divide(a - mean, std, out=np.zeros_like(a), where=std > 0)


def psd_db(rec: Recording, grid: SampleGrid, cfg: PipelineConfig):
    """Per-epoch band PSD in dB: ``(freqs_hz, db)`` with db of shape (n, C, bins)."""
    ep = dsp.epoch(rec, grid, cfg.epoch_s)
    freqs = np.arange(cfg.welch.nfft // 2 + 1) * (rec.fs_hz / cfg.welch.nfft)
    band = dsp.band_bins(freqs, cfg.psd_band_lo, cfg.psd_band_hi, cfg.psd_bins)
    db = np.empty((grid.count, rec.n_channels, band.stop - band.start))
    for i in range(0, grid.count, _PSD_CHUNK):
        _, p = dsp.welch_psd(ep.data[i:i + _PSD_CHUNK], cfg.welch, rec.fs_hz)
        p = p[..., band]
        if np.any(p <= 0):
            raise DataError(f"{rec.subject_id}: zero power in the analysis band")
        db[i:i + _PSD_CHUNK] = 10 * np.log10(p)
    return freqs[band], db


def extract_psd_features(rec: Recording, cfg: PipelineConfig,
                         grid: SampleGrid | None = None) -> SubjectFeatures:
    """PSD features and labels of one preprocessed recording.

    Channels whose dB exceeds ``cfg.reject_db`` in any epoch or bin are
    masked out; every channel-frequency column is z-scored over the
    subject's own epochs.
    """
    grid = grid or default_grid(rec, cfg)
    freqs, db = psd_db(rec, grid, cfg)
    mask = db.max(axis=(0, 2)) <= cfg.reject_db
    if not mask.any():
        raise DataError(f"{rec.subject_id}: every channel exceeds {cfg.reject_db} dB")
    n = grid.count
    z = _zscore_columns(db.reshape(n, -1)).reshape(db.shape)
    fs = FeatureSet(tensor=z, freq_bins_hz=freqs, channel_mask=mask, grid=grid, db=db)
    labels = make_labels(rec, grid, cfg) if rec.events else None
    return SubjectFeatures(rec.subject_id, fs, labels)


def extract_raw_epochs(rec: Recording, grid: SampleGrid, cfg: PipelineConfig) -> RawEpochs:
    """Raw epochs z-scored per channel over the span the epochs cover."""
    starts, length = dsp.epoch_starts(rec.n_samples, rec.fs_hz, grid, cfg.epoch_s)
    lo, hi = int(starts.min()), int(starts.max()) + length
    seg = rec.data[:, lo:hi]
    mean = seg.mean(axis=1, keepdims=True)
    std = seg.std(axis=1, keepdims=True)
    if np.any(std == 0):
        raise DataError(f"{rec.subject_id}: flat channel in raw epochs")
    data = ((seg - mean) / std).astype(cfg.eegnet_dtype)
    return RawEpochs(data, starts - lo, length)


def subject_features(rec: Recording, cfg: PipelineConfig,
                     include_raw: bool = True) -> SubjectFeatures:
    """Preprocess a recording and extract PSD features, labels and raw epochs."""
    pre = preprocess(rec, cfg)
    sf = extract_psd_features(pre, cfg)
    if include_raw:
        sf = dataclasses.replace(sf, raw_epochs=extract_raw_epochs(pre, sf.grid, cfg))
    return sf


@dataclass(frozen=True, eq=False)
class RrTransform:
    """Theta-band features -> channel selection -> z-score -> PCA."""

    theta: slice
    channel_mask: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    pca: PCAModel

    def theta_db(self, sf: SubjectFeatures) -> np.ndarray:
        if sf.psd.db is None:
            raise DataError(f"{sf.subject_id}: PSD features carry no dB values")
        return sf.psd.db[:, :, self.theta].mean(axis=2)

    def apply(self, sf: SubjectFeatures) -> np.ndarray:
        x = self.theta_db(sf)[:, self.channel_mask]
        return self.pca.transform((x - self.mean) / self.std)


def fit_rr_transform(train: Sequence[SubjectFeatures], cfg: PipelineConfig) -> RrTransform:
    if not train:
        raise DataError("need at least one training subject")
    freqs = train[0].psd.freq_bins_hz
    theta = dsp.band_bins(freqs, cfg.theta_lo, cfg.theta_hi)
    db = np.concatenate([s.psd.db for s in train])
    mask = db.max(axis=(0, 2)) <= cfg.reject_db
    if not mask.any():
        raise DataError("every channel rejected on the pooled training data")
    x = db[:, :, theta].mean(axis=2)[:, mask]
    mean, std = x.mean(axis=0), x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    pca = pca_fit((x - mean) / std, cfg.pca_var_frac)
    return RrTransform(theta, mask, mean, std, pca)


def extract_rr_features(train: Sequence[SubjectFeatures], target: SubjectFeatures,
                        cfg: PipelineConfig):
    """Projected RR features: ``(list of per-subject train X, target X, transform)``.

    Rejection, normalisation and PCA statistics come from the pooled
    training subjects only.
    """
    tr = fit_rr_transform(train, cfg)
    return [tr.apply(s) for s in train], tr.apply(target), tr


# ---------------------------------------------------------------------------
# algorithms


def common_channel_mask(subjects: Sequence[SubjectFeatures]) -> np.ndarray:
    """Channels retained in every subject."""
    mask = np.logical_and.reduce([s.psd.channel_mask for s in subjects])
    if not mask.any():
        raise DataError("no channel is retained in every subject")
    return mask


def _labels(train: Sequence[SubjectFeatures]) -> np.ndarray:
    for s in train:
        if s.labels is None:
            raise DataError(f"training subject {s.subject_id} has no labels")
    return np.concatenate([s.labels.values for s in train])


def _net_config(cfg: PipelineConfig, C: int, T: int, seed: int, training) -> eegnet.EegNetConfig:
    return eegnet.EegNetConfig(in_channels=C, in_time=T, dropout_p=cfg.dropout_p,
                               seed=int(seed), dtype=cfg.eegnet_dtype, training=training)


def _member_seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1, np.uint64)[0])
            for s in np.random.SeedSequence([seed, 0xB0]).spawn(k)]


def _psd_members(X, y, Xt, cfg, seed, member_seeds):
    n = len(X)
    k = cfg.n_bootstrap
    if member_seeds is None:
        resamples = bootstrap_indices(n, k, seed)
        inits = _member_seeds(seed, k)
    else:
        if len(member_seeds) != k:
            raise DataError(f"expected {k} member seeds, got {len(member_seeds)}")
        resamples = [np.random.default_rng(s).integers(0, n, size=n) for s in member_seeds]
        inits = [int(s) for s in member_seeds]
    preds = np.empty((k, len(Xt)))
    for i, (idx, s) in enumerate(zip(resamples, inits)):
        model = eegnet.build(_net_config(cfg, X.shape[1], X.shape[2], s, cfg.psd_training))
        eegnet.fit(model, X[idx], y[idx])
        preds[i] = eegnet.predict(model, Xt)
    return preds


def run_algorithm(alg: AlgorithmId, train: Sequence[SubjectFeatures],
                  target: SubjectFeatures, cfg: PipelineConfig, seed: int,
                  member_seeds: Sequence[int] | None = None) -> np.ndarray:
    """Train ``alg`` on ``train`` and predict every grid point of ``target``.

    The target's labels are dropped before any fitting.  ``member_seeds``
    overrides the per-member resample and initialisation seeds of the
    bootstrap ensemble.
    """
    alg = AlgorithmId(alg)
    if not train:
        raise DataError("need at least one training subject")
    target = target.without_labels()
    y = _labels(train)

    if alg in (AlgorithmId.RR, AlgorithmId.RR_SMLR):
        Xs, Xt, _ = extract_rr_features(train, target, cfg)
        if alg is AlgorithmId.RR:
            return ridge_fit(np.concatenate(Xs), y, cfg.ridge_lambda).predict(Xt)
        P = np.stack([ridge_fit(X, s.labels.values, cfg.ridge_lambda).predict(Xt)
                      for X, s in zip(Xs, train)])
        return smlr_aggregate(P, cfg.smlr_matrix).combined

    if alg is AlgorithmId.EEGNET_RAW:
        if target.raw_epochs is None or any(s.raw_epochs is None for s in train):
            raise DataError("raw epochs are required for the raw EEGNet")
        X = PooledEpochs([s.raw_epochs for s in train])
        _, C, T = target.raw_epochs.shape
        model = eegnet.build(_net_config(cfg, C, T, seed, cfg.raw_training))
        eegnet.fit(model, X, y)
        return eegnet.predict(model, target.raw_epochs, batch_size=8)

    mask = common_channel_mask(list(train) + [target])
    dt = cfg.eegnet_dtype
    X = np.concatenate([s.psd.tensor[:, mask] for s in train]).astype(dt)
    Xt = target.psd.tensor[:, mask].astype(dt)
    if alg is AlgorithmId.EEGNET_PSD:
        model = eegnet.build(_net_config(cfg, X.shape[1], X.shape[2], seed, cfg.psd_training))
        eegnet.fit(model, X, y)
        return eegnet.predict(model, Xt)
    P = _psd_members(X, y, Xt, cfg, seed, member_seeds)
    return smlr_aggregate(P, cfg.smlr_matrix).combined
