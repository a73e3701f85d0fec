"""Domain types, the on-disk dataset container and experiment configuration.

A subject container is a directory holding ``manifest.json`` and
``signal.f64le`` (little-endian float64, channel-major).  A dataset is a
directory of subject containers plus a ``dataset.json`` index.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError

MANIFEST_NAME = "manifest.json"
SIGNAL_NAME = "signal.f64le"
DATASET_INDEX = "dataset.json"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LaneDepartureEvent:
    onset_s: float
    response_time_s: float

    def __post_init__(self):
        if not (self.response_time_s > 0 and math.isfinite(self.response_time_s)):
            raise DataError(f"response time must be positive, got {self.response_time_s}")
        if not math.isfinite(self.onset_s):
            raise DataError("event onset must be finite")


@dataclass(frozen=True, eq=False)
class Recording:
    """Multi-channel EEG of one subject with its lane-departure events.

    ``data`` is channels x samples in microvolts.  ``earlobe_indices`` is
    ``None`` once the earlobe reference has been removed.
    """

    subject_id: str
    fs_hz: float
    channel_labels: tuple[str, ...]
    earlobe_indices: tuple[int, int] | None
    data: np.ndarray
    events: tuple[LaneDepartureEvent, ...] = ()

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DataError(f"data must be 2-D (channels x samples), got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "channel_labels", tuple(str(c) for c in self.channel_labels))
        object.__setattr__(self, "events", tuple(self.events))
        if not (self.fs_hz > 0 and math.isfinite(self.fs_hz)):
            raise DataError(f"fs_hz must be positive, got {self.fs_hz}")
        if data.shape[0] != len(self.channel_labels):
            raise DataError(
                f"{data.shape[0]} data rows but {len(self.channel_labels)} channel labels")
        if self.earlobe_indices is not None:
            a, b = (int(i) for i in self.earlobe_indices)
            object.__setattr__(self, "earlobe_indices", (a, b))
            if a == b or not (0 <= a < data.shape[0] and 0 <= b < data.shape[0]):
                raise DataError(f"invalid earlobe indices {self.earlobe_indices}")
        onsets = [e.onset_s for e in self.events]
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise DataError("event onsets must be strictly increasing")
        if onsets and (onsets[0] < 0 or onsets[-1] > self.duration_s):
            raise DataError("event onsets must lie within the recording")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    def replace(self, **changes) -> "Recording":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and self.fs_hz == other.fs_hz
                and self.channel_labels == other.channel_labels
                and self.earlobe_indices == other.earlobe_indices
                and self.events == other.events
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class SampleGrid:
    """Prediction times ``start_s + k * step_s`` for ``k < count``."""

    start_s: float
    step_s: float
    count: int

    def __post_init__(self):
        if self.count < 1 or self.step_s <= 0:
            raise DataError(f"invalid grid {self}")

    @property
    def times(self) -> np.ndarray:
        return self.start_s + self.step_s * np.arange(self.count)


@dataclass(frozen=True, eq=False)
class LabelVector:
    values: np.ndarray
    grid: SampleGrid

    def __post_init__(self):
        v = _frozen(np.array(self.values, dtype=np.float64))
        if v.shape != (self.grid.count,):
            raise DataError(f"label length {v.shape} does not match grid count {self.grid.count}")
        if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise DataError("labels must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def to_csv(self, path) -> None:
        lines = ["grid_time_s,label"]
        lines += [f"{t!r},{y!r}" for t, y in zip(self.grid.times.tolist(), self.values.tolist())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Per-sample channel x frequency PSD features.

    ``db`` holds the raw dB values and ``tensor`` the per-column z-scored
    values (every channel is standardised; ``channel_mask`` marks the
    channels that survived rejection).
    """

    tensor: np.ndarray
    freq_bins_hz: np.ndarray
    channel_mask: np.ndarray
    grid: SampleGrid
    db: np.ndarray | None = None

    def __post_init__(self):
        t = _frozen(np.asarray(self.tensor, dtype=np.float64))
        f = _frozen(np.asarray(self.freq_bins_hz, dtype=np.float64))
        m = _frozen(np.asarray(self.channel_mask, dtype=bool))
        if t.ndim != 3 or t.shape[0] != self.grid.count:
            raise DataError(f"feature tensor shape {t.shape} inconsistent with grid")
        if t.shape[1] != m.shape[0] or t.shape[2] != f.shape[0]:
            raise DataError("channel mask / frequency bins inconsistent with tensor")
        if np.any(np.diff(f) <= 0):
            raise DataError("frequency bins must be strictly ascending")
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "freq_bins_hz", f)
        object.__setattr__(self, "channel_mask", m)
        if self.db is not None:
            object.__setattr__(self, "db", _frozen(np.asarray(self.db, dtype=np.float64)))

    @property
    def n_retained(self) -> int:
        return int(self.channel_mask.sum())


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class WelchConfig:
    """Welch estimator settings; ``fs_hz`` is taken from the signal when None."""

    segment_len: int = 2048
    overlap_frac: float = 0.5
    window: str = "hamming"
    nfft: int = 2048
    fs_hz: float | None = None

    def __post_init__(self):
        if self.segment_len < 1:
            raise ConfigError("segment_len must be positive")
        if not 0 <= self.overlap_frac < 1:
            raise ConfigError("overlap_frac must be in [0, 1)")
        if self.nfft < self.segment_len:
            raise ConfigError("nfft must be >= segment_len")

    @property
    def hop(self) -> int:
        return max(1, int(round(self.segment_len * (1 - self.overlap_frac))))


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings for one EEGNet fit (Adam on mean squared error)."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    max_batches_per_epoch: int | None = None
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ConfigError(f"invalid training config {self}")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class PipelineConfig:
    band_lo: float = 1.0
    band_hi: float = 50.0
    filter_order: int = 4
    decimate_factor: int = 2
    psd_band_lo: float = 4.0
    psd_band_hi: float = 12.0
    psd_bins: int | None = 67
    theta_lo: float = 4.0
    theta_hi: float = 8.0
    epoch_s: float = 30.0
    step_s: float = 3.0
    max_duration_s: float | None = None
    smooth_s: float = 90.0
    smooth_mode: str = "causal"
    smooth_order: str = "events"
    tau0: float = 1.0
    reject_db: float = 20.0
    n_bootstrap: int = 10
    n_repeats: int = 10
    ridge_lambda: float = 1.0
    pca_var_frac: float = 0.95
    smlr_matrix: str = "correlation"
    dropout_p: float = 0.25
    eegnet_dtype: str = "float32"
    welch: WelchConfig = field(default_factory=WelchConfig)
    psd_training: TrainConfig = field(default_factory=TrainConfig)
    raw_training: TrainConfig = field(default_factory=TrainConfig)
    seed: int | None = None

    def __post_init__(self):
        for name, kind in _NESTED.items():
            if not isinstance(getattr(self, name), kind):
                raise ConfigError(f"{name} must be a {kind.__name__}; use from_dict for mappings")
        for name in ("epoch_s", "step_s", "smooth_s", "tau0", "band_lo", "band_hi"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.band_lo < self.band_hi:
            raise ConfigError("band_lo must be below band_hi")
        if not (self.band_lo <= self.psd_band_lo < self.psd_band_hi <= self.band_hi):
            raise ConfigError("PSD band must lie inside the analysis band")
        if not (self.psd_band_lo <= self.theta_lo < self.theta_hi <= self.psd_band_hi):
            raise ConfigError("theta band must lie inside the PSD band")
        if self.smooth_mode not in ("causal", "centered"):
            raise ConfigError(f"unknown smooth_mode {self.smooth_mode!r}")
        if self.smooth_order not in ("events", "grid"):
            raise ConfigError(f"unknown smooth_order {self.smooth_order!r}")
        if self.eegnet_dtype not in ("float32", "float64"):
            raise ConfigError(f"unknown eegnet_dtype {self.eegnet_dtype!r}")
        if self.smlr_matrix not in ("correlation", "covariance"):
            raise ConfigError(f"unknown smlr_matrix {self.smlr_matrix!r}")
        if self.decimate_factor < 1 or self.n_bootstrap < 1 or self.n_repeats < 1:
            raise ConfigError("decimate_factor, n_bootstrap and n_repeats must be >= 1")
        if not 0 < self.pca_var_frac <= 1:
            raise ConfigError("pca_var_frac must be in (0, 1]")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelineConfig":
        return _from_dict(cls, d)

    def with_overrides(self, **kw) -> "PipelineConfig":
        merged = _deep_merge(self.to_dict(), kw)
        return PipelineConfig.from_dict(merged)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)


_NESTED = {"welch": WelchConfig, "psd_training": TrainConfig, "raw_training": TrainConfig}


def _from_dict(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        sub = _NESTED.get(k) if cls is PipelineConfig else None
        kw[k] = _from_dict(sub, v) if sub is not None else v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# grid


def default_grid(rec: Recording, cfg: PipelineConfig) -> SampleGrid:
    """One prediction every ``cfg.step_s`` seconds, starting at the first full epoch."""
    duration = rec.duration_s
    if cfg.max_duration_s is not None:
        duration = min(duration, cfg.max_duration_s)
    if duration + 1e-9 < cfg.epoch_s:
        raise DataError(
            f"recording of {duration:g} s is shorter than one {cfg.epoch_s:g} s epoch")
    count = int(math.floor((duration - cfg.epoch_s) / cfg.step_s + 1e-9)) + 1
    return SampleGrid(start_s=float(cfg.epoch_s), step_s=float(cfg.step_s), count=count)


# ---------------------------------------------------------------------------
# persistence


def save_recording(rec: Recording, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subject_id": rec.subject_id,
        "fs_hz": rec.fs_hz,
        "channel_labels": list(rec.channel_labels),
        "earlobe_indices": None if rec.earlobe_indices is None else list(rec.earlobe_indices),
        "n_samples": rec.n_samples,
        "events": [{"onset_s": e.onset_s, "response_time_s": e.response_time_s}
                   for e in rec.events],
    }
    (path / SIGNAL_NAME).write_bytes(rec.data.astype("<f8", copy=False).tobytes(order="C"))
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def load_recording(path) -> Recording:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST_NAME).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"missing manifest in {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt manifest in {path}: {exc}") from exc
    try:
        labels = manifest["channel_labels"]
        n_samples = int(manifest["n_samples"])
        events = tuple(LaneDepartureEvent(float(e["onset_s"]), float(e["response_time_s"]))
                       for e in manifest["events"])
        earlobes = manifest.get("earlobe_indices")
        subject_id = manifest["subject_id"]
        fs = float(manifest["fs_hz"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt manifest in {path}: {exc!r}") from exc
    blob_path = path / SIGNAL_NAME
    try:
        size = os.path.getsize(blob_path)
    except OSError as exc:
        raise DataError(f"missing signal blob in {path}") from exc
    expected = 8 * len(labels) * n_samples
    if size != expected:
        raise DataError(
            f"signal blob is {size} bytes, expected {expected} "
            f"({len(labels)} channels x {n_samples} samples)")
    data = np.fromfile(blob_path, dtype="<f8").astype(np.float64, copy=False)
    data = data.reshape(len(labels), n_samples)
    return Recording(subject_id=subject_id, fs_hz=fs, channel_labels=tuple(labels),
                     earlobe_indices=None if earlobes is None else tuple(earlobes),
                     data=data, events=events)


def save_dataset_index(path, subject_dirs: Sequence[str], **extra) -> None:
    index = {"subjects": list(subject_dirs), **extra}
    Path(path, DATASET_INDEX).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n",
                                         encoding="utf-8")


def read_dataset_index(path) -> dict[str, Any]:
    try:
        index = json.loads(Path(path, DATASET_INDEX).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"{path} has no {DATASET_INDEX}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt {DATASET_INDEX} in {path}: {exc}") from exc
    if not isinstance(index.get("subjects"), list):
        raise DataError(f"{DATASET_INDEX} must list 'subjects'")
    return index


def iter_dataset(path) -> Iterator[Recording]:
    """Load the subjects of a dataset directory in index order."""
    for name in read_dataset_index(path)["subjects"]:
        yield load_recording(Path(path, name))
