"""Signal processing: zero-phase band-pass, decimation, earlobe re-referencing,
epoching and Welch power spectral density."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy import signal as sig

from .core import Recording, SampleGrid, WelchConfig
from .errors import ConfigError, DataError

__all__ = [
    "EpochTensor", "WelchConfig", "bandpass", "decimate", "rereference_earlobes",
    "epoch", "epoch_starts", "epoch_windows", "welch_psd", "band_bins", "settle_length",
]


@functools.lru_cache(maxsize=32)
def _design(order: int, lo: float, hi: float, fs: float) -> np.ndarray:
    return sig.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")


@functools.lru_cache(maxsize=32)
def settle_length(order: int, lo: float, hi: float, fs: float, rtol: float = 1e-9) -> int:
    """Samples until the impulse response stays below ``rtol`` of its peak."""
    sos = _design(order, lo, hi, fs)
    n = int(fs * max(4.0, 40.0 / lo))
    impulse = np.zeros(n)
    impulse[0] = 1.0
    h = np.abs(sig.sosfilt(sos, impulse))
    above = np.flatnonzero(h > rtol * h.max())
    return int(above[-1]) + 1


def bandpass(rec: Recording, lo_hz: float, hi_hz: float, order: int = 4) -> Recording:
    """Zero-phase Butterworth band-pass applied to every channel.

    The filter runs forward and backward (effective order ``4 * order`` for a
    band-pass prototype of ``order``), with reflect-padding of three settle
    lengths at each edge.
    """
    fs = rec.fs_hz
    if not (0 < lo_hz < hi_hz < fs / 2):
        raise ConfigError(f"invalid band {lo_hz}-{hi_hz} Hz for fs={fs} Hz")
    n = rec.n_samples
    if n < 3 * order:
        raise DataError(f"signal of {n} samples is too short for an order-{order} filter")
    sos = _design(order, float(lo_hz), float(hi_hz), float(fs))
    padlen = min(3 * settle_length(order, float(lo_hz), float(hi_hz), float(fs)), n - 1)
    out = sig.sosfiltfilt(sos, rec.data, axis=1, padtype="even", padlen=padlen)
    return rec.replace(data=out)


def decimate(rec: Recording, factor: int) -> Recording:
    """Keep every ``factor``-th sample starting at index 0.

    No anti-aliasing is applied here; callers band-limit first.
    """
    if int(factor) != factor or factor < 1:
        raise ConfigError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return rec
    return rec.replace(data=rec.data[:, ::factor].copy(), fs_hz=rec.fs_hz / factor)


def rereference_earlobes(rec: Recording) -> Recording:
    """Subtract the averaged earlobes from every other channel and drop the earlobes."""
    if rec.earlobe_indices is None:
        raise DataError(f"recording {rec.subject_id} has no earlobe channels")
    a, b = rec.earlobe_indices
    ref = 0.5 * (rec.data[a] + rec.data[b])
    keep = [i for i in range(rec.n_channels) if i not in (a, b)]
    return rec.replace(
        data=rec.data[keep] - ref,
        channel_labels=tuple(rec.channel_labels[i] for i in keep),
        earlobe_indices=None,
    )


@dataclass(frozen=True, eq=False)
class EpochTensor:
    """samples x channels x time epochs (often a read-only strided view)."""

    data: np.ndarray
    grid: SampleGrid
    fs_hz: float

    @property
    def shape(self):
        return self.data.shape


def epoch_starts(n_samples: int, fs: float, grid: SampleGrid, epoch_s: float):
    length = int(round(epoch_s * fs))
    if not math.isclose(length, epoch_s * fs, rel_tol=0, abs_tol=1e-6):
        raise DataError(f"epoch of {epoch_s} s is not a whole number of samples at {fs} Hz")
    ends = np.rint(grid.times * fs).astype(np.int64)
    starts = ends - length
    if starts.min() < 0 or ends.max() > n_samples:
        raise DataError("grid point outside [epoch_s, duration]")
    return starts, length


def epoch(rec: Recording, grid: SampleGrid, epoch_s: float) -> EpochTensor:
    """Cut the ``epoch_s`` seconds of signal ending at each grid time."""
    if grid.start_s + 1e-9 < epoch_s:
        raise DataError(f"grid starts at {grid.start_s} s, before the first full epoch")
    starts, length = epoch_starts(rec.n_samples, rec.fs_hz, grid, epoch_s)
    return EpochTensor(epoch_windows(rec.data, starts, length), grid, rec.fs_hz)


def epoch_windows(data: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """Windows ``data[:, s:s+length]`` for each start, as a zero-copy view when possible."""
    hops = np.diff(starts)
    if len(starts) == 1 or np.all(hops == hops[0]) and hops[0] > 0:
        hop = int(hops[0]) if len(starts) > 1 else 0
        base = data[:, int(starts[0]):]
        s0, s1 = base.strides
        view = as_strided(base, shape=(len(starts), data.shape[0], length),
                          strides=(hop * s1, s0, s1), writeable=False)
        return view
    return np.stack([data[:, s:s + length] for s in starts])


def _window(kind: str, n: int) -> np.ndarray:
    if kind in ("rect", "rectangular", "boxcar", "none"):
        return np.ones(n)
    return sig.get_window(kind, n, fftbins=True)


def welch_psd(x: np.ndarray, cfg: WelchConfig, fs_hz: float | None = None):
    """One-sided Welch PSD along the last axis.

    Returns ``(freqs_hz, psd)`` with ``psd`` in units^2/Hz.  No detrending is
    applied.  Leading axes are treated as independent signals.
    """
    fs = fs_hz if fs_hz is not None else cfg.fs_hz
    if fs is None or fs <= 0:
        raise ConfigError("a positive sampling rate is required")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    seg = cfg.segment_len
    if n < seg:
        raise DataError(f"signal of {n} samples is shorter than one {seg}-sample segment")
    hop = cfg.hop
    n_seg = (n - seg) // hop + 1
    win = _window(cfg.window, seg)
    segs = np.lib.stride_tricks.sliding_window_view(x, seg, axis=-1)[..., ::hop, :][..., :n_seg, :]
    spec = np.fft.rfft(segs * win, n=cfg.nfft, axis=-1)
    pxx = (spec.real ** 2 + spec.imag ** 2).mean(axis=-2)
    pxx /= fs * np.sum(win ** 2)
    if cfg.nfft % 2 == 0:
        pxx[..., 1:-1] *= 2
    else:
        pxx[..., 1:] *= 2
    freqs = np.arange(cfg.nfft // 2 + 1) * (fs / cfg.nfft)
    return freqs, pxx


def band_bins(freqs_hz: np.ndarray, lo_hz: float, hi_hz: float,
              target_count: int | None = None) -> slice:
    """Contiguous bin range for a frequency band.

    Without ``target_count`` the range holds every bin with lo <= f <= hi.
    With it, the range starts at the last bin at or below ``lo_hz`` and
    spans exactly ``target_count`` bins (4-12 Hz at fs=250, nfft=2048
    gives bins 32..98).
    """
    f = np.asarray(freqs_hz)
    if np.any(np.diff(f) <= 0):
        raise DataError("frequencies must be strictly ascending")
    if target_count is None:
        idx = np.flatnonzero((f >= lo_hz) & (f <= hi_hz))
        if idx.size == 0:
            raise DataError(f"no frequency bins in [{lo_hz}, {hi_hz}] Hz")
        return slice(int(idx[0]), int(idx[-1]) + 1)
    if target_count < 1:
        raise DataError("target_count must be positive")
    start = int(np.searchsorted(f, lo_hz, side="right")) - 1
    start = max(start, 0)
    stop = start + target_count
    if stop > f.size:
        raise DataError(f"cannot take {target_count} bins from {lo_hz} Hz")
    return slice(start, stop)
