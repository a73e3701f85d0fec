"""Response times -> drowsiness indices -> smoothed labels on the sample grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabelVector, PipelineConfig, Recording, SampleGrid
from .errors import ConfigError, DataError

# largest double below 1; the index never reaches 1 for finite response times
_BELOW_ONE = math.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class EventIndexSeries:
    onsets_s: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        on = np.asarray(self.onsets_s, dtype=np.float64)
        ix = np.asarray(self.indices, dtype=np.float64)
        if on.shape != ix.shape or on.ndim != 1:
            raise DataError("onsets and indices must be 1-D and of equal length")
        if np.any(np.diff(on) <= 0):
            raise DataError("onsets must be strictly increasing")
        if np.any(ix < 0) or np.any(ix > 1):
            raise DataError("indices must lie in [0, 1]")
        object.__setattr__(self, "onsets_s", on)
        object.__setattr__(self, "indices", ix)

    def __len__(self):
        return self.onsets_s.size


def drowsiness_index(tau, tau0: float = 1.0):
    """Map response time(s) ``tau`` to a drowsiness index in [0, 1).

    ``y = max(0, (1 - exp(-(tau - tau0))) / (1 + exp(-(tau - tau0))))``.
    Results are rounded toward zero so that very slow responses stay below 1.
    """
    t = np.asarray(tau, dtype=np.float64)
    if np.any(~(t > 0)) or not tau0 > 0:
        raise ConfigError("response times and tau0 must be positive")
    e = np.exp(-(t - tau0))
    y = -np.expm1(-(t - tau0)) / (1.0 + e)
    y = np.minimum(np.maximum(y, 0.0), _BELOW_ONE)
    return float(y) if y.ndim == 0 else y


def event_indices(rec: Recording, tau0: float = 1.0) -> EventIndexSeries:
    if not rec.events:
        raise DataError(f"recording {rec.subject_id} has no events")
    onsets = np.array([e.onset_s for e in rec.events])
    taus = np.array([e.response_time_s for e in rec.events])
    return EventIndexSeries(onsets, drowsiness_index(taus, tau0))


def _window_means(times: np.ndarray, values: np.ndarray, at: np.ndarray,
                  window_s: float, mode: str) -> np.ndarray:
    if mode == "causal":
        lo, hi = at - window_s, at
    elif mode == "centered":
        lo, hi = at - window_s / 2, at + window_s / 2
    else:
        raise ConfigError(f"unknown smoothing mode {mode!r}")
    first = np.searchsorted(times, lo, side="left")
    last = np.searchsorted(times, hi, side="right")
    out = np.empty(at.size)
    for k, (i, j) in enumerate(zip(first, last)):
        w = values[i:j]
        # clipping keeps constant windows exact and the mean inside the window range
        out[k] = min(max(math.fsum(w) / w.size, w.min()), w.max())
    return out


def smooth_indices(events: EventIndexSeries, window_s: float,
                   mode: str = "causal") -> EventIndexSeries:
    """Square moving average over events with onsets in the window ending at each onset."""
    if len(events) == 0:
        raise DataError("cannot smooth an empty event series")
    if not window_s > 0:
        raise ConfigError("window must be positive")
    sm = _window_means(events.onsets_s, events.indices, events.onsets_s, window_s, mode)
    return EventIndexSeries(events.onsets_s, sm)


def labels_on_grid(events: EventIndexSeries, grid: SampleGrid) -> LabelVector:
    """Carry the most recent event's index forward to each grid time.

    Grid times before the first event take the first event's index.
    """
    if len(events) == 0:
        raise DataError("cannot place labels from an empty event series")
    idx = np.searchsorted(events.onsets_s, grid.times, side="right") - 1
    return LabelVector(events.indices[np.maximum(idx, 0)], grid)


def make_labels(rec: Recording, grid: SampleGrid, cfg: PipelineConfig) -> LabelVector:
    """Labels for one recording following ``cfg.smooth_order``.

    ``"events"`` smooths per-event indices and then samples them on the grid;
    ``"grid"`` samples raw indices on the grid and smooths the grid series.
    """
    ev = event_indices(rec, cfg.tau0)
    if cfg.smooth_order == "events":
        return labels_on_grid(smooth_indices(ev, cfg.smooth_s, cfg.smooth_mode), grid)
    raw = labels_on_grid(ev, grid)
    t = grid.times
    return LabelVector(_window_means(t, raw.values, t, cfg.smooth_s, cfg.smooth_mode), grid)
