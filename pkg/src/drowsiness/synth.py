"""Synthetic driving-session EEG with a latent drowsiness process.

A clipped Ornstein-Uhlenbeck latent ``d(t)`` in [0, 1] scales the amplitude
of an alpha (~10 Hz) and a theta (~5 Hz) source, which are mixed into every
scalp channel on top of independent pink noise.  A common reference signal
is added to all channels (earlobes included) so that earlobe
re-referencing removes it.  Lane-departure events arrive at uniform random
gaps; the response time grows with ``d`` at the event onset.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sig

from .core import LaneDepartureEvent, Recording, save_dataset_index, save_recording
from .errors import ConfigError

LATENT_DT_S = 0.1


@dataclass(frozen=True)
class SynthProfile:
    n_channels: int = 32
    earlobe_indices: tuple[int, int] = (30, 31)
    fs_hz: float = 500.0
    duration_s: float = 600.0
    event_gap_s: tuple[float, float] = (5.0, 10.0)
    # latent: mean-reverting rate (1/s), stationary mean and sd, clip range
    latent_rate: float = 1 / 90
    latent_mean: float = 0.4
    latent_sd: float = 0.3
    latent_clip: tuple[float, float] = (0.0, 1.0)
    # oscillators (RMS microvolts at d = 0) and gain per unit latent
    alpha_hz: tuple[float, float] = (8.5, 11.5)
    theta_hz: tuple[float, float] = (4.5, 7.0)
    alpha_uv: float = 3.0
    theta_uv: float = 2.0
    alpha_coupling: float = 1.5
    theta_coupling: float = 1.0
    pink_uv: float = 10.0
    reference_uv: float = 15.0
    earlobe_noise_uv: float = 1.0
    bad_channel_prob: float = 0.2
    bad_channel_uv: float = 80.0
    # response time = tau0_gen + response_gain * d + exp(N(rt_log_mu, rt_log_sigma))
    tau0_gen: float = 0.8
    response_gain: float = 2.5
    rt_log_mu: float = -2.0
    rt_log_sigma: float = 0.5
    rt_floor_s: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("earlobe_indices", "event_gap_s", "latent_clip", "alpha_hz", "theta_hz"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        a, b = self.earlobe_indices
        if self.n_channels < 3 or not (0 <= a < self.n_channels and 0 <= b < self.n_channels
                                       and a != b):
            raise ConfigError("need >= 3 channels and two distinct earlobe indices")
        lo, hi = self.event_gap_s
        if not 0 < lo <= hi:
            raise ConfigError("event gaps must satisfy 0 < lo <= hi")
        for name in ("fs_hz", "duration_s", "latent_rate", "latent_sd", "pink_uv",
                     "rt_log_sigma", "rt_floor_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("alpha_uv", "theta_uv", "alpha_coupling", "theta_coupling",
                     "reference_uv", "earlobe_noise_uv", "bad_channel_uv", "response_gain"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.bad_channel_prob <= 1:
            raise ConfigError("bad_channel_prob must be in [0, 1]")
        if self.alpha_hz[1] >= self.fs_hz / 2 or self.theta_hz[1] >= self.fs_hz / 2:
            raise ConfigError("oscillator bands must lie below Nyquist")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.fs_hz))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthProfile":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown SynthProfile keys: {sorted(unknown)}")
        return cls(**d)

    def null(self) -> "SynthProfile":
        """Same profile with the latent decoupled from both EEG and response times."""
        return dataclasses.replace(self, alpha_coupling=0.0, theta_coupling=0.0,
                                   response_gain=0.0)


def _streams(profile: SynthProfile):
    latent, events, eeg = np.random.SeedSequence([profile.seed, 0x5EC]).spawn(3)
    return (np.random.default_rng(latent), np.random.default_rng(events),
            np.random.default_rng(eeg))


def simulate_latent(profile: SynthProfile, rng: np.random.Generator | None = None):
    """Latent drowsiness sampled every 0.1 s: ``(times_s, d)``.

    Euler steps of an Ornstein-Uhlenbeck process with the state clipped to
    ``latent_clip`` after every step; the start value is drawn from the
    stationary distribution.
    """
    if rng is None:
        rng = _streams(profile)[0]
    n = int(np.ceil(profile.duration_s / LATENT_DT_S)) + 1
    th, mu, sd = profile.latent_rate, profile.latent_mean, profile.latent_sd
    lo, hi = profile.latent_clip
    kick = sd * np.sqrt(2 * th * LATENT_DT_S) * rng.standard_normal(n)
    d = np.empty(n)
    d[0] = min(max(mu + sd * rng.standard_normal(), lo), hi)
    for k in range(1, n):
        d[k] = min(max(d[k - 1] + th * (mu - d[k - 1]) * LATENT_DT_S + kick[k], lo), hi)
    return np.arange(n) * LATENT_DT_S, d


def _pink(rng, n_rows: int, n: int, fs: float) -> np.ndarray:
    """Unit-RMS 1/f noise (flat below 0.5 Hz)."""
    spec = np.fft.rfft(rng.standard_normal((n_rows, n)), axis=1)
    f = np.fft.rfftfreq(n, 1 / fs)
    spec *= 1 / np.sqrt(np.maximum(f, 0.5))
    spec[:, 0] = 0
    x = np.fft.irfft(spec, n=n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def _narrowband(rng, n: int, fs: float, band) -> np.ndarray:
    sos = sig.butter(4, band, btype="bandpass", fs=fs, output="sos")
    x = sig.sosfiltfilt(sos, rng.standard_normal(n))
    return x / x.std()


def _events(profile: SynthProfile, rng, t_lat, d):
    lo, hi = profile.event_gap_s
    onsets = []
    t = rng.uniform(lo, hi)
    while t < profile.duration_s:
        onsets.append(t)
        t += rng.uniform(lo, hi)
    onsets = np.array(onsets)
    d_on = np.interp(onsets, t_lat, d)
    noise = np.exp(profile.rt_log_mu + profile.rt_log_sigma * rng.standard_normal(onsets.size))
    tau = np.maximum(profile.tau0_gen + profile.response_gain * d_on + noise, profile.rt_floor_s)
    return tuple(LaneDepartureEvent(float(o), float(r)) for o, r in zip(onsets, tau))


def generate_subject(profile: SynthProfile, subject_id: str = "synthetic") -> Recording:
    """One synthetic recording (channels x samples, microvolts) with events."""
    r_lat, r_ev, r_eeg = _streams(profile)
    t_lat, d = simulate_latent(profile, r_lat)
    events = _events(profile, r_ev, t_lat, d)

    fs, n, C = profile.fs_hz, profile.n_samples, profile.n_channels
    t = np.arange(n) / fs
    d_t = np.interp(t, t_lat, d)
    alpha = _narrowband(r_eeg, n, fs, profile.alpha_hz)
    alpha *= profile.alpha_uv * (1 + profile.alpha_coupling * d_t)
    theta = _narrowband(r_eeg, n, fs, profile.theta_hz)
    theta *= profile.theta_uv * (1 + profile.theta_coupling * d_t)

    ear = set(profile.earlobe_indices)
    scalp = [c for c in range(C) if c not in ear]
    data = np.empty((C, n))
    data[scalp] = profile.pink_uv * _pink(r_eeg, len(scalp), n, fs)
    w_alpha = r_eeg.uniform(0.5, 1.0, len(scalp))
    w_theta = r_eeg.uniform(0.5, 1.0, len(scalp))
    data[scalp] += w_alpha[:, None] * alpha + w_theta[:, None] * theta
    if r_eeg.random() < profile.bad_channel_prob:
        bad = scalp[int(r_eeg.integers(len(scalp)))]
        data[bad] += profile.bad_channel_uv * _pink(r_eeg, 1, n, fs)[0]
    for e in profile.earlobe_indices:
        data[e] = profile.earlobe_noise_uv * r_eeg.standard_normal(n)
    data += profile.reference_uv * _pink(r_eeg, 1, n, fs)

    labels = [f"C{c + 1:02d}" for c in range(len(scalp))]
    names, it = [], iter(labels)
    for c in range(C):
        names.append(f"A{profile.earlobe_indices.index(c) + 1}" if c in ear else next(it))
    return Recording(subject_id=subject_id, fs_hz=fs, channel_labels=tuple(names),
                     earlobe_indices=tuple(profile.earlobe_indices), data=data, events=events)


def subject_profile(base: SynthProfile, index: int, seed: int) -> SynthProfile:
    """Deterministic per-subject jitter of coupling, noise level and latent mean."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B, index]))
    j = rng.uniform(0.75, 1.25, 4)
    return dataclasses.replace(
        base,
        alpha_coupling=base.alpha_coupling * j[0],
        theta_coupling=base.theta_coupling * j[1],
        pink_uv=base.pink_uv * j[2],
        latent_mean=float(np.clip(base.latent_mean + 0.2 * (j[3] - 1.0), 0.05, 0.95)),
        seed=int(rng.integers(2 ** 63)),
    )


def generate_dataset(n_subjects: int, base_profile: SynthProfile, seed: int, out_dir) -> Path:
    """Write ``n_subjects`` recordings and a ``dataset.json`` index to ``out_dir``."""
    if n_subjects < 2:
        raise ConfigError("a dataset needs at least two subjects")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(n_subjects):
        name = f"S{i + 1:02d}"
        prof = subject_profile(base_profile, i, seed)
        save_recording(generate_subject(prof, subject_id=name), out / name)
        names.append(name)
    save_dataset_index(out, names, profile=base_profile.to_dict(), seed=seed)
    return out
