"""Seeded waveform degradations in the RawBoost family.

Three modes, chosen uniformly per call unless ``mode`` pins one:

* ``convolutive`` - random multi-notch FIR followed by a short random
  coloring FIR, gain-matched to the input RMS;
* ``impulsive``   - signal-dependent impulses on a sparse random mask;
* ``stationary``  - colored Gaussian noise at a drawn SNR.

``series-all`` applies all three in that order. Every random draw comes
from one generator seeded by the caller, so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio import Waveform
from .errors import InvalidConfig

MODES = ("convolutive", "impulsive", "stationary")


@dataclass(frozen=True)
class AugmentConfig:
    activation_prob: float = 0.5
    mode: str = "random"
    filter_order: int = 7
    notch_count: tuple = (1, 5)
    snr_range_db: tuple = (10.0, 40.0)
    impulse_rate: tuple = (0.0, 0.01)
    impulse_gain: tuple = (1.0, 3.0)

    def validate(self):
        if not 0.0 <= self.activation_prob <= 1.0:
            raise InvalidConfig("activation_prob must lie in [0, 1]")
        if self.mode not in MODES + ("series-all", "random"):
            raise InvalidConfig(f"unknown augmentation mode {self.mode!r}")
        if self.filter_order < 0:
            raise InvalidConfig("filter_order must be >= 0")
        lo, hi = self.notch_count
        if not 0 <= lo <= hi:
            raise InvalidConfig("notch_count must be an ordered non-negative range")
        lo, hi = self.snr_range_db
        if lo > hi:
            raise InvalidConfig("snr_range_db min exceeds max")
        lo, hi = self.impulse_rate
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvalidConfig("impulse_rate must be an ordered range inside [0, 1]")
        lo, hi = self.impulse_gain
        if not 0.0 <= lo <= hi:
            raise InvalidConfig("impulse_gain must be an ordered non-negative range")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        for k in ("notch_count", "snr_range_db", "impulse_rate", "impulse_gain"):
            if k in d:
                d[k] = tuple(d[k])
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def convolutive(x, cfg, rng):
    n_notch = int(rng.integers(cfg.notch_count[0], cfg.notch_count[1] + 1))
    h = np.array([1.0])
    for _ in range(n_notch):
        omega = rng.uniform(0.05, 0.95) * np.pi
        r = rng.uniform(0.9, 1.0)
        h = np.convolve(h, [1.0, -2.0 * r * np.cos(omega), r * r])
    colour = np.concatenate([[1.0], rng.uniform(-0.3, 0.3, cfg.filter_order)
                             * 0.5 ** np.arange(1, cfg.filter_order + 1)])
    h = np.convolve(h, colour)
    y = lfilter(h, [1.0], x)
    ry = _rms(y)
    return y * (_rms(x) / ry) if ry > 0 else x.copy()


def impulsive(x, cfg, rng):
    rate = rng.uniform(*cfg.impulse_rate)
    gain = rng.uniform(*cfg.impulse_gain)
    mask = rng.random(x.size) < rate
    noise = rng.standard_normal(x.size)
    return x + gain * noise * mask * x


def stationary(x, cfg, rng, snr_db=None):
    snr = rng.uniform(*cfg.snr_range_db) if snr_db is None else snr_db
    noise = lfilter(np.concatenate([[1.0], rng.uniform(-0.5, 0.5, 4)]), [1.0],
                    rng.standard_normal(x.size))
    p_sig = np.mean(x * x)
    p_noise = np.mean(noise * noise)
    if p_sig == 0 or p_noise == 0:
        return x.copy()
    noise *= np.sqrt(p_sig / (p_noise * 10.0 ** (snr / 10.0)))
    return x + noise


_APPLY = {"convolutive": convolutive, "impulsive": impulsive, "stationary": stationary}


def augment(w: Waveform, cfg: AugmentConfig, seed: int) -> Waveform:
    """Apply one seeded degradation with probability ``cfg.activation_prob``.

    Length is preserved and the result is scaled down if its peak exceeds 1.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    if cfg.activation_prob == 0.0 or not rng.random() < cfg.activation_prob:
        return Waveform(w.samples.copy(), w.sample_rate)
    x = np.asarray(w.samples, dtype=np.float64)
    if cfg.mode == "series-all":
        for m in MODES:
            x = _APPLY[m](x, cfg, rng)
    else:
        mode = MODES[int(rng.integers(len(MODES)))] if cfg.mode == "random" else cfg.mode
        x = _APPLY[mode](x, cfg, rng)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return Waveform(x.astype(np.float32), w.sample_rate)


def synchronized_pair(w: Waveform, cfg: AugmentConfig, seed: int):
    """One augmentation draw shared by the waveform branch and the mel branch."""
    y = augment(w, cfg, seed)
    return y, Waveform(y.samples.copy(), y.sample_rate)
