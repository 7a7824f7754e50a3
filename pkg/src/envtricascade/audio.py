"""Waveform conditioning and log-mel features.

Every utterance is brought to 16 kHz mono, fixed to 10 s (160000 samples)
by cropping or jittered tiling, then turned into a 1024 x 128 log-mel
matrix with a 10 ms hop.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import InvalidAudio

SAMPLE_RATE = 16000
N_SAMPLES = 160000
N_FRAMES = 1024
N_MELS = 128
HOP = 160
WIN = 400
N_FFT = 512
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-6
STD_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise InvalidAudio(f"expected mono samples, got shape {self.samples.shape}")
        if int(self.sample_rate) <= 0:
            raise InvalidAudio(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def conditioned(self):
        return self.sample_rate == SAMPLE_RATE and len(self) == N_SAMPLES


@dataclass
class MelFrames:
    frames: np.ndarray
    normalized: bool = False


def _check_samples(x):
    if x.size == 0:
        raise InvalidAudio("empty audio")
    if not np.isfinite(x).all():
        raise InvalidAudio("non-finite samples")


def read_wav(path):
    """Read a 16-bit PCM or 32-bit float WAV as ``(channels, n)`` float32 and its rate."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise InvalidAudio(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        pass
    else:
        raise InvalidAudio(f"{path}: unsupported sample format {data.dtype}")
    data = np.atleast_2d(data.T) if data.ndim == 2 else data[None, :]
    _check_samples(data)
    return data, int(rate)


def write_wav(path, w: Waveform):
    wavfile.write(path, w.sample_rate, np.asarray(w.samples, dtype=np.float32))


def to_mono(channels, sample_rate=SAMPLE_RATE) -> Waveform:
    """Average ``(channels, n)`` samples (or a list of equal-length channels)."""
    x = np.asarray(channels, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidAudio("need at least one channel")
    _check_samples(x)
    return Waveform(x.mean(axis=0), sample_rate)


def resample_to_16k(w: Waveform) -> Waveform:
    """Polyphase windowed-sinc resampling to 16 kHz.

    Output length is ``round(n * 16000 / rate)``.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    _check_samples(x)
    if w.sample_rate == SAMPLE_RATE:
        return Waveform(x, SAMPLE_RATE)
    g = gcd(SAMPLE_RATE, w.sample_rate)
    up, down = SAMPLE_RATE // g, w.sample_rate // g
    y = resample_poly(x, up, down)
    n_out = int(round(x.size * SAMPLE_RATE / w.sample_rate))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.size))
    return Waveform(y, SAMPLE_RATE)


def fix_duration_repeat_jitter(w: Waveform, seed: int, n_samples: int = N_SAMPLES) -> Waveform:
    """Crop long inputs from offset 0; tile short ones from seeded circular offsets.

    Each repetition of a short input is the input rotated by an offset drawn
    uniformly from ``[0, len)``.
    """
    x = np.asarray(w.samples, dtype=np.float32)
    _check_samples(x)
    n = x.size
    if n >= n_samples:
        return Waveform(x[:n_samples].copy(), w.sample_rate)
    rng = np.random.default_rng(seed)
    reps = -(-n_samples // n)
    offsets = rng.integers(0, n, size=reps)
    out = np.concatenate([np.roll(x, -int(k)) for k in offsets])[:n_samples]
    return Waveform(out, w.sample_rate)


def condition(channels, sample_rate, seed) -> Waveform:
    """mono -> 16 kHz -> fixed 10 s."""
    mono = to_mono(channels, sample_rate)
    return fix_duration_repeat_jitter(resample_to_16k(mono), seed)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sr=SAMPLE_RATE, fmin=FMIN, fmax=FMAX):
    """(n_mels, n_fft//2+1) triangular HTK-mel filters with unit peak."""
    fft_freqs = np.linspace(0.0, sr / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, centre, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_freqs[None, :] - lo) / (centre - lo)
    down = (hi - fft_freqs[None, :]) / (hi - centre)
    return np.maximum(0.0, np.minimum(up, down))


def mel_centres(n_mels=N_MELS, fmin=FMIN, fmax=FMAX):
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


_FB = None


def logmel(w: Waveform) -> MelFrames:
    """1024 x 128 frames of ``ln(mel_power + 1e-6)``.

    The waveform is reflect-padded so the 10 ms-hop STFT yields at least
    1024 frames, then truncated to exactly 1024.
    """
    global _FB
    if not w.conditioned:
        raise InvalidAudio(
            f"logmel needs {N_SAMPLES} samples at {SAMPLE_RATE} Hz, got "
            f"{len(w)} at {w.sample_rate}")
    x = np.asarray(w.samples, dtype=np.float64)
    _check_samples(x)
    need = N_FFT + (N_FRAMES - 1) * HOP
    pad = max(0, need - x.size)
    left = pad // 2
    x = np.pad(x, (left, pad - left), mode="reflect")
    idx = np.arange(N_FRAMES)[:, None] * HOP + np.arange(N_FFT)[None, :]
    window = np.zeros(N_FFT)
    off = (N_FFT - WIN) // 2
    window[off:off + WIN] = np.hanning(WIN + 1)[:-1]
    spec = np.abs(np.fft.rfft(x[idx] * window, axis=1)) ** 2
    if _FB is None:
        _FB = mel_filterbank()
    mel = spec @ _FB.T
    return MelFrames(np.log(mel + LOG_FLOOR).astype(np.float32))


def normalize(m: MelFrames) -> MelFrames:
    """Per-utterance zero mean / unit std over all entries (std floored at 1e-8)."""
    f = np.asarray(m.frames, dtype=np.float64)
    if not np.isfinite(f).all():
        raise InvalidAudio("non-finite mel frames")
    mu = f.mean()
    sd = max(f.std(), STD_FLOOR)
    return MelFrames(((f - mu) / sd).astype(np.float32), normalized=True)
