import numpy as np
import pytest
from scipy.io import wavfile

from envtricascade import audio
from envtricascade.audio import MelFrames, Waveform
from envtricascade.errors import InvalidAudio


def sine(freq, rate, seconds=1.0, amp=0.5):
    t = np.arange(int(rate * seconds)) / rate
    return (amp * np.sin(2 * np.pi * freq * t)).astype(np.float32)


def test_resample_identity_rate():
    x = np.random.default_rng(0).uniform(-1, 1, 16000).astype(np.float32)
    y = audio.resample_to_16k(Waveform(x, 16000))
    assert y.sample_rate == 16000
    np.testing.assert_array_equal(y.samples, x)


@pytest.mark.parametrize("rate,n", [(8000, 8000), (44100, 44100), (22050, 1234), (48000, 7)])
def test_resample_length(rate, n):
    y = audio.resample_to_16k(Waveform(np.zeros(n, np.float32), rate))
    assert len(y) == round(n * 16000 / rate)


def test_resample_preserves_tone():
    y = audio.resample_to_16k(Waveform(sine(440, 8000), 8000))
    spec = np.abs(np.fft.rfft(y.samples))
    freqs = np.fft.rfftfreq(len(y), 1 / 16000)
    assert abs(freqs[np.argmax(spec)] - 440) <= freqs[1]


@pytest.mark.parametrize("bad", [np.zeros(0), np.array([0.0, np.nan]), np.array([np.inf])])
def test_resample_rejects_bad_input(bad):
    with pytest.raises(InvalidAudio):
        audio.resample_to_16k(Waveform(bad, 8000))


def test_to_mono():
    x = np.array([0.1, -0.3, 0.7], np.float32)
    np.testing.assert_array_equal(audio.to_mono(x).samples, x)
    assert audio.to_mono([[1.0], [-1.0]]).samples.tolist() == [0.0]
    assert audio.to_mono([[0.2], [0.6]]).samples[0] == pytest.approx(0.4)
    with pytest.raises(InvalidAudio):
        audio.to_mono(np.zeros((0, 5)))


def test_fix_duration_exact_and_crop():
    x = np.random.default_rng(1).uniform(-1, 1, 200000).astype(np.float32)
    exact = audio.fix_duration_repeat_jitter(Waveform(x[:160000], 16000), 0)
    np.testing.assert_array_equal(exact.samples, x[:160000])
    crop = audio.fix_duration_repeat_jitter(Waveform(x, 16000), 0)
    np.testing.assert_array_equal(crop.samples, x[:160000])


def test_fix_duration_tiles_with_rotations():
    x = np.arange(48000, dtype=np.float32)
    a = audio.fix_duration_repeat_jitter(Waveform(x, 16000), 7)
    b = audio.fix_duration_repeat_jitter(Waveform(x, 16000), 7)
    assert len(a) == 160000
    np.testing.assert_array_equal(a.samples, b.samples)
    # each 48000-sample tile is a circular shift of the input
    for k in range(3):
        tile = a.samples[k * 48000:(k + 1) * 48000]
        off = int(tile[0])
        np.testing.assert_array_equal(tile, np.roll(x, -off))


def test_condition_end_to_end_length():
    w = audio.condition(np.stack([sine(300, 22050, 2.0), sine(300, 22050, 2.0)]), 22050, 3)
    assert w.sample_rate == 16000 and len(w) == 160000
    assert np.isfinite(w.samples).all()


def test_logmel_silence():
    m = audio.logmel(Waveform(np.zeros(160000, np.float32), 16000))
    assert m.frames.shape == (1024, 128)
    np.testing.assert_allclose(m.frames, np.float32(np.log(1e-6)))


def test_logmel_shape_and_finite():
    x = np.random.default_rng(2).uniform(-1, 1, 160000).astype(np.float32)
    m = audio.logmel(Waveform(x, 16000))
    assert m.frames.shape == (audio.N_FRAMES, audio.N_MELS)
    assert np.isfinite(m.frames).all()


def test_logmel_tone_peaks_at_nearest_mel_band():
    m = audio.logmel(Waveform(sine(1000, 16000, 10.0), 16000))
    # oracle: band whose HTK-mel centre frequency is closest to 1 kHz
    mel = lambda f: 2595 * np.log10(1 + f / 700)  # noqa: E731
    hz = lambda m_: 700 * (10 ** (m_ / 2595) - 1)  # noqa: E731
    centres = hz(np.linspace(mel(0), mel(8000), 130))[1:-1]
    assert np.argmax(m.frames.mean(axis=0)) == np.argmin(np.abs(centres - 1000))


def test_logmel_rejects_unconditioned():
    with pytest.raises(InvalidAudio):
        audio.logmel(Waveform(np.zeros(16000, np.float32), 16000))
    with pytest.raises(InvalidAudio):
        audio.logmel(Waveform(np.zeros(160000, np.float32), 8000))


def test_normalize():
    z = audio.normalize(MelFrames(np.full((4, 3), 5.0)))
    assert z.normalized
    np.testing.assert_array_equal(z.frames, 0)
    two = audio.normalize(MelFrames(np.array([[0.0, 2.0]])))
    np.testing.assert_allclose(two.frames, [[-1.0, 1.0]])


def test_normalize_stats_and_idempotence():
    x = np.random.default_rng(3).uniform(-1, 1, 160000).astype(np.float32)
    n1 = audio.normalize(audio.logmel(Waveform(x, 16000)))
    assert abs(n1.frames.mean()) < 1e-3
    assert abs(n1.frames.std() - 1) < 1e-3
    n2 = audio.normalize(n1)
    np.testing.assert_allclose(n2.frames, n1.frames, atol=1e-6)


def test_read_wav_formats(tmp_path):
    pcm = (np.array([[1000, -1000], [32767, 0]], dtype=np.int16))
    wavfile.write(tmp_path / "a.wav", 8000, pcm)
    data, rate = audio.read_wav(tmp_path / "a.wav")
    assert rate == 8000 and data.shape == (2, 2)
    assert data[0, 1] == pytest.approx(32767 / 32768)
    wavfile.write(tmp_path / "b.wav", 16000, np.array([0.25, -0.5], np.float32))
    data, rate = audio.read_wav(tmp_path / "b.wav")
    np.testing.assert_array_equal(data, [[0.25, -0.5]])
    (tmp_path / "c.wav").write_bytes(b"not a wav")
    with pytest.raises(InvalidAudio):
        audio.read_wav(tmp_path / "c.wav")
