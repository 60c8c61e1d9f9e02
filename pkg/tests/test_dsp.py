import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsduda import dsp
from dsduda.autodiff import ContractError


@pytest.mark.parametrize("n", [4, 64, 512])
def test_fft_matches_naive_dft(n, rng):
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    assert np.abs(dsp.fft(x) - dsp.dft_naive(x)).max() < 1e-9


def test_naive_dft_is_an_independent_reference(rng):
    # the reference agrees with numpy too, so the oracle itself is sound
    x = rng.normal(size=64)
    assert np.abs(dsp.dft_naive(x) - np.fft.fft(x)).max() < 1e-9


def test_fft_zero_pads_and_rejects_bad_sizes(rng):
    x = rng.normal(size=5)
    assert np.abs(dsp.fft(x, 8) - dsp.dft_naive(np.r_[x, np.zeros(3)])).max() < 1e-12
    with pytest.raises(ContractError):
        dsp.fft(rng.normal(size=6))
    with pytest.raises(ContractError):
        dsp.fft(rng.normal(size=9), 8)


def test_ifft_inverts_fft(rng):
    x = rng.normal(size=128) + 1j * rng.normal(size=128)
    assert np.abs(dsp.ifft(dsp.fft(x)) - x).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31))
def test_parseval(log_n, seed):
    x = np.random.default_rng(seed).normal(size=2 ** log_n)
    X = dsp.fft(x)
    assert np.sum(np.abs(X) ** 2) / x.size == pytest.approx(np.sum(x ** 2), rel=1e-10)


@pytest.mark.parametrize("n_samples", [400, 401, 559, 560, 16000, 12345])
def test_stft_frame_count(n_samples, rng):
    spec = dsp.stft(dsp.Waveform(rng.normal(size=n_samples)))
    assert spec.shape == (1 + (n_samples - 400) // 160, 257)


def test_stft_frame_is_windowed_fft(rng):
    x = rng.normal(size=1000)
    spec = dsp.stft(dsp.Waveform(x))
    frame = x[160:560] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400))
    ref = np.fft.rfft(frame, 512)
    assert np.abs(spec[1] - ref).max() < 1e-9


def test_short_waveform_rejected():
    with pytest.raises(ContractError):
        dsp.Waveform(np.zeros(399))


def test_mel_filterbank_shape_and_peaks():
    fb = dsp.mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0.0)
    assert np.all(fb.max(axis=1) <= 1.0)
    centres = dsp.mel_edges_hz()[1:-1]
    # each filter peaks at the FFT bin nearest its centre frequency
    bins = np.arange(257) * 16000 / 512
    for m in (5, 40, 79):
        assert abs(bins[np.argmax(fb[m])] - centres[m]) <= 16000 / 512


def test_mel_scale_round_trip():
    f = np.array([0.0, 100.0, 1000.0, 8000.0])
    assert np.allclose(dsp.mel_to_hz(dsp.hz_to_mel(f)), f)
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))


def test_log_mel_of_pure_tone_peaks_near_tone(rng):
    t = np.arange(16000) / 16000
    m = dsp.mel_spectrogram(dsp.Waveform(np.sin(2 * np.pi * 1000.0 * t)))
    centres = dsp.mel_edges_hz()[1:-1]
    peak = int(np.argmax(m.mean(axis=0)))
    assert abs(centres[peak] - 1000.0) < 60.0


def test_zscore_moments(rng):
    z = dsp.zscore_normalize(rng.normal(3.0, 5.0, size=(50, 80)))
    assert abs(z.mean()) < 1e-10
    assert abs(z.std() - 1.0) < 1e-10


def test_zscore_constant_guard():
    z = dsp.zscore_normalize(np.full((10, 80), -4.2))
    assert np.array_equal(z, np.zeros((10, 80)))


def test_features_shape(rng):
    f = dsp.features(dsp.Waveform(0.1 * rng.normal(size=8000)))
    assert f.shape == (dsp.n_frames(8000), 80)


def test_melf_round_trip(tmp_path, rng):
    m = rng.normal(size=(17, 80))
    path = tmp_path / "a.melf"
    dsp.write_melf(path, m)
    back = dsp.read_melf(path)
    assert back.shape == (17, 80)
    assert np.abs(back - m.astype(np.float32)).max() == 0.0


def test_melf_corrupt_magic_names_file(tmp_path, rng):
    path = tmp_path / "bad.melf"
    dsp.write_melf(path, rng.normal(size=(3, 80)))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(dsp.FormatError, match="bad.melf"):
        dsp.read_melf(path)


def test_melf_truncated_payload(tmp_path, rng):
    path = tmp_path / "short.melf"
    dsp.write_melf(path, rng.normal(size=(3, 80)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(dsp.FormatError, match="payload"):
        dsp.read_melf(path)


def test_wav_round_trip(tmp_path, rng):
    x = np.clip(0.3 * rng.normal(size=4000), -0.99, 0.99)
    path = tmp_path / "a.wav"
    dsp.write_wav(path, dsp.Waveform(x))
    back = dsp.read_wav(path).samples
    assert np.abs(back - x).max() <= 1.0 / 32768 + 1e-12


def test_wav_rejects_wrong_rate(tmp_path):
    import wave

    path = tmp_path / "r.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(8000)
        fh.writeframes(b"\x00\x00" * 800)
    with pytest.raises(dsp.FormatError, match="16000"):
        dsp.read_wav(path)
