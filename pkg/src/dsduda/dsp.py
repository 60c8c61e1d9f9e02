"""Waveform to log-mel features: radix-2 FFT, STFT, HTK mel filterbank, z-score.

Also reads 16-bit PCM WAV files and reads/writes the ``MELF`` feature cache.
"""

import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .autodiff import ContractError

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
N_BINS = N_FFT // 2 + 1
N_MELS = 80
F_MAX = 8000.0
LOG_FLOOR = 1e-10
MELF_MAGIC = b"MELF"


class FormatError(ValueError):
    """A file is not in the expected encoding."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate != SAMPLE_RATE:
            raise ContractError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.samples.size < WIN_LENGTH:
            raise ContractError(
                f"waveform has {self.samples.size} samples; at least {WIN_LENGTH} are required"
            )


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


@lru_cache(maxsize=16)
def _twiddles(n):
    k = np.arange(max(n // 2, 1))
    ang = -2.0 * np.pi * k / n
    tw_re, tw_im = np.cos(ang), np.sin(ang)
    tw_re.setflags(write=False)
    tw_im.setflags(write=False)
    return tw_re, tw_im


def fft_rows(x, n):
    """Radix-2 FFT of every row of ``x`` (real or complex), zero-padded to ``n``."""
    if not _is_pow2(n):
        raise ContractError(f"FFT size must be a power of two, got {n}")
    x = np.atleast_2d(x)
    if x.shape[1] > n:
        raise ContractError(f"signal length {x.shape[1]} exceeds FFT size {n}")
    re = np.zeros((x.shape[0], n))
    im = np.zeros((x.shape[0], n))
    re[:, : x.shape[1]] = x.real
    im[:, : x.shape[1]] = x.imag if np.iscomplexobj(x) else 0.0
    tw_re, tw_im = _twiddles(n)
    kernels.fft_inplace(re, im, tw_re, tw_im)
    return re + 1j * im


def fft(signal, n=None):
    signal = np.asarray(signal)
    n = signal.size if n is None else n
    return fft_rows(signal.reshape(1, -1), n)[0]


def ifft(spectrum):
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    n = spectrum.size
    return np.conj(fft(np.conj(spectrum), n)) / n


def dft_naive(signal):
    """O(n^2) DFT, kept as an independent reference."""
    x = np.asarray(signal, dtype=np.complex128)
    n = x.size
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def hann_periodic(n=WIN_LENGTH):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples):
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def stft(w):
    """One-sided STFT [T, 257]: 400-sample periodic Hann, hop 160, 512-point FFT, no centring."""
    if not isinstance(w, Waveform):
        w = Waveform(w)
    x = w.samples
    T = n_frames(x.size)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(T)[:, None]
    frames = x[idx] * hann_periodic()
    return fft_rows(frames, N_FFT)[:, :N_BINS]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges_hz(n_mels=N_MELS, f_max=F_MAX):
    """The n_mels + 2 triangle edge/centre frequencies, evenly spaced on the mel axis."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(f_max), n_mels + 2))


@lru_cache(maxsize=4)
def _filterbank(n_mels, f_max):
    edges = mel_edges_hz(n_mels, f_max)
    freqs = np.arange(N_BINS) * SAMPLE_RATE / N_FFT
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels=N_MELS, f_max=F_MAX):
    """[n_mels, 257] unit-peak triangular HTK-mel filters over 0..f_max Hz."""
    return _filterbank(n_mels, float(f_max)).copy()


def mel_spectrogram(w):
    """Log mel power spectrogram [T, 80]."""
    spec = stft(w)
    power = spec.real ** 2 + spec.imag ** 2
    return np.log(power @ _filterbank(N_MELS, F_MAX).T + LOG_FLOOR)


def zscore_normalize(m):
    """Subtract the utterance mean and divide by its std (scalars over all cells)."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ContractError("cannot normalise an empty spectrogram")
    std = m.std()
    if std < 1e-8:
        return np.zeros_like(m)
    return (m - m.mean()) / std


def features(w):
    """The full frontend: log-mel spectrogram followed by utterance z-scoring."""
    return zscore_normalize(mel_spectrogram(w))


# file formats --------------------------------------------------------------

def read_wav(path):
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            comp = fh.getcomptype()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    if comp != "NONE" or width != 2 or channels != 1 or rate != SAMPLE_RATE:
        raise FormatError(
            f"{path}: need mono 16-bit PCM at {SAMPLE_RATE} Hz, got {channels} channel(s), "
            f"{8 * width}-bit, {rate} Hz, compression {comp}"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples)


def write_wav(path, w):
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


def write_melf(path, m):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[1] != N_MELS:
        raise ContractError(f"MELF stores [T, {N_MELS}] matrices, got shape {list(m.shape)}")
    payload = MELF_MAGIC + struct.pack("<II", m.shape[0], N_MELS) + m.astype("<f4").tobytes()
    Path(path).write_bytes(payload)


def read_melf(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MELF_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MELF_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated MELF header")
    T, bands = struct.unpack("<II", raw[4:12])
    if bands != N_MELS:
        raise FormatError(f"{path}: MELF band count {bands}, expected {N_MELS}")
    body = raw[12:]
    if len(body) != 4 * T * bands:
        raise FormatError(f"{path}: MELF payload is {len(body)} bytes, header implies {4 * T * bands}")
    return np.frombuffer(body, dtype="<f4").reshape(T, bands).astype(np.float64)
