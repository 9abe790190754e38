"""Log-mel feature extraction and the on-disk feature cache.

The frame grid is the one annotations rasterize onto: a file with n
samples at hop h samples yields T = round(n / h) frames. Frames are
Hann-windowed, zero-padded to the next power of two, and projected on a
mel filter bank before log compression.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

CACHE_MAGIC = b"SSFC"
CACHE_VERSION = 1


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (np.power(10.0, np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


_FILTER_CACHE = {}


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular mel filters, (n_mels, n_fft // 2 + 1), peak height 1."""
    key = (sample_rate, n_fft, n_mels)
    if key in _FILTER_CACHE:
        return _FILTER_CACHE[key]
    edges = mel_to_hz(np.linspace(0.0, float(hz_to_mel(sample_rate / 2.0)), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bins - lo) / (center - lo)
        falling = (hi - bins) / (hi - center)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    if np.any(bank.sum(axis=1) <= 0.0):
        raise DataError("mel filter with no support; fewer mel bins needed")
    _FILTER_CACHE[key] = bank
    return bank


def frame_signal(audio: np.ndarray, win_length: int, hop_length: int) -> np.ndarray:
    """Centered frames: (T, win_length) with T = round(n / hop)."""
    audio = np.asarray(audio, dtype=np.float64)
    n = audio.size
    if n == 0:
        raise DataError("empty audio signal")
    T = int(round(n / hop_length))
    if T < 1:
        raise DataError("audio shorter than one hop")
    pad = win_length // 2
    mode = "reflect" if n > 1 else "edge"
    x = np.pad(audio, pad, mode=mode)
    needed = (T - 1) * hop_length + win_length
    if x.size < needed:
        x = np.pad(x, (0, needed - x.size))
    frames = np.lib.stride_tricks.sliding_window_view(x, win_length)[::hop_length][:T]
    return np.ascontiguousarray(frames)


def stft_power(audio: np.ndarray, sample_rate: int, window_s: float,
               hop_s: float) -> np.ndarray:
    """Power spectrogram (T, n_fft // 2 + 1) on the shared frame grid."""
    win_length = int(round(window_s * sample_rate))
    hop_length = int(round(hop_s * sample_rate))
    if win_length < 2 or hop_length < 1:
        raise DataError("window/hop too small for this sample rate")
    n_fft = 1 << (win_length - 1).bit_length()
    frames = frame_signal(audio, win_length, hop_length) * hann_window(win_length)
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    return np.abs(spectrum) ** 2


def extract(audio: np.ndarray, sample_rate: int, window_s: float = 0.5,
            hop_s: float = 0.25, n_mels: int = 128, log_eps: float = 1e-10) -> np.ndarray:
    """Log-mel features (T, n_mels) in float64."""
    power = stft_power(audio, sample_rate, window_s, hop_s)
    n_fft = 2 * (power.shape[1] - 1)
    bank = mel_filterbank(sample_rate, n_fft, n_mels)
    mel = power @ bank.T
    return np.log(mel + log_eps)


class Normalizer:
    """Per-mel-bin standardization fitted on training data only."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, feature_list: list) -> "Normalizer":
        stacked = np.concatenate([np.asarray(f) for f in feature_list], axis=0)
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), 1e-8)
        return cls(mean, std)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def save_cache(path, features: np.ndarray, hop_s: float, sample_rate: int):
    """Binary cache: magic, version, T, n_mels, hop, rate, then raw float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = np.ascontiguousarray(features, dtype=np.float64)
    T, n_mels = features.shape
    header = CACHE_MAGIC + struct.pack("<IIIdI", CACHE_VERSION, T, n_mels,
                                       float(hop_s), int(sample_rate))
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(features.astype("<f8").tobytes())


def load_cache(path) -> tuple:
    """Read a cache file; returns (features, hop_s, sample_rate)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    head = struct.calcsize("<IIIdI")
    if len(blob) < 4 + head or blob[:4] != CACHE_MAGIC:
        raise DataError(f"{path}: not a feature cache file")
    version, T, n_mels, hop_s, rate = struct.unpack("<IIIdI", blob[4:4 + head])
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    body = blob[4 + head:]
    if len(body) != T * n_mels * 8:
        raise DataError(f"{path}: truncated cache payload")
    features = np.frombuffer(body, dtype="<f8").reshape(T, n_mels).copy()
    return features, hop_s, rate
