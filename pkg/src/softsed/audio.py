"""Mono 16-bit WAV reading and writing via the standard library."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import DataError

_SCALE = 32768.0


def read_wav(path) -> tuple:
    """Load a mono 16-bit PCM file as float64 in [-1, 1). Returns (audio, rate)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit samples")
            if fh.getnchannels() != 1:
                raise DataError(f"{path}: expected mono audio")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (OSError, wave.Error) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    audio = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _SCALE
    return audio, rate


def write_wav(path, audio: np.ndarray, rate: int):
    """Store float audio as mono 16-bit PCM, clipping to [-1, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(np.asarray(audio, dtype=np.float64), -1.0, 1.0 - 1.0 / _SCALE)
    pcm = np.round(clipped * _SCALE).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
