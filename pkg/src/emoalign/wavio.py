"""Minimal 16-bit PCM mono WAV I/O on top of the stdlib ``wave`` module."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

__all__ = ["write_wav_pcm16", "read_wav_pcm16", "decimate"]

_PCM16_SCALE = 32767.0


def write_wav_pcm16(path: str | Path, samples: np.ndarray, sample_rate: int) -> int:
    """Write mono float samples in [-1, 1] as 16-bit PCM; returns file size in bytes.

    Values outside [-1, 1] are clipped. Rounding is to-nearest so the write
    is a pure function of the input samples.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"expected a 1-D sample vector, got shape {samples.shape}")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    pcm = np.clip(np.rint(samples * _PCM16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())
    return path.stat().st_size


def read_wav_pcm16(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV into float64 samples in [-1, 1]."""
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        sample_rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / _PCM16_SCALE, sample_rate


def decimate(samples: np.ndarray, factor: int) -> np.ndarray:
    """Integer-factor downsampling by block averaging; trailing remainder dropped."""
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    samples = np.asarray(samples, dtype=np.float64)
    if factor == 1:
        return samples.copy()
    n = (len(samples) // factor) * factor
    return samples[:n].reshape(-1, factor).mean(axis=1)
