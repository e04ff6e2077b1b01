"""Deterministic log-mel spectrogram extraction and mean-spectrogram statistics.

All numerics are double precision. The mel scale is
``m(f) = 2595 * log10(1 + f / 700)``; log energies use a natural log with an
absolute floor so silence has the closed-form value ``ln(log_floor_eps)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FrameParams",
    "LogMelSpec",
    "hz_to_mel",
    "mel_to_hz",
    "frame_count",
    "stft_magnitude",
    "mel_filterbank",
    "log_mel",
    "mean_spectrogram",
]


def hz_to_mel(f: float | np.ndarray) -> float | np.ndarray:
    """Mel value of a frequency in Hz."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: float | np.ndarray) -> float | np.ndarray:
    """Inverse of :func:`hz_to_mel`."""
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FrameParams:
    """Framing and filterbank parameters.

    ``window`` is "hann" (periodic) or "rect". Mel band edges span
    [0, sr/2] with ``n_mels`` triangles equally spaced on the mel scale.
    """

    sr: int = 16000
    n_fft: int = 512
    hop: int = 160
    window: str = "hann"
    n_mels: int = 40
    log_floor_eps: float = 1e-10

    def __post_init__(self) -> None:
        if self.sr < 1:
            raise ValueError("sr must be positive")
        if self.n_fft < 2 or (self.n_fft & (self.n_fft - 1)) != 0:
            raise ValueError(f"n_fft must be a power of two >= 2, got {self.n_fft}")
        if not (0 < self.hop <= self.n_fft):
            raise ValueError(f"hop must satisfy 0 < hop <= n_fft, got {self.hop}")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"window must be 'hann' or 'rect', got {self.window!r}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.log_floor_eps <= 0:
            raise ValueError("log_floor_eps must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def to_dict(self) -> dict:
        return {
            "sr": self.sr,
            "n_fft": self.n_fft,
            "hop": self.hop,
            "window": self.window,
            "n_mels": self.n_mels,
            "log_floor_eps": self.log_floor_eps,
        }


@dataclass(frozen=True)
class LogMelSpec:
    """frames x n_mels matrix of natural-log mel energies."""

    values: np.ndarray
    params: FrameParams = field(default_factory=FrameParams)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def frame_count(n_samples: int, p: FrameParams) -> int:
    """Number of full frames: 1 + floor((len - n_fft) / hop) for len >= n_fft."""
    if n_samples < p.n_fft:
        return 0
    return 1 + (n_samples - p.n_fft) // p.hop


def _window(p: FrameParams) -> np.ndarray:
    if p.window == "rect":
        return np.ones(p.n_fft, dtype=np.float64)
    n = np.arange(p.n_fft, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / p.n_fft)


def stft_magnitude(wave: np.ndarray, p: FrameParams) -> np.ndarray:
    """Windowed DFT magnitudes; frame t covers samples [t*hop, t*hop + n_fft)."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError(f"expected a 1-D sample vector, got shape {wave.shape}")
    n_frames = frame_count(len(wave), p)
    if n_frames < 1:
        raise ValueError(
            f"signal of {len(wave)} samples is shorter than one frame (n_fft={p.n_fft})"
        )
    window = _window(p)
    frames = np.empty((n_frames, p.n_fft), dtype=np.float64)
    for t in range(n_frames):
        start = t * p.hop
        frames[t] = wave[start:start + p.n_fft]
    return np.abs(np.fft.rfft(frames * window, axis=1))


def mel_filterbank(p: FrameParams) -> np.ndarray:
    """n_mels x (n_fft/2 + 1) triangular filters, edges equally spaced in mel."""
    edges_mel = np.linspace(0.0, float(hz_to_mel(p.sr / 2.0)), p.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_hz = np.arange(p.n_bins, dtype=np.float64) * p.sr / p.n_fft
    fb = np.zeros((p.n_mels, p.n_bins), dtype=np.float64)
    for i in range(p.n_mels):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
        if not fb[i].any():
            raise ValueError(
                f"mel filter {i} has empty support: n_mels={p.n_mels} too large "
                f"for n_fft={p.n_fft} at sr={p.sr}"
            )
    return fb


@functools.lru_cache(maxsize=8)
def _cached_filterbank(p: FrameParams) -> np.ndarray:
    fb = mel_filterbank(p)
    fb.setflags(write=False)
    return fb


def log_mel(wave: np.ndarray, p: FrameParams) -> LogMelSpec:
    """ln(max(filterbank @ power_spectrum, log_floor_eps)) per frame."""
    mag = stft_magnitude(wave, p)
    power = mag * mag
    mel = power @ _cached_filterbank(p).T
    values = np.log(np.maximum(mel, p.log_floor_eps))
    return LogMelSpec(values=values, params=p)


def mean_spectrogram(spec: LogMelSpec) -> np.ndarray:
    """Arithmetic mean of the log-mel matrix over the frame axis."""
    if spec.values.shape[0] < 1:
        raise ValueError("mean_spectrogram requires at least one frame")
    return spec.values.mean(axis=0)
