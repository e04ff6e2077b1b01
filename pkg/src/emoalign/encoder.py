"""Frozen audio encoder stand-in: a small deterministic transformer encoder
mapping log-mel frames to frame-level features.

Parameters are drawn once from a seed and never updated; the checksum taken
at init is the frozen contract other components verify against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .frontend import LogMelSpec
from .layers import (
    LayerNorm,
    Linear,
    Module,
    TransformerBlock,
    params_checksum,
    sinusoidal_positions,
)

__all__ = ["EncoderConfig", "EncoderState", "init_encoder", "encode"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    n_mels: int = 40
    max_frames: int = 512
    positional_encoding: bool = True
    init_seed: int = 101

    def __post_init__(self) -> None:
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("d_model, n_layers, n_heads must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.d_ff < 1 or self.n_mels < 1 or self.max_frames < 1:
            raise ValueError("d_ff, n_mels, max_frames must be positive")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "n_mels": self.n_mels,
            "max_frames": self.max_frames,
            "positional_encoding": self.positional_encoding,
            "init_seed": self.init_seed,
        }


class EncoderState(Module):
    """Frozen encoder parameters plus the checksum taken at init."""

    _children = ("input_proj", "final_ln")

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.input_proj = Linear(cfg.n_mels, cfg.d_model, rng)
        self.blocks = [
            TransformerBlock(cfg.d_model, cfg.n_heads, cfg.d_ff, rng)
            for _ in range(cfg.n_layers)
        ]
        self.final_ln = LayerNorm(cfg.d_model)
        self.positions = sinusoidal_positions(cfg.max_frames, cfg.d_model)
        self.frozen = True
        self.checksum = params_checksum(self)

    def named_parameters(self, prefix: str = ""):
        yield from self.input_proj.named_parameters(f"{prefix}input_proj.")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}blocks.{i}.")
        yield from self.final_ln.named_parameters(f"{prefix}final_ln.")

    def named_gradients(self, prefix: str = ""):
        yield from self.input_proj.named_gradients(f"{prefix}input_proj.")
        for i, block in enumerate(self.blocks):
            yield from block.named_gradients(f"{prefix}blocks.{i}.")
        yield from self.final_ln.named_gradients(f"{prefix}final_ln.")

    def zero_gradients(self) -> None:
        self.input_proj.zero_gradients()
        for block in self.blocks:
            block.zero_gradients()
        self.final_ln.zero_gradients()


def init_encoder(cfg: EncoderConfig) -> EncoderState:
    """Deterministic seeded init; the state is frozen from this point on."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.init_seed)))
    return EncoderState(cfg, rng)


def encode(state: EncoderState, spec: LogMelSpec) -> np.ndarray:
    """Map a log-mel spectrogram to a (T, d_model) feature matrix.

    Inputs longer than ``max_frames`` are truncated (with a logged warning);
    T equals the possibly truncated frame count.
    """
    cfg = state.cfg
    values = spec.values
    if values.ndim != 2 or values.shape[1] != cfg.n_mels:
        raise ValueError(
            f"expected a (frames, {cfg.n_mels}) spectrogram, got shape {values.shape}"
        )
    if values.shape[0] < 1:
        raise ValueError("cannot encode a zero-frame spectrogram")
    if values.shape[0] > cfg.max_frames:
        log.warning(
            "truncating %d frames to max_frames=%d", values.shape[0], cfg.max_frames
        )
        values = values[: cfg.max_frames]
    x, _ = state.input_proj.forward(values)
    if cfg.positional_encoding:
        x = x + state.positions[: x.shape[0]]
    for block in state.blocks:
        x, _ = block.forward(x)
    x, _ = state.final_ln.forward(x)
    return x
