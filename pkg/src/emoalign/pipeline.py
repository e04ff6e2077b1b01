"""Model bundle and forward/backward glue: waveform -> log-mel -> frozen
encoder -> trainable connector -> (pooled embedding, frozen decoder logits).

Only the connector receives optimizer updates; the encoder and decoder carry
init-time checksums that :func:`verify_frozen` re-validates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Manifest, Utterance, audio_file
from .decoder import (
    AssembledSequence,
    DecoderConfig,
    DecoderState,
    Vocab,
    assemble_sequence,
    decode_logits,
    decoder_backward,
    init_decoder,
)
from .encoder import EncoderConfig, EncoderState, encode, init_encoder
from .frontend import FrameParams, log_mel
from .layers import params_checksum
from .qformer import (
    QFormerConfig,
    QFormerState,
    init_qformer,
    pool_queries,
    pool_queries_backward,
    qformer_backward,
    qformer_forward,
)
from .wavio import read_wav_pcm16

__all__ = [
    "Models",
    "build_models",
    "verify_frozen",
    "FeatureCache",
    "utterance_features",
    "UtteranceForward",
    "forward_utterance",
    "backward_utterance",
]


@dataclass
class Models:
    """Everything needed to run the pipeline on one utterance."""

    frame_params: FrameParams
    encoder: EncoderState
    qformer: QFormerState
    decoder: DecoderState
    connector_seed: int
    # Provenance accumulated by training; drives the zero-shot flag in reports.
    train_datasets: tuple[str, ...] = ()
    train_languages: tuple[str, ...] = ()
    last_stage: int = 0

    @property
    def vocab(self) -> Vocab:
        return self.decoder.vocab


def build_models(
    frame_params: FrameParams,
    encoder_cfg: EncoderConfig,
    qformer_cfg: QFormerConfig,
    decoder_cfg: DecoderConfig,
    connector_seed: int,
) -> Models:
    """Deterministically construct the full bundle; validates dimension wiring."""
    if encoder_cfg.n_mels != frame_params.n_mels:
        raise ValueError(
            f"encoder n_mels={encoder_cfg.n_mels} != frontend n_mels={frame_params.n_mels}"
        )
    if qformer_cfg.d_enc != encoder_cfg.d_model:
        raise ValueError(
            f"connector d_enc={qformer_cfg.d_enc} != encoder d_model={encoder_cfg.d_model}"
        )
    if decoder_cfg.d_conn != qformer_cfg.d_model:
        raise ValueError(
            f"decoder d_conn={decoder_cfg.d_conn} != connector d_model={qformer_cfg.d_model}"
        )
    return Models(
        frame_params=frame_params,
        encoder=init_encoder(encoder_cfg),
        qformer=init_qformer(qformer_cfg, connector_seed),
        decoder=init_decoder(decoder_cfg),
        connector_seed=connector_seed,
    )


def verify_frozen(models: Models) -> None:
    """Raise if the encoder or decoder parameters drifted from their init."""
    current = params_checksum(models.encoder)
    if current != models.encoder.checksum:
        raise RuntimeError(
            f"frozen encoder was mutated: checksum {current} != {models.encoder.checksum}"
        )
    current = params_checksum(models.decoder)
    if current != models.decoder.checksum:
        raise RuntimeError(
            f"frozen decoder was mutated: checksum {current} != {models.decoder.checksum}"
        )


def utterance_features(models: Models, wave: np.ndarray) -> np.ndarray:
    """Frontend + frozen encoder: waveform -> (T, d_enc) features."""
    return encode(models.encoder, log_mel(wave, models.frame_params))


class FeatureCache:
    """Per-utterance feature memo; frontend and frozen encoder are both pure,
    so features are computed once per utterance id."""

    def __init__(self) -> None:
        self._store: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._store)

    def get(self, models: Models, utt: Utterance, base_dir: str | Path | None) -> np.ndarray:
        hit = self._store.get(utt.id)
        if hit is not None:
            return hit
        wave, sr = read_wav_pcm16(audio_file(utt, base_dir))
        if sr != models.frame_params.sr:
            raise ValueError(
                f"{utt.id}: sample rate {sr} does not match frontend sr "
                f"{models.frame_params.sr}"
            )
        features = utterance_features(models, wave)
        features.setflags(write=False)
        self._store[utt.id] = features
        return features


def manifest_base_dir(manifest: Manifest) -> Path | None:
    """Directory that relative audio paths resolve against."""
    if not manifest.provenance:
        return None
    p = Path(manifest.provenance)
    return p.parent if p.suffix else p


@dataclass
class UtteranceForward:
    """Retained activations for one utterance, enough for one backward pass."""

    pooled: np.ndarray
    logits: np.ndarray
    connector_out: np.ndarray
    q_cache: tuple
    pool_cache: tuple
    assembled: AssembledSequence
    decode_cache: tuple


def forward_utterance(models: Models, features: np.ndarray) -> UtteranceForward:
    """Connector + pooling + decoder scoring for one utterance."""
    q_out, q_cache = qformer_forward(models.qformer, features)
    pooled, pool_cache = pool_queries(q_out)
    assembled = assemble_sequence(models.decoder, q_out)
    logits, decode_cache = decode_logits(models.decoder, assembled)
    return UtteranceForward(
        pooled=pooled,
        logits=logits,
        connector_out=q_out,
        q_cache=q_cache,
        pool_cache=pool_cache,
        assembled=assembled,
        decode_cache=decode_cache,
    )


def backward_utterance(
    models: Models,
    fwd: UtteranceForward,
    d_pooled: np.ndarray | None = None,
    d_logits: np.ndarray | None = None,
) -> None:
    """Accumulate connector gradients from the pooled-embedding and/or logits
    paths of one utterance's forward pass."""
    d_q_out = np.zeros_like(fwd.connector_out)
    if d_logits is not None:
        d_q_out += decoder_backward(models.decoder, d_logits, fwd.assembled, fwd.decode_cache)
    if d_pooled is not None:
        d_q_out += pool_queries_backward(d_pooled, fwd.pool_cache)
    qformer_backward(models.qformer, d_q_out, fwd.q_cache)
