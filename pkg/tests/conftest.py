"""Shared fixtures: a micro corpus for module tests, tiny model bundles, and
helpers for building manifests by hand."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
import pytest

from emoalign.corpus import EMOTIONS, Manifest, Utterance
from emoalign.decoder import DecoderConfig
from emoalign.encoder import EncoderConfig
from emoalign.frontend import FrameParams
from emoalign.pipeline import FeatureCache, Models, build_models
from emoalign.qformer import QFormerConfig
from emoalign.synth import SynthesisProfile, synth_generate

MICRO_LANGUAGES = ("en", "fr", "de")
MICRO_PER_CELL = 4


def numeric_grad(loss: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar loss w.r.t. ``x`` (in place)."""
    grad = np.zeros_like(x)
    flat_x, flat_g = x.ravel(), grad.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        hi = loss()
        flat_x[i] = orig - eps
        lo = loss()
        flat_x[i] = orig
        flat_g[i] = (hi - lo) / (2.0 * eps)
    return grad


def make_utt(
    utt_id: str = "u0",
    duration_s: float = 1.0,
    size_bytes: int = 64000,
    language: str = "en",
    emotion: str = "happy",
    dataset: str = "synthetic",
    split: str = "train",
    synthetic: bool = True,
    audio_path: str | None = None,
    sample_rate: int = 16000,
) -> Utterance:
    return Utterance(
        id=utt_id,
        audio_path=audio_path if audio_path is not None else f"wav/{utt_id}.wav",
        sample_rate=sample_rate,
        duration_s=duration_s,
        size_bytes=size_bytes,
        language=language,
        emotion=emotion,
        dataset=dataset,
        split=split,
        synthetic=synthetic,
    )


def tiny_model_configs() -> tuple[FrameParams, EncoderConfig, QFormerConfig, DecoderConfig]:
    """Small but fully wired stack; the same shape the gradcheck command uses."""
    return (
        FrameParams(n_mels=16),
        EncoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, n_mels=16),
        QFormerConfig(n_queries=4, d_model=16, n_layers=1, n_heads=2, d_ff=32, d_enc=16),
        DecoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, d_conn=16),
    )


def tiny_models(seed: int = 0) -> Models:
    fp, enc, qf, dec = tiny_model_configs()
    return build_models(fp, enc, qf, dec, connector_seed=seed)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory) -> tuple[Manifest, str]:
    """3 languages x 7 emotions x 4 clips on the default synthesis profile."""
    root = tmp_path_factory.mktemp("micro_corpus")
    manifest = synth_generate(
        SynthesisProfile(seed=0), MICRO_LANGUAGES, EMOTIONS, MICRO_PER_CELL,
        root, threads=4,
    )
    return manifest, str(root)


@pytest.fixture(scope="session")
def micro_features(micro_corpus) -> FeatureCache:
    """Feature cache for the micro corpus under the tiny frozen stack."""
    manifest, base_dir = micro_corpus
    cache = FeatureCache()
    models = tiny_models(0)
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda u: cache.get(models, u, base_dir), manifest))
    return cache
