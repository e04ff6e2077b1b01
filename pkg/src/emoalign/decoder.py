"""Frozen decoder head: assembles the [bos, audio, prompt, [emo]] sequence,
runs a causal transformer with cross-attention to the connector output, and
scores the vocabulary at the final ([emo]) position.

The decoder's own parameters are frozen (seeded random, checksummed at init);
gradients flow through it only to the connector output. Prediction is a
constrained argmax over the emotion-word token ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EMOTIONS, EmotionLabel
from .layers import (
    LayerNorm,
    Linear,
    Module,
    TransformerBlock,
    params_checksum,
    sinusoidal_positions,
)

__all__ = [
    "Vocab",
    "build_vocab",
    "DecoderConfig",
    "DecoderState",
    "init_decoder",
    "AssembledSequence",
    "assemble_sequence",
    "decode_logits",
    "decoder_backward",
    "predict_emotion",
    "DEFAULT_PROMPT",
    "FILLER_WORDS",
]

DEFAULT_PROMPT = "describe the emotion of the speech"

# Padding vocabulary so the constrained argmax has non-emotion competitors;
# any filler already present as a prompt word is skipped.
FILLER_WORDS: tuple[str, ...] = (
    "a", "an", "it", "sounds", "rather", "quite", "calm", "tense", "bright", "flat",
)

_RESERVED = ("[bos]", "[emo]")


@dataclass(frozen=True)
class Vocab:
    """Deterministic token/id mapping: [bos], [emo], prompt words, the seven
    emotion words, then fillers. ``prompt_ids`` has one id per prompt word
    position (repeated words share an id)."""

    tokens: tuple[str, ...]
    bos_id: int
    emo_id: int
    prompt_ids: tuple[int, ...]
    emotion_ids: tuple[int, ...]

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise KeyError(f"token not in vocabulary: {token!r}") from None

    def __len__(self) -> int:
        return len(self.tokens)


def build_vocab(prompt_text: str) -> Vocab:
    """Whitespace-tokenize the prompt and lay out the vocabulary."""
    words = prompt_text.split()
    if not words:
        raise ValueError("prompt must contain at least one word")
    emotion_words = tuple(e.text for e in EMOTIONS)
    reserved = set(_RESERVED) | set(emotion_words)
    tokens: list[str] = list(_RESERVED)
    for w in words:
        if w in reserved:
            raise ValueError(f"prompt word {w!r} collides with a reserved token")
        if w not in tokens:
            tokens.append(w)
    tokens.extend(emotion_words)
    for w in FILLER_WORDS:
        if w not in tokens:
            tokens.append(w)
    token_index = {t: i for i, t in enumerate(tokens)}
    return Vocab(
        tokens=tuple(tokens),
        bos_id=token_index["[bos]"],
        emo_id=token_index["[emo]"],
        prompt_ids=tuple(token_index[w] for w in words),
        emotion_ids=tuple(token_index[w] for w in emotion_words),
    )


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    d_conn: int = 64
    max_len: int = 64
    prompt: str = DEFAULT_PROMPT
    init_seed: int = 202

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if min(self.d_model, self.n_layers, self.n_heads, self.d_ff, self.d_conn) < 1:
            raise ValueError("decoder dimensions must be positive")
        if self.max_len < 4:
            raise ValueError("max_len must be >= 4 (bos + audio + prompt + emo)")
        if not self.prompt.split():
            raise ValueError("prompt must contain at least one word")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "d_conn": self.d_conn,
            "max_len": self.max_len,
            "prompt": self.prompt,
            "init_seed": self.init_seed,
        }


class DecoderState(Module):
    """Frozen decoder parameters plus the checksum taken at init."""

    _params = ("embed",)
    _children = ("adapter", "final_ln", "out_proj")

    def __init__(self, cfg: DecoderConfig, vocab: Vocab, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.vocab = vocab
        limit = (3.0 / cfg.d_model) ** 0.5
        self.embed = rng.uniform(-limit, limit, size=(len(vocab), cfg.d_model))
        self.g_embed = np.zeros_like(self.embed)
        self.adapter = Linear(cfg.d_conn, cfg.d_model, rng)
        self.blocks = [
            TransformerBlock(cfg.d_model, cfg.n_heads, cfg.d_ff, rng, cross=True, causal=True)
            for _ in range(cfg.n_layers)
        ]
        self.final_ln = LayerNorm(cfg.d_model)
        self.out_proj = Linear(cfg.d_model, len(vocab), rng)
        self.positions = sinusoidal_positions(cfg.max_len, cfg.d_model)
        self.frozen = True
        self.checksum = params_checksum(self)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}embed", self.embed
        yield from self.adapter.named_parameters(f"{prefix}adapter.")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}blocks.{i}.")
        yield from self.final_ln.named_parameters(f"{prefix}final_ln.")
        yield from self.out_proj.named_parameters(f"{prefix}out_proj.")

    def named_gradients(self, prefix: str = ""):
        yield f"{prefix}embed", self.g_embed
        yield from self.adapter.named_gradients(f"{prefix}adapter.")
        for i, block in enumerate(self.blocks):
            yield from block.named_gradients(f"{prefix}blocks.{i}.")
        yield from self.final_ln.named_gradients(f"{prefix}final_ln.")
        yield from self.out_proj.named_gradients(f"{prefix}out_proj.")

    def zero_gradients(self) -> None:
        self.g_embed.fill(0.0)
        self.adapter.zero_gradients()
        for block in self.blocks:
            block.zero_gradients()
        self.final_ln.zero_gradients()
        self.out_proj.zero_gradients()


def init_decoder(cfg: DecoderConfig, vocab: Vocab | None = None) -> DecoderState:
    """Deterministic seeded init; the state is frozen from this point on."""
    vocab = vocab or build_vocab(cfg.prompt)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.init_seed)))
    return DecoderState(cfg, vocab, rng)


@dataclass
class AssembledSequence:
    """Token-level input sequence [bos, audio..., prompt..., [emo]] with slot
    metadata and the adapter cache needed for the backward pass."""

    embeddings: np.ndarray          # (L, d_model), before positional encoding
    slots: tuple[str, ...]          # "bos" | "audio" | "prompt" | "emo" per row
    memory: np.ndarray              # adapted connector output, cross-attn keys
    n_queries: int
    adapter_cache: tuple


def assemble_sequence(state: DecoderState, connector_out: np.ndarray) -> AssembledSequence:
    """Build the decoder input from connector output and the fixed prompt."""
    cfg, vocab = state.cfg, state.vocab
    if connector_out.ndim != 2:
        raise ValueError(f"expected (n_queries, d) connector output, got {connector_out.shape}")
    if connector_out.shape[1] != cfg.d_conn:
        raise ValueError(
            f"connector width {connector_out.shape[1]} does not match the decoder "
            f"adapter input width {cfg.d_conn}"
        )
    if not np.all(np.isfinite(connector_out)):
        raise ValueError("connector output must be finite")
    audio, adapter_cache = state.adapter.forward(connector_out)
    n_queries = connector_out.shape[0]
    rows = [state.embed[vocab.bos_id]]
    rows.extend(audio)
    rows.extend(state.embed[i] for i in vocab.prompt_ids)
    rows.append(state.embed[vocab.emo_id])
    slots = ("bos",) + ("audio",) * n_queries + ("prompt",) * len(vocab.prompt_ids) + ("emo",)
    seq = np.stack(rows)
    if seq.shape[0] > cfg.max_len:
        raise ValueError(f"sequence length {seq.shape[0]} exceeds max_len {cfg.max_len}")
    return AssembledSequence(
        embeddings=seq,
        slots=slots,
        memory=audio,
        n_queries=n_queries,
        adapter_cache=adapter_cache,
    )


def decode_logits(
    state: DecoderState, assembled: AssembledSequence
) -> tuple[np.ndarray, tuple]:
    """Causal pass over the assembled sequence; logits at the final position."""
    cfg = state.cfg
    seq_len = assembled.embeddings.shape[0]
    if seq_len > cfg.max_len:
        raise ValueError(f"sequence length {seq_len} exceeds max_len {cfg.max_len}")
    x = assembled.embeddings + state.positions[:seq_len]
    block_caches = []
    for block in state.blocks:
        x, c = block.forward(x, memory=assembled.memory)
        block_caches.append(c)
    normed, c_ln = state.final_ln.forward(x[-1:])
    logits_row, c_proj = state.out_proj.forward(normed)
    return logits_row[0], (block_caches, c_ln, c_proj, seq_len)


def decoder_backward(
    state: DecoderState,
    d_logits: np.ndarray,
    assembled: AssembledSequence,
    cache: tuple,
) -> np.ndarray:
    """Backpropagate from the final-position logits to the connector output.

    Decoder parameter gradients are accumulated into the frozen state's
    buffers as a side effect but are never consumed by the optimizer.
    """
    block_caches, c_ln, c_proj, seq_len = cache
    d_normed = state.out_proj.backward(d_logits[None, :], c_proj)
    d_last = state.final_ln.backward(d_normed, c_ln)
    dx = np.zeros((seq_len, state.cfg.d_model))
    dx[-1] = d_last[0]
    d_memory = np.zeros_like(assembled.memory)
    for block, c in zip(reversed(state.blocks), reversed(block_caches)):
        dx, dmem = block.backward(dx, c)
        d_memory += dmem
    # Audio slots occupy rows 1 .. n_queries; both the sequence path and the
    # cross-attention memory path flow back through the adapter.
    d_audio = dx[1:1 + assembled.n_queries] + d_memory
    return state.adapter.backward(d_audio, assembled.adapter_cache)


def predict_emotion(
    logits: np.ndarray,
    vocab: Vocab,
    restrict: tuple[EmotionLabel, ...] | None = None,
) -> EmotionLabel:
    """Constrained argmax over emotion-word logits; ties -> lowest label code."""
    labels = tuple(EMOTIONS) if restrict is None else tuple(sorted(set(restrict)))
    if not labels:
        raise ValueError("restriction set must be nonempty")
    best_label = labels[0]
    best_score = float(logits[vocab.emotion_ids[int(labels[0])]])
    for label in labels[1:]:
        score = float(logits[vocab.emotion_ids[int(label)]])
        if score > best_score:
            best_label, best_score = label, score
    return best_label
