"""The trainable query-transformer connector.

Learnable query embeddings self-attend, cross-attend to frozen encoder
features, and pass through feed-forward blocks; the output is a fixed set of
``n_queries`` vectors regardless of input length. ``pool_queries`` reduces
them to a single unit-norm utterance embedding.

Queries carry their identity through their distinct learned embeddings; no
positions are added to the cross-attention keys, so the connector output is
invariant to permutations of the input feature rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LayerNorm, Linear, Module, TransformerBlock, xavier_uniform

__all__ = [
    "QFormerConfig",
    "QFormerState",
    "init_qformer",
    "qformer_forward",
    "qformer_backward",
    "pool_queries",
    "pool_queries_backward",
]


@dataclass(frozen=True)
class QFormerConfig:
    """Connector dimensions. Desk-scale defaults; a full-scale preset would
    use n_queries=32, d_model=256."""

    n_queries: int = 8
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    d_enc: int = 64

    def __post_init__(self) -> None:
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1 or self.d_ff < 1:
            raise ValueError("d_model, n_layers, n_heads, d_ff must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.d_enc < 1:
            raise ValueError("d_enc must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "d_enc": self.d_enc,
        }


class QFormerState(Module):
    """Trainable connector parameters with matching gradient buffers."""

    _params = ("queries",)
    _children = ("adapter", "final_ln")

    def __init__(self, cfg: QFormerConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        limit = (3.0 / cfg.d_model) ** 0.5
        self.queries = rng.uniform(-limit, limit, size=(cfg.n_queries, cfg.d_model))
        self.g_queries = np.zeros_like(self.queries)
        self.adapter = Linear(cfg.d_enc, cfg.d_model, rng)
        self.blocks = [
            TransformerBlock(cfg.d_model, cfg.n_heads, cfg.d_ff, rng, cross=True)
            for _ in range(cfg.n_layers)
        ]
        self.final_ln = LayerNorm(cfg.d_model)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}queries", self.queries
        yield from self.adapter.named_parameters(f"{prefix}adapter.")
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}blocks.{i}.")
        yield from self.final_ln.named_parameters(f"{prefix}final_ln.")

    def named_gradients(self, prefix: str = ""):
        yield f"{prefix}queries", self.g_queries
        yield from self.adapter.named_gradients(f"{prefix}adapter.")
        for i, block in enumerate(self.blocks):
            yield from block.named_gradients(f"{prefix}blocks.{i}.")
        yield from self.final_ln.named_gradients(f"{prefix}final_ln.")

    def zero_gradients(self) -> None:
        self.g_queries.fill(0.0)
        self.adapter.zero_gradients()
        for block in self.blocks:
            block.zero_gradients()
        self.final_ln.zero_gradients()


def init_qformer(cfg: QFormerConfig, seed: int) -> QFormerState:
    """Deterministic seeded init with zeroed gradient buffers."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return QFormerState(cfg, rng)


def qformer_forward(
    state: QFormerState, features: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Run the connector over (T, d_enc) features; returns (n_queries, d_model)
    plus the cache needed by :func:`qformer_backward`."""
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError(f"expected a nonempty (T, d_enc) matrix, got {features.shape}")
    if features.shape[1] != state.cfg.d_enc:
        raise ValueError(
            f"feature width {features.shape[1]} != configured d_enc {state.cfg.d_enc}"
        )
    memory, c_adapter = state.adapter.forward(features)
    x = state.queries.copy()
    block_caches = []
    for block in state.blocks:
        x, c = block.forward(x, memory=memory)
        block_caches.append(c)
    out, c_ln = state.final_ln.forward(x)
    return out, (c_adapter, block_caches, c_ln, memory.shape)


def qformer_backward(
    state: QFormerState, d_out: np.ndarray, cache: tuple
) -> np.ndarray:
    """Accumulate parameter gradients for one forward pass; returns the
    gradient w.r.t. the input features (the frozen encoder discards it)."""
    c_adapter, block_caches, c_ln, memory_shape = cache
    dx = state.final_ln.backward(d_out, c_ln)
    d_memory = np.zeros(memory_shape)
    for block, c in zip(reversed(state.blocks), reversed(block_caches)):
        dx, dmem = block.backward(dx, c)
        d_memory += dmem
    state.g_queries += dx
    return state.adapter.backward(d_memory, c_adapter)


def pool_queries(q_out: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Mean over queries then L2 normalization; output has unit norm.

    Raises on a (near-)zero mean vector rather than emitting NaN.
    """
    if q_out.ndim != 2 or q_out.shape[0] < 1:
        raise ValueError(f"expected (n_queries, d), got shape {q_out.shape}")
    if not np.all(np.isfinite(q_out)):
        raise ValueError("pool_queries requires finite inputs")
    mean = q_out.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ValueError("degenerate connector output: query mean is the zero vector")
    unit = mean / norm
    return unit, (unit, norm, q_out.shape[0])


def pool_queries_backward(d_unit: np.ndarray, cache: tuple) -> np.ndarray:
    """Gradient of pooling: project out the radial component, share over rows."""
    unit, norm, n_queries = cache
    d_mean = (d_unit - unit * (d_unit @ unit)) / norm
    return np.tile(d_mean / n_queries, (n_queries, 1))
