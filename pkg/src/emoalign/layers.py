"""Numpy transformer building blocks with hand-written backward passes.

Every layer works on double-precision (T, d) matrices, returns
``(output, cache)`` from ``forward`` and consumes the cache in ``backward``.
Backward calls accumulate parameter gradients into ``g_*`` buffers (so two
backward calls without zeroing double the gradients) and return the gradient
with respect to the layer input. Caches are per-call, so several forward
passes may be outstanding before their backward passes run.
"""

from __future__ import annotations

import hashlib
import math
from typing import Iterator

import numpy as np

__all__ = [
    "Module",
    "Linear",
    "LayerNorm",
    "GELU",
    "FeedForward",
    "MultiHeadAttention",
    "TransformerBlock",
    "sinusoidal_positions",
    "xavier_uniform",
    "params_checksum",
]


def xavier_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    """Scaled uniform init: U(-a, a) with a = sqrt(6 / (d_in + d_out))."""
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def sinusoidal_positions(n_positions: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos positional table of shape (n_positions, d_model)."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class Module:
    """Base class giving parameter/gradient traversal by reflection.

    Subclasses list their own tensors in ``_params`` (each tensor ``p`` has a
    gradient buffer ``g_p``) and submodules in ``_children``; traversal order
    is declaration order, which fixes the serialization order everywhere.
    """

    _params: tuple[str, ...] = ()
    _children: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._params:
            yield f"{prefix}{name}", getattr(self, name)
        for child in self._children:
            yield from getattr(self, child).named_parameters(f"{prefix}{child}.")

    def named_gradients(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._params:
            yield f"{prefix}{name}", getattr(self, "g_" + name)
        for child in self._children:
            yield from getattr(self, child).named_gradients(f"{prefix}{child}.")

    def zero_gradients(self) -> None:
        for name in self._params:
            getattr(self, "g_" + name).fill(0.0)
        for child in self._children:
            getattr(self, child).zero_gradients()

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def params_checksum(module: Module) -> str:
    """64-bit hex digest over parameter names, shapes, and exact bytes."""
    h = hashlib.blake2b(digest_size=8)
    for name, p in module.named_parameters():
        h.update(name.encode("utf-8"))
        h.update(str(p.shape).encode("utf-8"))
        h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
    return h.hexdigest()


class Linear(Module):
    """y = x @ W (+ b) for row-major inputs of shape (T, d_in)."""

    def __init__(
        self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True
    ) -> None:
        self.d_in, self.d_out = d_in, d_out
        self.has_bias = bias
        self.W = xavier_uniform(rng, d_in, d_out)
        self.g_W = np.zeros_like(self.W)
        self._params = ("W",)
        if bias:
            self.b = np.zeros(d_out)
            self.g_b = np.zeros_like(self.b)
            self._params = ("W", "b")

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        y = x @ self.W
        if self.has_bias:
            y = y + self.b
        return y, (x,)

    def backward(self, dy: np.ndarray, cache: tuple) -> np.ndarray:
        (x,) = cache
        self.g_W += x.T @ dy
        if self.has_bias:
            self.g_b += dy.sum(axis=0)
        return dy @ self.W.T


class LayerNorm(Module):
    """Per-row normalization with learnable gain and bias."""

    _params = ("gain", "bias")

    def __init__(self, d: int, eps: float = 1e-5) -> None:
        self.d, self.eps = d, eps
        self.gain = np.ones(d)
        self.bias = np.zeros(d)
        self.g_gain = np.zeros_like(self.gain)
        self.g_bias = np.zeros_like(self.bias)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        return xhat * self.gain + self.bias, (xhat, inv)

    def backward(self, dy: np.ndarray, cache: tuple) -> np.ndarray:
        xhat, inv = cache
        self.g_gain += (dy * xhat).sum(axis=0)
        self.g_bias += dy.sum(axis=0)
        dxhat = dy * self.gain
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class GELU(Module):
    """Smooth tanh-form GELU with an exact derivative."""

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        u = _GELU_C * (x + _GELU_A * x ** 3)
        t = np.tanh(u)
        return 0.5 * x * (1.0 + t), (x, t)

    def backward(self, dy: np.ndarray, cache: tuple) -> np.ndarray:
        x, t = cache
        du_dx = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du_dx
        return dy * dydx


class FeedForward(Module):
    """Linear -> GELU -> Linear."""

    _children = ("lin1", "lin2")

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator) -> None:
        self.lin1 = Linear(d_model, d_ff, rng)
        self.act = GELU()
        self.lin2 = Linear(d_ff, d_model, rng)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        h, c1 = self.lin1.forward(x)
        a, c2 = self.act.forward(h)
        y, c3 = self.lin2.forward(a)
        return y, (c1, c2, c3)

    def backward(self, dy: np.ndarray, cache: tuple) -> np.ndarray:
        c1, c2, c3 = cache
        da = self.lin2.backward(dy, c3)
        dh = self.act.backward(da, c2)
        return self.lin1.backward(dh, c1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (T, d) inputs.

    ``forward(xq, xkv)`` computes queries from ``xq`` and keys/values from
    ``xkv`` (pass the same array twice for self-attention). ``backward``
    returns ``(dxq, dxkv)``; for self-attention the caller adds them.
    """

    _children = ("wq", "wk", "wv", "wo")

    def __init__(
        self, d_model: int, n_heads: int, rng: np.random.Generator, causal: bool = False
    ) -> None:
        if d_model % n_heads != 0:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model, self.n_heads = d_model, n_heads
        self.d_head = d_model // n_heads
        self.causal = causal
        self.wq = Linear(d_model, d_model, rng)
        # No key bias: a constant added to every key shifts each attention row
        # uniformly, which softmax cancels, so its gradient is identically zero.
        self.wk = Linear(d_model, d_model, rng, bias=False)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def _split(self, x: np.ndarray) -> np.ndarray:
        t = x.shape[0]
        return x.reshape(t, self.n_heads, self.d_head).transpose(1, 0, 2)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        t = x.shape[1]
        return x.transpose(1, 0, 2).reshape(t, self.d_model)

    def forward(self, xq: np.ndarray, xkv: np.ndarray) -> tuple[np.ndarray, tuple]:
        q_flat, cq = self.wq.forward(xq)
        k_flat, ck = self.wk.forward(xkv)
        v_flat, cv = self.wv.forward(xkv)
        q, k, v = self._split(q_flat), self._split(k_flat), self._split(v_flat)
        scale = 1.0 / math.sqrt(self.d_head)
        scores = np.einsum("hqd,hkd->hqk", q, k) * scale
        if self.causal:
            tq, tk = scores.shape[1], scores.shape[2]
            mask = np.triu(np.ones((tq, tk), dtype=bool), k=1)
            scores = np.where(mask, -np.inf, scores)
        scores -= scores.max(axis=-1, keepdims=True)
        exp = np.exp(scores)
        attn = exp / exp.sum(axis=-1, keepdims=True)
        ctx = np.einsum("hqk,hkd->hqd", attn, v)
        ctx_flat = self._merge(ctx)
        out, co = self.wo.forward(ctx_flat)
        return out, (cq, ck, cv, co, q, k, v, attn)

    def backward(self, dy: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
        cq, ck, cv, co, q, k, v, attn = cache
        dctx_flat = self.wo.backward(dy, co)
        dctx = self._split(dctx_flat)
        dattn = np.einsum("hqd,hkd->hqk", dctx, v)
        dv = np.einsum("hqk,hqd->hkd", attn, dctx)
        # Softmax backward; masked entries have attn == 0 so their grad is 0.
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        scale = 1.0 / math.sqrt(self.d_head)
        dq = np.einsum("hqk,hkd->hqd", dscores, k) * scale
        dk = np.einsum("hqk,hqd->hkd", dscores, q) * scale
        dxq = self.wq.backward(self._merge(dq), cq)
        dxkv = self.wk.backward(self._merge(dk), ck)
        dxkv = dxkv + self.wv.backward(self._merge(dv), cv)
        return dxq, dxkv


class TransformerBlock(Module):
    """Pre-norm residual block: self-attention, optional cross-attention, FFN.

    With ``cross=True`` the forward takes a ``memory`` matrix the block's
    cross-attention reads (queries from the residual stream, keys/values from
    memory); ``backward`` then also returns the gradient w.r.t. memory.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        d_ff: int,
        rng: np.random.Generator,
        cross: bool = False,
        causal: bool = False,
    ) -> None:
        self.cross = cross
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, causal=causal)
        children = ["ln1", "attn"]
        if cross:
            self.ln_x = LayerNorm(d_model)
            self.xattn = MultiHeadAttention(d_model, n_heads, rng)
            children += ["ln_x", "xattn"]
        self.ln2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        children += ["ln2", "ffn"]
        self._children = tuple(children)

    def forward(
        self, x: np.ndarray, memory: np.ndarray | None = None
    ) -> tuple[np.ndarray, tuple]:
        if self.cross and memory is None:
            raise ValueError("cross-attention block requires a memory matrix")
        a_in, c_ln1 = self.ln1.forward(x)
        sa, c_attn = self.attn.forward(a_in, a_in)
        h = x + sa
        c_lnx = c_xattn = None
        if self.cross:
            x_in, c_lnx = self.ln_x.forward(h)
            ca, c_xattn = self.xattn.forward(x_in, memory)
            h = h + ca
        f_in, c_ln2 = self.ln2.forward(h)
        ff, c_ffn = self.ffn.forward(f_in)
        return h + ff, (c_ln1, c_attn, c_lnx, c_xattn, c_ln2, c_ffn)

    def backward(
        self, dy: np.ndarray, cache: tuple
    ) -> tuple[np.ndarray, np.ndarray | None]:
        c_ln1, c_attn, c_lnx, c_xattn, c_ln2, c_ffn = cache
        df_in = self.ffn.backward(dy, c_ffn)
        dh = dy + self.ln2.backward(df_in, c_ln2)
        dmemory = None
        if self.cross:
            dx_in, dmemory = self.xattn.backward(dh, c_xattn)
            dh = dh + self.ln_x.backward(dx_in, c_lnx)
        dq, dkv = self.attn.backward(dh, c_attn)
        dx = dh + self.ln1.backward(dq + dkv, c_ln1)
        return dx, dmemory
