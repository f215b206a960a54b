"""Multi-head scaled dot-product attention (no positional encodings)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, as_tensor, matmul, softmax_rows, transpose


@dataclass
class AttentionParams:
    """Query/key/value/output projections for ``heads`` heads over width d.

    Projections act on row vectors: ``Q = U @ w_q + b_q``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.heads < 1 or d % self.heads:
            raise ValueError(f"width {d} is not divisible by {self.heads} heads")

    @property
    def d(self):
        return self.w_q.shape[0]

    @property
    def head_dim(self):
        return self.d // self.heads

    def tensors(self):
        return {
            "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v,
            "b_q": self.b_q, "b_k": self.b_k, "b_v": self.b_v,
            "w_o": self.w_o, "b_o": self.b_o,
        }

    @classmethod
    def init(cls, d, heads, rng):
        scale = 1.0 / math.sqrt(d)

        def w(name):
            return Tensor(rng.child(name).normal((d, d), scale), requires_grad=True)

        def b():
            return Tensor(np.zeros(d), requires_grad=True)

        return cls(w("q"), w("k"), w("v"), b(), b(), b(), w("o"), b(), heads)


def split_heads(x, heads):
    """``(..., n, d)`` -> ``(..., heads, n, d/heads)``."""
    *lead, n, d = x.shape
    x = x.reshape(tuple(lead) + (n, heads, d // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return transpose(x, axes)


def merge_heads(x):
    """Inverse of :func:`split_heads`."""
    *lead, h, n, dh = x.shape
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return transpose(x, axes).reshape(tuple(lead) + (n, h * dh))


def project_qkv(U, p, U_kv=None):
    """Affine projections split into heads.

    Queries come from ``U``; keys and values from ``U_kv`` (defaults to ``U``,
    i.e. self-attention).
    """
    U = as_tensor(U)
    U_kv = U if U_kv is None else as_tensor(U_kv)
    if U.shape[-1] != p.d or U_kv.shape[-1] != p.d:
        raise ValueError(f"inputs of width {U.shape[-1]}/{U_kv.shape[-1]} for params of width {p.d}")
    Q = matmul(U, p.w_q) + p.b_q
    K = matmul(U_kv, p.w_k) + p.b_k
    V = matmul(U_kv, p.w_v) + p.b_v
    return split_heads(Q, p.heads), split_heads(K, p.heads), split_heads(V, p.heads)


def key_mask_for_heads(key_mask):
    """Reshape a ``(..., n_k)`` key mask to broadcast over heads and queries."""
    if key_mask is None:
        return None
    key_mask = np.asarray(key_mask, dtype=bool)
    return key_mask[..., None, None, :]


def attention_logits(Q, K):
    dh = Q.shape[-1]
    if K.shape[-1] != dh:
        raise ValueError("query and key head widths differ")
    return matmul(Q, transpose(K)) * (1.0 / math.sqrt(dh))


def attention_map(Q, K, key_mask=None):
    """``softmax(Q K^T / sqrt(d_h))`` with padded keys given zero weight."""
    return softmax_rows(attention_logits(Q, K), key_mask_for_heads(key_mask))


def attend(maps, V, p):
    """Apply per-head maps to values, concatenate heads, mix with ``w_o``."""
    return matmul(merge_heads(matmul(maps, V)), p.w_o) + p.b_o


def self_attention(U, p, key_mask=None):
    """Multi-head self-attention; returns the output and the per-head maps."""
    Q, K, V = project_qkv(U, p)
    maps = attention_map(Q, K, key_mask)
    return attend(maps, V, p), maps
