"""Two-branch co-attention block, deterministic or knowledge-aware Bayesian."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bam
from .attention import (
    AttentionParams,
    attend,
    attention_logits,
    key_mask_for_heads,
    project_qkv,
)
from .numerics import Tensor, dropout, layernorm, matmul, relu, softmax_rows


@dataclass
class BranchParams:
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    prior_w: Tensor | None = None

    def tensors(self):
        out = {f"attn.{k}": v for k, v in self.attn.tensors().items()}
        for name in ("ln1_g", "ln1_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln2_g", "ln2_b", "prior_w"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t
        return out

    @classmethod
    def init(cls, d, heads, rng, key_prior=False):
        hidden = 4 * d

        def param(data):
            return Tensor(data, requires_grad=True)

        prior_w = None
        if key_prior:
            prior_w = param(rng.child("prior").normal((heads, d // heads), 1.0 / math.sqrt(d // heads)))
        return cls(
            attn=AttentionParams.init(d, heads, rng.child("attn")),
            ln1_g=param(np.ones(d)),
            ln1_b=param(np.zeros(d)),
            ff_w1=param(rng.child("ff1").normal((d, hidden), math.sqrt(2.0 / d))),
            ff_b1=param(np.zeros(hidden)),
            ff_w2=param(rng.child("ff2").normal((hidden, d), 1.0 / math.sqrt(hidden))),
            ff_b2=param(np.zeros(d)),
            ln2_g=param(np.ones(d)),
            ln2_b=param(np.zeros(d)),
            prior_w=prior_w,
        )


@dataclass
class CoAttentionBlockParams:
    text: BranchParams
    speech: BranchParams

    def tensors(self):
        out = {f"text.{k}": v for k, v in self.text.tensors().items()}
        out.update({f"speech.{k}": v for k, v in self.speech.tensors().items()})
        return out

    @classmethod
    def init(cls, d, heads, rng, key_prior=False):
        return cls(
            BranchParams.init(d, heads, rng.child("text"), key_prior),
            BranchParams.init(d, heads, rng.child("speech"), key_prior),
        )


def _branch(U_q, U_kv, p, cfg, mode, rng, q_mask, kv_mask, i_q, i_kv):
    """One encoder-style branch; returns (output, kl_sum, kl_count)."""
    Q, K, V = project_qkv(U_q, p.attn, U_kv)
    logits = attention_logits(Q, K)
    if cfg.hard_knowledge:
        if i_q is None:
            raise ValueError("hard knowledge injection needs softened intensities")
        kl_logits = bam.knowledge_logits(i_q, i_kv)
        logits = logits + kl_logits.reshape(kl_logits.shape[:-2] + (1,) + kl_logits.shape[-2:])
    M = softmax_rows(logits, key_mask_for_heads(kv_mask))

    kl_sum, kl_count = None, 0.0
    if cfg.variant == "bam":
        head_kmask = key_mask_for_heads(kv_mask)
        W, lam = bam.bam_attention(M, mode, cfg.weibull_k, rng.child("eps") if rng else None, head_kmask)
        if cfg.prior_source == "knowledge":
            if i_q is None:
                raise ValueError("prior_source='knowledge' needs softened intensities for both modalities")
            P = bam.prior_map(i_q, i_kv, kv_mask)
            P = P.reshape(P.shape[:-2] + (1,) + P.shape[-2:])
        elif cfg.prior_source == "key":
            P = bam.key_prior_map(K, p.prior_w, kv_mask)
        else:
            n_k = M.shape[-1]
            P = Tensor(np.full((1, n_k), 1.0 / n_k))
        entry = np.ones(M.shape)
        n_k = M.shape[-1]
        if kv_mask is not None:
            km = np.asarray(kv_mask, dtype=np.float64)
            entry = entry * km[..., None, None, :]
            n_k = km.sum(axis=-1)[..., None, None, None]
            if cfg.prior_source == "uniform":
                P = Tensor((km / km.sum(axis=-1, keepdims=True))[..., None, None, :])
        if q_mask is not None:
            entry = entry * np.asarray(q_mask, dtype=np.float64)[..., None, :, None]
        alpha = bam.gamma_alpha(P, cfg.alpha_scale, n_k) * np.ones(M.shape)
        # padded entries get a harmless alpha of 1 and are masked out of the mean
        alpha = alpha + (1.0 - entry)
        kl = bam.kl_elementwise(cfg.weibull_k, lam, alpha, cfg.gamma_beta)
        kl_sum = (kl * entry).sum()
        kl_count = float(entry.sum())
    else:
        W = M

    A = attend(W, V, p.attn)
    X = layernorm(U_q + A, p.ln1_g, p.ln1_b)
    F = matmul(relu(matmul(X, p.ff_w1) + p.ff_b1), p.ff_w2) + p.ff_b2
    F = dropout(F, cfg.dropout, rng.child("dropout") if rng else None, mode == "train")
    Y = layernorm(X + F, p.ln2_g, p.ln2_b)
    return Y, kl_sum, kl_count


def coattention_block(U_text, U_speech, params, cfg, knowledge=None, mode="infer", rng=None, masks=(None, None)):
    """Cross-modal block: text queries speech and speech queries text.

    ``knowledge`` is ``(i_text_soft, i_speech_soft)`` or None.  Returns
    ``(Y_text, Y_speech, kl_sum, kl_count)``; the KL pieces are summed over
    valid entries so callers can pool them across blocks.
    """
    mask_t, mask_w = masks
    i_t, i_w = knowledge if knowledge is not None else (None, None)
    if rng is None:
        if mode == "train" and (cfg.variant == "bam" or cfg.dropout > 0):
            raise ValueError("training mode needs an Rng")
    Y_t, kl_t, n_t = _branch(
        U_text, U_speech, params.text, cfg, mode, rng.child("text") if rng else None, mask_t, mask_w, i_t, i_w
    )
    Y_w, kl_w, n_w = _branch(
        U_speech, U_text, params.speech, cfg, mode, rng.child("speech") if rng else None, mask_w, mask_t, i_w, i_t
    )
    kl_sum = None
    if kl_t is not None:
        kl_sum = kl_t + kl_w
    return Y_t, Y_w, kl_sum, n_t + n_w


def masked_mean(Y, mask=None):
    """Average over the position axis, ignoring padded rows."""
    if Y.shape[-2] == 0:
        raise ValueError("cannot pool an empty sequence")
    if mask is None:
        return Y.mean(axis=-2)
    m = np.asarray(mask, dtype=np.float64)
    if (m.sum(axis=-1) == 0).any():
        raise ValueError("cannot pool an empty sequence")
    w = m / m.sum(axis=-1, keepdims=True)
    return (Y * w[..., :, None]).sum(axis=-2)


def fuse(outputs, masks=(None, None)):
    """Average-pool each branch over positions, then average the two."""
    Y_t, Y_w = outputs
    return (masked_mean(Y_t, masks[0]) + masked_mean(Y_w, masks[1])) * 0.5
