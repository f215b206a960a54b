"""Bayesian attention with a Weibull posterior and a Gamma prior.

Attention weights are treated as random: the deterministic map ``M`` fixes
the Weibull scale so that the posterior mean equals ``M``, training draws a
reparameterised sample and renormalises each row, and inference uses the
posterior mean.  The Gamma prior's shape comes from a prior map ``P`` built
from softened lexicon intensities (or from keys, or uniform).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .numerics import Tensor, _unbroadcast, as_tensor, matmul, softmax_rows

EULER_GAMMA = 0.57721566490153286061
EPS_FLOOR = 1e-8
UNIFORM_CLAMP = 1e-12


def _positive(name, x):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if not (arr > 0).all():
        raise ValueError(f"{name} must be strictly positive")


def prior_map(i_q_soft, i_k_soft, key_mask=None):
    """Row-wise softmax of the outer product of query/key intensities."""
    i_q = as_tensor(i_q_soft)
    i_k = as_tensor(i_k_soft)
    outer = i_q.reshape(i_q.shape + (1,)) * i_k.reshape(i_k.shape[:-1] + (1, i_k.shape[-1]))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, :]
    return softmax_rows(outer, mask)


def knowledge_logits(i_q_soft, i_k_soft):
    """Outer-product logits used by the hard-injection baseline."""
    i_q = as_tensor(i_q_soft)
    i_k = as_tensor(i_k_soft)
    return i_q.reshape(i_q.shape + (1,)) * i_k.reshape(i_k.shape[:-1] + (1, i_k.shape[-1]))


def key_prior_map(K, w_prior, key_mask=None):
    """Prior map from a learned linear score of the keys.

    ``K`` is ``(..., h, n_k, d_h)`` and ``w_prior`` is ``(h, d_h)``; every query
    row shares the same distribution over keys, shape ``(..., h, 1, n_k)``.
    """
    h, dh = w_prior.shape
    scores = matmul(K, w_prior.reshape(h, dh, 1))  # (..., h, n_k, 1)
    scores = scores.reshape(scores.shape[:-2] + (1, scores.shape[-2]))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, None, :]
    return softmax_rows(scores, mask)


def gamma_alpha(P, alpha_scale, n_k=None):
    """Gamma shape ``alpha_scale * n_k * P``; a uniform map gives ``alpha_scale``.

    ``n_k`` defaults to the key axis length; pass an array broadcastable to
    ``P`` when rows are padded.
    """
    if alpha_scale <= 0:
        raise ValueError("alpha_scale must be positive")
    P = as_tensor(P)
    n_k = P.shape[-1] if n_k is None else n_k
    return P * (alpha_scale * np.asarray(n_k, dtype=np.float64))


def weibull_lambda(M, k, eps_floor=EPS_FLOOR):
    """Scale whose Weibull mean ``lam * Gamma(1 + 1/k)`` is ``M + eps_floor``."""
    if k <= 0:
        raise ValueError("Weibull shape k must be positive")
    return (as_tensor(M) + eps_floor) * (1.0 / math.gamma(1.0 + 1.0 / k))


def draw_uniform(shape, rng):
    return np.clip(rng.uniform(shape), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)


def sample_weibull(lam, k, rng=None, eps=None):
    """Reparameterised draw ``lam * (-log(1 - eps)) ** (1/k)``.

    ``eps`` may be supplied directly; otherwise it is drawn from ``rng``.
    Gradients flow to ``lam`` with the noise held fixed.
    """
    lam = as_tensor(lam)
    if eps is None:
        eps = draw_uniform(lam.shape, rng)
    noise = (-np.log1p(-np.asarray(eps, dtype=np.float64))) ** (1.0 / k)
    return lam * noise


def _renormalize(S, key_mask):
    if key_mask is not None:
        S = S * np.asarray(key_mask, dtype=np.float64)
    return S / S.sum(axis=-1, keepdims=True)


def bam_attention(M, mode, k, rng=None, key_mask=None, eps_floor=EPS_FLOOR):
    """Replace a deterministic map by a Weibull draw (train) or its mean (infer).

    Returns ``(weights, lam)``; ``key_mask`` (broadcastable to ``M``) zeroes
    padded keys before the row renormalisation.
    """
    lam = weibull_lambda(M, k, eps_floor)
    if mode == "train":
        S = sample_weibull(lam, k, rng)
    elif mode == "infer":
        S = lam * math.gamma(1.0 + 1.0 / k)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _renormalize(S, key_mask), lam


KL_TERMS = (
    "gamma_alpha_over_k",
    "alpha_log_lambda",
    "log_k",
    "beta_lambda_mean",
    "euler",
    "one",
    "alpha_log_beta",
    "log_gamma_alpha",
)


def kl_terms(k, lam, alpha, beta):
    """Each summand of KL(Weibull(k, lam) || Gamma(alpha, beta)) as
    ``(name, value, d/d lam, d/d alpha)`` on plain arrays."""
    lam = np.asarray(lam, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    g1k = math.gamma(1.0 + 1.0 / k)
    log_lam = np.log(lam)
    zero = 0.0
    return [
        ("gamma_alpha_over_k", EULER_GAMMA * alpha / k, zero, EULER_GAMMA / k),
        ("alpha_log_lambda", -alpha * log_lam, -alpha / lam, -log_lam),
        ("log_k", math.log(k), zero, zero),
        ("beta_lambda_mean", beta * lam * g1k, beta * g1k, zero),
        ("euler", -EULER_GAMMA, zero, zero),
        ("one", -1.0, zero, zero),
        ("alpha_log_beta", -alpha * math.log(beta), zero, -math.log(beta)),
        ("log_gamma_alpha", special.gammaln(alpha), zero, special.digamma(alpha)),
    ]


def kl_elementwise(k, lam, alpha, beta, terms=None):
    """Elementwise closed-form KL as one differentiable op.

    ``terms`` restricts the sum to a subset of :data:`KL_TERMS`.
    """
    if k <= 0 or beta <= 0:
        raise ValueError("k and beta must be strictly positive")
    _positive("lam", lam)
    _positive("alpha", alpha)
    lam = as_tensor(lam)
    alpha = as_tensor(alpha)
    shape = np.broadcast_shapes(lam.shape, alpha.shape)
    value = np.zeros(shape)
    d_lam = np.zeros(shape)
    d_alpha = np.zeros(shape)
    for name, v, gl, ga in kl_terms(k, lam.data, alpha.data, beta):
        if terms is None or name in terms:
            value = value + v
            d_lam = d_lam + gl
            d_alpha = d_alpha + ga

    def bw(g):
        gl = _unbroadcast(g * d_lam, lam.shape) if lam.requires_grad else None
        ga = _unbroadcast(g * d_alpha, alpha.shape) if alpha.requires_grad else None
        return gl, ga

    return Tensor._result(value, (lam, alpha), bw)


def kl_weibull_gamma(k, lam, alpha, beta, mask=None):
    """Mean elementwise KL(Weibull || Gamma) over the (masked) entries."""
    kl = kl_elementwise(k, lam, alpha, beta)
    if mask is None:
        return kl.mean()
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64), kl.shape)
    return (kl * w).sum() * (1.0 / w.sum())
