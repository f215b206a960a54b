"""Release gate: numerical checks of the core against independent oracles."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import bam
from .alignment import AlignmentSpec, pool_words
from .attention import AttentionParams, self_attention
from .config import ModelConfig
from .data import item_from_arrays, make_batch
from .lexicon import LexiconEntry, LexiconTable
from .model import EmotionModel, loss
from .numerics import Rng, Tensor, check_gradient, layernorm, softmax_rows

KL_GRID = list(itertools.product((0.5, 1.0, 2.0), (0.5, 1.0, 2.0), (0.5, 1.0, 2.0), (1.0, 10.0)))
KL_TOL = 1e-6
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} value={self.value:.3e}  tol={self.tolerance:.1e}  ({self.seconds:.2f}s)"


def weibull_logpdf(x, k, lam):
    return math.log(k) - k * math.log(lam) + (k - 1.0) * np.log(x) - (x / lam) ** k


def gamma_logpdf(x, alpha, beta):
    return alpha * math.log(beta) - special.gammaln(alpha) + (alpha - 1.0) * np.log(x) - beta * x


def kl_by_quadrature(k, lam, alpha, beta):
    """KL(Weibull(k, lam) || Gamma(alpha, beta)) by numerical integration.

    Integrates ``E_q[log q - log p]`` after substituting ``x = lam * y**(1/k)``
    so the weight is ``exp(-y)`` on ``(0, inf)``.
    """

    def f(y):
        x = lam * y ** (1.0 / k)
        return math.exp(-y) * (weibull_logpdf(x, k, lam) - gamma_logpdf(x, alpha, beta))

    opts = dict(limit=200, epsabs=1e-13, epsrel=1e-12)
    return integrate.quad(f, 0.0, 1.0, **opts)[0] + integrate.quad(f, 1.0, np.inf, **opts)[0]


def closed_form_kl(k, lam, alpha, beta):
    return bam.kl_elementwise(k, lam, alpha, beta).item()


def check_kl_grid(kl_fn=closed_form_kl, grid=KL_GRID, tol=KL_TOL):
    """Largest |closed form - quadrature| over the grid."""
    worst = 0.0
    for k, lam, alpha, beta in grid:
        worst = max(worst, abs(kl_fn(k, lam, alpha, beta) - kl_by_quadrature(k, lam, alpha, beta)))
    return worst, worst < tol


def check_kl_collapse():
    zero = max(abs(closed_form_kl(1.0, 1.0 / b, 1.0, b)) for b in (0.5, 1.0, 10.0))
    target = 1.0 - math.log(2.0)
    oracle = kl_by_quadrature(1.0, 2.0, 1.0, 1.0)
    point = abs(closed_form_kl(1.0, 2.0, 1.0, 1.0) - target)
    value = max(zero, point, abs(oracle - target))
    return value, value < 1e-9


def check_weibull_moments(n=1_000_000, k=1.0, lam=3.0, seed=0):
    S = bam.sample_weibull(Tensor(np.full(n, lam)), k, Rng(seed).child("moments")).data
    mean_err = abs(S.mean() - lam)
    var_err = abs(S.var() - lam**2)
    return max(mean_err / 0.01, var_err / 0.1), mean_err < 0.01 and var_err < 0.1


def check_softmax(seed=0):
    x = Rng(seed).child("softmax").normal((50, 7), 3.0)
    y = softmax_rows(Tensor(x)).data
    shifted = softmax_rows(Tensor(x + 123.0)).data
    err = max(np.abs(y.sum(axis=-1) - 1.0).max(), np.abs(y - shifted).max())
    return err, err < 1e-12 and (y >= 0).all()


def check_layernorm(seed=0):
    x = Rng(seed).child("layernorm").normal((20, 9), 2.0)
    g = np.ones(9)
    b = np.zeros(9)
    y = layernorm(Tensor(x), Tensor(g), Tensor(b)).data
    ref = (x - x.mean(axis=1, keepdims=True)) / np.sqrt(x.var(axis=1, keepdims=True) + 1e-5)
    const = layernorm(Tensor(np.full((1, 9), 4.2)), Tensor(g), Tensor(b)).data
    err = max(np.abs(y - ref).max(), np.abs(const).max())
    return err, err < 1e-10


def check_pooling(n_specs=100, seed=0):
    g = Rng(seed).child("pooling").generator()
    worst = 0.0
    for _ in range(n_specs):
        n_words = int(g.integers(1, 10))
        segs, f = [], int(g.integers(0, 3))
        for k in range(n_words):
            span = int(g.integers(1, 6))
            segs.append((f"t{k}", f, f + span))
            f += span + int(g.integers(0, 2))
        F = f + int(g.integers(0, 3))
        frames = g.normal(size=(F, 4))
        got = pool_words(Tensor(frames), AlignmentSpec(segs)).data
        for k, (_, s, e) in enumerate(segs):
            acc = np.zeros(4)
            for t in range(s, e):
                acc += frames[t]
            worst = max(worst, np.abs(got[k] - acc / (e - s)).max())
    return worst, worst < 1e-12


TINY_LEXICON = LexiconTable([LexiconEntry("joy", 0.9, 0.6, 0.4), LexiconEntry("grief", -0.8, 0.3, -0.5)])


def tiny_item(seed=0, d=8, words=("joy", "the", "grief"), utt="tiny", label=1):
    g = Rng(seed).child("tiny").generator()
    segs, f = [], 0
    for w in words:
        span = int(g.integers(1, 4))
        segs.append((w, f, f + span))
        f += span
    text = g.uniform(-1, 1, (len(words), d))
    speech = g.uniform(-1, 1, (f, d))
    return item_from_arrays(utt, text, speech, AlignmentSpec(segs), list(words), TINY_LEXICON, label)


def tiny_instance(variant="bam", seed=0, d=8, heads=2, words=("joy", "the", "grief"), **overrides):
    """A one-utterance model/batch pair for gradient checks (dropout off)."""
    cfg = ModelConfig(d=d, heads=heads, dropout=0.0, variant=variant, seed=seed, **overrides)
    return EmotionModel(cfg), make_batch([tiny_item(seed, d, words)])


def check_model_gradient(variant="bam", seed=0, **overrides):
    model, batch = tiny_instance(variant, seed, **overrides)
    step = Rng(seed).child("frozen-eps")

    def f():
        logits, kl = model.forward(batch, "train", step)
        return loss(logits, batch.labels, kl, 1.0)

    err = check_gradient(f, model.parameters())
    return err, err < GRAD_TOL


def check_attention_gradient(seed=0):
    rng = Rng(seed).child("attn-grad")
    p = AttentionParams.init(6, 2, rng)
    U = Tensor(rng.child("U").uniform((4, 6)) * 2 - 1, requires_grad=True)
    target = rng.child("t").normal((4, 6))

    def f():
        out, _ = self_attention(U, p)
        return ((out - target) * (out - target)).sum()

    err = check_gradient(f, [U] + list(p.tensors().values()))
    return err, err < GRAD_TOL


def check_bam_gradient_fixed_eps(eps_value=0.5, seed=0):
    """BAM weights with every uniform draw frozen at ``eps_value``."""
    rng = Rng(seed).child("bam-grad")
    logits = Tensor(rng.normal((3, 4)), requires_grad=True)
    target = rng.child("t").uniform((3, 4))
    eps = np.full((3, 4), eps_value)
    alpha = Tensor(rng.child("a").uniform((3, 4)) + 0.5, requires_grad=True)

    def f():
        M = softmax_rows(logits)
        lam = bam.weibull_lambda(M, 1.0)
        S = bam.sample_weibull(lam, 1.0, eps=eps)
        W = S / S.sum(axis=-1, keepdims=True)
        kl = bam.kl_weibull_gamma(1.0, lam, alpha, 10.0)
        return ((W - target) * (W - target)).sum() + kl

    err = check_gradient(f, [logits, alpha])
    return err, err < GRAD_TOL


CHECKS = {
    "kl_quadrature_grid": (check_kl_grid, KL_TOL),
    "kl_analytic_points": (check_kl_collapse, 1e-9),
    "weibull_moments": (check_weibull_moments, 1.0),
    "softmax_invariants": (check_softmax, 1e-12),
    "layernorm_oracle": (check_layernorm, 1e-10),
    "pool_words_bruteforce": (check_pooling, 1e-12),
    "grad_self_attention": (check_attention_gradient, GRAD_TOL),
    "grad_bam_eps_0.5": (check_bam_gradient_fixed_eps, GRAD_TOL),
    "grad_model_det": (lambda: check_model_gradient("det"), GRAD_TOL),
    "grad_model_bam_knowledge": (lambda: check_model_gradient("bam"), GRAD_TOL),
}


def selfcheck(names=None):
    """Run the checks (all by default) and return their results."""
    results = []
    for name, (fn, tol) in CHECKS.items():
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        value, ok = fn()
        results.append(CheckResult(name, bool(ok), float(value), tol, time.perf_counter() - t0))
    return results
