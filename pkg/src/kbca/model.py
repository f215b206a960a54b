"""Full classifier: layer averaging, word pooling, self-attention, softening,
co-attention fusion, pooling and a linear head.  Also the loss, UA/WA
metrics and score fusion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .alignment import LayerStack, layer_average
from .attention import AttentionParams, self_attention
from .coattention import BranchParams, CoAttentionBlockParams, coattention_block, fuse, masked_mean
from .lexicon import soften
from .numerics import Rng, Tensor, dropout, layernorm, matmul, no_grad, relu, softmax_rows

log = logging.getLogger(__name__)


@dataclass
class Prediction:
    probs: np.ndarray
    label: int


def _param(data):
    return Tensor(data, requires_grad=True)


class EmotionModel:
    """Parameters plus the forward pass for one :class:`ModelConfig`."""

    def __init__(self, cfg, rng=None):
        cfg.validate()
        self.cfg = cfg
        rng = Rng(cfg.seed).child("init") if rng is None else rng
        d, h = cfg.d, cfg.heads
        p = {}
        mods = ["text", "speech"] if cfg.modalities == "text+speech" else [cfg.modalities]
        self.mods = mods
        for m in mods:
            n_layers = cfg.text_layers if m == "text" else cfg.speech_layers
            if n_layers > 1:
                p[f"{m}.layer_logits"] = _param(np.zeros(n_layers))
            for k, v in AttentionParams.init(d, h, rng.child(m, "sa")).tensors().items():
                p[f"{m}.sa.{k}"] = v
            p[f"{m}.sa.ln_g"] = _param(np.ones(d))
            p[f"{m}.sa.ln_b"] = _param(np.zeros(d))
            if cfg.soften_uses_separate_head and self.uses_knowledge:
                sp = AttentionParams.init(d, 1, rng.child(m, "soften"))
                p[f"{m}.soften.w_q"], p[f"{m}.soften.b_q"] = sp.w_q, sp.b_q
                p[f"{m}.soften.w_k"], p[f"{m}.soften.b_k"] = sp.w_k, sp.b_k
        if len(mods) == 2:
            key_prior = cfg.variant == "bam" and cfg.prior_source == "key"
            for layer in range(cfg.coatt_layers):
                block = CoAttentionBlockParams.init(d, h, rng.child("coatt", layer), key_prior)
                for k, v in block.tensors().items():
                    p[f"coatt{layer}.{k}"] = v
        width = d
        for j in range(cfg.classifier_layers):
            out = cfg.n_classes if j == cfg.classifier_layers - 1 else d
            p[f"cls{j}.w"] = _param(rng.child("cls", j).normal((width, out), 1.0 / math.sqrt(width)))
            p[f"cls{j}.b"] = _param(np.zeros(out))
            width = out
        self.params = p

    @property
    def uses_knowledge(self):
        cfg = self.cfg
        if cfg.modalities != "text+speech":
            return False
        return cfg.hard_knowledge or (cfg.variant == "bam" and cfg.prior_source == "knowledge")

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return sum(t.data.size for t in self.params.values())

    # -- building blocks ---------------------------------------------------
    def _attn_params(self, prefix, heads):
        g = self.params
        return AttentionParams(
            g[f"{prefix}.w_q"], g[f"{prefix}.w_k"], g[f"{prefix}.w_v"],
            g[f"{prefix}.b_q"], g[f"{prefix}.b_k"], g[f"{prefix}.b_v"],
            g[f"{prefix}.w_o"], g[f"{prefix}.b_o"], heads,
        )

    def _block_params(self, layer):
        g = self.params
        branches = []
        for m in ("text", "speech"):
            pre = f"coatt{layer}.{m}"
            branches.append(
                BranchParams(
                    attn=self._attn_params(f"{pre}.attn", self.cfg.heads),
                    ln1_g=g[f"{pre}.ln1_g"], ln1_b=g[f"{pre}.ln1_b"],
                    ff_w1=g[f"{pre}.ff_w1"], ff_b1=g[f"{pre}.ff_b1"],
                    ff_w2=g[f"{pre}.ff_w2"], ff_b2=g[f"{pre}.ff_b2"],
                    ln2_g=g[f"{pre}.ln2_g"], ln2_b=g[f"{pre}.ln2_b"],
                    prior_w=g.get(f"{pre}.prior_w"),
                )
            )
        return CoAttentionBlockParams(*branches)

    def _embed(self, m, layers):
        key = f"{m}.layer_logits"
        if layers.shape[0] == 1:
            if key in self.params:
                raise ValueError(f"{m}: model expects {self.params[key].shape[0]} layers, got 1")
            return Tensor(layers[0])
        if key not in self.params or self.params[key].shape[0] != layers.shape[0]:
            raise ValueError(f"{m}: unexpected number of encoder layers ({layers.shape[0]})")
        return layer_average(LayerStack(layers, self.params[key]))

    def _self_attention_module(self, m, U, mask, mode, rng):
        p = self._attn_params(f"{m}.sa", self.cfg.heads)
        out, maps = self_attention(U, p, mask)
        out = dropout(out, self.cfg.dropout, rng.child(m, "sa_dropout") if rng else None, mode == "train")
        Y = layernorm(U + out, self.params[f"{m}.sa.ln_g"], self.params[f"{m}.sa.ln_b"])
        return Y, maps

    def _soften_map(self, m, U, maps, mask):
        if self.cfg.soften_uses_separate_head:
            g = self.params
            Q = matmul(U, g[f"{m}.soften.w_q"]) + g[f"{m}.soften.b_q"]
            K = matmul(U, g[f"{m}.soften.w_k"]) + g[f"{m}.soften.b_k"]
            mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
            return softmax_rows(matmul(Q, K.T) * (1.0 / math.sqrt(self.cfg.d)), mask)
        return maps.mean(axis=-3)

    # -- forward -------------------------------------------------------------
    def forward(self, batch, mode="infer", rng=None):
        """Return ``(logits[B, C], kl)`` for a padded batch.

        ``kl`` is the mean KL over valid attention entries (a zero Tensor for
        the deterministic variant).
        """
        cfg = self.cfg
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "train" and rng is None and (cfg.dropout > 0 or cfg.variant == "bam"):
            raise ValueError("training mode needs an Rng")
        feats, masks, knowledge = {}, {}, {}
        for m in self.mods:
            if m == "text":
                U = self._embed("text", batch.text)
                mask = batch.word_mask
                inten = batch.intensity
            else:
                if cfg.speech_level == "word":
                    # pooling and layer averaging are both linear, so pooling
                    # each layer first gives the same result on smaller arrays
                    U = self._embed("speech", batch.speech_words)
                    mask = batch.word_mask
                    inten = batch.intensity
                else:
                    U = self._embed("speech", batch.speech)
                    mask = batch.frame_mask
                    inten = batch.frame_intensity
            if U.shape[-1] != cfg.d:
                raise ValueError(f"{m} embeddings have width {U.shape[-1]}, model expects {cfg.d}")
            Y, maps = self._self_attention_module(m, U, mask, mode, rng)
            feats[m], masks[m] = Y, mask
            if self.uses_knowledge:
                knowledge[m] = soften(self._soften_map(m, U, maps, mask), inten * mask)

        kl = Tensor(0.0)
        if len(self.mods) == 2:
            Y_t, Y_w = feats["text"], feats["speech"]
            know = (knowledge["text"], knowledge["speech"]) if self.uses_knowledge else None
            kl_sum, kl_n = None, 0.0
            for layer in range(cfg.coatt_layers):
                Y_t, Y_w, s, n = coattention_block(
                    Y_t, Y_w, self._block_params(layer), cfg, know, mode,
                    rng.child("coatt", layer) if rng else None, (masks["text"], masks["speech"]),
                )
                if s is not None:
                    kl_sum = s if kl_sum is None else kl_sum + s
                    kl_n += n
            if kl_sum is not None:
                kl = kl_sum * (1.0 / kl_n)
            pooled = fuse((Y_t, Y_w), (masks["text"], masks["speech"]))
        else:
            m = self.mods[0]
            pooled = masked_mean(feats[m], masks[m])

        x = pooled
        for j in range(cfg.classifier_layers):
            x = matmul(x, self.params[f"cls{j}.w"]) + self.params[f"cls{j}.b"]
            if j < cfg.classifier_layers - 1:
                x = dropout(relu(x), cfg.dropout, rng.child("cls", j) if rng else None, mode == "train")
        return x, kl

    def predict(self, batch):
        with no_grad():
            logits, _ = self.forward(batch, "infer")
        probs = softmax_np(logits.data)
        return [Prediction(p, int(np.argmax(p))) for p in probs]


def softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shift = logits.data.max(axis=-1, keepdims=True)
    z = logits - shift
    return z - z.exp().sum(axis=-1, keepdims=True).log()


def loss(logits, labels, kl=0.0, kl_weight=1.0):
    """Mean cross-entropy plus ``kl_weight * kl``."""
    labels = np.atleast_1d(np.asarray(labels))
    C = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label out of range for {C} classes")
    onehot = np.zeros((len(labels), C))
    onehot[np.arange(len(labels)), labels] = 1.0
    lp = log_softmax(logits.reshape(len(labels), C))
    ce = -(lp * onehot).sum() * (1.0 / len(labels))
    return ce + kl * kl_weight


def metrics(preds, golds, n_classes=None):
    """Return ``(UA, WA)``: mean per-class recall and overall accuracy."""
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if len(golds) == 0:
        raise ValueError("metrics of an empty set")
    if len(preds) != len(golds):
        raise ValueError("predictions and golds differ in length")
    C = n_classes if n_classes is not None else int(max(preds.max(), golds.max())) + 1
    wa = float((preds == golds).mean())
    recalls = []
    for c in range(C):
        sel = golds == c
        if not sel.any():
            log.warning("class %d has no gold instances; excluded from UA", c)
            continue
        recalls.append(float((preds[sel] == c).mean()))
    return float(np.mean(recalls)), wa


def per_class_recall(preds, golds, n_classes):
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    out = []
    for c in range(n_classes):
        sel = golds == c
        out.append(float((preds[sel] == c).mean()) if sel.any() else float("nan"))
    return out


def confusion_matrix(preds, golds, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, p in zip(golds, preds):
        cm[g, p] += 1
    return cm


def fuse_scores(p1, p2, w=0.5):
    """Late score fusion ``w * p1 + (1 - w) * p2``."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if not 0.0 <= w <= 1.0:
        raise ValueError("fusion weight must lie in [0, 1]")
    if p1.shape != p2.shape:
        raise ValueError("probability vectors differ in shape")
    for p in (p1, p2):
        if (p < 0).any() or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
            raise ValueError("inputs must be probability vectors")
    return w * p1 + (1.0 - w) * p2
