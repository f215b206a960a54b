"""Adam training with early stopping, and evaluation."""

from __future__ import annotations

import logging
import math

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .model import EmotionModel, confusion_matrix, loss, metrics, per_class_recall, softmax_np
from .numerics import NumericalError, Rng, Tensor, no_grad

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def fit_config_to_data(cfg, dataset):
    """Copy data-derived dimensions into the config, checking widths."""
    dims = dataset.dims
    if dims["text_dim"] != cfg.d or dims["speech_dim"] != cfg.d:
        raise ValueError(
            f"embedding widths text={dims['text_dim']} speech={dims['speech_dim']} do not match d={cfg.d}"
        )
    return cfg.replace(
        text_layers=dims["text_layers"],
        speech_layers=dims["speech_layers"],
        n_classes=max(cfg.n_classes, dims["n_classes"]),
    )


def _needs_frames(cfg):
    return cfg.speech_level == "frame"


def evaluate_model(model, dataset, split="test", batch_size=64):
    """Infer-mode metrics over one split (or an explicit item list)."""
    items = dataset.splits[split] if isinstance(split, str) else split
    if not items:
        raise ValueError(f"split {split!r} is empty")
    preds, golds, probs = [], [], []
    total = 0.0
    with no_grad():
        for batch in dataset.batches(items, batch_size, frames=_needs_frames(model.cfg)):
            logits, _ = model.forward(batch, "infer")
            total += loss(logits, batch.labels).item() * len(batch)
            p = softmax_np(logits.data)
            probs.append(p)
            preds.extend(np.argmax(p, axis=-1).tolist())
            golds.extend(batch.labels.tolist())
    C = model.cfg.n_classes
    ua, wa = metrics(preds, golds, C)
    return {
        "ua": ua,
        "wa": wa,
        "loss": total / len(items),
        "per_class_recall": per_class_recall(preds, golds, C),
        "confusion": confusion_matrix(preds, golds, C).tolist(),
        "n": len(items),
        "preds": preds,
        "probs": np.concatenate(probs).tolist(),
    }


def train(cfg, dataset, checkpoint=None, progress=None):
    """Train on the ``train`` split, early-stop on ``val``.

    Returns a JSON-serialisable report; the best parameters are restored in
    the returned model and written to ``checkpoint`` when given.
    """
    cfg = fit_config_to_data(cfg, dataset)
    model = EmotionModel(cfg)
    params = model.parameters()
    opt = Adam(params, cfg.lr, tuple(cfg.adam_betas), cfg.adam_eps)
    root = Rng(cfg.seed)
    train_items = dataset.splits["train"]
    if not train_items or not dataset.splits["val"]:
        raise ValueError("dataset needs non-empty train and val splits")
    frames = _needs_frames(cfg)

    epochs = []
    best = None
    best_score = -math.inf
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = root.child("shuffle", epoch).permutation(len(train_items))
        tot_loss = tot_kl = 0.0
        for b, batch in enumerate(dataset.batches(train_items, cfg.batch_size, order, frames)):
            opt.zero_grad()
            logits, kl = model.forward(batch, "train", root.child("step", epoch, b))
            L = loss(logits, batch.labels, kl, cfg.kl_weight)
            if not math.isfinite(L.item()):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            L.backward()
            for p in params:
                if p.grad is not None and not np.isfinite(p.grad).all():
                    raise NumericalError(f"non-finite gradient at epoch {epoch}, batch {b}")
            opt.step()
            tot_loss += L.item() * len(batch)
            tot_kl += float(kl.data) * len(batch)
        val = evaluate_model(model, dataset, "val")
        row = {
            "epoch": epoch,
            "train_loss": tot_loss / len(train_items),
            "train_kl": tot_kl / len(train_items),
            "val_loss": val["loss"],
            "val_ua": val["ua"],
            "val_wa": val["wa"],
        }
        epochs.append(row)
        if progress is not None:
            progress(row)
        score = val["ua"] if cfg.early_stop_metric == "ua" else -val["loss"]
        if score > best_score:
            best_score = score
            best = {k: t.data.copy() for k, t in model.params.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    for k, arr in best.items():
        model.params[k].data = arr
    if checkpoint is not None:
        save_checkpoint(checkpoint, cfg, model.params)
    test = evaluate_model(model, dataset, "test") if dataset.splits["test"] else None
    report = {
        "config": cfg.to_dict(),
        "n_parameters": model.n_parameters(),
        "epochs": epochs,
        "best_epoch": best_epoch,
        "best_val_ua": epochs[best_epoch - 1]["val_ua"],
        "best_val_wa": epochs[best_epoch - 1]["val_wa"],
    }
    if test is not None:
        report["test_ua"] = test["ua"]
        report["test_wa"] = test["wa"]
    return model, report


def model_from_checkpoint(path):
    cfg, arrays = load_checkpoint(path)
    model = EmotionModel(cfg)
    missing = set(model.params) - set(arrays)
    extra = set(arrays) - set(model.params)
    if missing or extra:
        raise ValueError(f"checkpoint/config mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for k, arr in arrays.items():
        if model.params[k].shape != arr.shape:
            raise ValueError(f"parameter {k}: checkpoint shape {arr.shape} != model shape {model.params[k].shape}")
        model.params[k] = Tensor(arr, requires_grad=True)
    return model


def evaluate(checkpoint, dataset, split="test"):
    model = model_from_checkpoint(checkpoint)
    fit_config_to_data(model.cfg, dataset)
    return evaluate_model(model, dataset, split)
