"""Word-level pooling of frame embeddings and learned layer averaging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Tensor, as_tensor, matmul, softmax_rows


class AlignmentError(ValueError):
    pass


@dataclass
class AlignmentSpec:
    """Word segments over half-open frame ranges ``[start, end)``."""

    segments: list = field(default_factory=list)

    @property
    def words(self):
        return [w for w, _, _ in self.segments]

    def __len__(self):
        return len(self.segments)

    def validate(self, n_frames):
        prev_end = 0
        for k, (word, s, e) in enumerate(self.segments):
            if s < 0 or e > n_frames:
                raise AlignmentError(f"segment {k} ({word!r}) [{s}, {e}) outside 0..{n_frames}")
            if e <= s:
                raise AlignmentError(f"segment {k} ({word!r}) is empty: [{s}, {e})")
            if s < prev_end:
                raise AlignmentError(f"segment {k} ({word!r}) overlaps or is out of order")
            prev_end = e

    def pooling_matrix(self, n_frames):
        """``(n_words, n_frames)`` matrix whose row k averages segment k."""
        self.validate(n_frames)
        A = np.zeros((len(self.segments), n_frames))
        for k, (_, s, e) in enumerate(self.segments):
            A[k, s:e] = 1.0 / (e - s)
        return A

    def to_json(self, utt):
        return json.dumps({"utt": utt, "words": [[w, int(s), int(e)] for w, s, e in self.segments]})

    @classmethod
    def from_obj(cls, obj):
        return cls([(str(w), int(s), int(e)) for w, s, e in obj["words"]])


def pool_words(frames, align):
    """Mean of ``frames[s:e]`` for every segment, as a differentiable product."""
    frames = as_tensor(frames)
    A = align.pooling_matrix(frames.shape[-2])
    return matmul(Tensor(A), frames)


def read_alignments(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[str(obj["utt"])] = AlignmentSpec.from_obj(obj)
            except (KeyError, ValueError, TypeError) as exc:
                raise AlignmentError(f"{path}:{lineno}: bad alignment record ({exc})") from None
    return out


def write_alignments(path, aligns):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt, a in aligns.items():
            fh.write(a.to_json(utt) + "\n")


@dataclass
class LayerStack:
    """L same-shape encoder layers plus learnable mixing logits."""

    layers: np.ndarray
    layer_logits: Tensor

    def __post_init__(self):
        if isinstance(self.layers, (list, tuple)):
            shapes = {np.shape(x) for x in self.layers}
            if len(shapes) > 1:
                raise ValueError(f"layers differ in shape: {sorted(shapes)}")
        self.layers = np.asarray(self.layers, dtype=np.float64)
        if self.layers.ndim < 3:
            raise ValueError("layers must be stacked along a leading axis")


def layer_average(stack):
    """``sum_l softmax(logits)[l] * layers[l]``."""
    layers = stack.layers
    logits = as_tensor(stack.layer_logits)
    L = layers.shape[0]
    if logits.shape != (L,):
        raise ValueError(f"{L} layers but {logits.shape} logits")
    w = softmax_rows(logits.reshape(1, L)).reshape((L,) + (1,) * (layers.ndim - 1))
    return (w * Tensor(layers)).sum(axis=0)
