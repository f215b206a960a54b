"""Knowledge-planted synthetic corpus.

Each utterance is a word sequence mixing filler tokens with a few
"emotional" tokens tied to the utterance's class.  Only emotional positions
carry class information, and only emotional tokens appear in the generated
VAD lexicon, so a prior that up-weights lexicon words is informative.

The class index ``c`` splits into two bits: text embeddings mostly encode
``c // 2`` and speech frames mostly encode ``c % 2`` (``cross_talk`` controls
how much of the other bit leaks in), so fusing both modalities is needed for
high accuracy.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data
from .alignment import AlignmentSpec, write_alignments
from .lexicon import LexiconEntry, LexiconTable
from .numerics import Rng


@dataclass
class SyntheticSpec:
    n_items: int = 3000
    n_classes: int = 4
    dim: int = 32
    n_layers: int = 3
    vocab_size: int = 300
    emotional_per_class: int = 10
    emotional_fraction: float = 0.15
    signal: float = 0.35
    cross_talk: float = 0.3
    marker: float = 0.5
    words: tuple = (8, 24)
    frames_per_word: tuple = (2, 6)
    noise: float = 1.0
    max_frames: int = 0
    seed: int = 0

    def validate(self):
        if self.n_classes < 2 or self.n_classes % 2:
            raise ValueError("n_classes must be an even number >= 2")
        if not 0.0 < self.emotional_fraction <= 1.0:
            raise ValueError("emotional_fraction must lie in (0, 1]")
        if self.words[0] < 1 or self.words[1] < self.words[0]:
            raise ValueError("bad word-count range")
        if self.frames_per_word[0] < 1 or self.frames_per_word[1] < self.frames_per_word[0]:
            raise ValueError("bad frames-per-word range")
        if self.max_frames and self.max_frames < self.words[1] * self.frames_per_word[0]:
            raise ValueError("max_frames too small for the longest utterance")
        return self

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        for k in ("words", "frames_per_word"):
            if k in obj:
                obj[k] = tuple(obj[k])
        return cls(**obj).validate()

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["words"] = list(self.words)
        out["frames_per_word"] = list(self.frames_per_word)
        return out


SYNTHETIC_PRESETS = {
    "desk": {},
    "paper-scale": {"dim": 768, "n_layers": 12, "max_frames": 400, "frames_per_word": (4, 16)},
}


def _unit(g, shape):
    v = g.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _vad_for_intensity(g, target):
    # random direction in [-1, 1]^3 scaled to the requested norm
    while True:
        v = _unit(g, 3) * target
        if np.all(np.abs(v) <= 1.0):
            return v


def generate(spec):
    """Build the corpus in memory.

    Returns a dict with ``text``, ``speech`` (utt -> ``(L, rows, dim)``),
    ``align``, ``tokens``, ``labels`` and ``lexicon``.
    """
    spec.validate()
    g = Rng(spec.seed).child("synthetic").generator()
    C, D, L = spec.n_classes, spec.dim, spec.n_layers
    scale = math.sqrt(D)

    filler = [f"w{j:03d}" for j in range(spec.vocab_size)]
    emo = [[f"emo{c}_{j:02d}" for j in range(spec.emotional_per_class)] for c in range(C)]

    word_text = {w: g.normal(size=D) for w in filler}
    word_speech = {w: g.normal(size=D) for w in filler}
    # emotional word j looks the same in every class apart from the class
    # offset, so token identity alone does not reveal the label
    for j in range(spec.emotional_per_class):
        base_t, base_w = g.normal(size=D), g.normal(size=D)
        for c in range(C):
            word_text[emo[c][j]] = base_t
            word_speech[emo[c][j]] = base_w
    marker_t = _unit(g, D) * scale
    marker_w = _unit(g, D) * scale
    text_bit = _unit(g, (C // 2, D))
    speech_bit = _unit(g, (2, D))
    leak_t = _unit(g, (C, D))
    leak_w = _unit(g, (C, D))
    text_proto = np.stack([text_bit[c // 2] + spec.cross_talk * leak_t[c] for c in range(C)]) * scale
    speech_proto = np.stack([speech_bit[c % 2] + spec.cross_talk * leak_w[c] for c in range(C)]) * scale
    layer_gain = np.linspace(0.5, 1.0, L) if L > 1 else np.ones(1)
    layer_gain = np.roll(layer_gain, -1) if L > 2 else layer_gain

    # intensities depend on j only, for the same reason
    strength = g.uniform(0.8, 1.6, size=spec.emotional_per_class)
    lex_entries = []
    for c in range(C):
        for j, w in enumerate(emo[c]):
            v, a, d = _vad_for_intensity(g, strength[j])
            lex_entries.append(LexiconEntry(w, float(v), float(a), float(d)))
    lexicon = LexiconTable(lex_entries)

    out = {"text": {}, "speech": {}, "align": {}, "tokens": {}, "labels": {}, "lexicon": lexicon}
    for i in range(spec.n_items):
        utt = f"utt{i:05d}"
        c = int(g.integers(C))
        n = int(g.integers(spec.words[0], spec.words[1] + 1))
        n_emo = max(1, int(g.binomial(n, spec.emotional_fraction)))
        emo_pos = set(g.choice(n, size=n_emo, replace=False).tolist())
        tokens = []
        for k in range(n):
            if k in emo_pos:
                tokens.append(emo[c][int(g.integers(len(emo[c])))])
            else:
                tokens.append(filler[int(g.integers(len(filler)))])

        text = np.empty((n, D))
        for k, tok in enumerate(tokens):
            row = spec.noise * (word_text[tok] + 0.5 * g.normal(size=D))
            if k in emo_pos:
                row = row + spec.marker * marker_t + spec.signal * text_proto[c]
            text[k] = row

        counts = g.integers(spec.frames_per_word[0], spec.frames_per_word[1] + 1, size=n)
        if spec.max_frames and counts.sum() > spec.max_frames:
            counts = np.full(n, spec.frames_per_word[0])
        segs, frames, f = [], [], 0
        for k, tok in enumerate(tokens):
            base = spec.noise * word_speech[tok]
            if k in emo_pos:
                base = base + spec.marker * marker_w + spec.signal * speech_proto[c]
            for _ in range(int(counts[k])):
                frames.append(base + spec.noise * g.normal(size=D))
            segs.append((tok, f, f + int(counts[k])))
            f += int(counts[k])
        frames = np.array(frames)

        layer_noise_t = g.normal(size=(L, n, D)) * 0.3 * spec.noise
        layer_noise_w = g.normal(size=(L, len(frames), D)) * 0.3 * spec.noise
        out["text"][utt] = layer_gain[:, None, None] * text[None] + layer_noise_t
        out["speech"][utt] = layer_gain[:, None, None] * frames[None] + layer_noise_w
        out["align"][utt] = AlignmentSpec(segs)
        out["tokens"][utt] = tokens
        out["labels"][utt] = c
    return out


def gen_synthetic(spec, out_dir):
    """Write the corpus to ``out_dir`` in the on-disk dataset layout."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = generate(spec)
    data.write_embeddings(out_dir / data.TEXT_FILE, corpus["text"])
    data.write_embeddings(out_dir / data.SPEECH_FILE, corpus["speech"])
    write_alignments(out_dir / data.ALIGN_FILE, corpus["align"])
    data.write_jsonl(out_dir / data.TOKENS_FILE, "tokens", corpus["tokens"])
    data.write_jsonl(out_dir / data.LABELS_FILE, "label", corpus["labels"])
    corpus["lexicon"].write_tsv(out_dir / data.LEXICON_FILE)
    (out_dir / "synthetic.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return out_dir
