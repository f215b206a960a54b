"""VAD emotion lexicon reader and per-token emotion intensity."""

from __future__ import annotations

import logging
import math
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import as_tensor, matmul

log = logging.getLogger(__name__)

MAX_INTENSITY = math.sqrt(3.0)


class LexiconError(ValueError):
    """Malformed lexicon file."""


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    valence: float
    arousal: float
    dominance: float

    @property
    def intensity(self):
        return math.sqrt(self.valence**2 + self.arousal**2 + self.dominance**2)


class LexiconTable:
    """Immutable word -> LexiconEntry map keyed by lowercase word."""

    def __init__(self, entries=()):
        self._entries = {}
        for e in entries:
            self._entries[e.word.lower()] = e

    def __len__(self):
        return len(self._entries)

    def __contains__(self, word):
        return normalize_token(word) in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def get(self, word):
        return self._entries.get(normalize_token(word))

    def write_tsv(self, path):
        lines = ["word\tvalence\tarousal\tdominance"]
        for e in self._entries.values():
            lines.append(f"{e.word}\t{e.valence:.6f}\t{e.arousal:.6f}\t{e.dominance:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def normalize_token(token):
    return token.strip().strip(string.punctuation).lower()


def load_lexicon(path):
    """Read a 4-column TSV lexicon (word, valence, arousal, dominance).

    An optional header line starting with ``word`` is skipped.  Duplicate
    words keep the last entry; multi-word entries are dropped.  Both emit a
    warning.  Any malformed line raises :class:`LexiconError` naming the line.
    """
    entries = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        cols = line.split("\t")
        if lineno == 1 and cols[0].strip().lower().startswith("word"):
            continue
        if len(cols) != 4:
            raise LexiconError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
        word = cols[0].strip()
        try:
            scores = [float(c) for c in cols[1:]]
        except ValueError:
            raise LexiconError(f"{path}:{lineno}: non-numeric score in {line!r}") from None
        for s in scores:
            if not (-1.0 <= s <= 1.0):
                raise LexiconError(f"{path}:{lineno}: score {s} outside [-1, 1]")
        if " " in word:
            log.warning("%s:%d: skipping multi-word entry %r", path, lineno, word)
            continue
        key = word.lower()
        if key in entries:
            log.warning("%s:%d: duplicate entry %r, keeping the last one", path, lineno, word)
        entries[key] = LexiconEntry(key, *scores)
    return LexiconTable(entries.values())


def intensity(tokens, lex):
    """L2 norm of (v, a, d) per token; 0 for tokens missing from ``lex``."""
    out = np.zeros(len(tokens))
    for i, tok in enumerate(tokens):
        e = lex.get(tok)
        if e is not None:
            out[i] = e.intensity
    return out


def soften(att_map, i):
    """Smooth a sparse intensity vector through a row-stochastic map.

    ``att_map`` is ``(..., n, n)`` and ``i`` is ``(..., n)``; entry ``k`` of the
    result is row ``k`` of the map dotted with ``i``.
    """
    att_map = as_tensor(att_map)
    i = as_tensor(i)
    if att_map.shape[-1] != i.shape[-1]:
        raise ValueError(f"map has {att_map.shape[-1]} columns but intensity has {i.shape[-1]} entries")
    col = i.reshape(i.shape + (1,))
    out = matmul(att_map, col)
    return out.reshape(out.shape[:-1])
