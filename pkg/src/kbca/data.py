"""On-disk formats and padded batching.

Embedding files (one per modality)::

    "EMB1" | u32 version | u32 n_items
    per item: u32 id_len | id (UTF-8) | u32 n_layers | u32 rows | u32 cols
              | f32 payload, n_layers * rows * cols values, little-endian

Labels and tokens are JSON-lines (``{"utt", "label"}`` / ``{"utt", "tokens"}``),
alignments follow :mod:`kbca.alignment`, the lexicon is a TSV file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AlignmentError, read_alignments
from .lexicon import intensity, load_lexicon

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1

TEXT_FILE = "text.emb"
SPEECH_FILE = "speech.emb"
ALIGN_FILE = "align.jsonl"
TOKENS_FILE = "tokens.jsonl"
LABELS_FILE = "labels.jsonl"
LEXICON_FILE = "lexicon.tsv"

# 2000 / 500 / 500 of the default 3000 synthetic items
DEFAULT_SPLIT = (4 / 6, 1 / 6, 1 / 6)


class DataError(ValueError):
    pass


def write_embeddings(path, items):
    """``items`` maps utterance id -> array ``(n_layers, rows, cols)``."""
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", EMB_VERSION, len(items)))
        for utt, arr in items.items():
            arr = np.asarray(arr)
            if arr.ndim == 2:
                arr = arr[None]
            uid = utt.encode("utf-8")
            fh.write(struct.pack("<I", len(uid)))
            fh.write(uid)
            fh.write(struct.pack("<III", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_embeddings(path):
    buf = Path(path).read_bytes()
    if buf[:4] != EMB_MAGIC:
        raise DataError(f"{path}: not an EMB1 file")
    try:
        version, n = struct.unpack_from("<II", buf, 4)
        if version != EMB_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        off = 12
        out = {}
        for _ in range(n):
            (id_len,) = struct.unpack_from("<I", buf, off)
            off += 4
            utt = buf[off : off + id_len].decode("utf-8")
            off += id_len
            shape = struct.unpack_from("<III", buf, off)
            off += 12
            count = shape[0] * shape[1] * shape[2]
            if off + 4 * count > len(buf):
                raise DataError(f"{path}: truncated payload for {utt!r}")
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            out[utt] = arr.astype(np.float64)
    except struct.error as exc:
        raise DataError(f"{path}: truncated file ({exc})") from None
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def _read_jsonl(path, key):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[str(obj["utt"])] = obj[key]
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from None
    return out


def write_jsonl(path, key, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt, v in values.items():
            fh.write(json.dumps({"utt": utt, key: v}) + "\n")


def read_labels(path):
    return {u: int(v) for u, v in _read_jsonl(path, "label").items()}


def read_tokens(path):
    return {u: list(v) for u, v in _read_jsonl(path, "tokens").items()}


@dataclass
class Item:
    utt: str
    text: np.ndarray  # (L, n_words, d)
    speech: np.ndarray  # (L, n_frames, d)
    align: object
    tokens: list
    intensity: np.ndarray
    label: int
    speech_words: np.ndarray = None  # (L, n_words, d)

    def __post_init__(self):
        if self.speech_words is None:
            self.speech_words = np.matmul(self.align.pooling_matrix(self.speech.shape[1]), self.speech)


@dataclass
class Batch:
    """Padded arrays for B items; masks are True at real positions."""

    utts: list
    text: np.ndarray  # (L_t, B, n, d)
    speech: np.ndarray  # (L_s, B, F, d)
    speech_words: np.ndarray  # (L_s, B, n, d), each layer word-pooled
    pool: np.ndarray  # (B, n, F)
    word_mask: np.ndarray  # (B, n)
    frame_mask: np.ndarray  # (B, F)
    intensity: np.ndarray  # (B, n)
    frame_intensity: np.ndarray  # (B, F)
    labels: np.ndarray  # (B,)

    def __len__(self):
        return len(self.utts)


def make_batch(items, frames=True):
    """Pad ``items`` into one Batch; ``frames=False`` skips frame-level arrays."""
    B = len(items)
    n = max(it.text.shape[1] for it in items)
    F = max(it.speech.shape[1] for it in items) if frames else 0
    Lt, d_t = items[0].text.shape[0], items[0].text.shape[2]
    Ls, d_s = items[0].speech.shape[0], items[0].speech.shape[2]
    text = np.zeros((Lt, B, n, d_t))
    speech_words = np.zeros((Ls, B, n, d_s))
    speech = np.zeros((Ls, B, F, d_s))
    pool = np.zeros((B, n, F))
    word_mask = np.zeros((B, n), dtype=bool)
    frame_mask = np.zeros((B, F), dtype=bool)
    inten = np.zeros((B, n))
    labels = np.zeros(B, dtype=np.int64)
    for b, it in enumerate(items):
        if it.text.shape[0] != Lt or it.speech.shape[0] != Ls:
            raise DataError("items disagree on the number of encoder layers")
        nw, nf = it.text.shape[1], it.speech.shape[1]
        text[:, b, :nw] = it.text
        speech_words[:, b, :nw] = it.speech_words
        if frames:
            speech[:, b, :nf] = it.speech
            pool[b, :nw, :nf] = it.align.pooling_matrix(nf)
            frame_mask[b, :nf] = True
        word_mask[b, :nw] = True
        inten[b, :nw] = it.intensity
        labels[b] = it.label
    frame_inten = np.einsum("bnf,bn->bf", (pool > 0).astype(np.float64), inten)
    return Batch(
        [it.utt for it in items], text, speech, speech_words, pool,
        word_mask, frame_mask, inten, frame_inten, labels,
    )


def item_from_arrays(utt, text, speech, align, tokens, lex, label=0):
    """Validate one utterance and attach its lexicon intensities."""
    text = np.asarray(text, dtype=np.float64)
    speech = np.asarray(speech, dtype=np.float64)
    if text.ndim == 2:
        text = text[None]
    if speech.ndim == 2:
        speech = speech[None]
    if len(tokens) != len(align):
        raise DataError(f"{utt}: {len(tokens)} tokens but {len(align)} alignment segments")
    if text.shape[1] != len(tokens):
        raise DataError(f"{utt}: {text.shape[1]} text rows but {len(tokens)} tokens")
    try:
        align.validate(speech.shape[1])
    except AlignmentError as exc:
        raise DataError(f"{utt}: {exc}") from None
    return Item(utt, text, speech, align, list(tokens), intensity(tokens, lex), int(label))


def _unit_hash(utt):
    return int.from_bytes(hashlib.sha256(utt.encode("utf-8")).digest()[:8], "little") / 2.0**64


def fold_of(utt, k):
    return int(_unit_hash(utt) * k)


def split_of(utt, fractions=DEFAULT_SPLIT):
    """Deterministic train/val/test assignment from a hash of the utterance id."""
    h = _unit_hash(utt)
    if h < fractions[0]:
        return "train"
    if h < fractions[0] + fractions[1]:
        return "val"
    return "test"


class Dataset:
    """All items of a dataset directory, grouped by split."""

    def __init__(self, items, lexicon, fractions=DEFAULT_SPLIT):
        self.items = items
        self.lexicon = lexicon
        self.splits = {"train": [], "val": [], "test": []}
        for it in items:
            self.splits[split_of(it.utt, fractions)].append(it)

    @classmethod
    def load(cls, root, fractions=DEFAULT_SPLIT):
        root = Path(root)
        try:
            lex = load_lexicon(root / LEXICON_FILE)
            text = read_embeddings(root / TEXT_FILE)
            speech = read_embeddings(root / SPEECH_FILE)
            aligns = read_alignments(root / ALIGN_FILE)
            tokens = read_tokens(root / TOKENS_FILE)
            labels = read_labels(root / LABELS_FILE)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from exc
        items = []
        for utt in labels:
            for name, table in (("text", text), ("speech", speech), ("alignment", aligns), ("tokens", tokens)):
                if utt not in table:
                    raise DataError(f"{utt}: missing from {name} file")
            items.append(item_from_arrays(utt, text[utt], speech[utt], aligns[utt], tokens[utt], lex, labels[utt]))
        if not items:
            raise DataError(f"{root}: no items")
        return cls(items, lex, fractions)

    def kfold(self, k, fold):
        """Same items re-split: hashed fold ``fold`` is test, the next one val."""
        if k < 3 or not 0 <= fold < k:
            raise ValueError("k-fold needs k >= 3 and 0 <= fold < k")
        out = Dataset([], self.lexicon)
        out.items = self.items
        for it in self.items:
            f = fold_of(it.utt, k)
            name = "test" if f == fold else "val" if f == (fold + 1) % k else "train"
            out.splits[name].append(it)
        return out

    @property
    def dims(self):
        it = self.items[0]
        return {
            "text_layers": it.text.shape[0],
            "speech_layers": it.speech.shape[0],
            "text_dim": it.text.shape[2],
            "speech_dim": it.speech.shape[2],
            "n_classes": max(i.label for i in self.items) + 1,
        }

    def batches(self, split, batch_size, order=None, frames=True):
        items = self.splits[split] if isinstance(split, str) else split
        idx = list(range(len(items)) if order is None else order)
        for s in range(0, len(idx), batch_size):
            yield make_batch([items[i] for i in idx[s : s + batch_size]], frames)
