import json

import numpy as np
import pytest

from kbca.data import Dataset
from kbca.synthetic import SYNTHETIC_PRESETS, SyntheticSpec, gen_synthetic, generate

SMALL = dict(n_items=40, dim=8, n_layers=2, vocab_size=30, emotional_per_class=3, seed=4)


def test_same_seed_byte_identical(tmp_path):
    a = gen_synthetic(SyntheticSpec(**SMALL), tmp_path / "a")
    b = gen_synthetic(SyntheticSpec(**SMALL), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_different_seed_differs(tmp_path):
    a = gen_synthetic(SyntheticSpec(**SMALL), tmp_path / "a")
    b = gen_synthetic(SyntheticSpec(**{**SMALL, "seed": 5}), tmp_path / "b")
    assert (a / "text.emb").read_bytes() != (b / "text.emb").read_bytes()


def test_output_loads_and_validates(tmp_path):
    root = gen_synthetic(SyntheticSpec(**SMALL), tmp_path / "d")
    ds = Dataset.load(root)
    assert len(ds.items) == 40
    assert ds.dims == {"text_layers": 2, "speech_layers": 2, "text_dim": 8, "speech_dim": 8, "n_classes": 4}
    for it in ds.items:
        it.align.validate(it.speech.shape[1])
        assert 8 <= len(it.tokens) <= 24
        spans = [e - s for _, s, e in it.align.segments]
        assert min(spans) >= 2 and max(spans) <= 6
    assert json.loads((root / "synthetic.json").read_text())["seed"] == 4


def test_lexicon_covers_exactly_emotional_tokens():
    corpus = generate(SyntheticSpec(**SMALL))
    lex = corpus["lexicon"]
    for utt, toks in corpus["tokens"].items():
        c = corpus["labels"][utt]
        emo = [t for t in toks if t in lex]
        assert emo, "every utterance has at least one emotional token"
        assert all(t.startswith(f"emo{c}_") for t in emo)
        assert all(t.startswith("w") for t in toks if t not in lex)
    assert all(e.intensity > 0 for e in lex)


def test_emotional_tokens_carry_class_offset():
    spec = SyntheticSpec(**{**SMALL, "n_items": 400, "noise": 0.0, "marker": 0.0})
    corpus = generate(spec)
    lex = corpus["lexicon"]
    by_class = {c: [] for c in range(4)}
    for utt, toks in corpus["tokens"].items():
        X = corpus["text"][utt][-1]
        for k, t in enumerate(toks):
            if t in lex:
                by_class[corpus["labels"][utt]].append(X[k])
            else:
                assert np.allclose(X[k], 0.0)
    means = np.stack([np.mean(v, axis=0) for v in by_class.values()])
    # the two text-side bits separate cleanly; within a bit only cross-talk differs
    assert np.linalg.norm(means[0] - means[2]) > 1.0


def _class_mean_spread(signal):
    corpus = generate(SyntheticSpec(**{**SMALL, "n_items": 600, "signal": signal}))
    lex = corpus["lexicon"]
    rows = {c: [] for c in range(4)}
    for utt, toks in corpus["tokens"].items():
        X = corpus["text"][utt][-1]
        rows[corpus["labels"][utt]].extend(X[k] for k, t in enumerate(toks) if t in lex)
    means = np.stack([np.mean(v, axis=0) for v in rows.values()])
    return np.linalg.norm(means - means.mean(axis=0), axis=1).max()


def test_signal_zero_removes_class_information():
    # at signal 0 the emotional vocabulary and intensities are shared across
    # classes, so class means differ only by sampling noise
    assert _class_mean_spread(0.0) < 0.6
    assert _class_mean_spread(1.0) > 2.0
    corpus = generate(SyntheticSpec(**SMALL))
    strengths = {}
    for e in corpus["lexicon"]:
        strengths.setdefault(e.word.split("_")[1], set()).add(round(e.intensity, 9))
    assert all(len(v) == 1 for v in strengths.values())


@pytest.mark.parametrize(
    "bad",
    [dict(n_classes=3), dict(emotional_fraction=0.0), dict(words=(5, 2)), dict(frames_per_word=(0, 2)), dict(max_frames=3)],
)
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        SyntheticSpec(**bad).validate()


def test_spec_dict_round_trip():
    s = SyntheticSpec(**SMALL)
    assert SyntheticSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_paper_scale_preset_caps_frames():
    spec = SyntheticSpec(**{**SYNTHETIC_PRESETS["paper-scale"], "n_items": 3, "dim": 16, "n_layers": 2})
    corpus = generate(spec)
    assert all(v.shape[1] <= 400 for v in corpus["speech"].values())
