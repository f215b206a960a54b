import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbca.config import ModelConfig
from kbca.data import make_batch
from kbca.model import EmotionModel, confusion_matrix, fuse_scores, loss, metrics, per_class_recall
from kbca.numerics import Rng, Tensor
from kbca.selfcheck import check_model_gradient, tiny_instance, tiny_item


class TestMetrics:
    # (preds, golds, UA, WA), worked out by hand
    CASES = [
        ([0, 1, 2, 3], [0, 1, 2, 3], 1.0, 1.0),
        ([0, 0, 0, 0], [0, 1, 2, 3], 0.25, 0.25),
        ([0, 0, 0, 1], [0, 0, 0, 1], 1.0, 1.0),
        ([0, 0, 0, 0, 1], [0, 0, 0, 1, 1], (1.0 + 0.5) / 2, 4 / 5),
        ([1, 1, 2, 2, 0, 3], [0, 1, 2, 2, 3, 3], (0 + 1 + 1 + 0.5) / 4, 4 / 6),
    ]

    @pytest.mark.parametrize("preds, golds, ua, wa", CASES)
    def test_hand_computed(self, preds, golds, ua, wa):
        assert metrics(preds, golds, 4) == (ua, wa)

    def test_missing_class_excluded_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            ua, wa = metrics([0, 1, 1], [0, 1, 0], 4)
        assert ua == 0.75 and wa == pytest.approx(2 / 3)
        assert "no gold instances" in caplog.text

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics([0], [0, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
    def test_duplication_invariance(self, pairs):
        preds, golds = zip(*pairs)
        once = metrics(preds, golds, 4)
        twice = metrics(preds * 2, golds * 2, 4)
        assert once[0] == pytest.approx(twice[0], abs=1e-15) and once[1] == pytest.approx(twice[1], abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
    def test_balanced_classes_ua_equals_wa(self, golds):
        # one copy of every class per block makes the class counts equal
        golds = [c for _ in golds for c in range(4)]
        preds = list(np.roll(golds, 1))
        ua, wa = metrics(preds, golds, 4)
        assert ua == pytest.approx(wa)

    def test_recall_and_confusion(self):
        preds, golds = [1, 1, 2, 0], [0, 1, 2, 2]
        assert per_class_recall(preds, golds, 4)[:3] == [0.0, 1.0, 0.5]
        assert math.isnan(per_class_recall(preds, golds, 4)[3])
        cm = confusion_matrix(preds, golds, 4)
        assert cm[0, 1] == 1 and cm[2, 0] == 1 and cm.sum() == 4


class TestFuseScores:
    def test_weights(self):
        out = fuse_scores([1.0, 0.0], [0.0, 1.0], 0.25)
        np.testing.assert_allclose(out, [0.25, 0.75])

    def test_endpoints(self):
        p1, p2 = np.array([0.6, 0.4]), np.array([0.1, 0.9])
        np.testing.assert_array_equal(fuse_scores(p1, p2, 1.0), p1)
        np.testing.assert_array_equal(fuse_scores(p1, p2, 0.0), p2)

    @pytest.mark.parametrize(
        "p1, p2, w",
        [([0.5, 0.5], [0.5, 0.5], 1.5), ([0.5, 0.6], [0.5, 0.5], 0.5), ([0.5, 0.5], [1.0], 0.5), ([1.2, -0.2], [0.5, 0.5], 0.5)],
    )
    def test_invalid(self, p1, p2, w):
        with pytest.raises(ValueError):
            fuse_scores(p1, p2, w)


class TestLoss:
    def test_uniform_logits(self):
        L = loss(Tensor(np.zeros((3, 4))), [0, 1, 2]).item()
        assert L == pytest.approx(math.log(4))

    def test_known_value(self):
        logits = np.array([[2.0, 0.0, -1.0]])
        ref = -(2.0 - math.log(math.exp(2) + 1 + math.exp(-1)))
        assert loss(Tensor(logits), [0]).item() == pytest.approx(ref, abs=1e-14)

    def test_kl_weight(self):
        base = loss(Tensor(np.zeros((1, 2))), [1]).item()
        assert loss(Tensor(np.zeros((1, 2))), [1], Tensor(0.5), 2.0).item() == pytest.approx(base + 1.0)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            loss(Tensor(np.zeros((1, 2))), [2])

    def test_large_logits_stable(self):
        assert loss(Tensor(np.array([[800.0, -800.0]])), [0]).item() == pytest.approx(0.0, abs=1e-12)


class TestModel:
    def test_bam_infer_equals_det_logits(self):
        det, batch = tiny_instance("det", seed=3)
        bam_model, _ = tiny_instance("bam", seed=3)
        assert set(det.params) == set(bam_model.params)
        a, _ = det.forward(batch, "infer")
        b, kl = bam_model.forward(batch, "infer")
        np.testing.assert_allclose(b.data, a.data, atol=1e-5)
        assert kl.item() > 0

    def test_parameter_names(self):
        m, _ = tiny_instance("bam", prior_source="key")
        assert "coatt0.text.prior_w" in m.params
        assert "text.sa.w_q" in m.params and "cls0.w" in m.params
        assert "text.layer_logits" not in m.params

    def test_separate_soften_head(self):
        m, batch = tiny_instance("bam", soften_uses_separate_head=True)
        assert "speech.soften.w_k" in m.params
        m.forward(batch, "infer")

    def test_predict_probabilities(self):
        m, batch = tiny_instance("det")
        (pred,) = m.predict(batch)
        assert pred.probs.sum() == pytest.approx(1.0) and 0 <= pred.label < 4

    @pytest.mark.parametrize("modality", ["text", "speech"])
    def test_single_modality(self, modality):
        m, batch = tiny_instance("det", modalities=modality)
        assert not any(k.startswith("coatt") for k in m.params)
        logits, kl = m.forward(batch, "infer")
        assert logits.shape == (1, 4) and kl.item() == 0.0

    def test_frame_level_speech(self):
        m, batch = tiny_instance("bam", speech_level="frame")
        logits, _ = m.forward(batch, "infer")
        assert logits.shape == (1, 4)

    def test_batch_equals_single(self):
        m, _ = tiny_instance("bam", seed=0)
        items = [tiny_item(0), tiny_item(5, words=("the", "grief"), utt="b")]
        single = [m.forward(make_batch([it]), "infer")[0].data[0] for it in items]
        got = m.forward(make_batch(items), "infer")[0].data
        np.testing.assert_allclose(got, np.stack(single), atol=1e-12)

    def test_train_needs_rng(self):
        m, batch = tiny_instance("bam")
        with pytest.raises(ValueError):
            m.forward(batch, "train")

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            tiny_instance("det", d=8, heads=3)

    @pytest.mark.parametrize("variant, kw", [("det", {"hard_knowledge": True}), ("bam", {"prior_source": "key"})])
    def test_gradient_variants(self, variant, kw):
        err, ok = check_model_gradient(variant, seed=1, **kw)
        assert ok, err

