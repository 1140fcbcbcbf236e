import numpy as np
import pytest

from iasdetect import tensor as T
from iasdetect.encoder import (
    PRESETS, AuxHeads, Encoder, ModelConfig, accuracy, attention_head, layer_states, predict_layerwise,
    scaled_dot_attention, train_aux_heads,
)
from iasdetect.tensor import ShapeError

from conftest import make_aux


class TestConfig:
    def test_presets(self):
        small = ModelConfig.preset("small")
        base = ModelConfig.preset("base")
        assert (small.n, small.m, small.d_model, small.d_ff) == (4, 4, 128, 256)
        assert (base.n, base.m, base.d_model, base.d_ff) == (6, 8, 256, 512)
        assert small.d_k == 32 and base.d_k == 32

    def test_indivisible_width_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(d_model=10, m=4)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            ModelConfig.preset("huge")

    def test_round_trip(self):
        c = ModelConfig.preset("base", num_classes=4)
        assert ModelConfig.from_dict(c.to_dict()) == c
        assert set(PRESETS) == {"small", "base"}


class TestAttention:
    def test_single_head_matches_reference(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 8))
        wq, wk, wv = (rng.normal(size=(8, 4)) for _ in range(3))
        q, k, v = x @ wq, x @ wk, x @ wv
        s = q @ k.T / 2.0
        a = np.exp(s - s.max(axis=1, keepdims=True))
        ref = (a / a.sum(axis=1, keepdims=True)) @ v
        np.testing.assert_allclose(attention_head(x, wq, wk, wv).data, ref, atol=1e-12)

    def test_masked_keys_get_no_weight(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.normal(size=(1, 3, 4)) for _ in range(3))
        mask = np.array([0.0, 0.0, -1e9])[None, None, :]
        out = scaled_dot_attention(q, k, v, mask).data
        v2 = v.copy()
        v2[0, 2] = 100.0
        np.testing.assert_allclose(scaled_dot_attention(q, k, v2, mask).data, out)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            attention_head(np.ones((3, 8)), np.ones((6, 4)), np.ones((6, 4)), np.ones((6, 4)))


class TestGating:
    def test_all_ones_gates_equal_ungated(self, tiny_encoder, sentiment_task):
        ids = tiny_encoder.encode([s.text for s in sentiment_task.test[:20]])
        ones = np.ones(tiny_encoder.config.n * tiny_encoder.config.m)
        a = tiny_encoder.logits_np(ids)
        b = tiny_encoder.logits_np(ids, ones)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_zero_gate_removes_head(self, tiny_encoder, sentiment_task):
        """With a head's gate at 0 its value projection no longer matters."""
        ids = tiny_encoder.encode([s.text for s in sentiment_task.test[:4]])
        c = tiny_encoder.config
        g = np.ones(c.n * c.m)
        g[0] = 0.0
        before = tiny_encoder.logits_np(ids, g)
        tiny_encoder.params["l0.wv"].data[0] += 5.0
        np.testing.assert_allclose(tiny_encoder.logits_np(ids, g), before, atol=1e-12)

    def test_per_row_gates(self, tiny_encoder, sentiment_task):
        ids = tiny_encoder.encode([s.text for s in sentiment_task.test[:3]])
        rng = np.random.default_rng(0)
        g = rng.uniform(size=(3, tiny_encoder.config.n * tiny_encoder.config.m))
        batched = tiny_encoder.logits_np(ids, g)
        single = np.concatenate([tiny_encoder.logits_np(ids[i : i + 1], g[i]) for i in range(3)])
        np.testing.assert_allclose(batched, single, atol=1e-10)

    @pytest.mark.parametrize("bad", [np.full(6, 1.5), np.full(6, -0.1), np.full(5, 0.5)])
    def test_invalid_gates(self, tiny_encoder, bad):
        with pytest.raises((ValueError, ShapeError)):
            tiny_encoder.logits_np(tiny_encoder.encode(["a b"]), bad)

    def test_sequence_too_long(self, tiny_encoder):
        with pytest.raises(ShapeError):
            tiny_encoder.forward(np.ones((1, 40), dtype=int))


class TestEncoder:
    def test_output_shape_and_unknown_words(self, tiny_encoder):
        probs = tiny_encoder.predict_proba(["zzzz qqqq", "movie"])
        assert probs.shape == (2, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_save_load_round_trip(self, tiny_encoder, tmp_path, sentiment_task):
        tiny_encoder.save(tmp_path / "enc.npz")
        enc2 = Encoder.load(tmp_path / "enc.npz")
        assert enc2.checksum() == tiny_encoder.checksum()
        texts = [s.text for s in sentiment_task.test[:5]]
        np.testing.assert_array_equal(enc2.predict_proba(texts), tiny_encoder.predict_proba(texts))

    def test_frozen_flag(self, tiny_encoder):
        assert tiny_encoder.frozen
        tiny_encoder.set_frozen(False)
        assert not tiny_encoder.frozen

    def test_training_reaches_useful_accuracy(self, trained, trained_task):
        enc, _, rec = trained
        assert rec.train_loss[-1] < rec.train_loss[0]
        assert accuracy(enc, trained_task.test) >= 0.8
        assert enc.frozen


class TestAuxHeads:
    def test_layer_states_shapes(self, tiny_encoder):
        ids = tiny_encoder.encode(["good movie", "bad film here"])
        states = layer_states(tiny_encoder, ids)
        assert len(states) == tiny_encoder.config.n - 1
        assert all(s.shape == (2, tiny_encoder.config.d_model) for s in states)

    def test_layerwise_labels_shape(self, tiny_encoder):
        aux = make_aux(tiny_encoder)
        labels = predict_layerwise(tiny_encoder, aux, tiny_encoder.encode(["a", "b", "c"]))
        assert labels.shape == (3, tiny_encoder.config.n - 1)

    def test_rejects_gated_training(self, tiny_encoder, sentiment_task):
        with pytest.raises(ValueError):
            train_aux_heads(tiny_encoder, sentiment_task.train, gates=np.full(6, 0.5))

    def test_training_leaves_encoder_untouched(self, tiny_encoder, sentiment_task):
        before = tiny_encoder.checksum()
        train_aux_heads(tiny_encoder, sentiment_task.train[:64], sentiment_task.val[:16])
        assert tiny_encoder.checksum() == before

    def test_trained_heads_are_better_than_chance(self, trained, trained_task):
        from iasdetect.encoder import aux_accuracy

        enc, aux, _ = trained
        assert aux_accuracy(enc, aux, trained_task.test)[-1] >= 0.7

    def test_save_load(self, tiny_encoder, tmp_path):
        aux = make_aux(tiny_encoder, seed=4)
        aux.save(tmp_path / "aux.npz")
        aux2 = AuxHeads.load(tmp_path / "aux.npz")
        x = [T.Tensor(np.ones((1, tiny_encoder.config.d_model)))] * len(aux)
        for a, b in zip(aux.logits(x), aux2.logits(x)):
            np.testing.assert_array_equal(a.data, b.data)
