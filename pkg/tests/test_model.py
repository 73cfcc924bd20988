import math

import numpy as np
import pytest

from tleseq.autodiff import Tape, save_checkpoint
from tleseq.losses import loss_ce_factorized, loss_ed_greedy2
from tleseq.model import ModelConfig, NeuralScorer, load_model, save_model
from tleseq.scoring import NormalizedView, greedy_search
from tleseq.sequences import Alphabet, OutputSequence, SamplePair

TINY = ModelConfig(input_size=4, output_size=3, embed_dim=5, hidden_dim=6, seed=0)


def zeroed(config=TINY):
    m = NeuralScorer(config)
    for _, t in m.params.items():
        t.data[...] = 0.0
    m.invalidate()
    return m


def random_pairs(config, n, rng, max_in=5, max_out=4):
    alpha = Alphabet.of_size(config.output_size)
    pairs = []
    for _ in range(n):
        x = tuple(int(v) for v in rng.integers(0, config.input_size,
                                               int(rng.integers(1, max_in + 1))))
        c = [int(v) for v in rng.integers(0, config.output_size,
                                          int(rng.integers(0, max_out + 1)))]
        pairs.append(SamplePair(x, OutputSequence.complete(c, alpha)))
    return pairs


class TestConfig:
    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError):
            ModelConfig(0, 3)
        with pytest.raises(ValueError):
            ModelConfig(3, 3, hidden_dim=0)

    def test_array_roundtrip(self):
        c = ModelConfig(4, 3, embed_dim=5, hidden_dim=6, seed=11)
        assert ModelConfig.from_array(c.as_array()) == c


class TestEncode:
    def test_zero_parameters_give_zero_context(self):
        m = zeroed()
        assert (m.encode((1, 2, 3)) == 0.0).all()

    def test_seeded_determinism(self):
        a = NeuralScorer(ModelConfig(4, 3, seed=7))
        b = NeuralScorer(ModelConfig(4, 3, seed=7))
        for (name, ta), (_, tb) in zip(a.params.items(), b.params.items()):
            assert (ta.data == tb.data).all(), name
        za = a.encode((1, 2, 3))
        assert (za == b.encode((1, 2, 3))).all()
        assert (za == a.encode((1, 2, 3))).all()

    def test_order_sensitive(self):
        m = NeuralScorer(TINY)
        assert not np.allclose(m.encode((1, 2, 3)), m.encode((3, 2, 1)))

    def test_empty_input_rejected(self):
        m = NeuralScorer(TINY)
        with pytest.raises(ValueError):
            m.encode(())
        with pytest.raises(ValueError):
            m.encode_batch([(1, 2), ()])

    def test_batch_matches_solo(self):
        m = NeuralScorer(TINY)
        inputs = [(1,), (0, 2, 3, 1), (2, 2)]
        batch = m.encode_batch(inputs)
        for i, x in enumerate(inputs):
            np.testing.assert_allclose(batch[i], m.encode(x), atol=1e-14)


class TestDeltaVector:
    def test_zero_parameters_give_zero_scores(self):
        m = zeroed()
        assert (m.deltas((1, 2), ()) == 0.0).all()
        z = m.encode((1, 2))
        _, v = m.delta_vector(z, m.initial_state(z), None)
        assert (v == 0.0).all()

    def test_pure(self):
        m = NeuralScorer(TINY)
        z = m.encode((1, 3))
        s = m.initial_state(z)
        s1, v1 = m.delta_vector(z, s, 2)
        s2, v2 = m.delta_vector(z, s, 2)
        assert (s1 == s2).all() and (v1 == v2).all()

    def test_finite_under_parameter_stress(self):
        m = NeuralScorer(TINY)
        for _, t in m.params.items():
            t.data *= 10.0
        m.invalidate()
        v = m.deltas((1, 2, 3), (0, 1, 2))
        assert np.isfinite(v).all()

    def test_scorer_interface_shape(self):
        m = NeuralScorer(TINY)
        assert m.extended_size == 4
        assert m.deltas((1,), (0, 2)).shape == (4,)

    def test_decoding_leaves_parameters_untouched(self):
        m = NeuralScorer(TINY)
        before = m.params.state_dict()
        m.greedy_decode_batch([(1, 2), (3,)], [6, 6])
        for name, arr in m.params.state_dict().items():
            assert (arr == before[name]).all(), name


class TestSoftmaxHead:
    def test_uniform(self):
        got = NeuralScorer.softmax_head(np.zeros(5))
        np.testing.assert_allclose(got, math.log(1 / 5), atol=1e-15)

    def test_normalizes(self):
        v = np.array([0.3, -2.0, 5.0, 1.1])
        assert np.exp(NeuralScorer.softmax_head(v)).sum() == pytest.approx(1.0, abs=1e-12)

    def test_shift_invariant(self):
        v = np.array([0.5, 1.5, -0.5])
        np.testing.assert_allclose(
            NeuralScorer.softmax_head(v), NeuralScorer.softmax_head(v + 5.0), atol=1e-12
        )


class TestDecodeBatch:
    @pytest.mark.parametrize("normalized", [False, True])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_sequential_greedy(self, seed, normalized):
        config = ModelConfig(4, 3, embed_dim=5, hidden_dim=6, seed=seed)
        m = NeuralScorer(config)
        rng = np.random.default_rng(seed + 100)
        pairs = random_pairs(config, 20, rng)
        caps = [2 * p.ground_truth.content_length + 5 for p in pairs]
        batch = m.greedy_decode_batch([p.input_tokens for p in pairs], caps,
                                      normalized=normalized)
        view = NormalizedView(m) if normalized else m
        for p, cap, got in zip(pairs, caps, batch):
            want = greedy_search(view, p.input_tokens, cap).content
            assert got == want

    def test_cap_zero_forces_immediate_stop(self):
        m = NeuralScorer(TINY)
        assert m.greedy_decode_batch([(1, 2)], [0]) == [()]


class TestBatchedObjectives:
    def test_ce_matches_reference(self):
        m = NeuralScorer(TINY)
        pairs = random_pairs(TINY, 8, np.random.default_rng(5))
        want = float(np.mean([loss_ce_factorized(m, p.input_tokens, p.ground_truth)
                              for p in pairs]))
        assert m.ce_objective_batch(pairs) == pytest.approx(want, abs=1e-10)

    def test_greedy2_matches_reference(self):
        m = NeuralScorer(TINY)
        pairs = random_pairs(TINY, 8, np.random.default_rng(6))
        want = float(np.mean([loss_ed_greedy2(m, p.input_tokens, p.ground_truth,
                                              clip_value=5.0) for p in pairs]))
        assert m.greedy2_objective_batch(pairs, clip_value=5.0) == \
            pytest.approx(want, abs=1e-10)


class TestTapePaths:
    def test_tape_ce_equals_batched(self):
        m = NeuralScorer(TINY)
        pairs = random_pairs(TINY, 6, np.random.default_rng(7))
        tape = Tape()
        got = float(m.ce_loss_on_tape(tape, pairs).data[0])
        assert got == pytest.approx(m.ce_objective_batch(pairs), abs=1e-10)

    def test_tape_greedy2_equals_batched(self):
        from tleseq import kernels

        m = NeuralScorer(TINY)
        pairs = random_pairs(TINY, 6, np.random.default_rng(8))
        inputs = [p.input_tokens for p in pairs]
        caps = [2 * p.ground_truth.content_length + 5 for p in pairs]
        decodes = m.greedy_decode_batch(inputs, caps)
        targets = []
        for p, dec in zip(pairs, decodes):
            t = kernels.delta_matrix(p.ground_truth.content_array(),
                                     np.asarray(dec, dtype=np.int64),
                                     m.config.output_size)
            t[:, -1] = np.minimum(t[:, -1], 5.0)
            targets.append(t)
        tape = Tape()
        got = float(m.greedy2_loss_on_tape(tape, inputs, decodes, targets).data[0])
        assert got == pytest.approx(m.greedy2_objective_batch(pairs, clip_value=5.0),
                                    abs=1e-10)

    @pytest.mark.parametrize("which", ["ce", "greedy2"])
    def test_gradients_match_finite_differences(self, which):
        from tleseq import kernels
        from tleseq.autodiff import grad_check

        config = ModelConfig(3, 3, embed_dim=4, hidden_dim=8, seed=2)
        m = NeuralScorer(config)
        # redraw wider than init so gradients sit above the FD noise floor
        rng = np.random.default_rng(9)
        for _, t in m.params.items():
            t.data[...] = rng.uniform(-0.8, 0.8, t.data.shape)
        m.invalidate()
        pairs = random_pairs(config, 2, np.random.default_rng(3), max_in=3, max_out=2)

        if which == "ce":
            def build():
                tape = Tape()
                return tape, m.ce_loss_on_tape(tape, pairs)
        else:
            inputs = [p.input_tokens for p in pairs]
            caps = [2 * p.ground_truth.content_length + 5 for p in pairs]
            decodes = m.greedy_decode_batch(inputs, caps)
            targets = []
            for p, dec in zip(pairs, decodes):
                t = kernels.delta_matrix(p.ground_truth.content_array(),
                                         np.asarray(dec, dtype=np.int64), 3)
                t[:, -1] = np.minimum(t[:, -1], 5.0)
                targets.append(t)

            def build():
                tape = Tape()
                return tape, m.greedy2_loss_on_tape(tape, inputs, decodes, targets)

        assert grad_check(build, m.params, eps=1e-5) <= 1e-4


class TestPersistence:
    def test_roundtrip_preserves_scores(self, tmp_path):
        m = NeuralScorer(TINY)
        path = tmp_path / "m.ckpt"
        save_model(path, m)
        back = load_model(path)
        assert back.config == TINY
        np.testing.assert_array_equal(back.deltas((1, 2), (0,)), m.deltas((1, 2), (0,)))

    def test_rejects_configless_checkpoint(self, tmp_path):
        m = NeuralScorer(TINY)
        path = tmp_path / "raw.ckpt"
        save_checkpoint(path, m.params.state_dict())
        with pytest.raises(ValueError):
            load_model(path)

    def test_invalidate_refreshes_cached_scores(self):
        m = NeuralScorer(TINY)
        before = m.deltas((1, 2), (0,)).copy()
        for _, t in m.params.items():
            t.data *= 1.5
        m.invalidate()
        after = m.deltas((1, 2), (0,))
        assert not np.allclose(before, after)
