import math

import numpy as np
import pytest

from scenclass import autodiff as ad
from scenclass.errors import ConfigError, DataError, DimensionError
from scenclass.models import (ModelConfig, attention, attention_weights, build_model, classify,
                              cnn_classify, encoder_layer, encoder_stack, input_projection,
                              positional_encoding, rnn_classify)
from scenclass.models.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from scenclass.models.transformer import init_transformer

from conftest import analytic_and_numeric, max_rel_error


def small_config(**kw):
    base = dict(seq_len=6, n_vars=3, n_layers=2, d_model=8, n_heads=1)
    base.update(kw)
    return ModelConfig(**base)


def perturbed(model, scale=0.1, seed=0):
    rng = np.random.default_rng(seed)
    for node in model.params.values():
        node.value += scale * rng.standard_normal(node.shape)
    return model


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(seq_len=4, n_vars=2, d_model=30, n_heads=4)

    def test_counts_positive(self):
        with pytest.raises(ConfigError):
            ModelConfig(seq_len=0, n_vars=2)

    def test_reference_defaults(self):
        cfg = ModelConfig(seq_len=200, n_vars=14)
        assert (cfg.n_layers, cfg.d_model, cfg.ffn_width, cfg.n_heads) == (2, 30, 120, 1)


class TestInputProjection:
    def test_zero_weights(self):
        out = input_projection(np.ones((4, 3)), np.zeros((3, 5)), np.zeros((1, 5)))
        np.testing.assert_array_equal(out.value, 0.0)

    def test_identity(self):
        x = np.random.default_rng(0).random((4, 3))
        np.testing.assert_array_equal(input_projection(x, np.eye(3), np.zeros((1, 3))).value, x)

    def test_per_row_oracle(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.random((7, 3)), rng.standard_normal((3, 5)), rng.standard_normal((1, 5))
        out = input_projection(x, w, b).value
        for t in range(7):
            expected = [sum(x[t, m] * w[m, j] for m in range(3)) + b[0, j] for j in range(5)]
            np.testing.assert_allclose(out[t], expected, rtol=0, atol=1e-12)

    def test_variable_count_mismatch(self):
        with pytest.raises(DimensionError):
            input_projection(np.ones((4, 2)), np.ones((3, 5)), np.zeros((1, 5)))


class TestPositionalEncoding:
    def test_first_row(self):
        pe = positional_encoding(5, 6)
        np.testing.assert_array_equal(pe[0, 0::2], 0.0)
        np.testing.assert_array_equal(pe[0, 1::2], 1.0)

    def test_hand_evaluated(self):
        assert abs(positional_encoding(3, 4)[1, 0] - 0.8414709848078965) < 1e-15

    def test_frequencies(self):
        pe = positional_encoding(10, 8)
        for pos in range(10):
            for i in range(4):
                angle = pos / 10000 ** (2 * i / 8)
                assert pe[pos, 2 * i] == pytest.approx(math.sin(angle), abs=1e-14)
                assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(angle), abs=1e-14)

    def test_odd_width(self):
        assert positional_encoding(4, 5).shape == (4, 5)


class TestAttention:
    def test_single_step_returns_values(self):
        rng = np.random.default_rng(0)
        q, k, v = rng.standard_normal((1, 4)), rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
        np.testing.assert_array_equal(attention(q, k, v, 4).value, v)

    def test_zero_queries_average_values(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((5, 3))
        out = attention(np.zeros((5, 3)), rng.standard_normal((5, 3)), v, 3).value
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (5, 1)), atol=1e-15)

    def test_convex_combination_envelope(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            length, d = (int(v) for v in rng.integers(1, 9, size=2))
            q, k, v = (rng.standard_normal((length, d)) * 3 for _ in range(3))
            out = attention(q, k, v, d).value
            assert np.all(out >= v.min(axis=0) - 1e-12)
            assert np.all(out <= v.max(axis=0) + 1e-12)

    def test_scaling_matches_formula(self):
        rng = np.random.default_rng(3)
        q, k, v = (rng.standard_normal((4, 6)) for _ in range(3))
        scores = q @ k.T / math.sqrt(6)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(attention(q, k, v, 6).value, w @ v, atol=1e-14)
        np.testing.assert_allclose(attention_weights(q, k, 6).value.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            attention(np.ones((3, 4)), np.ones((3, 5)), np.ones((3, 4)), 4)


class TestEncoder:
    def setup_method(self):
        self.cfg = small_config(d_model=8, n_heads=2)
        self.params = init_transformer(self.cfg, seed=4)

    def test_shape_preserved(self):
        for length in (1, 3, 9):
            x = ad.constant(np.random.default_rng(length).standard_normal((length, 8)))
            assert encoder_layer(x, self.params, "layer0.", 2).shape == (length, 8)

    def test_output_rows_standardized(self):
        # layer norm with gain 1 / bias 0: variance is s^2 / (s^2 + eps) for pre-norm
        # variance s^2, so the FFN is scaled up to make eps negligible at 1e-6
        self.params["layer0.w_2"].value *= 20.0
        x = ad.constant(np.random.default_rng(5).standard_normal((6, 8)))
        out = encoder_layer(x, self.params, "layer0.", 2).value
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-6)

    def test_row_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((7, 8))
        perm = rng.permutation(7)
        out = encoder_layer(ad.constant(x), self.params, "layer0.", 2).value
        out_perm = encoder_layer(ad.constant(x[perm]), self.params, "layer0.", 2).value
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-9)

    def test_stack_composition(self):
        x = ad.constant(np.random.default_rng(7).standard_normal((5, 8)))
        one = encoder_stack(x, self.params, 1, 2).value
        np.testing.assert_array_equal(one, encoder_layer(x, self.params, "layer0.", 2).value)
        two = encoder_stack(x, self.params, 2, 2).value
        manual = encoder_layer(encoder_layer(x, self.params, "layer0.", 2), self.params, "layer1.", 2)
        np.testing.assert_array_equal(two, manual.value)

    def test_stack_finite_on_random_inputs(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = ad.constant(rng.uniform(-1, 1, (6, 8)))
            assert np.all(np.isfinite(encoder_stack(x, self.params, 2, 2).value))


class TestClassify:
    def test_zero_head_gives_uniform(self):
        model = build_model("transformer", small_config(), seed=1)
        model.params["w_c"].value[:] = 0.0
        p = classify(np.random.default_rng(0).random((6, 3)), model)
        assert (p.p_core_damage, p.p_ok) == (0.5, 0.5)
        assert p.predicted == 0  # tie goes to CORE_DAMAGE

    def test_distribution(self):
        model = perturbed(build_model("transformer", small_config(), seed=2))
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = classify(rng.random((6, 3)), model)
            assert 0 <= p.p_ok <= 1 and 0 <= p.p_core_damage <= 1
            assert abs(p.p_ok + p.p_core_damage - 1) <= 1e-12

    def test_time_permutation_invariance_without_positions(self):
        model = perturbed(build_model("transformer", small_config(positional_encoding=False), seed=3))
        rng = np.random.default_rng(2)
        x = rng.random((6, 3))
        p = classify(x, model)
        q = classify(x[rng.permutation(6)], model)
        assert abs(p.p_ok - q.p_ok) <= 1e-9

    def test_last_step_pooling(self):
        model = build_model("transformer", small_config(pooling="last"), seed=3)
        assert classify(np.random.default_rng(0).random((6, 3)), model).p_ok > 0

    def test_shape_mismatch(self):
        model = build_model("transformer", small_config(), seed=1)
        with pytest.raises(DimensionError):
            classify(np.zeros((5, 3)), model)

    def test_argmax_invariant_under_positive_logit_scaling(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            logits = rng.standard_normal((1, 2))
            base = int(np.argmax(ad.softmax_rows(logits).value))
            for factor in (0.01, 0.5, 3.0, 100.0):
                assert int(np.argmax(ad.softmax_rows(logits * factor).value)) == base


def _end_to_end_error(model, x, label):
    def loss(ps):
        return ad.binary_cross_entropy(model.with_params(ps).forward(x), label)

    analytic, numeric = analytic_and_numeric(loss, model.params)
    return max(max_rel_error(analytic[n], numeric[n]) for n in model.params)


def test_transformer_gradient_on_four_step_two_variable_scenario():
    model = perturbed(build_model("transformer", ModelConfig(seq_len=4, n_vars=2, d_model=4, n_heads=2,
                                                             ffn_dim=6), seed=5), seed=5)
    x = np.random.default_rng(5).random((4, 2))
    assert _end_to_end_error(model, x, 1) < 1e-4


class TestRNN:
    def test_zero_weights_uniform(self):
        model = build_model("rnn", small_config(), seed=0)
        for node in model.params.values():
            node.value[:] = 0.0
        p = rnn_classify(np.random.default_rng(0).random((6, 3)), model)
        assert (p.p_core_damage, p.p_ok) == (0.5, 0.5)

    def test_single_step_oracle(self):
        model = perturbed(build_model("rnn", small_config(seq_len=1, d_model=3), seed=1))
        p = model.params
        x = np.random.default_rng(1).random((1, 3))
        a = x[0] @ p["w_x"].value + p["b"].value[0]  # h0 = 0, so no recurrent term

        def sig(z):
            return 1 / (1 + np.exp(-z))

        i, f, g, o = sig(a[0:3]), sig(a[3:6]), np.tanh(a[6:9]), sig(a[9:12])
        c = f * 0.0 + i * g
        h = o * np.tanh(c)
        logits = h @ p["w_c"].value + p["b_c"].value[0]
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        out = rnn_classify(x, model)
        np.testing.assert_allclose([out.p_core_damage, out.p_ok], expected, rtol=0, atol=1e-12)

    def test_gradient_three_steps(self):
        model = perturbed(build_model("rnn", ModelConfig(seq_len=3, n_vars=2, d_model=3), seed=2), seed=2)
        assert _end_to_end_error(model, np.random.default_rng(2).random((3, 2)), 0) < 1e-4


class TestCNN:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((7, 4))
        k = 5
        w = np.zeros((k * 4, 4))
        w[(k // 2) * 4:(k // 2 + 1) * 4] = np.eye(4)
        out = ad.conv1d_same(x, w, np.zeros((1, 4)), k).value
        np.testing.assert_array_equal(out, x)

    def test_constant_input_gives_constant_interior(self):
        rng = np.random.default_rng(1)
        k, c_in, c_out = 3, 2, 5
        x = np.tile(rng.standard_normal((1, c_in)), (9, 1))
        out = ad.conv1d_same(x, rng.standard_normal((k * c_in, c_out)), rng.standard_normal((1, c_out)), k).value
        interior = out[k // 2: 9 - k // 2]
        np.testing.assert_allclose(interior, np.tile(interior[0], (len(interior), 1)), atol=1e-14)

    def test_zero_weights_uniform(self):
        model = build_model("cnn", small_config(), seed=0)
        for node in model.params.values():
            node.value[:] = 0.0
        p = cnn_classify(np.random.default_rng(0).random((6, 3)), model)
        assert (p.p_core_damage, p.p_ok) == (0.5, 0.5)

    def test_gradient(self):
        model = perturbed(build_model("cnn", ModelConfig(seq_len=5, n_vars=2, d_model=3, kernel_size=3),
                                      seed=3), seed=3)
        assert _end_to_end_error(model, np.random.default_rng(3).random((5, 2)), 1) < 1e-4

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            small_config(kernel_size=4)


@pytest.mark.parametrize("arch", ["transformer", "rnn", "cnn"])
def test_end_to_end_gradient_property(arch):
    rng = np.random.default_rng(10)
    for seed in range(5):
        length, n_vars, d = int(rng.integers(2, 7)), int(rng.integers(1, 4)), int(rng.integers(2, 9))
        heads = 2 if arch == "transformer" and d % 2 == 0 else 1
        cfg = ModelConfig(seq_len=length, n_vars=n_vars, d_model=d, n_heads=heads, ffn_dim=d, kernel_size=3)
        model = perturbed(build_model(arch, cfg, seed=seed), seed=seed)
        x = rng.random((length, n_vars))
        assert _end_to_end_error(model, x, seed % 2) < 1e-4


class TestCheckpoint:
    @pytest.mark.parametrize("arch", ["transformer", "rnn", "cnn"])
    def test_round_trip_is_bit_exact(self, arch, tmp_path):
        model = perturbed(build_model(arch, small_config(n_heads=2, pooling="last"), seed=1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        assert path.read_text().startswith(MAGIC + "\n")
        loaded = load_checkpoint(path)
        assert loaded.arch == arch and loaded.config == model.config
        for name, node in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].value, node.value)
        x = np.random.default_rng(0).random((6, 3))
        assert loaded.predict_proba(x) == model.predict_proba(x)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_text("NOPE\n")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_inconsistent_parameters(self, tmp_path):
        model = build_model("cnn", small_config(), seed=1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        text = path.read_text().replace("config d_model=8", "config d_model=6")
        path.write_text(text)
        with pytest.raises(ConfigError, match="conv1.w"):
            load_checkpoint(path)


def test_long_sequence_forward_backward():
    model = build_model("transformer", ModelConfig(seq_len=1024, n_vars=14), seed=0)
    x = np.random.default_rng(0).random((1024, 14))
    ad.backward(ad.binary_cross_entropy(model.forward(x), 1))
    assert all(np.all(np.isfinite(node.grad)) for node in model.params.values())
