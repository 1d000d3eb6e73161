import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ledgerlens import nn
from ledgerlens.errors import ConfigError, DataError, NumericalError

from oracles import finite_difference_grads, random_small_network, relative_error


class TestLayerSpec:
    @pytest.mark.parametrize("name,sizes", [
        ("AE1", (81, 3, 81)),
        ("AE2", (81, 4, 3, 4, 81)),
        ("AE3", (81, 8, 4, 3, 4, 8, 81)),
        ("AE5", (81, 32, 16, 8, 4, 3, 4, 8, 16, 32, 81)),
    ])
    def test_named_architectures(self, name, sizes):
        assert nn.LayerSpec.from_name(name, 81).layer_sizes == sizes

    def test_ae9_matches_table(self):
        spec = nn.LayerSpec.from_name("AE9", 401)
        assert spec.layer_sizes == (401, 512, 256, 128, 64, 32, 16, 8, 4, 3,
                                    4, 8, 16, 32, 64, 128, 256, 512, 401)

    @pytest.mark.parametrize("level", range(1, 10))
    def test_every_architecture_is_shape_symmetric(self, level):
        spec = nn.LayerSpec.from_name(f"AE{level}", 40)
        params = nn.glorot_init(spec, 0)
        enc = [w.shape for w, _ in params.encoder]
        dec = [w.shape for w, _ in params.decoder]
        assert enc == [s[::-1] for s in dec[::-1]]
        out, _ = nn.forward(params, spec, np.zeros((2, 40)))
        assert out.shape == (2, 40)

    @pytest.mark.parametrize("sizes", [(5, 3, 4), (5, 5, 5), (5, 3, 2, 3, 5, 9), (4, 2, 3, 2, 4)])
    def test_rejects_invalid(self, sizes):
        with pytest.raises(ConfigError):
            nn.LayerSpec(sizes)

    @pytest.mark.parametrize("slope", [0.0, 1.0, -0.2])
    def test_rejects_slope(self, slope):
        with pytest.raises(ConfigError):
            nn.LayerSpec((4, 2, 4), slope)

    def test_parse_explicit(self):
        assert nn.LayerSpec.parse("81-8-3-8-81", 81).layer_sizes == (81, 8, 3, 8, 81)
        with pytest.raises(ConfigError):
            nn.LayerSpec.parse("80-8-3-8-80", 81)
        with pytest.raises(ConfigError):
            nn.LayerSpec.parse("AE10", 81)


class TestGlorot:
    def test_deterministic(self):
        spec = nn.LayerSpec.from_name("AE3", 20)
        a, b = nn.glorot_init(spec, 7), nn.glorot_init(spec, 7)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_bound_for_4_to_3(self):
        spec = nn.LayerSpec((4, 3, 4))
        w = nn.glorot_init(spec, 1).weights[0]
        assert w.shape == (4, 3)
        assert np.abs(w).max() <= math.sqrt(6 / 7)
        assert math.isclose(math.sqrt(6 / 7), 0.9258, abs_tol=1e-4)

    def test_biases_zero(self):
        params = nn.glorot_init(nn.LayerSpec.from_name("AE4", 30), 3)
        assert all(not b.any() for b in params.biases)


class TestForward:
    def test_zero_params_give_half(self):
        spec = nn.LayerSpec((6, 2, 6))
        params = nn.glorot_init(spec, 0).zeros_like()
        out, _ = nn.forward(params, spec, np.ones((3, 6)))
        assert np.all(out == 0.5)

    def test_hand_evaluation(self):
        spec = nn.LayerSpec((2, 1, 2), slope=0.4)
        params = nn.NetworkParams([np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])],
                                  [np.zeros(1), np.zeros(2)])
        out, cache = nn.forward(params, spec, [1.0, 0.0])
        assert cache.latent[0, 0] == 1.0
        s1 = 1 / (1 + math.exp(-1))
        np.testing.assert_allclose(out[0], [s1, s1], rtol=1e-15)
        assert math.isclose(s1, 0.7311, abs_tol=1e-4)

    def test_leaky_relu_slope(self):
        assert nn.leaky_relu(np.array(-1.0), 0.4) == pytest.approx(-0.4)
        assert nn.leaky_relu(np.array(2.0), 0.4) == 2.0
        assert nn.leaky_relu_grad(np.array(0.0), 0.4) == 1.0

    def test_dimension_mismatch(self):
        spec = nn.LayerSpec((6, 2, 6))
        with pytest.raises(DataError):
            nn.forward(nn.glorot_init(spec, 0), spec, np.zeros((2, 5)))

    def test_latent_length(self):
        spec = nn.LayerSpec.from_name("AE3", 12)
        z = nn.encode(nn.glorot_init(spec, 0), spec, np.eye(12))
        assert z.shape == (12, 3)


class TestLoss:
    def test_half_prediction(self):
        assert nn.bce_loss([1, 0], [0.5, 0.5]) == pytest.approx(2 * math.log(2), rel=1e-15)
        assert math.isclose(2 * math.log(2), 1.3863, abs_tol=1e-4)

    def test_perfect_limit(self):
        eps = 1e-7
        loss = nn.bce_loss([1, 0], [1 - eps, eps], eps)
        assert loss == pytest.approx(2 * eps, rel=1e-6)

    def test_clamped_beyond_limits(self):
        assert nn.bce_loss([1, 0], [1.0, 0.0]) == pytest.approx(2e-7, rel=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.001, 0.999)), min_size=1, max_size=20))
    def test_complement_symmetry(self, pairs):
        x = np.array([p[0] for p in pairs], dtype=float)
        xh = np.array([p[1] for p in pairs])
        assert nn.bce_loss(x, xh) == pytest.approx(nn.bce_loss(1 - x, 1 - xh), rel=1e-12)
        assert nn.bce_loss(x, xh) >= 0

    def test_batch_is_mean_of_rows(self):
        x = np.array([[1, 0, 1], [0, 0, 1]], dtype=float)
        xh = np.array([[0.9, 0.2, 0.6], [0.3, 0.1, 0.8]])
        rows = [nn.bce_loss(x[i], xh[i]) for i in range(2)]
        assert nn.bce_loss(x, xh) == pytest.approx(sum(rows) / 2, rel=1e-15)

    def test_rejects_non_binary(self):
        with pytest.raises(DataError):
            nn.bce_loss([0.5, 1], [0.5, 0.5])


class TestBackward:
    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            spec, params, x = random_small_network(rng)
            _, cache = nn.forward(params, spec, x)
            grads = nn.backward(params, spec, x, cache)
            fd = finite_difference_grads(params, spec, x)
            for g, f in zip(grads.arrays(), fd):
                assert relative_error(g, f).max() <= 1e-6

    def test_layers_6_3_6_batch_of_4(self):
        rng = np.random.default_rng(3)
        spec = nn.LayerSpec((6, 3, 6))
        params = nn.glorot_init(spec, 5)
        params.biases = [rng.normal(0, 0.5, size=b.shape) for b in params.biases]
        x = np.array([[1, 0, 0, 1, 0, 1], [0, 1, 0, 0, 1, 1],
                      [1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 1, 0]], dtype=float)
        _, cache = nn.forward(params, spec, x)
        assert all(np.abs(z).min() > 1e-3 for z in cache.pre[:-1])
        grads = nn.backward(params, spec, x, cache)
        for g, f in zip(grads.arrays(), finite_difference_grads(params, spec, x)):
            assert relative_error(g, f).max() <= 1e-6

    def test_zero_gradient_at_minimum(self):
        # output bias saturates the sigmoid towards each target bit
        spec = nn.LayerSpec((4, 2, 4))
        params = nn.glorot_init(spec, 0).zeros_like()
        x = np.array([[1.0, 0.0, 1.0, 0.0]])
        params.biases[1] = np.where(x[0] == 1, 40.0, -40.0)
        out, cache = nn.forward(params, spec, x)
        assert np.abs(out - x).max() < 1e-7
        grads = nn.backward(params, spec, x, cache)
        assert max(np.abs(g).max() for g in grads.arrays()) <= 1e-6

    def test_duplicated_batch_same_gradient(self):
        rng = np.random.default_rng(5)
        spec, params, x = random_small_network(rng)
        _, c1 = nn.forward(params, spec, x)
        g1 = nn.backward(params, spec, x, c1)
        xx = np.vstack([x, x])
        _, c2 = nn.forward(params, spec, xx)
        g2 = nn.backward(params, spec, xx, c2)
        for a, b in zip(g1.arrays(), g2.arrays()):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_stale_cache_rejected(self):
        spec = nn.LayerSpec((4, 2, 4))
        params = nn.glorot_init(spec, 0)
        x = np.eye(4)
        _, cache = nn.forward(params, spec, x)
        with pytest.raises(DataError):
            nn.backward(params, spec, 1 - x, cache)
        other = nn.LayerSpec((4, 3, 4))
        with pytest.raises(DataError):
            nn.backward(nn.glorot_init(other, 0), other, x, cache)


class TestAdam:
    def _scalar(self, value=0.0):
        return nn.NetworkParams([np.array([[value]])], [np.zeros(1)])

    def test_zero_gradient_no_move(self):
        p = nn.glorot_init(nn.LayerSpec((4, 2, 4)), 0)
        new, _ = nn.adam_step(p, p.zeros_like(), nn.AdamState.zeros(p), nn.TrainConfig(), 1)
        for a, b in zip(p.arrays(), new.arrays()):
            assert np.array_equal(a, b)

    def test_first_step_is_learning_rate(self):
        p = self._scalar()
        g = self._scalar(1.0)
        new, state = nn.adam_step(p, g, nn.AdamState.zeros(p), nn.TrainConfig(), 1)
        assert new.weights[0][0, 0] == pytest.approx(-1e-4, rel=1e-7)
        assert state.m.weights[0][0, 0] == pytest.approx(0.1)
        assert state.v.weights[0][0, 0] == pytest.approx(0.001)

    def test_sign_flip(self):
        p = self._scalar()
        up, _ = nn.adam_step(p, self._scalar(0.37), nn.AdamState.zeros(p), nn.TrainConfig(), 1)
        down, _ = nn.adam_step(p, self._scalar(-0.37), nn.AdamState.zeros(p), nn.TrainConfig(), 1)
        assert up.weights[0][0, 0] == -down.weights[0][0, 0]

    def test_non_finite_gradient(self):
        p = self._scalar()
        with pytest.raises(NumericalError, match="epoch 3, layer 0"):
            nn.adam_step(p, self._scalar(np.nan), nn.AdamState.zeros(p), nn.TrainConfig(), 1, epoch=3)


def _toy_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 3, n)
    b = (a + (rng.random(n) < 0.1)) % 3
    x = np.zeros((n, 6))
    x[np.arange(n), a] = 1
    x[np.arange(n), 3 + b] = 1
    return x


class TestTrain:
    def test_loss_decreases(self):
        spec = nn.LayerSpec((6, 2, 6))
        _, trace = nn.train(_toy_data(), spec, nn.TrainConfig(learning_rate=1e-2, max_epochs=30, seed=1))
        assert trace.epoch_loss[-1] < trace.epoch_loss[0]
        assert trace.n_epochs == 30 == trace.stopped_epoch
        assert all(l >= 0 and math.isfinite(l) for l in trace.epoch_loss)

    def test_bit_identical(self):
        spec = nn.LayerSpec((6, 3, 6))
        cfg = nn.TrainConfig(learning_rate=1e-2, max_epochs=8, seed=42, batch_size=32)
        p1, t1 = nn.train(_toy_data(), spec, cfg, blocks=[slice(0, 3), slice(3, 6)])
        p2, t2 = nn.train(_toy_data(), spec, cfg, blocks=[slice(0, 3), slice(3, 6)])
        assert t1 == t2
        for a, b in zip(p1.arrays(), p2.arrays()):
            assert np.array_equal(a, b)

    def test_per_attribute_losses_average_to_total(self):
        spec = nn.LayerSpec((6, 3, 6))
        _, trace = nn.train(_toy_data(), spec, nn.TrainConfig(max_epochs=2),
                            blocks=[slice(0, 3), slice(3, 6)])
        for total, per in zip(trace.epoch_loss, trace.attribute_loss):
            # each block mean is over 3 columns
            assert total == pytest.approx(3 * sum(per), rel=1e-12)

    def test_convergence_stop(self):
        spec = nn.LayerSpec((6, 3, 6))
        cfg = nn.TrainConfig(max_epochs=500, patience=2, min_rel_improvement=0.5)
        _, trace = nn.train(_toy_data(), spec, cfg)
        assert trace.stopped_epoch == 3 == trace.n_epochs

    def test_callback_sees_every_epoch(self):
        seen = []
        nn.train(_toy_data(60), nn.LayerSpec((6, 2, 6)), nn.TrainConfig(max_epochs=4),
                 callback=lambda e, p: seen.append(e))
        assert seen == [1, 2, 3, 4]

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            nn.train(_toy_data(), nn.LayerSpec((5, 2, 5)), nn.TrainConfig(max_epochs=1))

    def test_non_finite_loss_aborts(self):
        spec = nn.LayerSpec((6, 2, 6))
        with pytest.raises(NumericalError):
            nn.train(_toy_data(), spec, nn.TrainConfig(max_epochs=3, learning_rate=1e308, seed=0))

    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(batch_size=0), dict(max_epochs=0),
                                        dict(log_eps=0.5), dict(seed=-1)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ConfigError):
            nn.TrainConfig(**kwargs)


class TestReconstructionError:
    def test_worked_example(self):
        assert nn.squared_error([1, 0, 0, 1], [0.9, 0.1, 0.2, 0.8]) == pytest.approx(0.025, rel=1e-12)

    def test_identity(self):
        assert nn.squared_error([1, 0, 1], [1, 0, 1]) == 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        x, xh = rng.integers(0, 2, 10).astype(float), rng.random(10)
        perm = rng.permutation(10)
        assert nn.squared_error(x[perm], xh[perm]) == pytest.approx(nn.squared_error(x, xh), rel=1e-15)

    def test_matches_forward(self):
        spec = nn.LayerSpec.from_name("AE2", 10)
        params = nn.glorot_init(spec, 2)
        x = np.eye(10)
        errs = nn.reconstruction_error(params, spec, x, chunk=3)
        out, _ = nn.forward(params, spec, x)
        np.testing.assert_array_equal(errs, np.mean((x - out) ** 2, axis=1))
        assert nn.reconstruction_error(params, spec, x[0]) == pytest.approx(errs[0], rel=1e-14)

    def test_dimension_mismatch(self):
        spec = nn.LayerSpec((4, 2, 4))
        with pytest.raises(DataError):
            nn.reconstruction_error(nn.glorot_init(spec, 0), spec, np.zeros(5))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        spec = nn.LayerSpec.from_name("AE3", 14)
        x = np.hstack([_toy_data(), _toy_data(seed=1), _toy_data(seed=2)[:, :2]])
        params, trace = nn.train(x, spec, nn.TrainConfig(max_epochs=2, seed=9))
        ckpt = nn.Checkpoint(spec, params, nn.TrainConfig(max_epochs=2, seed=9), trace.stopped_epoch,
                             {"a": ["x", "y"]})
        path = tmp_path / "m.json"
        nn.save_checkpoint(path, ckpt)
        back = nn.load_checkpoint(path)
        assert back.spec == spec and back.config == ckpt.config and back.final_epoch == 2
        assert back.vocabulary == {"a": ["x", "y"]}
        for a, b in zip(params.arrays(), back.params.arrays()):
            assert np.array_equal(a, b)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(DataError):
            nn.load_checkpoint(path)
