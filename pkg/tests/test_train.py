import numpy as np
import pytest

from chainsdf.field import ArchConfig, default_arch, forward_batch, init_params
from chainsdf.train import (TrainConfig, TrainingError, rmse_loss, rmse_loss_grad,
                            train, _make_optimizer)


class TestRmseLoss:
    def test_perfect_prediction(self, rng):
        x = rng.standard_normal((8, 4))
        assert rmse_loss(x, x) == 0.0

    def test_single_value(self):
        assert np.isclose(rmse_loss(np.array([[0.003]]), np.array([[0.0]])), 0.003)

    def test_matches_scalar_loop(self, rng):
        pred = rng.standard_normal((16, 5))
        target = rng.standard_normal((16, 5))
        acc = 0.0
        count = 0
        for i in range(16):
            for k in range(5):
                acc += (pred[i, k] - target[i, k]) ** 2
                count += 1
        assert abs(rmse_loss(pred, target) - np.sqrt(acc / count)) < 1e-12

    def test_empty_batch_raises(self):
        with pytest.raises(ValueError):
            rmse_loss(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_gradient_matches_fd(self, rng):
        pred = rng.standard_normal((6, 3))
        target = rng.standard_normal((6, 3))
        loss, g = rmse_loss_grad(pred, target)
        eps = 1e-7
        for i in range(6):
            for k in range(3):
                p = pred.copy(); p[i, k] += eps; hi = rmse_loss(p, target)
                p = pred.copy(); p[i, k] -= eps; lo = rmse_loss(p, target)
                assert abs((hi - lo) / (2 * eps) - g[i, k]) < 1e-8

    def test_order_invariance_full_batch(self, rng):
        pred = rng.standard_normal((64, 4))
        target = rng.standard_normal((64, 4))
        perm = rng.permutation(64)
        assert abs(rmse_loss(pred, target) - rmse_loss(pred[perm], target[perm])) < 1e-12


def tiny_arch():
    return ArchConfig("rndf", m=0, n=1, latent_size=8, encoding_frequencies=2,
                      backbone_widths=(12,), head_regression_widths=(6,))


class TestOptimizerStep:
    @pytest.mark.parametrize("optimizer", ["sgd-momentum", "adaptive-moment"])
    def test_single_step_decreases_single_sample_loss(self, optimizer, rng):
        # lr = 1e-6, 100 trials; at most one non-decrease tolerated
        arch = tiny_arch()
        failures = 0
        for trial in range(100):
            params = init_params(arch, trial)
            cfg = TrainConfig(learning_rate=1e-6, optimizer=optimizer, weight_decay=0.0)
            opt = _make_optimizer(cfg, params.count)
            P = rng.uniform(-0.5, 0.5, (1, 3))
            D = rng.uniform(-0.2, 0.2, (1, 1))
            Q = np.zeros((1, 0))

            def loss_at(pp):
                y, _ = forward_batch(pp, arch, Q, P)
                return rmse_loss(y, D)

            from chainsdf.field import backward
            from chainsdf.train import rmse_loss_grad

            y, cache = forward_batch(params, arch, Q, P)
            l0, up = rmse_loss_grad(y, D)
            g = backward(params, arch, Q, P, up)
            opt.step(params.flat, g, cfg.learning_rate)
            if loss_at(params) >= l0:
                failures += 1
        assert failures <= 1


class TestTrain:
    def test_determinism(self, sphere_dataset):
        arch = tiny_arch()
        cfg = TrainConfig(epochs=3, batch_size=128, seed=42, patience=0)
        r1 = train(sphere_dataset, arch, cfg)
        r2 = train(sphere_dataset, arch, TrainConfig(epochs=3, batch_size=128, seed=42, patience=0))
        assert np.array_equal(r1.params.flat, r2.params.flat)

    def test_validation_rows_never_in_gradient_batches(self, sphere_dataset):
        arch = tiny_arch()
        seen = set()

        def cb(epoch, step, rows):
            seen.update(int(r) for r in rows)

        cfg = TrainConfig(epochs=2, batch_size=256, seed=13, validation_fraction=0.2)
        result = train(sphere_dataset, arch, cfg, batch_callback=cb)
        val = {int(i) for i in result.val_indices}
        assert val and not (seen & val)
        assert len(seen) + len(val) == len(sphere_dataset)

    def test_divergence_aborts_with_last_good(self, sphere_dataset):
        arch = tiny_arch()
        cfg = TrainConfig(epochs=10, batch_size=64, learning_rate=1e12, seed=0)
        result = train(sphere_dataset, arch, cfg)
        assert result.diverged
        assert np.all(np.isfinite(result.params.flat))

    def test_shape_mismatch(self, sphere_dataset):
        arch = ArchConfig("rndf", m=3, n=4)
        with pytest.raises(TrainingError):
            train(sphere_dataset, arch, TrainConfig(epochs=1))

    def test_log_written(self, sphere_dataset, tmp_path):
        import json

        arch = tiny_arch()
        log = tmp_path / "train.log"
        train(sphere_dataset, arch, TrainConfig(epochs=2, batch_size=256, seed=1, patience=0),
              log_path=log)
        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(records) == 2
        assert {"epoch", "train_rmse", "val_rmse", "lr", "wall_time"} <= set(records[0])

    def test_sphere_sanity_quality(self, sphere_dataset):
        # 1-link sphere fixture, 10k samples, 20 epochs:
        # validation RMSE under 2% of the 0.15 m radius
        arch = default_arch("rndf", m=0, n=1, latent_size=16, encoding_frequencies=2)
        cfg = TrainConfig(epochs=20, batch_size=256, learning_rate=2e-3, seed=3)
        result = train(sphere_dataset, arch, cfg)
        assert result.best_val_rmse < 0.02 * 0.15

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ValueError):
            TrainConfig(validation_fraction=0.7).validate()
        with pytest.raises(ValueError):
            TrainConfig(optimizer="magic").validate()
