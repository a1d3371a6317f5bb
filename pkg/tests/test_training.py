import numpy as np
import pytest

from trasenode import training
from trasenode.adjoint import AdjointGradResult, node_adjoint_grad, node_loss
from trasenode.errors import ConfigError, IntegrationDivergedError
from trasenode.network import LayerSpec, NetSpec, init_params
from trasenode.solvers import SolverConfig, uniform_grid
from trasenode.systems import OscillatorParams, gen_oscillator
from trasenode.training import (
    AdamState,
    TrainConfig,
    adam_step,
    load_training_checkpoint,
    train,
)


SPEC = NetSpec(3, (LayerSpec(12, "tanh"),), 2)
FAST = SolverConfig.rk4(0.05)


def small_scenario(u=1.0, points=15, t_end=2.0):
    return gen_oscillator(OscillatorParams(), u=u, grid=uniform_grid(t_end, points))


def quick_config(mode="node", epochs=3, **kw):
    defaults = dict(
        mode=mode,
        network=SPEC,
        scenarios=[small_scenario()],
        epochs=epochs,
        lr=1e-3,
        solver=FAST,
        seed=0,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestAdam:
    def test_zero_grad_fresh_state_is_stationary(self):
        vals = np.array([1.0, -2.0])
        state = AdamState.fresh(2)
        new_vals, new_state = adam_step(vals, np.zeros(2), state, lr=0.1)
        assert np.array_equal(new_vals, vals)
        assert np.array_equal(new_state.m, np.zeros(2))
        assert new_state.count == 1

    def test_moments_decay(self):
        state = AdamState(m=np.array([1.0]), v=np.array([4.0]), count=3)
        _, new_state = adam_step(np.array([0.0]), np.zeros(1), state, lr=0.1)
        np.testing.assert_allclose(new_state.m, [0.9])
        np.testing.assert_allclose(new_state.v, [0.999 * 4.0])

    def test_first_step_closed_form(self):
        g = np.array([0.3, -2.0, 1e-12])
        vals = np.zeros(3)
        lr, eps = 1e-3, 1e-8
        new_vals, _ = adam_step(vals, g, AdamState.fresh(3), lr=lr, eps=eps)
        np.testing.assert_allclose(new_vals, -lr * g / (np.abs(g) + eps), rtol=1e-12)

    def test_quadratic_bowl_convergence(self):
        vals = np.array([1.0, -2.0, 3.0])
        state = AdamState.fresh(3)
        for _ in range(5000):
            vals, state = adam_step(vals, 2.0 * vals, state, lr=1e-2)
        assert np.linalg.norm(vals) < 1e-6

    def test_nonfinite_grad_raises(self):
        with pytest.raises(training.DivergenceError):
            adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.fresh(2), lr=0.1)

    def test_functional_no_mutation(self):
        vals = np.ones(2)
        state = AdamState.fresh(2)
        adam_step(vals, np.array([0.5, -0.5]), state, lr=0.1)
        assert np.array_equal(vals, np.ones(2))
        assert np.array_equal(state.m, np.zeros(2))


class TestConfigValidation:
    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            quick_config(mode="sgd").validate()

    def test_bad_lr(self):
        with pytest.raises(ConfigError):
            quick_config(lr=0.0).validate()

    def test_negative_sensitivity_weight(self):
        with pytest.raises(ConfigError):
            quick_config(loss_weights=(1.0, -0.5)).validate()

    def test_trase_requires_sensitivities(self):
        sc = small_scenario()
        bare = type(sc)(u=sc.u, grid=sc.grid, states=sc.states)
        with pytest.raises(ConfigError, match="sensitivities"):
            quick_config(mode="trase", scenarios=[bare]).validate()

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError, match="scenario 0"):
            quick_config(network=NetSpec(4, (LayerSpec(8),), 3)).validate()

    def test_default_solver_step_is_span_over_1000(self):
        cfg = quick_config(solver=None)
        solver = cfg.resolved_solver()
        assert solver.method == "rk4"
        assert solver.step == pytest.approx(2.0 / 1000.0)


class TestTrain:
    def test_zero_epochs_noop(self):
        cfg = quick_config(epochs=0)
        report = train(cfg)
        assert report.loss_history.size == 0
        assert not report.diverged
        assert np.array_equal(report.final_params.values, init_params(SPEC, 0).values)

    def test_determinism(self):
        a = train(quick_config(epochs=4))
        b = train(quick_config(epochs=4))
        assert np.array_equal(a.loss_history, b.loss_history)
        assert np.array_equal(a.final_params.values, b.final_params.values)

    def test_loss_decreases_over_short_run(self):
        report = train(quick_config(epochs=30, lr=5e-3))
        assert report.loss_history[-1] < report.loss_history[0]

    def test_mode_reduction_trase_ws0_equals_node(self):
        sc = small_scenario()
        node = train(quick_config(mode="node", epochs=10, scenarios=[sc]))
        trase = train(
            quick_config(mode="trase", epochs=10, scenarios=[sc], loss_weights=(1.0, 0.0))
        )
        assert np.max(np.abs(node.loss_history - trase.loss_history)) < 1e-10

    def test_monotone_moving_average(self):
        report = train(quick_config(epochs=120, lr=5e-3))
        window = 50
        ma = np.convolve(report.loss_history, np.ones(window) / window, mode="valid")
        assert np.all(np.diff(ma) <= 1e-12)

    def test_checkpoint_schedule(self, tmp_path):
        cfg = quick_config(epochs=6, checkpoint_every=2)
        train(cfg, out_dir=tmp_path)
        files = sorted(p.name for p in tmp_path.glob("checkpoint_epoch*.json"))
        assert files == [
            "checkpoint_epoch00002.json",
            "checkpoint_epoch00004.json",
            "checkpoint_epoch00006.json",
        ]
        assert (tmp_path / "checkpoint.json").exists()
        params, state, lr, epoch = load_training_checkpoint(tmp_path / files[-1])
        assert epoch == 6
        assert lr == cfg.lr
        assert state.count == 6
        assert params.size == state.m.size

    def test_divergence_retry_then_recover(self, monkeypatch):
        calls = {"n": 0}
        real = node_adjoint_grad

        def flaky(params, sc, solver, **kw):
            calls["n"] += 1
            if calls["n"] == 3:
                raise IntegrationDivergedError(0.5)
            return real(params, sc, solver, **kw)

        monkeypatch.setattr(training, "node_adjoint_grad", flaky)
        cfg = quick_config(epochs=5)
        report = train(cfg)
        assert not report.diverged
        assert report.loss_history.size == 5

    def test_divergence_aborts_on_second_failure(self, monkeypatch):
        calls = {"n": 0}
        real = node_adjoint_grad

        def failing(params, sc, solver, **kw):
            calls["n"] += 1
            if calls["n"] >= 3:
                raise IntegrationDivergedError(0.5)
            return real(params, sc, solver, **kw)

        monkeypatch.setattr(training, "node_adjoint_grad", failing)
        report = train(quick_config(epochs=5))
        assert report.diverged
        assert report.loss_history.size == 2

    def test_two_scenarios_sum_losses(self):
        sc1, sc2 = small_scenario(1.0), small_scenario(1.1)
        cfg = quick_config(epochs=1, scenarios=[sc1, sc2])
        report = train(cfg)
        params = init_params(SPEC, 0)
        expected = node_loss(params, sc1, FAST) + node_loss(params, sc2, FAST)
        assert report.loss_history[0] == pytest.approx(expected, rel=1e-12)


class TestLossDecreaseProperty:
    def test_one_adam_step_decreases_loss(self):
        # One lr=1e-3 Adam step along the adjoint gradient must decrease the
        # loss for at least 95 of 100 random initializations.
        sc = small_scenario(points=10, t_end=1.5)
        solver = SolverConfig.rk4(0.1)
        wins = 0
        for seed in range(100):
            params = init_params(SPEC, seed)
            res = node_adjoint_grad(params, sc, solver)
            new_vals, _ = adam_step(
                params.values, res.grad, AdamState.fresh(params.size), lr=1e-3
            )
            new_loss = node_loss(params.with_values(new_vals), sc, solver)
            if new_loss < res.loss:
                wins += 1
        assert wins >= 95
