"""Scikit-learn style front-end over the training and prediction stack.

``NeuralODERegressor`` follows the estimator contract: hyperparameters are
stored verbatim in ``__init__``, fitting happens in :meth:`fit`, fitted
state lives in trailing-underscore attributes, and ``get_params`` /
``set_params`` / ``clone`` work out of the box via ``BaseEstimator``.

Training data is a collection of :class:`~trasenode.systems.Scenario`
objects rather than a feature matrix, so the usual ``(X, y)`` validation
utilities do not apply; scenario validation lives in ``_validation``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_exo_signal, check_scenarios
from .adjoint import node_forward
from .augmented import trase_forward
from .metrics import nmse, predict_scenario
from .network import LayerSpec, NetSpec
from .solvers import SolverConfig, validate_grid
from .training import TrainConfig, train


class NeuralODERegressor(BaseEstimator):
    """Continuous-time dynamics model trained on sampled trajectories.

    With ``mode="node"`` the model fits state trajectories only; with
    ``mode="trase"`` it jointly fits states and their set-point
    sensitivities, which markedly improves generalization to unseen
    set-points from few training scenarios.

    Parameters
    ----------
    mode : {"trase", "node"}
    hidden_units : width of the single hidden layer.
    activation : {"leaky_relu", "tanh"}.
    leaky_slope : negative-side slope for leaky_relu.
    epochs, lr, adam_betas, adam_eps : Adam settings (full batch).
    state_weight, sensitivity_weight : joint-loss weights (trase mode).
    solver_step : fixed RK4 step for training passes; ``None`` picks
        ``horizon / 1000``.
    seed : parameter initialization seed.

    Attributes
    ----------
    model_ : ParamVector of the trained network.
    loss_history_ : per-epoch training loss.
    diverged_ : whether training aborted on divergence.
    """

    def __init__(
        self,
        mode: str = "trase",
        hidden_units: int = 32,
        activation: str = "leaky_relu",
        leaky_slope: float = 0.01,
        epochs: int = 1000,
        lr: float = 1e-3,
        adam_betas: tuple[float, float] = (0.9, 0.999),
        adam_eps: float = 1e-8,
        state_weight: float = 1.0,
        sensitivity_weight: float = 1.0,
        solver_step: float | None = None,
        seed: int = 0,
    ):
        self.mode = mode
        self.hidden_units = hidden_units
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.epochs = epochs
        self.lr = lr
        self.adam_betas = adam_betas
        self.adam_eps = adam_eps
        self.state_weight = state_weight
        self.sensitivity_weight = sensitivity_weight
        self.solver_step = solver_step
        self.seed = seed

    def _solver(self) -> SolverConfig | None:
        if self.solver_step is None:
            return None
        return SolverConfig.rk4(self.solver_step)

    def fit(self, scenarios, y=None):
        """Train on a collection of scenarios; returns self."""
        scenarios = check_scenarios(scenarios)
        n, m = scenarios[0].n, scenarios[0].m
        spec = NetSpec(
            input_dim=n + 1 + m,
            hidden=(LayerSpec(self.hidden_units, self.activation, self.leaky_slope),),
            output_dim=n,
        )
        cfg = TrainConfig(
            mode=self.mode,
            network=spec,
            scenarios=scenarios,
            epochs=self.epochs,
            lr=self.lr,
            adam_betas=tuple(self.adam_betas),
            adam_eps=self.adam_eps,
            loss_weights=(self.state_weight, self.sensitivity_weight),
            solver=self._solver(),
            seed=self.seed,
        )
        report = train(cfg)
        self.model_ = report.final_params
        self.loss_history_ = report.loss_history
        self.diverged_ = report.diverged
        self.n_features_in_ = spec.input_dim
        self._train_solver_ = cfg.resolved_solver()
        self._default_x0_ = scenarios[0].x0.copy()
        self._default_grid_ = scenarios[0].grid.copy()
        self._default_exo_ = scenarios[0].exo_signal()
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this NeuralODERegressor is not fitted yet; call fit first"
            )

    def _resolve_inputs(self, x0, grid, exogenous):
        grid = self._default_grid_ if grid is None else validate_grid(grid)
        x0 = self._default_x0_ if x0 is None else np.asarray(x0, dtype=np.float64)
        m = self.model_.spec.exo_dim
        if exogenous is None and m:
            y_signal = self._default_exo_
        else:
            y_signal = as_exo_signal(exogenous, grid, m)
        return x0, grid, y_signal

    def predict(self, u: float, x0=None, grid=None, exogenous=None) -> np.ndarray:
        """Predicted state trajectory at set-point ``u``.

        Defaults for ``x0``, ``grid``, and ``exogenous`` come from the
        first training scenario.
        """
        self._check_fitted()
        x0, grid, y_signal = self._resolve_inputs(x0, grid, exogenous)
        return node_forward(self.model_, x0, u, y_signal, grid, self._train_solver_).predicted

    def predict_augmented(self, u: float, x0=None, grid=None, exogenous=None) -> np.ndarray:
        """Predicted ``[states, sensitivities]`` trajectory, shape (N, 2n)."""
        self._check_fitted()
        x0, grid, y_signal = self._resolve_inputs(x0, grid, exogenous)
        return trase_forward(self.model_, x0, u, y_signal, grid, self._train_solver_)

    def score(self, scenarios, y=None) -> float:
        """Negative mean per-channel NMSE over the given scenarios
        (greater is better, 0 is perfect)."""
        self._check_fitted()
        scenarios = check_scenarios(scenarios)
        vals = []
        for sc in scenarios:
            pred, truth, _ = predict_scenario(self.model_, sc, self._train_solver_)
            vals.append(float(np.mean(nmse(pred, truth))))
        return -float(np.mean(vals))
