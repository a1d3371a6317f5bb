"""Vanilla neural-ODE forward prediction and adjoint-method gradients.

The loss is the mean over observation times and state components of the
squared prediction error (optionally weighted per component).  Because
observations enter at many time points, the backward pass integrates the
adjoint segment by segment and applies an impulsive jump
``a += dL_i/dx(t_i)`` at each observation time; with a single terminal
observation this reduces to the classic terminal-adjoint scheme.

By default the state is re-integrated backward jointly with the adjoint
(memory-efficient mode); ``stored_forward=True`` instead resets the state
to the stored forward prediction at every observation time, which is
useful for diagnosing reversibility error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatchError
from .network import (
    ParamVector,
    _compile,
    _compose_input,
    _node_products,
    _sweep_forward,
)
from .solvers import (
    SolverConfig,
    integrate,
    integrate_reverse_with_accumulator,
    validate_grid,
)
from .systems import Scenario


@dataclass(frozen=True)
class NodeForwardResult:
    predicted: np.ndarray  # (N, n), row 0 equals x0
    terminal_state: np.ndarray


@dataclass(frozen=True)
class AdjointGradResult:
    grad: np.ndarray
    loss: float
    adjoint_path: np.ndarray | None = None  # a at grid times, post-jump


def _check_scenario_dims(params: ParamVector, n: int, m: int) -> None:
    spec = params.spec
    if spec.output_dim != n:
        raise DimensionMismatchError("state", spec.output_dim, n)
    if spec.exo_dim != m:
        raise DimensionMismatchError("exogenous", spec.exo_dim, m)


def node_forward(
    params: ParamVector,
    x0,
    u: float,
    y_signal,
    grid,
    cfg: SolverConfig,
) -> NodeForwardResult:
    """Integrate the learned field from ``x0`` and sample at grid times."""
    grid = validate_grid(grid)
    net = _compile(params)
    spec = params.spec

    def rhs(t, x):
        vec = _compose_input(spec, x, u, y_signal(t) if y_signal else None, t)
        return _sweep_forward(net, vec)[0]

    traj = integrate(rhs, np.asarray(x0, dtype=np.float64), grid, cfg)
    return NodeForwardResult(predicted=traj, terminal_state=traj[-1].copy())


def _resolve_truth(scenario: Scenario, grid) -> tuple[np.ndarray, np.ndarray]:
    """Grid to integrate over plus the matching ground-truth rows."""
    if grid is None:
        return scenario.grid, scenario.states
    grid = validate_grid(grid)
    idx = np.searchsorted(scenario.grid, grid)
    idx = np.clip(idx, 0, scenario.grid.size - 1)
    left = np.clip(idx - 1, 0, scenario.grid.size - 1)
    use_left = np.abs(scenario.grid[left] - grid) < np.abs(scenario.grid[idx] - grid)
    idx = np.where(use_left, left, idx)
    if np.any(np.abs(scenario.grid[idx] - grid) > 1e-9):
        missing = grid[np.abs(scenario.grid[idx] - grid) > 1e-9][0]
        raise DataError(f"no ground truth at grid time t={missing!r}")
    return grid, scenario.states[idx]


def _state_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise DimensionMismatchError("state_weights", (n,), w.shape)
    return w


def node_loss(
    params: ParamVector,
    scenario: Scenario,
    cfg: SolverConfig,
    *,
    grid=None,
    state_weights=None,
) -> float:
    """Forward-only evaluation of the discretized training loss."""
    times, truth = _resolve_truth(scenario, grid)
    _check_scenario_dims(params, scenario.n, scenario.m)
    w = _state_weights(state_weights, scenario.n)
    fwd = node_forward(params, truth[0], scenario.u, scenario.exo_signal(), times, cfg)
    resid = fwd.predicted - truth
    return float(np.sum(w * resid**2) / resid.size)


def node_adjoint_grad(
    params: ParamVector,
    scenario: Scenario,
    cfg: SolverConfig,
    *,
    grid=None,
    state_weights=None,
    stored_forward: bool = False,
    record_adjoint: bool = False,
) -> AdjointGradResult:
    """Exact gradient of the discretized loss via backward adjoint integration."""
    times, truth = _resolve_truth(scenario, grid)
    _check_scenario_dims(params, scenario.n, scenario.m)
    n = scenario.n
    w = _state_weights(state_weights, n)
    net = _compile(params)
    spec = params.spec
    y_signal = scenario.exo_signal()

    fwd = node_forward(params, truth[0], scenario.u, y_signal, times, cfg)
    resid = fwd.predicted - truth
    loss = float(np.sum(w * resid**2) / resid.size)
    jumps = (2.0 / resid.size) * (w * resid)

    memo: list = [None]

    def products(t, wvec):
        vec = _compose_input(spec, wvec[:n], scenario.u, y_signal(t) if y_signal else None, t)
        pr = _node_products(net, vec, wvec[n:])
        memo[0] = (t, wvec.copy(), pr)
        return pr

    def rhs(t, wvec):
        pr = products(t, wvec)
        return np.concatenate([pr.f, -pr.jxT_ax])

    def quad(t, wvec):
        m = memo[0]
        if m is not None and m[0] == t and np.array_equal(m[1], wvec):
            return m[2].quad
        return products(t, wvec).quad

    grad = np.zeros(params.size)
    x = fwd.predicted[-1].copy()
    a = np.zeros(n)
    path = np.empty_like(resid) if record_adjoint else None
    for i in range(times.size - 1, 0, -1):
        a = a + jumps[i]
        if record_adjoint:
            path[i] = a
        res = integrate_reverse_with_accumulator(
            rhs, quad, np.concatenate([x, a]), times[i - 1 : i + 1], cfg
        )
        grad += res.accumulated
        w0 = res.trajectory[0]
        x = fwd.predicted[i - 1].copy() if stored_forward else w0[:n]
        a = w0[n:]
    a = a + jumps[0]
    if record_adjoint:
        path[0] = a
    return AdjointGradResult(grad=grad, loss=loss, adjoint_path=path)
