"""Sensitivity-augmented dynamics, adjoint, and gradient.

The augmented state ``z = [x; s]`` couples the learned field with the
evolution of the set-point sensitivity through the chain rule:

    dz/dt = g(z) = [ f(x, t, u, y) ;  df/du + (df/dx) @ s ].

Its state Jacobian is block triangular: both diagonal blocks equal
``df/dx``, the top-right block is exactly zero (the field never reads s),
and the bottom-left block collects the mixed second derivatives
``d^2f/dx du + d^2f/dx^2 @ s``.  The backward pass therefore never builds
the full ``2n x 2n`` matrix; it contracts the adjoint against the blocks:

    da_x/dt = -((df/dx)^T a_x + (d sens_rhs/dx)^T a_s)
    da_s/dt = -(df/dx)^T a_s

and accumulates the gradient integrand
``(df/dtheta)^T a_x + (d sens_rhs/dtheta)^T a_s``.  All second-order
terms come from differentiating the sensitivity right-hand side itself,
so with ``a_s = 0`` everything reduces bit-for-bit to the vanilla pass.

Observation jumps mirror the vanilla module; sensitivity rows that are
flagged absent (NaN) contribute neither loss nor jumps.
"""

from __future__ import annotations

import numpy as np

from .adjoint import AdjointGradResult, _check_scenario_dims, _resolve_truth
from .errors import DimensionMismatchError
from .network import (
    ParamVector,
    _aug_products,
    _compile,
    _compose_input,
    _hyper_forward,
    _sens_direction,
    _sweep_forward,
)
from .solvers import (
    SolverConfig,
    integrate,
    integrate_reverse_with_accumulator,
    validate_grid,
)
from .systems import Scenario


def _split_z(z, n: int) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (2 * n,):
        raise DimensionMismatchError("z", (2 * n,), z.shape)
    return z[:n], z[n:]


def g_eval(params: ParamVector, z, t: float, u: float, y=None) -> np.ndarray:
    """Augmented right-hand side ``[f; df/du + (df/dx) @ s]`` at one point."""
    net = _compile(params)
    x, s = _split_z(z, net.n)
    vec = _compose_input(params.spec, x, u, y, t)
    dirv = _sens_direction(params.spec, s)
    f, fdot, _, _, _ = _sweep_forward(net, vec, dirv)
    return np.concatenate([f, fdot])


def trase_forward(
    params: ParamVector,
    x0,
    u: float,
    y_signal,
    grid,
    cfg: SolverConfig,
) -> np.ndarray:
    """Integrate the augmented system from ``z(0) = [x0; 0]``; returns the
    (N, 2n) trajectory sampled at grid times."""
    grid = validate_grid(grid)
    net = _compile(params)
    spec = params.spec
    n = net.n

    def rhs(t, z):
        vec = _compose_input(spec, z[:n], u, y_signal(t) if y_signal else None, t)
        dirv = _sens_direction(spec, z[n:])
        f, fdot, _, _, _ = _sweep_forward(net, vec, dirv)
        return np.concatenate([f, fdot])

    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (n,):
        raise DimensionMismatchError("x0", (n,), x0.shape)
    z0 = np.concatenate([x0, np.zeros(n)])
    return integrate(rhs, z0, grid, cfg)


def aug_adjoint_rhs(params: ParamVector, z, a_z, t: float, u: float, y=None) -> np.ndarray:
    """Time derivative of the augmented adjoint ``[a_x; a_s]``, assembled
    blockwise from the triangular state Jacobian."""
    net = _compile(params)
    n = net.n
    x, s = _split_z(z, n)
    a_x, a_s = _split_z(a_z, n)
    vec = _compose_input(params.spec, x, u, y, t)
    dirv = _sens_direction(params.spec, s)
    pr = _aug_products(net, vec, dirv, a_x, a_s)
    return np.concatenate([-(pr.jxT_ax + pr.dxT_as), -pr.jxT_as])


def g_state_jacobian(params: ParamVector, z, t: float, u: float, y=None) -> np.ndarray:
    """Materialize the full ``2n x 2n`` state Jacobian of ``g`` (small n
    only; the backward pass never builds this).

    Columns are exact directional derivatives of ``g``, computed through
    forward tangent channels, so the block structure emerges from the
    arithmetic rather than by construction.
    """
    net = _compile(params)
    n = net.n
    x, s = _split_z(z, n)
    vec = _compose_input(params.spec, x, u, y, t)
    dir1 = _sens_direction(params.spec, s)
    J = np.empty((2 * n, 2 * n))
    zero_dir = np.zeros(net.d)
    for j in range(n):
        ej = np.zeros(net.d)
        ej[j] = 1.0
        # x-direction column: top = df/dx e_j, bottom = d(sens_rhs)/dx e_j
        _, _, f2, f12 = _hyper_forward(net, vec, dir1, ej)
        J[:n, j] = f2
        J[n:, j] = f12
        # s-direction column: top vanishes (the field never reads s),
        # bottom = df/dx e_j from perturbing the sensitivity direction.
        _, _, f2z, f12z = _hyper_forward(net, vec, dir1, zero_dir)
        _, fdot, _, _, _ = _sweep_forward(net, vec, ej)
        J[:n, n + j] = f2z
        J[n:, n + j] = f12z + fdot
    return J


def _sens_mask(scenario: Scenario, times: np.ndarray) -> tuple[np.ndarray | None, np.ndarray]:
    """Ground-truth sensitivity rows aligned to the grid plus their
    presence mask (rows with any NaN are absent)."""
    if scenario.sensitivities is None:
        return None, np.zeros(times.size, dtype=bool)
    if times.size == scenario.grid.size and np.array_equal(times, scenario.grid):
        sens = scenario.sensitivities
    else:
        idx = np.searchsorted(scenario.grid, times)
        idx = np.clip(idx, 0, scenario.grid.size - 1)
        sens = scenario.sensitivities[idx]
    mask = np.all(np.isfinite(sens), axis=1)
    return sens, mask


def _joint_loss(resid_x, resid_s, mask, w_x, w_s):
    loss = w_x * float(np.sum(resid_x**2)) / resid_x.size
    if mask.any():
        n_present = int(mask.sum()) * resid_x.shape[1]
        loss += w_s * float(np.sum(resid_s[mask] ** 2)) / n_present
    return loss


def trase_loss(
    params: ParamVector,
    scenario: Scenario,
    cfg: SolverConfig,
    *,
    grid=None,
    loss_weights=(1.0, 1.0),
) -> float:
    """Forward-only evaluation of the joint state + sensitivity loss."""
    times, truth = _resolve_truth(scenario, grid)
    _check_scenario_dims(params, scenario.n, scenario.m)
    w_x, w_s = loss_weights
    traj = trase_forward(params, truth[0], scenario.u, scenario.exo_signal(), times, cfg)
    n = scenario.n
    sens, mask = _sens_mask(scenario, times)
    resid_x = traj[:, :n] - truth
    resid_s = np.where(mask[:, None], traj[:, n:] - np.nan_to_num(sens), 0.0) if sens is not None else np.zeros_like(resid_x)
    return _joint_loss(resid_x, resid_s, mask, w_x, w_s)


def trase_adjoint_grad(
    params: ParamVector,
    scenario: Scenario,
    cfg: SolverConfig,
    *,
    grid=None,
    loss_weights=(1.0, 1.0),
    stored_forward: bool = False,
    record_adjoint: bool = False,
) -> AdjointGradResult:
    """Gradient of the joint loss via the augmented adjoint.

    The backward state stacks ``[x; s; a_x; a_s]``; the gradient integrand
    contracts the adjoint against the first- and second-order parameter
    Jacobians in one fused sweep per stage.
    """
    times, truth = _resolve_truth(scenario, grid)
    _check_scenario_dims(params, scenario.n, scenario.m)
    n = scenario.n
    w_x, w_s = loss_weights
    net = _compile(params)
    spec = params.spec
    y_signal = scenario.exo_signal()

    traj = trase_forward(params, truth[0], scenario.u, y_signal, times, cfg)
    sens, mask = _sens_mask(scenario, times)
    resid_x = traj[:, :n] - truth
    resid_s = (
        np.where(mask[:, None], traj[:, n:] - np.nan_to_num(sens), 0.0)
        if sens is not None
        else np.zeros_like(resid_x)
    )
    loss = _joint_loss(resid_x, resid_s, mask, w_x, w_s)

    jumps_x = (2.0 * w_x / resid_x.size) * resid_x
    if mask.any():
        n_present = int(mask.sum()) * n
        jumps_s = (2.0 * w_s / n_present) * resid_s
    else:
        jumps_s = np.zeros_like(resid_x)

    memo: list = [None]

    def products(t, wvec):
        vec = _compose_input(spec, wvec[:n], scenario.u, y_signal(t) if y_signal else None, t)
        dirv = _sens_direction(spec, wvec[n : 2 * n])
        pr = _aug_products(net, vec, dirv, wvec[2 * n : 3 * n], wvec[3 * n :])
        memo[0] = (t, wvec.copy(), pr)
        return pr

    def rhs(t, wvec):
        pr = products(t, wvec)
        return np.concatenate(
            [pr.f, pr.srhs, -(pr.jxT_ax + pr.dxT_as), -pr.jxT_as]
        )

    def quad(t, wvec):
        m = memo[0]
        if m is not None and m[0] == t and np.array_equal(m[1], wvec):
            return m[2].quad
        return products(t, wvec).quad

    grad = np.zeros(params.size)
    zcur = traj[-1].copy()
    a_x = np.zeros(n)
    a_s = np.zeros(n)
    path = np.empty((times.size, 2 * n)) if record_adjoint else None
    for i in range(times.size - 1, 0, -1):
        a_x = a_x + jumps_x[i]
        a_s = a_s + jumps_s[i]
        if record_adjoint:
            path[i, :n] = a_x
            path[i, n:] = a_s
        res = integrate_reverse_with_accumulator(
            rhs, quad, np.concatenate([zcur, a_x, a_s]), times[i - 1 : i + 1], cfg
        )
        grad += res.accumulated
        w0 = res.trajectory[0]
        zcur = traj[i - 1].copy() if stored_forward else w0[: 2 * n]
        a_x = w0[2 * n : 3 * n]
        a_s = w0[3 * n :]
    a_x = a_x + jumps_x[0]
    a_s = a_s + jumps_s[0]
    if record_adjoint:
        path[0, :n] = a_x
        path[0, n:] = a_s
    return AdjointGradResult(grad=grad, loss=loss, adjoint_path=path)
