"""Deterministic initial-value-problem integrators.

Two methods back every forward and backward pass:

* fixed-step classical RK4, where each inter-observation span is split
  into equal sub-steps no longer than the configured step, so the solver
  lands on every observation time exactly and a backward pass over the
  same grid retraces the same sub-step sizes;
* adaptive Dormand-Prince 4(5) with the usual embedded error estimate,
  clamped so accepted steps hit observation times exactly (no dense
  output interpolation enters the sampled trajectory).

Any state component whose magnitude exceeds ``DIVERGENCE_LIMIT`` (or goes
non-finite) aborts with :class:`IntegrationDivergedError`, so early
training blowups fail fast instead of poisoning downstream math.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError, IntegrationDivergedError, StiffnessError

DIVERGENCE_LIMIT = 1e8

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class SolverConfig:
    method: str  # "rk4" | "dopri45"
    step: float | None = None  # rk4 only
    rtol: float | None = None  # dopri45 only
    atol: float | None = None
    max_step: float = math.inf
    direction: str = FORWARD

    def __post_init__(self):
        if self.method not in ("rk4", "dopri45"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.direction not in (FORWARD, BACKWARD):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.method == "rk4":
            if self.step is None or self.step <= 0:
                raise ConfigError("rk4 requires step > 0")
        else:
            if self.rtol is None or self.rtol <= 0 or self.atol is None or self.atol <= 0:
                raise ConfigError("dopri45 requires rtol > 0 and atol > 0")
        if self.max_step <= 0:
            raise ConfigError("max_step must be > 0")

    @staticmethod
    def rk4(step: float, direction: str = FORWARD) -> "SolverConfig":
        return SolverConfig("rk4", step=step, direction=direction)

    @staticmethod
    def dopri45(
        rtol: float = 1e-7,
        atol: float = 1e-9,
        max_step: float = math.inf,
        direction: str = FORWARD,
    ) -> "SolverConfig":
        return SolverConfig(
            "dopri45", rtol=rtol, atol=atol, max_step=max_step, direction=direction
        )

    def reversed(self) -> "SolverConfig":
        flipped = BACKWARD if self.direction == FORWARD else FORWARD
        return SolverConfig(
            self.method, self.step, self.rtol, self.atol, self.max_step, flipped
        )


def validate_grid(times) -> np.ndarray:
    """Observation instants: 1-D, finite, strictly increasing."""
    times = np.ascontiguousarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise DataError("time grid must be a non-empty 1-D array")
    if not np.all(np.isfinite(times)):
        raise DataError("time grid contains non-finite entries")
    if times.size > 1:
        diffs = np.diff(times)
        if np.any(diffs <= 0):
            bad = times[1:][diffs <= 0][0]
            raise DataError(f"time grid not strictly increasing at t={bad!r}")
    return times


def uniform_grid(t_end: float, points: int, t_start: float = 0.0) -> np.ndarray:
    return validate_grid(np.linspace(t_start, t_end, points))


def _guard(y: np.ndarray, t: float) -> None:
    m = np.max(np.abs(y))
    if not np.isfinite(m) or m > DIVERGENCE_LIMIT:
        raise IntegrationDivergedError(t)


def _rk4_span(rhs, t0: float, t1: float, y: np.ndarray, h_nominal: float) -> np.ndarray:
    span = t1 - t0
    n_sub = max(1, math.ceil(abs(span) / h_nominal - 1e-12))
    h = span / n_sub
    for k in range(n_sub):
        t = t0 + k * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1)
        k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(y, t + h)
    return y


# Dormand-Prince 5(4) tableau; the last A row doubles as the propagating
# 5th-order weights, E holds (b5 - b4hat) for the error estimate.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B = np.append(_DP_A[6], 0.0)
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


class _DopriState:
    __slots__ = ("h_abs",)

    def __init__(self, h_abs: float):
        self.h_abs = h_abs


def _dopri_span(rhs, t0, t1, y, cfg: SolverConfig, state: _DopriState) -> np.ndarray:
    direction = 1.0 if t1 > t0 else -1.0
    t = t0
    while (t1 - t) * direction > 0.0:
        h_abs = min(state.h_abs, cfg.max_step)
        clamped = h_abs >= abs(t1 - t)
        if clamped:
            h_abs = abs(t1 - t)
        if h_abs < 1e-14 * max(1.0, abs(t)):
            raise StiffnessError(t)
        h = direction * h_abs
        k = [rhs(t, y)]
        for i in range(1, 7):
            yi = y + h * (_DP_A[i] @ np.stack(k[:i])) if i > 1 else y + h * _DP_A[1][0] * k[0]
            k.append(rhs(t + _DP_C[i] * h, yi))
        kmat = np.stack(k)
        y_new = y + h * (_DP_B @ kmat)
        err = h * (_DP_E @ kmat)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = math.sqrt(float(np.mean((err / scale) ** 2)))
        if err_norm <= 1.0:
            t = t1 if clamped else t + h
            y = y_new
            _guard(y, t)
            factor = 10.0 if err_norm == 0.0 else min(10.0, 0.9 * err_norm ** -0.2)
            state.h_abs = h_abs * max(0.2, factor)
        else:
            state.h_abs = h_abs * max(0.2, 0.9 * err_norm ** -0.2)
    return y


def _initial_step(times: np.ndarray, cfg: SolverConfig) -> float:
    span = abs(times[-1] - times[0])
    if span == 0.0:
        span = 1.0
    return min(cfg.max_step, 0.05 * span)


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    grid,
    cfg: SolverConfig,
) -> np.ndarray:
    """Integrate ``dy/dt = rhs(t, y)`` and sample at every grid time.

    Row ``i`` of the result is the solution at ``grid[i]``.  With the
    forward direction the initial value sits at ``grid[0]`` (row 0 equals
    ``y0`` exactly); with the backward direction it sits at ``grid[-1]``.
    """
    times = validate_grid(grid)
    y = np.ascontiguousarray(y0, dtype=np.float64)
    if y.ndim != 1:
        raise DataError("y0 must be a 1-D vector")
    if not np.all(np.isfinite(y)):
        raise DataError("y0 contains non-finite entries")
    out = np.empty((times.size, y.size))
    state = _DopriState(_initial_step(times, cfg)) if cfg.method == "dopri45" else None

    def advance(t_from, t_to, yv):
        if cfg.method == "rk4":
            return _rk4_span(rhs, t_from, t_to, yv, cfg.step)
        return _dopri_span(rhs, t_from, t_to, yv, cfg, state)

    if cfg.direction == FORWARD:
        out[0] = y
        for i in range(1, times.size):
            y = advance(times[i - 1], times[i], y)
            out[i] = y
    else:
        out[-1] = y
        for i in range(times.size - 2, -1, -1):
            y = advance(times[i + 1], times[i], y)
            out[i] = y
    return out


class ReverseAccumResult(NamedTuple):
    trajectory: np.ndarray  # sampled at grid times (row i is grid[i])
    accumulated: np.ndarray  # integral of quad over [grid[0], grid[-1]]


def integrate_reverse_with_accumulator(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    quad: Callable[[float, np.ndarray], np.ndarray],
    y_end,
    grid,
    cfg: SolverConfig,
) -> ReverseAccumResult:
    """Integrate backward from the last grid time while accumulating the
    running integral of ``quad`` with the same quadrature steps.

    ``quad`` is evaluated at exactly the stage points the solver visits,
    immediately after ``rhs`` at the same ``(t, y)``.  The accumulated
    integral is reported with forward orientation, i.e. as
    ``int_{grid[0]}^{grid[-1]} quad dt``.
    """
    times = validate_grid(grid)
    y_end = np.ascontiguousarray(y_end, dtype=np.float64)
    q0 = np.atleast_1d(np.asarray(quad(times[-1], y_end), dtype=np.float64))
    dim = y_end.size
    aug0 = np.concatenate([y_end, np.zeros(q0.size)])

    def aug_rhs(t, w):
        yv = w[:dim]
        return np.concatenate([np.asarray(rhs(t, yv), float).ravel(), np.atleast_1d(quad(t, yv))])

    traj = integrate(aug_rhs, aug0, times, cfg.reversed() if cfg.direction == FORWARD else cfg)
    return ReverseAccumResult(
        trajectory=traj[:, :dim], accumulated=-traj[0, dim:].copy()
    )
