"""Prediction metrics and set-point sweeps.

NMSE here is squared-error energy divided by ground-truth signal energy,
per channel, summed over time:  ``sum_i (pred - truth)^2 / sum_i truth^2``.
Under this definition a null predictor scores exactly 1.  Published
figures that leave their normalization unstated (variance, mean square,
or peak are all common) are therefore comparable only in order of
magnitude; every emitted report carries this note.

Sweeps stay total: a model that blows up at some set-point contributes
``+inf`` NMSE entries for that u instead of aborting the sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjoint import node_forward
from .augmented import trase_forward
from .errors import DegenerateNormalizationError, DivergenceError
from .network import ParamVector
from .solvers import SolverConfig
from .systems import Scenario

NORMALIZATION_NOTE = (
    "NMSE = sum((pred - truth)^2) / sum(truth^2) per channel over time; "
    "a null predictor scores exactly 1. Values from sources that normalize "
    "by variance or peak instead are comparable in order of magnitude only."
)


def nmse(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-channel normalized squared error of two (N, C) trajectories."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise DegenerateNormalizationError(
            f"shape mismatch: pred {pred.shape} vs truth {truth.shape}"
        )
    energy = np.sum(truth**2, axis=0)
    if np.any(energy == 0.0):
        bad = int(np.argmax(energy == 0.0))
        raise DegenerateNormalizationError(f"truth channel {bad} has zero energy")
    return np.sum((pred - truth) ** 2, axis=0) / energy


def normalized_error(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-channel error series ``(truth - pred) / max_t |truth|``."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise DegenerateNormalizationError(
            f"shape mismatch: pred {pred.shape} vs truth {truth.shape}"
        )
    peak = np.max(np.abs(truth), axis=0)
    if np.any(peak == 0.0):
        bad = int(np.argmax(peak == 0.0))
        raise DegenerateNormalizationError(f"truth channel {bad} has zero peak")
    return (truth - pred) / peak


@dataclass
class MetricsReport:
    u_values: np.ndarray
    channel_names: tuple[str, ...]
    nmse_values: np.ndarray  # (len(u), C); +inf rows mark failed set-points
    normalized_error_traces: dict | None = None  # u -> (N, C)
    normalization_note: str = NORMALIZATION_NOTE

    @property
    def worst_case(self) -> np.ndarray:
        if self.nmse_values.size == 0:
            return np.zeros(len(self.channel_names))
        return np.max(self.nmse_values, axis=0)

    def per_u(self) -> dict[float, dict[str, float]]:
        return {
            float(u): dict(zip(self.channel_names, map(float, row)))
            for u, row in zip(self.u_values, self.nmse_values)
        }

    def to_dict(self) -> dict:
        return {
            "u_values": [float(u) for u in self.u_values],
            "channels": list(self.channel_names),
            "nmse": [[float(v) for v in row] for row in self.nmse_values],
            "worst_case": [float(v) for v in self.worst_case],
            "normalization_note": self.normalization_note,
        }


def predict_scenario(
    params: ParamVector, scenario: Scenario, cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Model prediction aligned with a scenario's ground truth.

    When the scenario carries sensitivities the augmented forward pass is
    used and both state and sensitivity channels are compared (this is how
    sensitivity predictions are read out of any trained field, including a
    baseline trained on states only); otherwise states alone.
    """
    with_sens = scenario.sensitivities is not None and bool(
        np.all(np.isfinite(scenario.sensitivities))
    )
    if with_sens:
        traj = trase_forward(
            params, scenario.x0, scenario.u, scenario.exo_signal(), scenario.grid, cfg
        )
        truth = np.hstack([scenario.states, scenario.sensitivities])
        names = scenario.state_names + scenario.sens_names()
        return traj, truth, names
    fwd = node_forward(
        params, scenario.x0, scenario.u, scenario.exo_signal(), scenario.grid, cfg
    )
    return fwd.predicted, scenario.states, scenario.state_names


def _evaluate(params, scenarios, cfg, record_traces):
    rows = []
    names = None
    traces = {} if record_traces else None
    for sc in scenarios:
        try:
            pred, truth, ch = predict_scenario(params, sc, cfg)
            if names is None:
                names = ch
            rows.append(nmse(pred, truth))
            if record_traces:
                traces[float(sc.u)] = normalized_error(pred, truth)
        except DivergenceError:
            width = len(names) if names is not None else sc.n
            rows.append(np.full(width, np.inf))
    if names is None:
        names = scenarios[0].state_names if scenarios else ()
    width = len(names)
    rows = [r if r.size == width else np.full(width, np.inf) for r in rows]
    return MetricsReport(
        u_values=np.asarray([sc.u for sc in scenarios], dtype=np.float64),
        channel_names=tuple(names),
        nmse_values=np.asarray(rows).reshape(len(rows), width),
        normalized_error_traces=traces,
    )


def sweep(
    params_a: ParamVector,
    u_grid,
    scenario_factory,
    cfg: SolverConfig,
    params_b: ParamVector | None = None,
    record_traces: bool = False,
):
    """Evaluate one model (or a pair) against ground truth over a set-point
    grid.  Scenarios are generated once per u and shared between models.

    Returns one :class:`MetricsReport`, or a ``(report_a, report_b)`` pair
    when a baseline is supplied.
    """
    u_grid = list(u_grid)
    scenarios = [scenario_factory(float(u)) for u in u_grid]
    report_a = _evaluate(params_a, scenarios, cfg, record_traces)
    if params_b is None:
        return report_a
    report_b = _evaluate(params_b, scenarios, cfg, record_traces)
    return report_a, report_b
