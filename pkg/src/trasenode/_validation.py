"""Input-validation helpers shared by the estimator front-end."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .systems import ExogenousSignal, Scenario


def check_scenarios(scenarios) -> list[Scenario]:
    """Validate a scenario collection: non-empty, consistent layout."""
    if isinstance(scenarios, Scenario):
        scenarios = [scenarios]
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigError("at least one scenario is required")
    for i, sc in enumerate(scenarios):
        if not isinstance(sc, Scenario):
            raise ConfigError(f"scenarios[{i}] is not a Scenario")
    first = scenarios[0]
    for i, sc in enumerate(scenarios[1:], start=1):
        if sc.n != first.n or sc.m != first.m:
            raise DimensionMismatchError(
                f"scenarios[{i}] channels", (first.n, first.m), (sc.n, sc.m)
            )
        if sc.state_names != first.state_names:
            raise ConfigError(
                f"scenarios[{i}] state names {sc.state_names} differ from {first.state_names}"
            )
    return scenarios


def as_exo_signal(exogenous, grid, m: int):
    """Coerce user-facing exogenous input to a callable signal (or None)."""
    if m == 0:
        if exogenous is not None:
            raise DimensionMismatchError("exogenous", 0, "given")
        return None
    if exogenous is None:
        raise ConfigError(
            "this model expects exogenous channels; pass `exogenous=` "
            "(an (N, m) array aligned with the grid, or a callable t -> y)"
        )
    if callable(exogenous):
        return exogenous
    values = np.asarray(exogenous, dtype=np.float64)
    return ExogenousSignal(grid, values)
