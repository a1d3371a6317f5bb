"""Ground-truth scenario generators and external-data ingestion.

Three data sources feed training and evaluation:

* a linear scalar ODE ``dx/dt = -3x + u`` with closed-form state and
  set-point sensitivity;
* a damped oscillator whose sensitivity obeys its own linear ODE, so the
  augmented 4-state truth system ``[x, v, s_x, s_v]`` is integrated
  directly;
* CSV files produced by an external simulator (one file per set-point,
  plus a JSON sidecar naming the channels), with set-point sensitivities
  estimated by finite differences between two files.

Scenario CSVs are strictly tabular: header ``t,<states...>[,<exo...>]``
``[,<sens...>]``, one row per grid point, values at 17 significant digits.
The sidecar lives next to the CSV with the same stem and ``.json`` suffix.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatchError
from .solvers import SolverConfig, integrate, uniform_grid, validate_grid

# Generation runs much tighter than the training solver so that generated
# trajectories are accurate enough for finite-difference sensitivity
# estimates (the FD quotient amplifies per-trajectory error by 1/du).
GENERATION_SOLVER = SolverConfig.dopri45(rtol=1e-11, atol=1e-13)


@dataclass(frozen=True)
class OscillatorParams:
    """Damped oscillator ``x'' + 2 zeta omega_n x' + omega_n^2 x = u``."""

    omega_n: float = 2.5
    zeta: float = 0.3
    x0: float = 2.0
    v0: float = 1.0

    def __post_init__(self):
        if self.omega_n <= 0:
            raise DataError("omega_n must be > 0")
        if self.zeta < 0:
            raise DataError("zeta must be >= 0")


class ExogenousSignal:
    """Grid-aligned samples of exogenous channels with linear interpolation."""

    def __init__(self, times, values):
        self.times = validate_grid(times)
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if self.values.shape[0] != self.times.size:
            raise DimensionMismatchError(
                "exogenous rows", self.times.size, self.values.shape[0]
            )

    def __call__(self, t: float) -> np.ndarray:
        times = self.times
        idx = int(np.searchsorted(times, t, side="right")) - 1
        idx = min(max(idx, 0), times.size - 2) if times.size > 1 else 0
        if times.size == 1:
            return self.values[0]
        t0, t1 = times[idx], times[idx + 1]
        w = (t - t0) / (t1 - t0)
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * self.values[idx] + w * self.values[idx + 1]


@dataclass
class Scenario:
    """One training or testing instance.

    ``sensitivities`` rows may be NaN to flag time points where no
    sensitivity ground truth exists; such rows contribute neither loss nor
    adjoint jumps.
    """

    u: float
    grid: np.ndarray
    states: np.ndarray
    sensitivities: np.ndarray | None = None
    exogenous: np.ndarray | None = None
    state_names: tuple[str, ...] = ()
    exo_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.grid = validate_grid(self.grid)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        N = self.grid.size
        if self.states.shape[0] != N:
            raise DimensionMismatchError("state rows", N, self.states.shape[0])
        if not self.state_names:
            self.state_names = tuple(f"x{i + 1}" for i in range(self.states.shape[1]))
        if len(self.state_names) != self.states.shape[1]:
            raise DimensionMismatchError(
                "state_names", self.states.shape[1], len(self.state_names)
            )
        if self.sensitivities is not None:
            self.sensitivities = np.atleast_2d(
                np.asarray(self.sensitivities, dtype=np.float64)
            )
            if self.sensitivities.shape != self.states.shape:
                raise DimensionMismatchError(
                    "sensitivities", self.states.shape, self.sensitivities.shape
                )
        if self.exogenous is not None:
            self.exogenous = np.atleast_2d(np.asarray(self.exogenous, dtype=np.float64))
            if self.exogenous.shape[0] != N:
                raise DimensionMismatchError(
                    "exogenous rows", N, self.exogenous.shape[0]
                )
            if not self.exo_names:
                self.exo_names = tuple(
                    f"y{i + 1}" for i in range(self.exogenous.shape[1])
                )
            if len(self.exo_names) != self.exogenous.shape[1]:
                raise DimensionMismatchError(
                    "exo_names", self.exogenous.shape[1], len(self.exo_names)
                )

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return 0 if self.exogenous is None else self.exogenous.shape[1]

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def exo_signal(self) -> ExogenousSignal | None:
        if self.exogenous is None:
            return None
        return ExogenousSignal(self.grid, self.exogenous)

    def sens_names(self) -> tuple[str, ...]:
        return tuple(f"s_{name}" for name in self.state_names)


def gen_linear_scalar(u: float, x0: float, grid) -> Scenario:
    """Closed-form scenario for ``dx/dt = -3x + u`` (states and sensitivity)."""
    grid = validate_grid(grid)
    decay = np.exp(-3.0 * grid)
    states = u / 3.0 + (x0 - u / 3.0) * decay
    sens = (1.0 - decay) / 3.0
    return Scenario(
        u=u,
        grid=grid,
        states=states[:, None],
        sensitivities=sens[:, None],
        state_names=("x",),
    )


def oscillator_field(params: OscillatorParams, u: float):
    """Truth vector field of the augmented system [x, v, s_x, s_v]."""
    w2 = params.omega_n**2
    tz = 2.0 * params.zeta * params.omega_n

    def rhs(t, z):
        return np.array(
            [
                z[1],
                -w2 * z[0] - tz * z[1] + u,
                z[3],
                -w2 * z[2] - tz * z[3] + 1.0,
            ]
        )

    return rhs


def gen_oscillator(
    params: OscillatorParams, u: float, grid, cfg: SolverConfig | None = None
) -> Scenario:
    """Integrate the augmented oscillator truth system, sampled on the grid.

    Initial sensitivity is zero: the initial state does not depend on the
    set-point.
    """
    grid = validate_grid(grid)
    cfg = GENERATION_SOLVER if cfg is None else cfg
    z0 = np.array([params.x0, params.v0, 0.0, 0.0])
    traj = integrate(oscillator_field(params, u), z0, grid, cfg)
    return Scenario(
        u=u,
        grid=grid,
        states=traj[:, :2],
        sensitivities=traj[:, 2:],
        state_names=("x", "v"),
    )


def finite_diff_sensitivity(sc_a: Scenario, sc_b: Scenario) -> Scenario:
    """Estimate set-point sensitivities from two scenarios at nearby u.

    Returns a copy of ``sc_a`` carrying ``(states_b - states_a) / (u_b - u_a)``
    as its sensitivity estimate.
    """
    if sc_a.grid.shape != sc_b.grid.shape or not np.array_equal(sc_a.grid, sc_b.grid):
        raise DataError("scenarios must share the same time grid")
    if sc_a.states.shape != sc_b.states.shape or sc_a.state_names != sc_b.state_names:
        raise DataError("scenarios must share the same state layout")
    du = sc_b.u - sc_a.u
    if abs(du) < 1e-12:
        raise DataError(
            f"degenerate set-point spacing |u_b - u_a| = {abs(du)!r} < 1e-12"
        )
    sens = (sc_b.states - sc_a.states) / du
    return replace(sc_a, sensitivities=sens)


# ---------------------------------------------------------------------------
# Synthetic inverter-style fixture: a controlled current source driven by
# recorded terminal voltage/frequency, with the quadrature-axis current
# strongly tied to the voltage reference set-point.  Stands in for an
# external power-system simulator; not a converter control model.
# ---------------------------------------------------------------------------

IBR_STATE_NAMES = ("I_d", "I_q")
IBR_EXO_NAMES = ("V_t", "f_t")


def ibr_exogenous(grid) -> np.ndarray:
    grid = validate_grid(grid)
    v_t = 1.0 - 0.04 * np.exp(-1.2 * grid) * np.cos(6.0 * grid)
    f_t = 1.0 - 0.006 * np.exp(-0.8 * grid) * np.sin(5.0 * grid)
    return np.column_stack([v_t, f_t])


def _ibr_field(u: float):
    tau_d, tau_q = 0.25, 0.12

    def rhs(t, x):
        v_t = 1.0 - 0.04 * math.exp(-1.2 * t) * math.cos(6.0 * t)
        f_t = 1.0 - 0.006 * math.exp(-0.8 * t) * math.sin(5.0 * t)
        dv = u - v_t
        i_d_cmd = 0.9 + 2.0 * (f_t - 1.0) + 0.05 * (u - 1.04)
        i_q_cmd = 4.0 * dv + 10.0 * dv * dv
        return np.array([(i_d_cmd - x[0]) / tau_d, (i_q_cmd - x[1]) / tau_q])

    return rhs


def gen_ibr_fixture(
    u: float, grid=None, cfg: SolverConfig | None = None
) -> Scenario:
    """Playback-style fixture trajectory at one voltage-reference set-point.

    The exogenous channels are identical across set-points (as recorded
    signals would be), so finite differences between two fixtures estimate
    the sensitivity at fixed exogenous conditions.
    """
    grid = uniform_grid(4.0, 100) if grid is None else validate_grid(grid)
    cfg = GENERATION_SOLVER if cfg is None else cfg
    # pre-event operating point, set-point independent; the disturbance
    # makes both currents ramp to new quasi-steady values
    x0 = np.array([0.5, 0.0])
    traj = integrate(_ibr_field(u), x0, grid, cfg)
    return Scenario(
        u=u,
        grid=grid,
        states=traj,
        exogenous=ibr_exogenous(grid),
        state_names=IBR_STATE_NAMES,
        exo_names=IBR_EXO_NAMES,
    )


# ---------------------------------------------------------------------------
# CSV + sidecar I/O.
# ---------------------------------------------------------------------------


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_scenario(sc: Scenario, csv_path) -> tuple[Path, Path]:
    """Write a scenario CSV and its JSON sidecar; returns both paths."""
    csv_path = Path(csv_path)
    sens_names = sc.sens_names() if sc.sensitivities is not None else ()
    header = ["t", *sc.state_names, *sc.exo_names, *sens_names]
    blocks = [sc.grid[:, None], sc.states]
    if sc.exogenous is not None:
        blocks.append(sc.exogenous)
    if sc.sensitivities is not None:
        blocks.append(sc.sensitivities)
    table = np.hstack(blocks)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    meta = {
        "u": sc.u,
        "state_columns": list(sc.state_names),
        "exo_columns": list(sc.exo_names),
    }
    if sc.sensitivities is not None:
        meta["sensitivity_columns"] = list(sens_names)
    side = sidecar_path(csv_path)
    with open(side, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return csv_path, side


def ingest_csv(csv_path, layout: dict | None = None) -> Scenario:
    """Parse a scenario CSV; the layout comes from the JSON sidecar unless
    given explicitly as ``{u, state_columns, exo_columns[, sensitivity_columns]}``.
    """
    csv_path = Path(csv_path)
    if layout is None:
        side = sidecar_path(csv_path)
        if not side.exists():
            raise DataError(f"missing sidecar {side}")
        with open(side, "r", encoding="utf-8") as fh:
            try:
                layout = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed sidecar {side}: {exc}") from exc
    try:
        u = float(layout["u"])
        state_cols = list(layout["state_columns"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"sidecar must carry 'u' and 'state_columns': {exc}") from exc
    exo_cols = list(layout.get("exo_columns", ()) or ())
    sens_cols = list(layout.get("sensitivity_columns", ()) or ())

    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        header = [h.strip() for h in header]
        expected = ["t", *state_cols, *exo_cols, *sens_cols]
        if header != expected:
            raise DataError(
                f"{csv_path}: header {header!r} does not match layout {expected!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected):
                raise DataError(
                    f"{csv_path}:{lineno}: expected {len(expected)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{csv_path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{csv_path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    times = table[:, 0]
    if np.any(np.diff(times) <= 0):
        bad = times[1:][np.diff(times) <= 0][0]
        raise DataError(f"{csv_path}: time not strictly increasing at t={bad!r}")
    if not np.all(np.isfinite(table)):
        i, j = np.argwhere(~np.isfinite(table))[0]
        raise DataError(
            f"{csv_path}: non-finite value in column {expected[j]!r} at t={times[i]!r}"
        )
    ns, ne = len(state_cols), len(exo_cols)
    states = table[:, 1 : 1 + ns]
    exo = table[:, 1 + ns : 1 + ns + ne] if ne else None
    sens = table[:, 1 + ns + ne :] if sens_cols else None
    if sens is not None and sens.shape[1] != ns:
        raise DimensionMismatchError("sensitivity_columns", ns, sens.shape[1])
    return Scenario(
        u=u,
        grid=times,
        states=states,
        sensitivities=sens,
        exogenous=exo,
        state_names=tuple(state_cols),
        exo_names=tuple(exo_cols),
    )
