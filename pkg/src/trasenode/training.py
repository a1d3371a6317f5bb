"""Full-batch Adam training over flat parameter vectors.

One epoch evaluates every scenario's adjoint gradient (summed) and applies
one bias-corrected Adam update.  If an epoch's evaluation diverges (state
blow-up, stiffness, or a non-finite gradient), the previous update is
rolled back and re-applied once at half the learning rate; a second
divergence aborts the run with ``diverged=True``.  Gradient clipping is
available behind a flag but off by default so adjoint gradients stay
exactly comparable with finite differences.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjoint import node_adjoint_grad
from .augmented import trase_adjoint_grad
from .errors import ConfigError, DivergenceError
from .network import (
    NetSpec,
    ParamVector,
    checkpoint_document,
    init_params,
    save_checkpoint,
)
from .solvers import SolverConfig
from .systems import Scenario

MODES = ("node", "trase")


@dataclass
class TrainConfig:
    mode: str
    network: NetSpec
    scenarios: list[Scenario]
    epochs: int
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    loss_weights: tuple[float, float] = (1.0, 1.0)
    solver: SolverConfig | None = None  # None: rk4 with step = span/1000
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    grad_clip: float | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.network, NetSpec):
            raise ConfigError("network must be a NetSpec")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("adam_betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be > 0")
        w_x, w_s = self.loss_weights
        if w_x < 0 or w_s < 0:
            raise ConfigError("loss_weights must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be > 0 when set")
        n, m = self.network.output_dim, self.network.exo_dim
        for i, sc in enumerate(self.scenarios):
            if sc.n != n or sc.m != m:
                raise ConfigError(
                    f"scenario {i} has (n={sc.n}, m={sc.m}); network expects ({n}, {m})"
                )
        if self.mode == "trase":
            if not any(
                sc.sensitivities is not None
                and np.any(np.all(np.isfinite(sc.sensitivities), axis=1))
                for sc in self.scenarios
            ):
                raise ConfigError(
                    "trase mode requires at least one scenario with sensitivities"
                )

    def resolved_solver(self) -> SolverConfig:
        if self.solver is not None:
            return self.solver
        span = max(float(sc.grid[-1] - sc.grid[0]) for sc in self.scenarios)
        return SolverConfig.rk4(span / 1000.0)


@dataclass
class TrainReport:
    loss_history: np.ndarray
    final_params: ParamVector
    wall_time: float
    diverged: bool

    def to_dict(self) -> dict:
        return {
            "loss_history": [float(v) for v in self.loss_history],
            "epochs_completed": int(self.loss_history.size),
            "wall_time": self.wall_time,
            "diverged": self.diverged,
        }


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    count: int = 0

    @staticmethod
    def fresh(size: int) -> "AdamState":
        return AdamState(m=np.zeros(size), v=np.zeros(size), count=0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.count)


def adam_step(
    values: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; functional (inputs untouched)."""
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    b1, b2 = betas
    t = state.count + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new_values = values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_values, AdamState(m=m, v=v, count=t)


def _epoch_grad(cfg: TrainConfig, params: ParamVector, solver: SolverConfig):
    total_loss = 0.0
    total_grad = np.zeros(params.size)
    for sc in cfg.scenarios:
        if cfg.mode == "node":
            res = node_adjoint_grad(params, sc, solver)
        else:
            res = trase_adjoint_grad(params, sc, solver, loss_weights=cfg.loss_weights)
        total_loss += res.loss
        total_grad += res.grad
    return total_loss, total_grad


def save_training_checkpoint(
    path, params: ParamVector, state: AdamState, lr: float, epoch: int
) -> None:
    doc = {
        "model": json.loads(checkpoint_document(params)),
        "optimizer": {
            "m": list(state.m),
            "v": list(state.v),
            "count": state.count,
            "lr": lr,
        },
        "epoch": epoch,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_training_checkpoint(path) -> tuple[ParamVector, AdamState, float, int]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    params = ParamVector(
        NetSpec.from_dict(doc["model"]["spec"]),
        np.asarray(doc["model"]["param_values"], dtype=np.float64),
    )
    opt = doc["optimizer"]
    state = AdamState(
        m=np.asarray(opt["m"], dtype=np.float64),
        v=np.asarray(opt["v"], dtype=np.float64),
        count=int(opt["count"]),
    )
    return params, state, float(opt["lr"]), int(doc["epoch"])


def train(cfg: TrainConfig, out_dir=None) -> TrainReport:
    """Run the configured training loop; deterministic for a fixed config."""
    cfg.validate()
    solver = cfg.resolved_solver()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    params = init_params(cfg.network, cfg.seed)
    adam = AdamState.fresh(params.size)
    lr = cfg.lr
    retried = False
    diverged = False
    prev: tuple[np.ndarray, AdamState, np.ndarray] | None = None
    history: list[float] = []
    started = time.perf_counter()

    epoch = 0
    while epoch < cfg.epochs:
        try:
            loss, grad = _epoch_grad(cfg, params, solver)
        except DivergenceError:
            if retried or prev is None:
                diverged = True
                break
            # Roll back the update that caused the blow-up and re-apply it
            # at half the learning rate; a second failure aborts.
            retried = True
            lr *= 0.5
            prev_values, prev_adam, prev_grad = prev
            new_values, adam = adam_step(
                prev_values, prev_grad, prev_adam, lr, cfg.adam_betas, cfg.adam_eps
            )
            params = params.with_values(new_values)
            try:
                loss, grad = _epoch_grad(cfg, params, solver)
            except DivergenceError:
                diverged = True
                break
        if cfg.grad_clip is not None:
            norm = float(np.linalg.norm(grad))
            if norm > cfg.grad_clip:
                grad = grad * (cfg.grad_clip / norm)
        history.append(loss)
        prev = (params.values, adam.copy(), grad)
        try:
            new_values, adam = adam_step(
                params.values, grad, adam, lr, cfg.adam_betas, cfg.adam_eps
            )
            params = params.with_values(new_values)
        except DivergenceError:
            diverged = True
            break
        epoch += 1
        if (
            out_dir is not None
            and cfg.checkpoint_every > 0
            and epoch % cfg.checkpoint_every == 0
        ):
            save_training_checkpoint(
                out_dir / f"checkpoint_epoch{epoch:05d}.json", params, adam, lr, epoch
            )

    if out_dir is not None:
        save_checkpoint(params, out_dir / "checkpoint.json")
    return TrainReport(
        loss_history=np.asarray(history),
        final_params=params,
        wall_time=time.perf_counter() - started,
        diverged=diverged,
    )
