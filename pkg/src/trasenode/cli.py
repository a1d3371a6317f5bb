"""Command-line pipeline: data generation, training, sweeps, comparison.

Every command writes exactly one ``manifest.json`` next to its outputs,
carrying a hash of the fully resolved configuration, the tool version,
and the seed, so a run is reproducible from its manifest alone.  Output
directories are write-once: an existing manifest aborts the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence,
5 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, DataError, DivergenceError
from .metrics import MetricsReport, predict_scenario, sweep
from .network import LayerSpec, NetSpec, load_checkpoint, save_checkpoint
from .solvers import SolverConfig, uniform_grid
from .systems import (
    OscillatorParams,
    Scenario,
    gen_ibr_fixture,
    gen_linear_scalar,
    gen_oscillator,
    ingest_csv,
    write_scenario,
)
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_IO = 5


# ---------------------------------------------------------------------------
# Shared plumbing.
# ---------------------------------------------------------------------------


def _config_hash(command: str, resolved: dict) -> str:
    blob = json.dumps({"command": command, "config": resolved}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(
    out_dir: Path, command: str, resolved: dict, inputs, outputs, seed
) -> None:
    path = out_dir / "manifest.json"
    if path.exists():
        raise FileExistsError(
            f"{path} already exists; outputs are write-once per run directory"
        )
    doc = {
        "command": command,
        "config_hash": _config_hash(command, resolved),
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "tool_version": __version__,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _prepare_out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if (out / "manifest.json").exists():
        raise FileExistsError(
            f"{out / 'manifest.json'} already exists; pick a fresh output directory"
        )
    return out


def _parse_solver_flag(text: str) -> SolverConfig:
    kind, _, rest = text.partition(":")
    try:
        if kind == "rk4":
            return SolverConfig.rk4(float(rest))
        if kind == "dopri45":
            parts = [float(v) for v in rest.split(",")] if rest else []
            rtol = parts[0] if len(parts) > 0 else 1e-7
            atol = parts[1] if len(parts) > 1 else 1e-9
            max_step = parts[2] if len(parts) > 2 else float("inf")
            return SolverConfig.dopri45(rtol, atol, max_step)
    except ValueError as exc:
        raise ConfigError(f"cannot parse solver spec {text!r}: {exc}") from exc
    raise ConfigError(f"unknown solver {kind!r} (use rk4:<step> or dopri45:<rtol>,<atol>)")


def _solver_from_dict(doc: dict | None) -> SolverConfig | None:
    if doc is None:
        return None
    if doc["method"] == "rk4":
        return SolverConfig.rk4(float(doc["step"]))
    return SolverConfig.dopri45(
        float(doc["rtol"]), float(doc["atol"]), float(doc.get("max_step", "inf"))
    )


def _u_values(args) -> list[float]:
    if args.u:
        return [float(v) for v in args.u]
    if args.u_min is None or args.u_max is None:
        raise ConfigError("give either repeated --u values or --u-min/--u-max")
    step = args.u_step
    count = int(round((args.u_max - args.u_min) / step)) + 1
    vals = [args.u_min + i * step for i in range(count)]
    return [v for v in vals if v <= args.u_max + 1e-12]


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = _prepare_out_dir(args.out)
    u_list = [float(v) for v in args.u or []]
    grid = uniform_grid(args.t_end, args.points)
    outputs = []
    for u in u_list:
        if args.system == "oscillator":
            params = OscillatorParams(args.omega_n, args.zeta, args.x0, args.v0)
            sc = gen_oscillator(params, u, grid)
        else:
            sc = gen_linear_scalar(u, args.x0, grid)
        csv_path, side = write_scenario(sc, out / f"{args.system}_u{u:g}.csv")
        outputs += [csv_path.name, side.name]
    resolved = {
        "system": args.system,
        "u": u_list,
        "t_end": args.t_end,
        "points": args.points,
        "omega_n": args.omega_n,
        "zeta": args.zeta,
        "x0": args.x0,
        "v0": args.v0,
    }
    _write_manifest(out, "generate", resolved, [], outputs, seed=None)
    print(f"generate: wrote {len(u_list)} scenario(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_SOLVER_SCHEMA = {
    "oneOf": [
        {"type": "null"},
        {
            "type": "object",
            "required": ["method", "step"],
            "additionalProperties": False,
            "properties": {
                "method": {"const": "rk4"},
                "step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        {
            "type": "object",
            "required": ["method", "rtol", "atol"],
            "additionalProperties": False,
            "properties": {
                "method": {"const": "dopri45"},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "max_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    ]
}

TRAIN_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["mode", "network", "scenarios", "epochs"],
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["node", "trase"]},
        "network": {
            "type": "object",
            "required": ["hidden"],
            "additionalProperties": False,
            "properties": {
                "hidden": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["width", "activation"],
                        "additionalProperties": False,
                        "properties": {
                            "width": {"type": "integer", "minimum": 1},
                            "activation": {"enum": ["leaky_relu", "tanh"]},
                            "slope": {"type": "number"},
                        },
                    },
                },
                "time_as_input": {"type": "boolean"},
            },
        },
        "scenarios": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "epochs": {"type": "integer", "minimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "adam_betas": {
            "type": "array",
            "minItems": 2,
            "maxItems": 2,
            "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        },
        "adam_eps": {"type": "number", "exclusiveMinimum": 0},
        "loss_weights": {
            "type": "array",
            "minItems": 2,
            "maxItems": 2,
            "items": {"type": "number", "minimum": 0},
        },
        "solver": _SOLVER_SCHEMA,
        "seed": {"type": "integer"},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "grad_clip": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
    },
}


def load_train_config(path, seed_override=None, solver_override=None) -> tuple[TrainConfig, dict]:
    """Parse, schema-validate, and resolve a training config file."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, TRAIN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "$" + "".join(f"[{p!r}]" for p in exc.absolute_path)
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc

    if seed_override is not None:
        doc["seed"] = seed_override
    if solver_override is not None:
        doc["solver"] = {
            "method": solver_override.method,
            **(
                {"step": solver_override.step}
                if solver_override.method == "rk4"
                else {
                    "rtol": solver_override.rtol,
                    "atol": solver_override.atol,
                    "max_step": solver_override.max_step,
                }
            ),
        }

    scenario_paths = [
        (path.parent / p if not Path(p).is_absolute() else Path(p))
        for p in doc["scenarios"]
    ]
    scenarios = [ingest_csv(p) for p in scenario_paths]
    hidden = tuple(
        LayerSpec(h["width"], h["activation"], h.get("slope", 0.01))
        for h in doc["network"]["hidden"]
    )
    n = scenarios[0].n
    m = scenarios[0].m
    time_as_input = bool(doc["network"].get("time_as_input", False))
    spec = NetSpec(
        input_dim=n + 1 + m + (1 if time_as_input else 0),
        hidden=hidden,
        output_dim=n,
        time_as_input=time_as_input,
    )
    cfg = TrainConfig(
        mode=doc["mode"],
        network=spec,
        scenarios=scenarios,
        epochs=int(doc["epochs"]),
        lr=float(doc.get("lr", 1e-3)),
        adam_betas=tuple(doc.get("adam_betas", (0.9, 0.999))),
        adam_eps=float(doc.get("adam_eps", 1e-8)),
        loss_weights=tuple(doc.get("loss_weights", (1.0, 1.0))),
        solver=_solver_from_dict(doc.get("solver")),
        seed=int(doc.get("seed", 0)),
        checkpoint_every=int(doc.get("checkpoint_every", 0)),
        grad_clip=doc.get("grad_clip"),
    )
    cfg.validate()
    doc["scenarios"] = [str(p) for p in scenario_paths]
    return cfg, doc


def cmd_train(args) -> int:
    solver_override = _parse_solver_flag(args.solver) if args.solver else None
    cfg, resolved = load_train_config(args.config, args.seed, solver_override)
    out = _prepare_out_dir(args.out)
    report = train(cfg, out_dir=out)
    with open(out / "train_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    outputs = sorted(p.name for p in out.glob("*.json") if p.name != "manifest.json")
    _write_manifest(
        out, "train", resolved, inputs=resolved["scenarios"], outputs=outputs, seed=cfg.seed
    )
    last = float(report.loss_history[-1]) if report.loss_history.size else float("nan")
    print(
        f"train: {resolved['mode']} for {report.loss_history.size} epochs, "
        f"final loss {last:.3e}, wall {report.wall_time:.1f}s -> {out}"
    )
    if report.diverged:
        print("train: diverged (learning-rate retry exhausted)", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep / compare
# ---------------------------------------------------------------------------


def _scenario_factory(args):
    if args.data is not None:
        data_dir = Path(args.data)
        pool: dict[float, Scenario] = {}
        for csv_path in sorted(data_dir.glob("*.csv")):
            sc = ingest_csv(csv_path)
            pool[round(sc.u, 12)] = sc
        if not pool:
            raise DataError(f"no scenario CSVs found in {data_dir}")

        def factory(u: float) -> Scenario:
            key = round(u, 12)
            if key not in pool:
                raise DataError(f"no scenario file for u={u!r} in {data_dir}")
            return pool[key]

        return factory, sorted(pool)
    if args.system == "oscillator":
        params = OscillatorParams(args.omega_n, args.zeta, args.x0, args.v0)
        grid = uniform_grid(args.t_end, args.points)
        return (lambda u: gen_oscillator(params, u, grid)), None
    grid = uniform_grid(args.t_end, args.points)
    return (lambda u: gen_linear_scalar(u, args.x0, grid)), None


def _write_nmse_csv(path: Path, reports: dict[str, MetricsReport]) -> None:
    first = next(iter(reports.values()))
    header = ["u"] + [
        f"{model}:{ch}" for model, rep in reports.items() for ch in rep.channel_names
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i, u in enumerate(first.u_values):
            row = [format(float(u), "g")]
            for rep in reports.values():
                row += [format(float(v), ".12g") for v in rep.nmse_values[i]]
            fh.write(",".join(row) + "\n")


def _write_trace_csvs(out: Path, prefix: str, params, scenario, cfg) -> list[str]:
    """One plot-data CSV per figure style: state traces and, when the
    scenario carries them, sensitivity traces."""
    pred, truth, names = predict_scenario(params, scenario, cfg)
    n = scenario.n
    groups = [("states", list(range(n)))]
    if len(names) > n:
        groups.append(("sensitivities", list(range(n, len(names)))))
    written = []
    for label, cols in groups:
        header = (
            ["t"]
            + [f"true_{names[c]}" for c in cols]
            + [f"pred_{names[c]}" for c in cols]
        )
        table = np.hstack([scenario.grid[:, None], truth[:, cols], pred[:, cols]])
        name = f"{prefix}_{label}.csv"
        with open(out / name, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in table:
                fh.write(",".join(format(v, ".12g") for v in row) + "\n")
        written.append(name)
    return written


def _write_svg(path: Path, reports: dict[str, MetricsReport]) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("matplotlib is required for --svg output") from exc
    first = next(iter(reports.values()))
    channels = first.channel_names
    fig, axes = plt.subplots(
        1, len(channels), figsize=(4 * len(channels), 3.2), squeeze=False
    )
    for ci, ch in enumerate(channels):
        ax = axes[0][ci]
        for model, rep in reports.items():
            ax.semilogy(rep.u_values, np.maximum(rep.nmse_values[:, ci], 1e-16), label=model)
        ax.set_xlabel("u")
        ax.set_title(f"NMSE: {ch}")
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel("NMSE")
    axes[0][-1].legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _run_sweep(args, require_baseline: bool) -> int:
    if require_baseline and not args.baseline:
        raise ConfigError("compare requires --baseline")
    ckpt_path = Path(args.checkpoint)
    params = load_checkpoint(ckpt_path)
    baseline = load_checkpoint(args.baseline) if args.baseline else None
    factory, available_u = _scenario_factory(args)
    if args.u or args.u_min is not None:
        u_grid = _u_values(args)
    elif available_u is not None:
        u_grid = available_u
    else:
        raise ConfigError("give --u or --u-min/--u-max for generated systems")
    cfg = _parse_solver_flag(args.solver) if args.solver else SolverConfig.rk4(
        args.t_end / 1000.0 if args.data is None else 0.01
    )
    out = _prepare_out_dir(args.out)

    result = sweep(params, u_grid, factory, cfg, params_b=baseline)
    if baseline is None:
        reports = {"model": result}
    else:
        reports = {"model": result[0], "baseline": result[1]}

    report_doc = {name: rep.to_dict() for name, rep in reports.items()}
    if baseline is not None:
        ratio = reports["baseline"].worst_case / np.maximum(
            reports["model"].worst_case, 1e-300
        )
        report_doc["worst_case_ratio_baseline_over_model"] = [float(v) for v in ratio]
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=2)
        fh.write("\n")
    _write_nmse_csv(out / "nmse_vs_u.csv", reports)
    outputs = ["report.json", "nmse_vs_u.csv"]

    for u in args.trace or []:
        sc = factory(float(u))
        outputs += _write_trace_csvs(out, f"traces_model_u{float(u):g}", params, sc, cfg)
        if baseline is not None:
            outputs += _write_trace_csvs(
                out, f"traces_baseline_u{float(u):g}", baseline, sc, cfg
            )
    if args.svg:
        _write_svg(out / "nmse_vs_u.svg", reports)
        outputs.append("nmse_vs_u.svg")

    resolved = {
        "checkpoint": str(ckpt_path),
        "baseline": str(args.baseline) if args.baseline else None,
        "u_grid": [float(u) for u in u_grid],
        "solver": args.solver,
        "system": args.system,
        "data": str(args.data) if args.data else None,
    }
    inputs = [str(ckpt_path)] + ([str(args.baseline)] if args.baseline else [])
    _write_manifest(out, "compare" if require_baseline else "sweep", resolved, inputs, outputs, seed=None)

    for name, rep in reports.items():
        worst = ", ".join(
            f"{ch}={val:.3g}" for ch, val in zip(rep.channel_names, rep.worst_case)
        )
        print(f"{name}: worst-case NMSE over u: {worst}")
    if baseline is not None:
        pairs = zip(reports["model"].channel_names, ratio)
        print(
            "baseline/model worst-case ratio: "
            + ", ".join(f"{ch}={val:.3g}" for ch, val in pairs)
        )
    return EXIT_OK


def cmd_sweep(args) -> int:
    return _run_sweep(args, require_baseline=False)


def cmd_compare(args) -> int:
    return _run_sweep(args, require_baseline=True)


# ---------------------------------------------------------------------------
# export-fixtures
# ---------------------------------------------------------------------------


def cmd_export_fixtures(args) -> int:
    out = _prepare_out_dir(args.out)
    u_list = [float(v) for v in args.u] if args.u else [1.036, 1.039, 1.040, 1.043]
    grid = uniform_grid(args.t_end, args.points)
    outputs = []
    for u in u_list:
        sc = gen_ibr_fixture(u, grid)
        csv_path, side = write_scenario(sc, out / f"ibr_u{u:g}.csv")
        outputs += [csv_path.name, side.name]
    resolved = {"u": u_list, "t_end": args.t_end, "points": args.points}
    _write_manifest(out, "export-fixtures", resolved, [], outputs, seed=None)
    print(f"export-fixtures: wrote {len(u_list)} fixture(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _add_sweep_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--baseline", help="second checkpoint for paired comparison")
    p.add_argument("--u", action="append", help="explicit set-point (repeatable)")
    p.add_argument("--u-min", type=float)
    p.add_argument("--u-max", type=float)
    p.add_argument("--u-step", type=float, default=0.25)
    p.add_argument("--system", choices=["oscillator", "linear"], default="oscillator")
    p.add_argument("--data", help="directory of scenario CSVs to use as ground truth")
    p.add_argument("--t-end", type=float, default=7.0)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--omega-n", type=float, default=2.5)
    p.add_argument("--zeta", type=float, default=0.3)
    p.add_argument("--x0", type=float, default=2.0)
    p.add_argument("--v0", type=float, default=1.0)
    p.add_argument("--solver", help="evaluation solver, e.g. rk4:0.007")
    p.add_argument("--trace", action="append", help="emit trace CSV at this u (repeatable)")
    p.add_argument("--svg", action="store_true", help="emit NMSE-vs-u SVG chart")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trasenode",
        description="Train and evaluate sensitivity-aware neural ODE dynamics models.",
    )
    parser.add_argument("--version", action="version", version=f"trasenode {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate ground-truth scenario files")
    g.add_argument("--system", choices=["oscillator", "linear"], required=True)
    g.add_argument("--u", action="append", help="set-point (repeatable)")
    g.add_argument("--t-end", type=float, default=7.0)
    g.add_argument("--points", type=int, default=100)
    g.add_argument("--omega-n", type=float, default=2.5)
    g.add_argument("--zeta", type=float, default=0.3)
    g.add_argument("--x0", type=float, default=2.0)
    g.add_argument("--v0", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--solver", help="override the config solver, e.g. rk4:0.007")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="evaluate checkpoint(s) over a set-point range")
    _add_sweep_args(s)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="paired sweep of model vs baseline")
    _add_sweep_args(c)
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("export-fixtures", help="write inverter-style fixture CSVs")
    e.add_argument("--u", action="append", help="set-point (repeatable)")
    e.add_argument("--t-end", type=float, default=4.0)
    e.add_argument("--points", type=int, default=100)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
