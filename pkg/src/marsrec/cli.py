"""Command-line entry point: ``marsrec <command> [options]``.

Commands: generate, train-sensor, train-cars, recommend, evaluate. Run
settings come from one INI file (sections ``[synth]``, ``[sensor]``,
``[cars]``, ``[split]``) that is copied into every output directory.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from marsrec import pipeline
from marsrec.cars import CarsConfig, load_params, save_params
from marsrec.optim import TrainingDivergence
from marsrec.sensor import SensorConfig, load_checkpoint, save_checkpoint, train_sensor
from marsrec.synth import SynthConfig, generate, read_dataset, read_msp_sets, summary, write_dataset
from marsrec.tensor import DimensionError, read_tensor_jsonl

log = logging.getLogger("marsrec")

CONFIG_NAME = "config.ini"
CHECKPOINT_NAME = "checkpoint.json"
SENSOR_TRACE_NAME = "trace.csv"
CARS_NAME = "cars.json"
CARS_TRACE_NAME = "cars_trace.csv"
METRICS_NAME = "metrics.json"


class UsageError(Exception):
    """Bad arguments, config or input files (exit code 2)."""


# -- config ---------------------------------------------------------------------


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        return cp
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cp.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    return cp


def _parse_value(raw: str, default):
    text = raw.strip()
    if default is None:
        return None if text.lower() in ("", "none") else float(text)
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.split(","))
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    return type(default)(text)


def section_config(cls, cp: configparser.ConfigParser, section: str, seed: int | None = None):
    """Build dataclass ``cls`` from an INI section, falling back to field defaults."""
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    if cp.has_section(section):
        for key, raw in cp.items(section):
            if key not in names:
                raise UsageError(f"[{section}] unknown option {key!r}")
            try:
                kwargs[key] = _parse_value(raw, getattr(defaults, key))
            except ValueError as exc:
                raise UsageError(f"[{section}] {key}: {exc}") from exc
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[{section}] {exc}") from exc


def echo_config(cp: configparser.ConfigParser, out: Path, args: argparse.Namespace) -> None:
    """Copy the run config next to the outputs, recording a --seed override under ``[run]``."""
    echo = configparser.ConfigParser()
    echo.read_dict(cp)
    if getattr(args, "seed", None) is not None:
        if not echo.has_section("run"):
            echo.add_section("run")
        echo.set("run", "seed", str(args.seed))
    with open(out / CONFIG_NAME, "w") as fh:
        echo.write(fh)


def _prepare_out(out: str, targets: Sequence[str], force: bool) -> Path:
    path = Path(out)
    if path.exists() and not path.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    clash = [t for t in targets if (path / t).exists()]
    if clash and not force:
        raise UsageError(f"{out} already holds {', '.join(clash)}; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_trace(path: Path, trace: Sequence[float]) -> None:
    """One row per epoch; the pre-training loss lives in the saved model."""
    lines = ["epoch,loss"] + [f"{i},{x!r}" for i, x in enumerate(trace, start=1)]
    path.write_text("\n".join(lines) + "\n")


def _read_json(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: {exc}") from exc


def _dump(obj, out_file: Path | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out_file is not None:
        out_file.write_text(text + "\n")
    print(text)


def _train_slots(cp: configparser.ConfigParser, n_slots: int) -> int:
    if not cp.has_option("split", "train_slots"):
        return n_slots
    try:
        k = cp.getint("split", "train_slots")
    except ValueError as exc:
        raise UsageError(f"[split] train_slots: {exc}") from exc
    if not 1 <= k <= n_slots:
        raise UsageError(f"[split] train_slots must be in 1..{n_slots}")
    return k


def _load_dataset(path: str):
    try:
        return read_dataset(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _load_checkpoint(path: str):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# -- commands ---------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    cp = load_config(args.config)
    cfg = section_config(SynthConfig, cp, "synth", args.seed)
    out = _prepare_out(args.out, ["graph.json", "planted.json", CONFIG_NAME], args.force)
    ds = generate(cfg)
    write_dataset(ds, out)
    echo_config(cp, out, args)
    _dump(summary(ds))
    return 0


def cmd_train_sensor(args: argparse.Namespace) -> int:
    cp = load_config(args.config)
    cfg = section_config(SensorConfig, cp, "sensor", args.seed)
    ds = _load_dataset(args.data)
    out = _prepare_out(args.out, [CHECKPOINT_NAME, SENSOR_TRACE_NAME], args.force)
    data = ds.sensor_data(_train_slots(cp, ds.td.n_slots))
    m = train_sensor(data, cfg)
    save_checkpoint(m, out / CHECKPOINT_NAME)
    _write_trace(out / SENSOR_TRACE_NAME, m.loss_trace)
    echo_config(cp, out, args)
    _dump({"epochs": len(m.loss_trace), "initial_loss": m.initial_loss, "final_loss": m.loss_trace[-1]})
    return 0


def cmd_train_cars(args: argparse.Namespace) -> int:
    cp = load_config(args.config)
    cfg = section_config(CarsConfig, cp, "cars", args.seed)
    m = _load_checkpoint(args.checkpoint)
    if cp.has_option("sensor", "alpha"):
        alpha = section_config(SensorConfig, cp, "sensor").alpha
        if alpha != m.alpha:
            raise UsageError(f"config alpha {alpha} does not match checkpoint alpha {m.alpha}")
    if not Path(args.donations).is_file():
        raise UsageError(f"file not found: {args.donations}")
    if not Path(args.msps).is_file():
        raise UsageError(f"file not found: {args.msps}")
    td = read_tensor_jsonl(args.donations)
    sets = read_msp_sets(args.msps)
    if td.shape[:2] != m.dims[:2]:
        raise UsageError(f"donation tensor {td.shape} does not match checkpoint {m.dims}")
    out = _prepare_out(args.out, [CARS_NAME, CARS_TRACE_NAME], args.force)
    params = pipeline.fit_cars(m, td, sets, cfg)
    save_params(params, out / CARS_NAME)
    _write_trace(out / CARS_TRACE_NAME, params.loss_trace)
    echo_config(cp, out, args)
    _dump({"epochs": len(params.loss_trace), "initial_loss": params.initial_loss,
           "final_loss": params.loss_trace[-1]})
    return 0


def cmd_recommend(args: argparse.Namespace) -> int:
    cp = load_config(args.config)
    window = section_config(SensorConfig, cp, "sensor").window
    request = _read_json(args.request)
    m = _load_checkpoint(args.checkpoint)
    params = load_params(args.cars) if args.cars else None
    if not Path(args.donations).is_file():
        raise UsageError(f"file not found: {args.donations}")
    td = read_tensor_jsonl(args.donations)
    result = pipeline.recommend(m, params, td, request, window)
    out = None
    if args.out:
        out_dir = _prepare_out(args.out, ["recommendation.json"], args.force)
        echo_config(cp, out_dir, args)
        out = out_dir / "recommendation.json"
    _dump(result, out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cp = load_config(args.config)
    window = section_config(SensorConfig, cp, "sensor").window
    ds = _load_dataset(args.data)
    m = _load_checkpoint(args.checkpoint)
    params = load_params(args.cars) if args.cars else None
    metrics = pipeline.evaluate(m, params, ds, window)
    # undefined metrics (no CARS parameters, no donations) become JSON null
    metrics = {k: (None if math.isnan(x) else x) for k, x in metrics.items()}
    out = None
    if args.out:
        out_dir = _prepare_out(args.out, [METRICS_NAME], args.force)
        echo_config(cp, out_dir, args)
        out = out_dir / METRICS_NAME
    _dump(metrics, out)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marsrec", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="override the seed of every config section")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-sensor", help="fit SENSOR on a dataset directory")
    p.add_argument("data", help="dataset directory")
    common(p)
    p.set_defaults(func=cmd_train_sensor)

    p = sub.add_parser("train-cars", help="fit CARS on candidate parties")
    p.add_argument("checkpoint", help="SENSOR checkpoint")
    p.add_argument("--msps", required=True, help="candidate sets (JSON)")
    p.add_argument("--donations", required=True, help="donation tensor (JSONL)")
    common(p)
    p.set_defaults(func=cmd_train_cars)

    p = sub.add_parser("recommend", help="answer a donation or party request")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cars", help="CARS parameters (needed for msp requests)")
    p.add_argument("--donations", required=True, help="donation tensor (JSONL)")
    p.add_argument("--request", required=True, help="request JSON")
    common(p, out_required=False)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("evaluate", help="metrics JSON for trained artifacts")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cars", help="CARS parameters")
    common(p, out_required=False)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"marsrec: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, DimensionError, json.JSONDecodeError) as exc:
        print(f"marsrec: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergence, OSError, RuntimeError) as exc:
        print(f"marsrec: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
