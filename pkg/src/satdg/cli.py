"""Command-line entry point.

Subcommands `train | prop1 | rdcurve | sweep` read a config file (TOML with
one [section] per concern, or JSON with the same shape keyed by extension),
run the corresponding experiment, and write `metrics.csv` plus
`summary.json` into the output directory. Exit codes: 0 success, 2 config
error, 3 numeric error, 4 output collision.

File writes are atomic (temp file in the target directory, then rename).
CSV cells are rendered with repr(), so identical runs produce byte-identical
metrics.csv; summary.json additionally carries wall-clock timestamps inside
its manifest and is not byte-stable.

CSV schemas (comma-separated, header row, '.' decimal, '\n' newlines):
  train:   epoch, step, domain_losses (semicolon-joined, empty before the
           first step), penalty, beta, gamma, in_dist_loss, in_dist_acc,
           unseen_loss, unseen_acc, gen_gap — one row per evaluation
           (epochs + 1 rows; step is the cumulative step count).
  prop1:   row ("seed_<i>" per repetition, then "aggregate"), repetitions,
           avg_sq_grad_norm, bound_value, bound_satisfied.
  rdcurve: beta, expected_distortion, expected_penalty, mutual_information.
  sweep:   beta_zero, in_dist_loss, penalty, unseen_loss.
"""

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .convergence import Prop1Config, run_prop1, tradeoff_sweep
from .discrete_ba import DiscreteBAInstance, check_curve, demo_instance, discrete_ba_solve
from .tasks import SyntheticTask
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_COLLISION = 4

_NUMERIC_ERRORS = (FloatingPointError, OverflowError, ZeroDivisionError)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    if path.endswith(".json"):
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError("%s: %s" % (path, exc))  # includes line/column
    else:
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError("%s: %s" % (path, exc))  # includes line/column
    if not isinstance(data, dict):
        raise ConfigError("%s: top level must be a table/object" % path)
    return data


def _section(data: dict, name: str) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError("[%s] must be a table/object" % name)
    return dict(section)


def _build(cls, section: dict, section_name: str, seed_override=None, **coerce):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in section:
        if key not in known:
            raise ConfigError("unknown key %r in [%s]" % (key, section_name))
    if seed_override is not None and "seed" in known:
        section["seed"] = seed_override
    for key, fn in coerce.items():
        if key in section:
            section[key] = fn(section[key])
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError("[%s]: %s" % (section_name, exc))


def _require(section: dict, key: str, section_name: str):
    if key not in section:
        raise ConfigError("missing required key %r in [%s]" % (key, section_name))
    return section[key]


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------


def _atomic_write(path: str, payload: bytes):
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render_csv(header, rows) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue().encode("utf-8")


class _Outputs:
    """Collision checking and atomic emission for one command invocation."""

    def __init__(self, out_dir: str, overwrite: bool):
        self.out_dir = out_dir
        self.metrics_path = os.path.join(out_dir, "metrics.csv")
        self.summary_path = os.path.join(out_dir, "summary.json")
        self.overwrite = overwrite

    def check_collision(self):
        if self.overwrite:
            return
        for path in (self.metrics_path, self.summary_path):
            if os.path.exists(path):
                raise FileExistsError("output %s exists; pass --overwrite to replace it" % path)

    def emit(self, header, rows, summary: dict, manifest: dict):
        os.makedirs(self.out_dir, exist_ok=True)
        manifest = dict(manifest)
        manifest["outputs"] = [self.metrics_path, self.summary_path]
        payload = dict(summary)
        payload["manifest"] = manifest
        _atomic_write(self.metrics_path, _render_csv(header, rows))
        _atomic_write(
            self.summary_path,
            (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"),
        )


def _manifest(command: str, config_snapshot: dict, seed, started: str) -> dict:
    return {
        "command": command,
        "config": config_snapshot,
        "version": __version__,
        "seed": seed,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _snapshot(obj) -> dict:
    data = dataclasses.asdict(obj)
    for key, value in data.items():
        if isinstance(value, tuple):
            data[key] = list(value)
    return data


def _check_finite(label: str, values):
    bad = [v for v in values if not math.isfinite(v)]
    if bad:
        raise FloatingPointError("non-finite %s in results" % label)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(config_path: str, out_dir: str, seed_override, overwrite: bool) -> int:
    data = _load_config(config_path)
    task = _build(SyntheticTask, _section(data, "task"), "task", seed_override)
    config = _build(TrainConfig, _section(data, "train"), "train", seed_override,
                    hidden_dims=tuple)
    outputs = _Outputs(out_dir, overwrite)
    outputs.check_collision()
    started = _now()
    result = train(task, config)
    _check_finite("metrics", [m.in_dist_loss for m in result.epochs])

    header = ["epoch", "step", "domain_losses", "penalty", "beta", "gamma",
              "in_dist_loss", "in_dist_acc", "unseen_loss", "unseen_acc", "gen_gap"]
    rows = []
    for metrics in result.epochs:
        if metrics.epoch == 0:
            domain_losses = beta = gamma = ""
        else:
            last = result.steps[metrics.epoch * config.steps_per_epoch - 1]
            domain_losses = ";".join(repr(v) for v in last.domain_losses)
            beta, gamma = last.beta, last.gamma
        rows.append([metrics.epoch, metrics.epoch * config.steps_per_epoch, domain_losses,
                     metrics.penalty, beta, gamma, metrics.in_dist_loss, metrics.in_dist_acc,
                     metrics.unseen_loss, metrics.unseen_acc, metrics.gen_gap])
    final = result.epochs[-1]
    summary = {"final": {
        "epoch": final.epoch,
        "in_dist_loss": final.in_dist_loss,
        "in_dist_acc": final.in_dist_acc,
        "unseen_loss": final.unseen_loss,
        "unseen_acc": final.unseen_acc,
        "penalty": final.penalty,
        "gen_gap": final.gen_gap,
    }}
    manifest = _manifest("train", {"task": _snapshot(task), "train": _snapshot(config)},
                         config.seed, started)
    outputs.emit(header, rows, summary, manifest)
    return EXIT_OK


def cmd_prop1(config_path: str, out_dir: str, seed_override, overwrite: bool) -> int:
    data = _load_config(config_path)
    section = _section(data, "prop1")
    _require(section, "objective", "prop1")
    config = _build(Prop1Config, section, "prop1", seed_override)
    outputs = _Outputs(out_dir, overwrite)
    outputs.check_collision()
    started = _now()
    result = run_prop1(config)
    _check_finite("gradient norms", result.per_repetition)

    header = ["row", "repetitions", "avg_sq_grad_norm", "bound_value", "bound_satisfied"]
    rows = [
        ["seed_%d" % i, 1, avg, result.bound_value, avg <= result.bound_value]
        for i, avg in enumerate(result.per_repetition)
    ]
    satisfied = result.avg_sq_grad_norm <= result.bound_value
    rows.append(["aggregate", config.repetitions, result.avg_sq_grad_norm,
                 result.bound_value, satisfied])
    summary = {
        "avg_sq_grad_norm": result.avg_sq_grad_norm,
        "bound_value": result.bound_value,
        "bound_satisfied": satisfied,
        "step_size": result.step_size,
        "repetitions": config.repetitions,
    }
    manifest = _manifest("prop1", {"prop1": _snapshot(config)}, config.seed, started)
    outputs.emit(header, rows, summary, manifest)
    return EXIT_OK


_RDCURVE_DEFAULTS = dict(seed=0, candidates=4, domains=3, dim=2, spread=1.5, gamma=5e-4)


def cmd_rdcurve(config_path: str, out_dir: str, seed_override, overwrite: bool) -> int:
    data = _load_config(config_path)
    section = _section(data, "rdcurve")
    betas = _require(section, "betas", "rdcurve")
    if not isinstance(betas, list) or not betas:
        raise ConfigError("[rdcurve]: betas must be a non-empty list")
    betas = [float(b) for b in betas]
    if any(b < 0 for b in betas):
        raise ConfigError("[rdcurve]: betas must be >= 0")
    if betas != sorted(betas):
        raise ConfigError("[rdcurve]: betas must be sorted ascending")
    iterations = int(section.pop("iterations", 200))
    if iterations < 1:
        raise ConfigError("[rdcurve]: iterations must be >= 1")
    instance_keys = dict(_RDCURVE_DEFAULTS)
    for key in list(section):
        if key == "betas":
            continue
        if key not in instance_keys:
            raise ConfigError("unknown key %r in [rdcurve]" % key)
        instance_keys[key] = type(instance_keys[key])(section[key])
    if seed_override is not None:
        instance_keys["seed"] = seed_override
    instance = demo_instance(**instance_keys)

    outputs = _Outputs(out_dir, overwrite)
    outputs.check_collision()
    started = _now()
    rows = []
    points = []
    for beta in betas:
        sub = DiscreteBAInstance(instance.candidates, instance.penalty,
                                 instance.domain_grads, beta, instance.gamma)
        res = discrete_ba_solve(sub, iterations)
        rows.append([beta, res.expected_distortion, res.expected_penalty,
                     res.mutual_information])
        points.append((res.expected_distortion, res.expected_penalty))
    _check_finite("curve points", [value for row in rows for value in row])

    if len(betas) == 1:
        monotone = convex = "not_applicable"
    else:
        monotone, convex = check_curve(points)
        if convex is None:
            convex = "not_applicable"
    summary = {"monotone": monotone, "convex": convex, "betas": betas}
    manifest = _manifest(
        "rdcurve",
        {"rdcurve": dict(instance_keys, betas=betas, iterations=iterations)},
        instance_keys["seed"], started,
    )
    outputs.emit(
        ["beta", "expected_distortion", "expected_penalty", "mutual_information"],
        rows, summary, manifest,
    )
    return EXIT_OK


def cmd_sweep(config_path: str, out_dir: str, seed_override, overwrite: bool) -> int:
    data = _load_config(config_path)
    task = _build(SyntheticTask, _section(data, "task"), "task", seed_override)
    config = _build(TrainConfig, _section(data, "train"), "train", seed_override,
                    hidden_dims=tuple)
    section = _section(data, "sweep")
    for key in section:
        if key != "beta_zeros":
            raise ConfigError("unknown key %r in [sweep]" % key)
    beta_zeros = _require(section, "beta_zeros", "sweep")
    if not isinstance(beta_zeros, list) or not beta_zeros:
        raise ConfigError("[sweep]: beta_zeros must be a non-empty list")
    beta_zeros = [float(b) for b in beta_zeros]
    if any(b < 0 for b in beta_zeros):
        raise ConfigError("[sweep]: beta_zeros must be >= 0")
    if beta_zeros != sorted(beta_zeros):
        raise ConfigError("[sweep]: beta_zeros must be sorted ascending")

    outputs = _Outputs(out_dir, overwrite)
    outputs.check_collision()
    started = _now()
    rows = tradeoff_sweep(task, config, beta_zeros)
    _check_finite("sweep metrics", [value for row in rows for value in row])
    summary = {"rows": len(rows), "beta_zeros": beta_zeros}
    manifest = _manifest(
        "sweep",
        {"task": _snapshot(task), "train": _snapshot(config), "sweep": {"beta_zeros": beta_zeros}},
        config.seed, started,
    )
    outputs.emit(["beta_zero", "in_dist_loss", "penalty", "unseen_loss"],
                 list(rows), summary, manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


_COMMANDS = {
    "train": cmd_train,
    "prop1": cmd_prop1,
    "rdcurve": cmd_rdcurve,
    "sweep": cmd_sweep,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satdg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override every config seed")
        p.add_argument("--overwrite", action="store_true",
                       help="replace existing outputs instead of failing")
    return parser


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage, which matches the config-error code
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args.config, args.out, args.seed, args.overwrite)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except FileExistsError as exc:
        print("collision: %s" % exc, file=sys.stderr)
        return EXIT_COLLISION
    except _NUMERIC_ERRORS as exc:
        print("numeric error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
