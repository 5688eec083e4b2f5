"""Flat dotted-key run configuration: schema, defaults, validation.

A run config is a JSON object whose keys are dotted paths like
"sinkhorn.blur"; every key has a default, unknown keys are rejected, and
CLI flags override file values.  Typed sub-configs for the library modules
are built on demand.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .core_ot import SinkhornConfig
from .data_eval import DATASET_NAMES, DatasetSpec
from .flow import FlowConfig
from .neural import MlpSpec, TrainConfig

__all__ = ["ConfigError", "SCHEMA", "RunConfig", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Invalid configuration key, type, or value."""


@dataclass(frozen=True)
class Field:
    default: object
    kind: type
    help: str
    choices: tuple = ()
    minimum: float | None = None
    exclusive: bool = False  # minimum bound is strict


def _f(default, help, **kw):
    return Field(default, type(default), help, **kw)


SCHEMA: dict[str, Field] = {
    "dataset.source": _f("gaussian", "source distribution name", choices=DATASET_NAMES),
    "dataset.target": _f("moons", "target distribution name", choices=DATASET_NAMES),
    "dataset.noise": _f(0.05, "additive noise std for moons/scurve", minimum=0.0),
    "sinkhorn.blur": _f(0.5, "entropic blur; epsilon = blur^2", minimum=0.0, exclusive=True),
    "sinkhorn.scaling": _f(0.9, "epsilon-annealing factor in (0,1)", minimum=0.0, exclusive=True),
    "sinkhorn.max_iters": _f(5000, "iteration cap per solve", minimum=1),
    "sinkhorn.tol": _f(1e-6, "sup-norm potential-update tolerance", minimum=0.0, exclusive=True),
    "sinkhorn.damping": _f(0.5, "damping of the symmetric fixed point", minimum=0.0, exclusive=True),
    "flow.steps": _f(10, "flow steps per batch", minimum=1),
    "flow.step_size": _f(0.0, "Euler step; 0 means 0.05 * data diameter", minimum=0.0),
    "flow.batch_size": _f(256, "particles per batch", minimum=1),
    "flow.num_batches": _f(200, "independent batches in the pool", minimum=1),
    "flow.seed": _f(0, "pool-building seed", minimum=0),
    "flow.ramp": _f(False, "linear step-size ramp"),
    "flow.workers": _f(1, "parallel batch workers", minimum=1),
    "mlp.hidden_layers": _f(3, "hidden layers", minimum=1),
    "mlp.hidden_width": _f(256, "hidden units per layer", minimum=1),
    "train.iterations": _f(4000, "optimizer iterations", minimum=1),
    "train.minibatch": _f(256, "regression minibatch size", minimum=1),
    "train.lr": _f(1e-4, "Adam learning rate", minimum=0.0, exclusive=True),
    "train.seed": _f(0, "training seed", minimum=0),
    "train.eval_every": _f(100, "loss-trace recording interval", minimum=1),
    "nsgfpp.nsgf_steps": _f(5, "flow steps in phase 1 (at most 5)", minimum=1),
    "nsgfpp.nsf_step_size": _f(0.1, "refinement time resolution in (0,1)", minimum=0.0, exclusive=True),
    "nsgfpp.batch_handoff": _f(False, "share one handoff time per batch"),
    "infer.mode": _f("nsgf", "sampler", choices=("nsgf", "nsgf++")),
    "infer.steps": _f(10, "Euler steps at sampling time", minimum=0),
    "infer.step_size": _f(0.0, "Euler step; 0 means pool flow time / steps", minimum=0.0),
    "infer.n": _f(2048, "samples to generate", minimum=1),
    "infer.seed": _f(1234, "prior-draw seed", minimum=0),
    "infer.checkpoint": _f("", "velocity-net checkpoint (default <out>/vnet.json)"),
    "infer.nsf_checkpoint": _f("", "straight-flow checkpoint (default <out>/nsf.json)"),
    "infer.tp_checkpoint": _f("", "time-predictor checkpoint (default <out>/tp.json)"),
    "eval.file": _f("", "generated-samples CSV to evaluate"),
    "eval.n_eval": _f(1024, "held-out test-set size", minimum=1),
    "eval.seed": _f(9999, "held-out test-set seed", minimum=0),
    "eval.steps": _f(0, "steps recorded in the report; 0 means infer.steps", minimum=0),
    "gen.which": _f("target", "which dataset gen-data draws", choices=("source", "target")),
    "gen.n": _f(1024, "points gen-data writes", minimum=1),
    "gen.seed": _f(0, "gen-data seed", minimum=0),
}

# Keys retargeted by the global --seed convenience flag.
SEEDED_KEYS = ("gen.seed", "flow.seed", "train.seed", "infer.seed")


def _coerce(key: str, value, source: str):
    field = SCHEMA[key]
    if field.kind is bool:
        if isinstance(value, bool):
            out = value
        elif isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            out = value.lower() in ("true", "1")
        else:
            raise ConfigError(f"{source}: {key} expects a boolean, got {value!r}")
    elif field.kind is int:
        if isinstance(value, bool) or (not isinstance(value, int) and not isinstance(value, str)):
            raise ConfigError(f"{source}: {key} expects an integer, got {value!r}")
        try:
            out = int(value)
        except ValueError:
            raise ConfigError(f"{source}: {key} expects an integer, got {value!r}") from None
    elif field.kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{source}: {key} expects a number, got {value!r}")
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{source}: {key} expects a number, got {value!r}") from None
    else:
        if not isinstance(value, str):
            raise ConfigError(f"{source}: {key} expects a string, got {value!r}")
        out = value
    if field.choices and out not in field.choices:
        raise ConfigError(f"{source}: {key} must be one of {field.choices}, got {out!r}")
    if field.minimum is not None:
        if field.exclusive and not out > field.minimum:
            raise ConfigError(f"{source}: {key} must be > {field.minimum}, got {out}")
        if not field.exclusive and not out >= field.minimum:
            raise ConfigError(f"{source}: {key} must be >= {field.minimum}, got {out}")
    return out


class RunConfig:
    """Validated flat configuration with typed sub-config builders."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(
            blur=self["sinkhorn.blur"],
            scaling=self["sinkhorn.scaling"],
            max_iters=self["sinkhorn.max_iters"],
            tol=self["sinkhorn.tol"],
            damping=self["sinkhorn.damping"],
        )

    def flow(self, step_size: float) -> FlowConfig:
        return FlowConfig(
            steps=self["flow.steps"],
            step_size=step_size,
            batch_size=self["flow.batch_size"],
            sinkhorn=self.sinkhorn(),
            num_batches=self["flow.num_batches"],
            seed=self["flow.seed"],
            ramp=self["flow.ramp"],
            workers=self["flow.workers"],
        )

    def dataset(self, which: str, seed: int) -> DatasetSpec:
        return DatasetSpec(self[f"dataset.{which}"], noise=self["dataset.noise"], seed=seed)

    def velocity_spec(self, dim: int) -> MlpSpec:
        return MlpSpec(
            input_dim=dim + 1,
            output_dim=dim,
            hidden_layers=self["mlp.hidden_layers"],
            hidden_width=self["mlp.hidden_width"],
        )

    def time_predictor_spec(self, dim: int) -> MlpSpec:
        return MlpSpec(
            input_dim=dim,
            output_dim=1,
            hidden_layers=self["mlp.hidden_layers"],
            hidden_width=self["mlp.hidden_width"],
            output_activation="sigmoid",
        )

    def train(self, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(
            iterations=self["train.iterations"],
            minibatch=self["train.minibatch"],
            lr=self["train.lr"],
            seed=self["train.seed"] + seed_offset,
            eval_every=self["train.eval_every"],
        )

    def subset(self, prefixes: tuple) -> dict:
        return {k: v for k, v in sorted(self.values.items()) if k.startswith(prefixes)}


def load_config(path: str | None = None, overrides: dict | None = None, seed: int | None = None) -> RunConfig:
    """Merge defaults, an optional JSON file, --seed, and explicit overrides.

    Precedence, lowest to highest: schema defaults, config file, the
    global seed (applied to gen/flow/train/infer seeds), per-key overrides.
    """
    values = {key: field.default for key, field in SCHEMA.items()}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        for key, value in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            values[key] = _coerce(key, value, path)
    if seed is not None:
        for key in SEEDED_KEYS:
            values[key] = _coerce(key, seed, "--seed")
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value, "command line")
    return RunConfig(values)


def config_hash(values: dict) -> str:
    """Stable short hash of a config subset, for stage caching."""
    canon = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
