"""Persistence formats: CSV for bulk numbers, JSON for metadata, SVG plots.

Floats in CSVs are written with 17 significant digits and JSON relies on
shortest-repr serialization, so every round trip is lossless.  All writers
are deterministic: rerunning a command with the same config produces
byte-identical files.  Every JSON artifact carries format_version and
loading rejects unknown versions.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .flow import PoolMeta, TrajectoryPool
from .neural import MlpParams, MlpSpec

__all__ = [
    "FORMAT_VERSION",
    "FormatError",
    "fmt_float",
    "write_points_csv",
    "read_points_csv",
    "write_trajectory_csv",
    "write_pool",
    "read_pool",
    "write_checkpoint",
    "read_checkpoint",
    "write_loss_csv",
    "append_result_row",
    "write_svg_scatter",
    "write_json",
    "read_json",
]

FORMAT_VERSION = 1

RESULT_COLUMNS = ("label", "dataset", "steps", "w2", "seed")


class FormatError(ValueError):
    """Malformed or incompatible artifact file."""


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _coord_header(dim: int, prefix: str = "x") -> list:
    return [f"{prefix}{k}" for k in range(dim)]


def write_points_csv(path, points) -> None:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"expected a 2-d point array, got shape {pts.shape}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(_coord_header(pts.shape[1])) + "\n")
        for row in pts:
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


def read_points_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}:1: empty file")
    header = lines[0].split(",")
    dim = len(header)
    if header != _coord_header(dim):
        raise FormatError(f"{path}:1: unexpected header {lines[0]!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim:
            raise FormatError(f"{path}:{lineno}: expected {dim} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: could not parse {line!r}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def write_trajectory_csv(path, states) -> None:
    """States are (n, d) arrays, one per step; rows carry a step column."""
    dim = states[0].shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["step"] + _coord_header(dim)) + "\n")
        for t, state in enumerate(states):
            for row in state:
                fh.write(f"{t}," + ",".join(fmt_float(v) for v in row) + "\n")


def _pool_meta_path(csv_path) -> str:
    base = str(csv_path)
    if base.endswith(".csv"):
        base = base[:-4]
    return base + ".meta.json"


def write_pool(csv_path, pool: TrajectoryPool) -> None:
    d = pool.meta.dim
    per_batch = pool.meta.batch_size * pool.meta.steps
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["batch", "step"] + _coord_header(d) + _coord_header(d, "v")) + "\n")
        for k in range(len(pool)):
            cols = [str(k // per_batch), str(int(pool.step_index[k]))]
            cols += [fmt_float(v) for v in pool.positions[k]]
            cols += [fmt_float(v) for v in pool.velocities[k]]
            fh.write(",".join(cols) + "\n")
    meta = {
        "format_version": FORMAT_VERSION,
        "dim": pool.meta.dim,
        "steps": pool.meta.steps,
        "step_size": pool.meta.step_size,
        "batch_size": pool.meta.batch_size,
        "num_batches": pool.meta.num_batches,
        "epsilon": pool.meta.epsilon,
        "seed": pool.meta.seed,
        "source": pool.meta.source,
        "target": pool.meta.target,
        "ramp": pool.meta.ramp,
        "record_count": len(pool),
    }
    write_json(_pool_meta_path(csv_path), meta)


def read_pool_meta(csv_path) -> dict:
    meta_path = _pool_meta_path(csv_path)
    if not os.path.exists(meta_path):
        raise FormatError(f"missing pool sidecar {meta_path}; refusing to load {csv_path}")
    meta = read_json(meta_path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{meta_path}: unsupported format_version {meta.get('format_version')!r}")
    return meta


def read_pool(csv_path) -> TrajectoryPool:
    meta = read_pool_meta(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    d = int(meta["dim"])
    if data.shape[0] != meta["record_count"]:
        raise FormatError(
            f"{csv_path}: has {data.shape[0]} records but sidecar says {meta['record_count']}"
        )
    if data.shape[1] != 2 + 2 * d:
        raise FormatError(f"{csv_path}: expected {2 + 2 * d} columns, got {data.shape[1]}")
    pool_meta = PoolMeta(
        dim=d,
        steps=int(meta["steps"]),
        step_size=float(meta["step_size"]),
        batch_size=int(meta["batch_size"]),
        num_batches=int(meta["num_batches"]),
        epsilon=float(meta["epsilon"]),
        seed=int(meta["seed"]),
        source=str(meta["source"]),
        target=str(meta["target"]),
        ramp=bool(meta["ramp"]),
    )
    try:
        return TrajectoryPool(
            step_index=data[:, 1].astype(np.int64),
            positions=data[:, 2 : 2 + d],
            velocities=data[:, 2 + d :],
            meta=pool_meta,
        )
    except ValueError as exc:
        raise FormatError(f"{csv_path}: {exc}") from None


def write_checkpoint(path, params: MlpParams, train_seed: int, final_loss: float) -> None:
    spec = params.spec
    layers = []
    for w, b in zip(params.weights, params.biases):
        layers.append(
            {
                "fan_in": w.shape[0],
                "fan_out": w.shape[1],
                "weight": [float(v) for v in w.ravel()],
                "bias": [float(v) for v in b],
            }
        )
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "spec": {
                "input_dim": spec.input_dim,
                "output_dim": spec.output_dim,
                "hidden_layers": spec.hidden_layers,
                "hidden_width": spec.hidden_width,
                "output_activation": spec.output_activation,
            },
            "train_seed": train_seed,
            "final_loss": float(final_loss),
            "layers": layers,
        },
    )


def read_checkpoint(path) -> tuple[MlpParams, dict]:
    raw = read_json(path)
    if raw.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {raw.get('format_version')!r}")
    try:
        spec = MlpSpec(**raw["spec"])
        weights, biases = [], []
        for layer in raw["layers"]:
            w = np.array(layer["weight"], dtype=np.float64).reshape(layer["fan_in"], layer["fan_out"])
            weights.append(w)
            biases.append(np.array(layer["bias"], dtype=np.float64))
        params = MlpParams(spec, weights, biases)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None
    return params, raw


def write_loss_csv(path, losses) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,loss\n")
        for iteration, loss in losses:
            fh.write(f"{iteration},{fmt_float(loss)}\n")


def append_result_row(path, row: dict) -> None:
    """Accumulate one results row; appending an already-present row is a no-op."""
    line = ",".join(str(row[c]) if c != "w2" else fmt_float(row[c]) for c in RESULT_COLUMNS)
    header = ",".join(RESULT_COLUMNS)
    existing = []
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            existing = fh.read().splitlines()
        if not existing or existing[0] != header:
            raise FormatError(f"{path}: unexpected results header")
        if line in existing[1:]:
            return
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        if not existing:
            fh.write(header + "\n")
        fh.write(line + "\n")


def write_svg_scatter(path, points, viewport: float = 5.0, size: int = 500) -> None:
    """Static scatter plot on a fixed square viewport, points only."""
    pts = np.asarray(points, dtype=np.float64)
    scale = size / (2.0 * viewport)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for x, y in pts[:, :2]:
        cx = (x + viewport) * scale
        cy = (viewport - y) * scale
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.5" fill="black" fill-opacity="0.5"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
