"""Generation-time integration of trained velocity fields.

Two samplers: plain Euler integration of the flow-velocity net, and the
two-phase variant that runs a few flow steps, asks the time predictor how
far along the straight-line path each sample already is, and finishes with
the straight-flow net on a uniform grid to t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import MlpParams, forward

__all__ = [
    "SamplingError",
    "NsgfPpConfig",
    "InferenceResult",
    "TwoPhaseResult",
    "nsgf_infer",
    "nsgf_infer_refined",
    "nsgf_pp_infer",
]


class SamplingError(RuntimeError):
    """Raised when integration produces non-finite positions."""


@dataclass(frozen=True)
class NsgfPpConfig:
    """Two-phase sampling settings.

    `nsgf_steps` is capped at 5 by contract; `nsf_step_size` is the target
    time resolution omega of the refinement grid.  With `batch_handoff`
    the clamped handoff times are averaged over the batch so every sample
    refines on the same grid.  `time_denominator` sets the normalization
    of the time fed to the flow net when it was trained on a longer flow
    (0 means nsgf_steps).
    """

    nsgf_steps: int
    nsgf_step_size: float
    nsf_step_size: float
    seed: int = 0
    batch_handoff: bool = False
    time_denominator: int = 0

    def __post_init__(self):
        if not 1 <= self.nsgf_steps <= 5:
            raise ValueError(f"nsgf_steps must lie in [1, 5], got {self.nsgf_steps}")
        if not self.nsgf_step_size > 0.0:
            raise ValueError(f"nsgf_step_size must be positive, got {self.nsgf_step_size}")
        if not 0.0 < self.nsf_step_size < 1.0:
            raise ValueError(f"nsf_step_size must lie in (0, 1), got {self.nsf_step_size}")
        if self.time_denominator < 0:
            raise ValueError(f"time_denominator must be >= 0, got {self.time_denominator}")


@dataclass
class InferenceResult:
    points: np.ndarray
    nfe: int
    trajectory: list | None = None


@dataclass
class TwoPhaseResult:
    points: np.ndarray
    handoff_times: np.ndarray
    refine_steps: np.ndarray
    nfe: np.ndarray
    flow_nfe: int
    trajectory: list | None = None


def _check_finite(x: np.ndarray, label: str):
    if not np.all(np.isfinite(x)):
        raise SamplingError(f"non-finite positions after {label}")


def _velocity(params: MlpParams, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    return forward(params, np.concatenate([x, times[:, None]], axis=1))


def nsgf_infer(
    v_params: MlpParams,
    prior,
    steps: int,
    step_size: float,
    record_trajectory: bool = False,
    time_denominator: int = 0,
) -> InferenceResult:
    """Euler-integrate the velocity net for `steps` steps of size `step_size`.

    The time fed to the net is t / steps (or t / time_denominator when
    given), matching the normalization used during training.  steps == 0
    returns the prior unchanged.
    """
    x = np.asarray(prior, dtype=np.float64).copy()
    if x.ndim != 2 or x.shape[1] != v_params.spec.output_dim:
        raise ValueError(f"prior shape {x.shape} does not match net dimension {v_params.spec.output_dim}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    denom = time_denominator if time_denominator > 0 else steps
    trajectory = [x.copy()] if record_trajectory else None
    times = np.empty(x.shape[0])
    for t in range(steps):
        times.fill(t / denom)
        x = x + step_size * _velocity(v_params, x, times)
        _check_finite(x, f"step {t}")
        if record_trajectory:
            trajectory.append(x.copy())
    return InferenceResult(points=x, nfe=steps, trajectory=trajectory)


def nsgf_infer_refined(
    v_params: MlpParams,
    prior,
    pool_steps: int,
    pool_step_size: float,
    substeps: int,
    record_trajectory: bool = False,
) -> InferenceResult:
    """Integrate the trained flow on a finer uniform grid.

    Each of the pool's steps is split into `substeps` equal Euler steps
    that keep the step's trained time input: the time feature selects
    which of the trained per-step fields applies, and values between
    trained times were never fit to data.  Total NFE is
    pool_steps * substeps.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    x = np.asarray(prior, dtype=np.float64).copy()
    if x.ndim != 2 or x.shape[1] != v_params.spec.output_dim:
        raise ValueError(f"prior shape {x.shape} does not match net dimension {v_params.spec.output_dim}")
    trajectory = [x.copy()] if record_trajectory else None
    times = np.empty(x.shape[0])
    dt = pool_step_size / substeps
    for t in range(pool_steps):
        times.fill(t / pool_steps)
        for k in range(substeps):
            x = x + dt * _velocity(v_params, x, times)
            _check_finite(x, f"step {t}.{k}")
            if record_trajectory:
                trajectory.append(x.copy())
    return InferenceResult(points=x, nfe=pool_steps * substeps, trajectory=trajectory)


def nsgf_pp_infer(
    v_params: MlpParams,
    tp_params: MlpParams,
    nsf_params: MlpParams,
    prior,
    cfg: NsgfPpConfig,
    record_trajectory: bool = False,
) -> TwoPhaseResult:
    """Two-phase sampling: flow steps, time-predictor handoff, straight refine.

    Phase 1 runs cfg.nsgf_steps Euler steps of the flow net.  Phase 2, per
    sample: predict the handoff time, clamp it to [0, 1 - omega], take
    K = ceil((1 - t_hat) / omega) uniform Euler steps of the straight-flow
    net from t_hat to exactly 1.  Per-sample NFE is nsgf_steps + K.

    `tp_params` may also be a plain callable (n, d) -> (n,) for diagnostic
    runs with a known handoff time.
    """
    dims = {v_params.spec.output_dim, nsf_params.spec.output_dim}
    if isinstance(tp_params, MlpParams):
        dims.add(tp_params.spec.input_dim)
    if len(dims) != 1:
        raise ValueError(f"networks disagree on data dimension: {sorted(dims)}")

    phase1 = nsgf_infer(
        v_params,
        prior,
        cfg.nsgf_steps,
        cfg.nsgf_step_size,
        record_trajectory,
        time_denominator=cfg.time_denominator,
    )
    x = phase1.points
    n = x.shape[0]
    trajectory = phase1.trajectory

    omega = cfg.nsf_step_size
    if isinstance(tp_params, MlpParams):
        predicted = forward(tp_params, x)[:, 0]
    else:
        predicted = np.asarray(tp_params(x), dtype=np.float64).reshape(n)
    t_hat = np.clip(predicted, 0.0, 1.0 - omega)
    if cfg.batch_handoff:
        t_hat = np.full(n, float(t_hat.mean()))
    # The tiny slack keeps exact-integer ratios (in particular the clamped
    # case (1 - t_hat) / omega == 1) from rounding up a step.
    refine_steps = np.ceil((1.0 - t_hat) / omega - 1e-9).astype(np.int64)
    refine_steps = np.maximum(refine_steps, 1)

    x = x.copy()
    for k_value in np.unique(refine_steps):
        mask = refine_steps == k_value
        xs = x[mask]
        dt = (1.0 - t_hat[mask]) / k_value
        for k in range(int(k_value)):
            tau = t_hat[mask] + k * dt
            xs = xs + dt[:, None] * _velocity(nsf_params, xs, tau)
            _check_finite(xs, f"refine step {k} (grid of {k_value})")
        x[mask] = xs
    if record_trajectory:
        trajectory.append(x.copy())

    return TwoPhaseResult(
        points=x,
        handoff_times=t_hat,
        refine_steps=refine_steps,
        nfe=cfg.nsgf_steps + refine_steps,
        flow_nfe=cfg.nsgf_steps,
        trajectory=trajectory,
    )
