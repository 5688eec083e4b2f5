"""Minibatch simulation of the Sinkhorn-divergence gradient flow.

Particles follow the empirical steepest-descent velocity
    v(x_i) = grad f_self(x_i) - grad f_cross(x_i)
where f_self extends the self-transport potential of the current batch and
f_cross the potential of the current-to-target transport.  Explicit Euler
steps produce trajectories; every visited (step, position, velocity)
triple is stored in a pool for later regression.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core_ot import (
    PointCloud,
    SinkhornConfig,
    potential_gradient,
    sinkhorn_divergence,
    sinkhorn_potentials,
    symmetric_potential,
)

__all__ = [
    "FlowSolveError",
    "FlowConfig",
    "TrajectoryRecord",
    "PoolMeta",
    "TrajectoryPool",
    "FlowSimulation",
    "data_diameter",
    "empirical_velocity",
    "euler_step",
    "simulate_flow",
    "build_pool",
    "objective_trace",
]


class FlowSolveError(RuntimeError):
    """A Sinkhorn solve failed (did not converge) during flow simulation."""


@dataclass(frozen=True)
class FlowConfig:
    """Simulation settings for one family of flow batches.

    `step_size` is the Euler step; with `ramp` the effective step at time t
    is step_size * (t + 1) / steps.  Batches are mutually independent given
    the per-batch seeds seed XOR batch_index, so `workers` > 1 may simulate
    them in parallel without changing the result.
    """

    steps: int
    step_size: float
    batch_size: int
    sinkhorn: SinkhornConfig
    num_batches: int = 1
    seed: int = 0
    ramp: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.step_size > 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.num_batches < 1:
            raise ValueError(f"num_batches must be >= 1, got {self.num_batches}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def step_at(self, t: int) -> float:
        if self.ramp:
            return self.step_size * (t + 1) / self.steps
        return self.step_size


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    position: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class PoolMeta:
    dim: int
    steps: int
    step_size: float
    batch_size: int
    num_batches: int
    epsilon: float
    seed: int
    source: str = ""
    target: str = ""
    ramp: bool = False


@dataclass(frozen=True)
class TrajectoryPool:
    """All (step, position, velocity) triples from a family of simulated flows.

    Arrays are ordered by (batch index, step, particle index) and row k of
    each array belongs to the same record.
    """

    step_index: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    meta: PoolMeta

    def __post_init__(self):
        n = self.step_index.shape[0]
        if self.positions.shape != (n, self.meta.dim) or self.velocities.shape != (n, self.meta.dim):
            raise ValueError("pool arrays are inconsistent with metadata")
        if n != self.meta.num_batches * self.meta.batch_size * self.meta.steps:
            raise ValueError(
                f"pool has {n} records, expected "
                f"{self.meta.num_batches * self.meta.batch_size * self.meta.steps}"
            )
        if n and (self.step_index.min() < 0 or self.step_index.max() >= self.meta.steps):
            raise ValueError("step indices out of range")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("pool contains non-finite entries")

    def __len__(self) -> int:
        return self.step_index.shape[0]

    def records(self):
        for k in range(len(self)):
            yield TrajectoryRecord(int(self.step_index[k]), self.positions[k], self.velocities[k])


@dataclass
class FlowSimulation:
    """States (steps + 1 arrays) and velocities (steps arrays) of one batch."""

    states: list
    velocities: list

    @property
    def final_points(self) -> np.ndarray:
        return self.states[-1]


def data_diameter(*point_arrays) -> float:
    """Largest pairwise distance within the union of the given point sets."""
    pts = np.concatenate([np.asarray(a, dtype=np.float64) for a in point_arrays], axis=0)
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).max()))


def empirical_velocity(current: PointCloud, target: PointCloud, cfg: SinkhornConfig) -> np.ndarray:
    """Steepest-descent velocity of the debiased transport objective.

    Solves the cross and self transport problems for the current batch and
    returns, per particle, the gradient of the extended self potential
    minus the gradient of the extended cross potential.  Raises
    FlowSolveError if either solve fails to converge.
    """
    if current.dim != target.dim:
        raise ValueError(f"dimension mismatch: {current.dim} vs {target.dim}")
    cross = sinkhorn_potentials(current, target, cfg)
    if not cross.converged:
        raise FlowSolveError(
            f"cross solve did not converge (residual={cross.residual:.3e} after "
            f"{cross.iterations} iterations)"
        )
    self_pot = symmetric_potential(current, cfg)
    if not self_pot.converged:
        raise FlowSolveError(
            f"self solve did not converge (residual={self_pot.residual:.3e} after "
            f"{self_pot.iterations} iterations)"
        )
    grad_self = potential_gradient(current.points, current, self_pot.f, cfg.epsilon)
    grad_cross = potential_gradient(current.points, target, cross.g, cfg.epsilon)
    return grad_self - grad_cross


def euler_step(positions, velocities, eta: float) -> np.ndarray:
    """Explicit Euler update x + eta * v, elementwise."""
    x = np.asarray(positions, dtype=np.float64)
    v = np.asarray(velocities, dtype=np.float64)
    if x.shape != v.shape:
        raise ValueError(f"shape mismatch: positions {x.shape} vs velocities {v.shape}")
    return x + eta * v


def simulate_flow(source_points, target_points, cfg: FlowConfig) -> FlowSimulation:
    """Run one batch of the discretized flow from the given source points."""
    target = PointCloud.uniform(target_points)
    states = [np.asarray(source_points, dtype=np.float64).copy()]
    velocities = []
    for t in range(cfg.steps):
        current = PointCloud.uniform(states[-1])
        try:
            vel = empirical_velocity(current, target, cfg.sinkhorn)
        except FlowSolveError as exc:
            raise FlowSolveError(f"step {t}: {exc}") from exc
        velocities.append(vel)
        states.append(euler_step(states[-1], vel, cfg.step_at(t)))
    return FlowSimulation(states=states, velocities=velocities)


def _simulate_batch(args):
    source_sampler, target_sampler, cfg, batch = args
    rng = np.random.default_rng(cfg.seed ^ batch)
    source = np.asarray(source_sampler(cfg.batch_size, rng), dtype=np.float64)
    target = np.asarray(target_sampler(cfg.batch_size, rng), dtype=np.float64)
    try:
        return simulate_flow(source, target, cfg)
    except FlowSolveError:
        # Retry once with doubled iteration budget before giving up.
        retry_cfg = dataclasses.replace(
            cfg, sinkhorn=dataclasses.replace(cfg.sinkhorn, max_iters=2 * cfg.sinkhorn.max_iters)
        )
        try:
            return simulate_flow(source, target, retry_cfg)
        except FlowSolveError as exc:
            raise FlowSolveError(f"batch {batch}: {exc}") from exc


def build_pool(
    source_sampler,
    target_sampler,
    cfg: FlowConfig,
    source_name: str = "",
    target_name: str = "",
) -> TrajectoryPool:
    """Simulate num_batches independent flows and collect every record.

    Samplers are callables (n, rng) -> (n, d) arrays.  Records are ordered
    by (batch, step, particle); the result depends only on cfg, never on
    worker count or execution order.
    """
    tasks = [(source_sampler, target_sampler, cfg, b) for b in range(cfg.num_batches)]
    if cfg.workers > 1 and cfg.num_batches > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            sims = list(pool.map(_simulate_batch, tasks))
    else:
        sims = [_simulate_batch(task) for task in tasks]

    dim = sims[0].states[0].shape[1]
    steps_col, pos_col, vel_col = [], [], []
    for sim in sims:
        for t in range(cfg.steps):
            steps_col.append(np.full(cfg.batch_size, t, dtype=np.int64))
            pos_col.append(sim.states[t])
            vel_col.append(sim.velocities[t])
    meta = PoolMeta(
        dim=dim,
        steps=cfg.steps,
        step_size=cfg.step_size,
        batch_size=cfg.batch_size,
        num_batches=cfg.num_batches,
        epsilon=cfg.sinkhorn.epsilon,
        seed=cfg.seed,
        source=source_name,
        target=target_name,
        ramp=cfg.ramp,
    )
    return TrajectoryPool(
        step_index=np.concatenate(steps_col),
        positions=np.concatenate(pos_col),
        velocities=np.concatenate(vel_col),
        meta=meta,
    )


def _pool_states(pool: TrajectoryPool) -> list:
    if pool.meta.num_batches != 1:
        raise ValueError("objective_trace on a pool requires num_batches == 1")
    n, t_max, dim = pool.meta.batch_size, pool.meta.steps, pool.meta.dim
    pos = pool.positions.reshape(t_max, n, dim)
    vel = pool.velocities.reshape(t_max, n, dim)
    states = [pos[t] for t in range(t_max)]
    # Final step size is step_size both with and without ramp: the ramp
    # factor (t + 1) / steps equals 1 at the last step.
    states.append(euler_step(pos[-1], vel[-1], pool.meta.step_size))
    return states


def objective_trace(flow, target: PointCloud, cfg: SinkhornConfig) -> np.ndarray:
    """Debiased divergence to the target at every simulated state.

    Accepts a FlowSimulation or a single-batch TrajectoryPool and returns
    steps + 1 values, recomputed directly from the stored states.
    """
    if isinstance(flow, FlowSimulation):
        states = flow.states
    elif isinstance(flow, TrajectoryPool):
        states = _pool_states(flow)
    else:
        raise TypeError(f"expected FlowSimulation or TrajectoryPool, got {type(flow)!r}")
    return np.array(
        [sinkhorn_divergence(PointCloud.uniform(s), target, cfg) for s in states]
    )
