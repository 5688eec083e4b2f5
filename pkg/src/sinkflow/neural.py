"""Dense feed-forward networks with hand-written reverse-mode gradients.

Hidden layers use tanh; the output is identity for velocity regressors and
sigmoid for the interpolation-time predictor.  Optimization is plain
bias-corrected Adam.  Everything runs in float64 so the gradient checks in
the test suite hold at tight tolerances, and every trainer is a
deterministic function of (seed, data).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import TrajectoryPool

__all__ = [
    "TrainingError",
    "MlpSpec",
    "MlpParams",
    "MlpGrads",
    "AdamState",
    "TrainConfig",
    "TrainResult",
    "init_mlp",
    "forward",
    "mlp_forward",
    "mlp_loss_grad",
    "adam_step",
    "train_velocity_matching",
    "train_nsf",
    "train_time_predictor",
]

_ACTIVATIONS = ("identity", "sigmoid")


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss or parameters."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_layers: int = 3
    hidden_width: int = 256
    output_activation: str = "identity"

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "hidden_layers", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(
                f"output_activation must be one of {_ACTIVATIONS}, got {self.output_activation!r}"
            )

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


class MlpParams:
    """Per-layer weight matrices (fan_in, fan_out) and bias vectors."""

    __slots__ = ("spec", "weights", "biases")

    def __init__(self, spec: MlpSpec, weights: list, biases: list):
        dims = spec.layer_dims
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise ValueError("layer count does not match spec")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l} shapes {w.shape}/{b.shape} do not match spec")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} contains non-finite entries")
        self.spec = spec
        self.weights = weights
        self.biases = biases

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class MlpGrads:
    weights: list
    biases: list


def init_mlp(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, from a dedicated generator."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def forward(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Batched forward pass; inputs (B, input_dim) -> (B, output_dim)."""
    a = np.asarray(inputs, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.spec.input_dim:
        raise ValueError(f"inputs shape {a.shape} does not match input_dim {params.spec.input_dim}")
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w + b
        if l < last:
            a = np.tanh(a)
    if params.spec.output_activation == "sigmoid":
        a = 1.0 / (1.0 + np.exp(-a))
    return a


def mlp_forward(params: MlpParams, x, t: float | None = None) -> np.ndarray:
    """Evaluate one point, appending the scalar time when the net expects it."""
    x = np.asarray(x, dtype=np.float64).ravel()
    inp = x if t is None else np.append(x, float(t))
    if inp.shape[0] != params.spec.input_dim:
        raise ValueError(
            f"got {inp.shape[0]} input features (x of size {x.shape[0]}"
            f"{', plus time' if t is not None else ''}), expected {params.spec.input_dim}"
        )
    return forward(params, inp[None, :])[0]


def mlp_loss_grad(params: MlpParams, inputs, targets) -> tuple[float, MlpGrads]:
    """Mean squared-L2 loss over the minibatch and its parameter gradients.

    loss = mean_i ||net(x_i) - y_i||^2; gradients are of this mean, by
    reverse accumulation through the tanh stack.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("minibatch must be a nonempty 2-d array")
    if y.shape != (x.shape[0], params.spec.output_dim):
        raise ValueError(f"targets shape {y.shape} does not match ({x.shape[0]}, {params.spec.output_dim})")

    last = len(params.weights) - 1
    acts = [x]
    a = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w + b
        if l < last:
            a = np.tanh(a)
        elif params.spec.output_activation == "sigmoid":
            a = 1.0 / (1.0 + np.exp(-a))
        acts.append(a)

    batch = x.shape[0]
    diff = acts[-1] - y
    loss = float((diff * diff).sum() / batch)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss on minibatch of {batch} (targets finite: {np.all(np.isfinite(y))})")

    delta = (2.0 / batch) * diff
    if params.spec.output_activation == "sigmoid":
        delta = delta * acts[-1] * (1.0 - acts[-1])
    grad_w = [None] * (last + 1)
    grad_b = [None] * (last + 1)
    for l in range(last, -1, -1):
        grad_w[l] = acts[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l].T) * (1.0 - acts[l] * acts[l])
    return loss, MlpGrads(grad_w, grad_b)


@dataclass
class AdamState:
    """Adam accumulators; moments are shaped like the parameters."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m_weights: list = field(default_factory=list)
    v_weights: list = field(default_factory=list)
    m_biases: list = field(default_factory=list)
    v_biases: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: MlpParams, lr: float) -> "AdamState":
        return cls(
            lr=lr,
            m_weights=[np.zeros_like(w) for w in params.weights],
            v_weights=[np.zeros_like(w) for w in params.weights],
            m_biases=[np.zeros_like(b) for b in params.biases],
            v_biases=[np.zeros_like(b) for b in params.biases],
        )


def _adam_update(p, g, m, v, state: AdamState, corr1: float, corr2: float):
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps_hat)


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    corr1 = 1.0 - state.beta1**state.step
    corr2 = 1.0 - state.beta2**state.step
    for l in range(len(params.weights)):
        _adam_update(params.weights[l], grads.weights[l], state.m_weights[l], state.v_weights[l], state, corr1, corr2)
        _adam_update(params.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l], state, corr1, corr2)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    minibatch: int = 256
    lr: float = 1e-4
    seed: int = 0
    eval_every: int = 100

    def __post_init__(self):
        for name in ("iterations", "minibatch", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class TrainResult:
    params: MlpParams
    losses: list

    @property
    def final_loss(self) -> float:
        return self.losses[-1][1] if self.losses else float("nan")


def _run_training(params: MlpParams, cfg: TrainConfig, batch_fn) -> TrainResult:
    state = AdamState.fresh(params, cfg.lr)
    losses = []
    for i in range(cfg.iterations):
        inputs, targets = batch_fn(i)
        loss, grads = mlp_loss_grad(params, inputs, targets)
        adam_step(params, grads, state)
        if (i + 1) % cfg.eval_every == 0:
            losses.append((i + 1, loss))
    return TrainResult(params, losses)


def train_velocity_matching(pool: TrajectoryPool, spec: MlpSpec, cfg: TrainConfig) -> TrainResult:
    """Regress a time-conditioned net onto the pooled empirical velocities.

    Minibatches are drawn uniformly (with replacement) from the pool by a
    generator seeded with cfg.seed; the time feature is the record's step
    divided by the pool's step count.
    """
    if len(pool) == 0:
        raise ValueError("trajectory pool is empty")
    d = pool.meta.dim
    if spec.input_dim != d + 1 or spec.output_dim != d:
        raise ValueError(
            f"spec dims ({spec.input_dim}, {spec.output_dim}) do not match pool "
            f"dimension {d} (need input d+1, output d)"
        )
    inputs_all = np.concatenate(
        [pool.positions, (pool.step_index / pool.meta.steps)[:, None]], axis=1
    )
    targets_all = pool.velocities
    rng = np.random.default_rng(cfg.seed)
    params = init_mlp(spec, cfg.seed)

    def batch(_i):
        idx = rng.integers(0, len(pool), size=cfg.minibatch)
        return inputs_all[idx], targets_all[idx]

    return _run_training(params, cfg, batch)


def _interpolant_batch(source_sampler, target_sampler, m: int, rng: np.random.Generator):
    x0 = np.asarray(source_sampler(m, rng), dtype=np.float64)
    x1 = np.asarray(target_sampler(m, rng), dtype=np.float64)
    t = rng.uniform(0.0, 1.0, size=(m, 1))
    xt = t * x1 + (1.0 - t) * x0
    return x0, x1, t, xt


def train_nsf(source_sampler, target_sampler, spec: MlpSpec, cfg: TrainConfig) -> TrainResult:
    """Straight-flow matching on the linear interpolant of independent pairs.

    Each iteration draws (X0, Y) independently, t ~ U(0, 1), forms
    X_t = t Y + (1 - t) X0 and regresses the net at (X_t, t) onto Y - X0.
    """
    d = spec.input_dim - 1
    if d < 1 or spec.output_dim != d:
        raise ValueError(f"spec dims ({spec.input_dim}, {spec.output_dim}) are not (d+1, d)")
    rng = np.random.default_rng(cfg.seed)
    params = init_mlp(spec, cfg.seed)

    def batch(_i):
        x0, x1, t, xt = _interpolant_batch(source_sampler, target_sampler, cfg.minibatch, rng)
        return np.concatenate([xt, t], axis=1), x1 - x0

    return _run_training(params, cfg, batch)


def train_time_predictor(source_sampler, target_sampler, spec: MlpSpec, cfg: TrainConfig) -> TrainResult:
    """Regress interpolation time from position alone (no time input).

    Same interpolant draw as the straight-flow trainer; the sigmoid-output
    net sees X_t and predicts t.
    """
    if spec.output_dim != 1 or spec.output_activation != "sigmoid":
        raise ValueError("time predictor needs output_dim == 1 and sigmoid output")
    rng = np.random.default_rng(cfg.seed)
    params = init_mlp(spec, cfg.seed)

    def batch(_i):
        x0, x1, t, xt = _interpolant_batch(source_sampler, target_sampler, cfg.minibatch, rng)
        return xt, t

    return _run_training(params, cfg, batch)
