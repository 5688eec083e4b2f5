"""Fast property suite behind the `selftest` command.

Each check is a tiny, seeded, self-contained assertion over the library's
core invariants; the whole suite runs in a few seconds.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .core_ot import (
    PointCloud,
    PotentialPair,
    SinkhornConfig,
    dual_value,
    pairwise_cost,
    plan_diagnostics,
    potential_gradient,
    sinkhorn_divergence,
    sinkhorn_mapping,
    sinkhorn_potentials,
)
from .data_eval import dataset_sampler, exact_w2, sample_dataset, DatasetSpec
from .flow import FlowConfig, build_pool, empirical_velocity, euler_step, simulate_flow
from .neural import AdamState, MlpGrads, MlpSpec, adam_step, init_mlp, mlp_loss_grad

__all__ = ["run_selftest"]


def _check_pairwise_cost():
    a = PointCloud.uniform([[0.0, 0.0]])
    b = PointCloud.uniform([[2.0, 0.0]])
    assert abs(pairwise_cost(a, b)[0, 0] - 2.0) < 1e-15, "cost of unit Dirac pair"
    c = PointCloud.uniform([[0.0, 0.0], [1.0, 0.0]])
    d = PointCloud.uniform([[0.0, 1.0]])
    got = pairwise_cost(c, d)
    assert np.allclose(got, [[0.5], [1.0]], atol=1e-15), f"direct arithmetic: {got}"


def _check_marginals_and_duality():
    rng = np.random.default_rng(101)
    cfg = SinkhornConfig(blur=0.5, tol=1e-9, max_iters=20000)
    for _ in range(3):
        mu = PointCloud.uniform(rng.normal(size=(rng.integers(4, 32), 2)))
        nu = PointCloud.uniform(rng.normal(size=(rng.integers(4, 32), 2)) + 0.5)
        pair = sinkhorn_potentials(mu, nu, cfg)
        rep = plan_diagnostics(pair, mu, nu)
        assert rep.row_marginal_error <= 1e-6, f"row marginal {rep.row_marginal_error}"
        assert rep.col_marginal_error <= 1e-6, f"col marginal {rep.col_marginal_error}"
        assert abs(rep.gap) <= 1e-5 * (1 + abs(rep.dual_value)), f"gap {rep.gap}"


def _check_divergence_properties():
    rng = np.random.default_rng(7)
    cfg = SinkhornConfig(blur=0.5, tol=1e-9, max_iters=20000)
    mu = PointCloud.uniform(rng.normal(size=(16, 2)))
    nu = PointCloud.uniform(rng.normal(size=(12, 2)) + 1.0)
    s_xy = sinkhorn_divergence(mu, nu, cfg)
    s_yx = sinkhorn_divergence(nu, mu, cfg)
    assert s_xy >= -1e-6, f"nonnegativity: {s_xy}"
    assert abs(s_xy - s_yx) <= 1e-8, f"symmetry: {s_xy - s_yx}"
    assert abs(sinkhorn_divergence(mu, mu, cfg)) <= 1e-6, "identity"


def _check_gauge_invariance():
    rng = np.random.default_rng(3)
    cfg = SinkhornConfig(blur=0.7, tol=1e-9, max_iters=20000)
    mu = PointCloud.uniform(rng.normal(size=(10, 2)))
    nu = PointCloud.uniform(rng.normal(size=(9, 2)))
    pair = sinkhorn_potentials(mu, nu, cfg)
    shifted = PotentialPair(pair.f + 7.3, pair.g - 7.3, pair.epsilon_used, 0, 0.0, True)
    drift = abs(dual_value(pair, mu, nu) - dual_value(shifted, mu, nu))
    assert drift <= 1e-12, f"dual gauge drift {drift}"
    g1 = potential_gradient(mu.points, nu, pair.g, cfg.epsilon)
    g2 = potential_gradient(mu.points, nu, pair.g - 7.3, cfg.epsilon)
    assert np.abs(g1 - g2).max() <= 1e-12, "gradient gauge drift"


def _check_gradient_fd():
    rng = np.random.default_rng(17)
    donor = PointCloud.uniform(rng.normal(size=(8, 2)))
    pot = rng.normal(size=8)
    q = rng.normal(size=(4, 2))
    eps, h = 0.4, 1e-5
    grad = potential_gradient(q, donor, pot, eps)
    fd = np.zeros_like(grad)
    for k in range(2):
        qp, qm = q.copy(), q.copy()
        qp[:, k] += h
        qm[:, k] -= h
        fd[:, k] = (sinkhorn_mapping(qp, donor, pot, eps) - sinkhorn_mapping(qm, donor, pot, eps)) / (2 * h)
    rel = np.abs(grad - fd).max() / max(1.0, np.abs(fd).max())
    assert rel <= 1e-4, f"gradient finite-difference error {rel}"


def _check_small_eps_limit():
    rng = np.random.default_rng(23)
    a = rng.normal(size=(6, 2))
    b = rng.normal(size=(6, 2))
    cost = 0.5 * ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    exact = min(cost[range(6), p].sum() / 6 for p in permutations(range(6)))
    diam2 = 2.0 * cost.max()
    cfg = SinkhornConfig(blur=float(np.sqrt(1e-4 * diam2)), tol=1e-9, max_iters=50000)
    pair = sinkhorn_potentials(PointCloud.uniform(a), PointCloud.uniform(b), cfg)
    w_eps = dual_value(pair, PointCloud.uniform(a), PointCloud.uniform(b))
    assert abs(w_eps - exact) <= 0.01 * exact, f"entropic {w_eps} vs assignment {exact}"


def _check_exact_w2():
    rng = np.random.default_rng(31)
    for _ in range(2):
        a = rng.normal(size=(6, 2))
        b = rng.normal(size=(6, 2))
        sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        brute = np.sqrt(min(sq[range(6), p].sum() / 6 for p in permutations(range(6))))
        got = exact_w2(a, b)
        assert abs(got - brute) <= 1e-12, f"{got} vs brute {brute}"
        shuffled = b[rng.permutation(6)]
        assert abs(exact_w2(a, shuffled) - got) <= 1e-12, "shuffle invariance"
    assert exact_w2(a, a.copy()) == 0.0, "identity"


def _check_datasets():
    pts = sample_dataset(DatasetSpec("checkerboard", seed=5), 4000)
    cells = np.floor(pts / 2.0).astype(int) + 2
    assert np.all((cells[:, 0] + cells[:, 1]) % 2 == 0), "checkerboard parity"
    assert np.all(pts >= -4.0) and np.all(pts <= 4.0), "checkerboard support"
    again = sample_dataset(DatasetSpec("checkerboard", seed=5), 4000)
    assert np.array_equal(pts, again), "same seed, same samples"
    g8 = sample_dataset(DatasetSpec("8gaussians", seed=1), 20000)
    radius = np.hypot(g8[:, 0], g8[:, 1]).mean()
    assert abs(radius - 2.0 * np.sqrt(2.0)) < 0.05, f"mode radius {radius}"


def _check_dirac_flow():
    cfg = FlowConfig(steps=4, step_size=0.5, batch_size=1, sinkhorn=SinkhornConfig(blur=0.7))
    x0 = np.array([[0.0, 0.0]])
    y = np.array([[2.0, 0.0]])
    sim = simulate_flow(x0, y, cfg)
    for k, state in enumerate(sim.states):
        closed = y + (1 - 0.5) ** k * (x0 - y)
        assert np.abs(state - closed).max() <= 1e-12, f"step {k}"
    v = empirical_velocity(PointCloud.uniform(x0), PointCloud.uniform(y), cfg.sinkhorn)
    assert np.abs(v - (y - x0)).max() <= 1e-12, "Dirac velocity"


def _check_euler():
    out = euler_step([[0.0, 0.0]], [[1.0, 2.0]], 0.5)
    assert np.allclose(out, [[0.5, 1.0]], atol=0), "basic step"
    same = euler_step([[1.0, 2.0]], [[3.0, 4.0]], 0.0)
    assert np.array_equal(same, [[1.0, 2.0]]), "zero step is identity"


def _check_mlp_gradients():
    spec = MlpSpec(input_dim=3, output_dim=2, hidden_layers=2, hidden_width=5)
    params = init_mlp(spec, 11)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 2))
    _, grads = mlp_loss_grad(params, x, y)
    h, worst = 1e-6, 0.0
    w = params.weights[1]
    for idx in [(0, 0), (2, 3), (4, 1)]:
        old = w[idx]
        w[idx] = old + h
        lp, _ = mlp_loss_grad(params, x, y)
        w[idx] = old - h
        lm, _ = mlp_loss_grad(params, x, y)
        w[idx] = old
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - grads.weights[1][idx]) / max(1.0, abs(fd)))
    assert worst <= 1e-5, f"analytic vs finite-difference gradient: {worst}"


def _check_adam_zero_gradient():
    spec = MlpSpec(input_dim=2, output_dim=1, hidden_layers=1, hidden_width=3)
    params = init_mlp(spec, 2)
    before = [w.copy() for w in params.weights]
    state = AdamState.fresh(params, lr=0.01)
    zero = MlpGrads([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])
    adam_step(params, zero, state)
    assert all(np.array_equal(a, b) for a, b in zip(before, params.weights)), "params moved"
    assert state.step == 1, "counter not incremented"


def _check_pool_determinism():
    cfg = FlowConfig(
        steps=2, step_size=0.2, batch_size=6, sinkhorn=SinkhornConfig(blur=0.5, tol=1e-6),
        num_batches=2, seed=9,
    )
    src = dataset_sampler("8gaussians")
    tgt = dataset_sampler("moons")
    p1 = build_pool(src, tgt, cfg)
    p2 = build_pool(src, tgt, cfg)
    assert np.array_equal(p1.positions, p2.positions), "positions differ"
    assert np.array_equal(p1.velocities, p2.velocities), "velocities differ"
    assert len(p1) == 2 * 6 * 2, "record count"


_CHECKS = [
    ("pairwise cost examples", _check_pairwise_cost),
    ("sinkhorn marginals and duality", _check_marginals_and_duality),
    ("divergence nonnegativity/identity/symmetry", _check_divergence_properties),
    ("gauge invariance", _check_gauge_invariance),
    ("potential gradient vs finite differences", _check_gradient_fd),
    ("small-epsilon limit vs assignment", _check_small_eps_limit),
    ("exact w2 vs brute force", _check_exact_w2),
    ("dataset invariants", _check_datasets),
    ("dirac flow closed form", _check_dirac_flow),
    ("euler step examples", _check_euler),
    ("mlp gradient check", _check_mlp_gradients),
    ("adam zero-gradient no-op", _check_adam_zero_gradient),
    ("pool determinism", _check_pool_determinism),
]


def run_selftest():
    """Run every check; returns (name, passed, detail) triples."""
    results = []
    for name, fn in _CHECKS:
        try:
            fn()
            results.append((name, True, ""))
        except AssertionError as exc:
            results.append((name, False, str(exc)))
        except Exception as exc:  # a crash is a failure, not an abort
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
