import numpy as np
import pytest

from sinkflow.core_ot import PointCloud, SinkhornConfig, sinkhorn_divergence
from sinkflow.data_eval import dataset_sampler
from sinkflow.flow import (
    FlowConfig,
    FlowSolveError,
    TrajectoryPool,
    build_pool,
    data_diameter,
    empirical_velocity,
    euler_step,
    objective_trace,
    simulate_flow,
)

FAST = SinkhornConfig(blur=0.5, tol=1e-9, max_iters=50000)


def dirac_samplers(a=(0.0, 0.0), b=(2.0, 0.0)):
    def source(n, rng):
        return np.tile(a, (n, 1)).astype(float)

    def target(n, rng):
        return np.tile(b, (n, 1)).astype(float)

    return source, target


class TestFlowConfig:
    def test_rejects_bad_values(self):
        ok = dict(steps=2, step_size=0.1, batch_size=4, sinkhorn=FAST)
        FlowConfig(**ok)
        for bad in (
            dict(ok, steps=0),
            dict(ok, step_size=0.0),
            dict(ok, batch_size=0),
            dict(ok, num_batches=0),
            dict(ok, workers=0),
        ):
            with pytest.raises(ValueError):
                FlowConfig(**bad)

    def test_ramp_schedule(self):
        cfg = FlowConfig(steps=4, step_size=0.8, batch_size=2, sinkhorn=FAST, ramp=True)
        assert [cfg.step_at(t) for t in range(4)] == [0.2, 0.4, 0.6000000000000001, 0.8]
        flat = FlowConfig(steps=4, step_size=0.8, batch_size=2, sinkhorn=FAST)
        assert all(flat.step_at(t) == 0.8 for t in range(4))


class TestEulerStep:
    def test_basic(self):
        assert np.array_equal(euler_step([[0.0, 0.0]], [[1.0, 2.0]], 0.5), [[0.5, 1.0]])

    def test_zero_step_identity(self):
        x = np.array([[1.0, -2.0], [0.5, 0.5]])
        assert np.array_equal(euler_step(x, np.ones_like(x), 0.0), x)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            euler_step(np.zeros((3, 2)), np.zeros((2, 2)), 0.1)

    def test_dirac_contraction(self):
        x = np.array([[0.0, 0.0]])
        y = np.array([[2.0, 0.0]])
        for _ in range(2):
            x = euler_step(x, y - x, 0.5)
        assert np.abs(x - [[1.5, 0.0]]).max() <= 1e-15


class TestEmpiricalVelocity:
    def test_dirac_pair(self):
        v = empirical_velocity(
            PointCloud.uniform([[0.0, 0.0]]), PointCloud.uniform([[2.0, 0.0]]), FAST
        )
        assert np.abs(v - [[2.0, 0.0]]).max() <= 1e-12

    def test_zero_at_fixed_point(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(48, 2))
        v = empirical_velocity(PointCloud.uniform(pts), PointCloud.uniform(pts), FAST)
        assert np.abs(v).max() <= 1e-6

    def test_one_step_decreases_divergence(self):
        rng = np.random.default_rng(2)
        cur_pts = rng.normal(size=(64, 2))
        tgt_pts = rng.normal(size=(64, 2)) + np.array([1.5, 0.0])
        tgt = PointCloud.uniform(tgt_pts)
        before = sinkhorn_divergence(PointCloud.uniform(cur_pts), tgt, FAST)
        v = empirical_velocity(PointCloud.uniform(cur_pts), tgt, FAST)
        after_pts = euler_step(cur_pts, v, 0.1)
        after = sinkhorn_divergence(PointCloud.uniform(after_pts), tgt, FAST)
        assert after < before

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            empirical_velocity(
                PointCloud.uniform([[0.0, 0.0]]), PointCloud.uniform([[0.0, 0.0, 0.0]]), FAST
            )


class TestSimulateFlow:
    def test_dirac_closed_form(self):
        cfg = FlowConfig(steps=6, step_size=0.5, batch_size=1, sinkhorn=FAST)
        x0 = np.array([[0.0, 0.0]])
        y = np.array([[2.0, 0.0]])
        sim = simulate_flow(x0, y, cfg)
        for k, state in enumerate(sim.states):
            expected = y + (1 - 0.5) ** k * (x0 - y)
            assert np.abs(state - expected).max() <= 1e-12

    def test_solver_failure_names_step(self):
        cfg = FlowConfig(
            steps=3, step_size=0.1, batch_size=16,
            sinkhorn=SinkhornConfig(blur=0.5, tol=1e-12, max_iters=2),
        )
        rng = np.random.default_rng(3)
        with pytest.raises(FlowSolveError, match="step 0"):
            simulate_flow(rng.normal(size=(16, 2)), rng.normal(size=(16, 2)), cfg)


class TestBuildPool:
    def test_dirac_pool_closed_form(self):
        source, target = dirac_samplers()
        cfg = FlowConfig(steps=2, step_size=0.5, batch_size=1, sinkhorn=FAST, num_batches=1)
        pool = build_pool(source, target, cfg)
        assert len(pool) == 2
        # velocities are (y - x_0) then (1 - eta)(y - x_0)
        assert np.abs(pool.velocities[0] - [2.0, 0.0]).max() <= 1e-12
        assert np.abs(pool.velocities[1] - [1.0, 0.0]).max() <= 1e-12

    def test_record_count_and_order(self):
        src = dataset_sampler("8gaussians")
        tgt = dataset_sampler("moons")
        cfg = FlowConfig(
            steps=3, step_size=0.2, batch_size=5,
            sinkhorn=SinkhornConfig(blur=0.5, tol=1e-6), num_batches=2, seed=7,
        )
        pool = build_pool(src, tgt, cfg, "8gaussians", "moons")
        assert len(pool) == 2 * 5 * 3
        expected_steps = np.concatenate([np.repeat(np.arange(3), 5)] * 2)
        assert np.array_equal(pool.step_index, expected_steps)
        assert pool.meta.source == "8gaussians" and pool.meta.target == "moons"

    def test_bit_identical_given_config(self):
        src = dataset_sampler("gaussian")
        tgt = dataset_sampler("moons")
        cfg = FlowConfig(
            steps=2, step_size=0.2, batch_size=6,
            sinkhorn=SinkhornConfig(blur=0.5, tol=1e-6), num_batches=3, seed=11,
        )
        p1 = build_pool(src, tgt, cfg)
        p2 = build_pool(src, tgt, cfg)
        assert np.array_equal(p1.positions, p2.positions)
        assert np.array_equal(p1.velocities, p2.velocities)

    def test_worker_count_does_not_change_result(self):
        src = dataset_sampler("gaussian")
        tgt = dataset_sampler("scurve")
        base = dict(
            steps=2, step_size=0.2, batch_size=6,
            sinkhorn=SinkhornConfig(blur=0.5, tol=1e-6), num_batches=4, seed=13,
        )
        serial = build_pool(src, tgt, FlowConfig(**base, workers=1))
        parallel = build_pool(src, tgt, FlowConfig(**base, workers=2))
        assert np.array_equal(serial.positions, parallel.positions)
        assert np.array_equal(serial.velocities, parallel.velocities)

    def test_retry_once_then_abort_names_batch(self):
        src = dataset_sampler("gaussian")
        tgt = dataset_sampler("moons")
        cfg = FlowConfig(
            steps=1, step_size=0.2, batch_size=16,
            sinkhorn=SinkhornConfig(blur=0.5, tol=1e-13, max_iters=2), num_batches=1, seed=1,
        )
        with pytest.raises(FlowSolveError, match="batch 0"):
            build_pool(src, tgt, cfg)

    def test_retry_succeeds_with_doubled_budget(self):
        src = dataset_sampler("gaussian")
        tgt = dataset_sampler("moons")
        # 60 sweeps fail at tol 1e-9 for this instance; 120 suffice.
        cfg = FlowConfig(
            steps=1, step_size=0.2, batch_size=16,
            sinkhorn=SinkhornConfig(blur=0.7, tol=1e-9, max_iters=60), num_batches=1, seed=1,
        )
        pool = build_pool(src, tgt, cfg)
        assert len(pool) == 16


class TestObjectiveTrace:
    def test_dirac_geometric_decay(self):
        cfg = FlowConfig(steps=5, step_size=0.5, batch_size=1, sinkhorn=FAST)
        x0, y = np.array([[0.0, 0.0]]), np.array([[2.0, 0.0]])
        sim = simulate_flow(x0, y, cfg)
        trace = objective_trace(sim, PointCloud.uniform(y), FAST)
        expected = 2.0 * (1 - 0.5) ** (2 * np.arange(6))
        assert np.abs(trace - expected).max() <= 1e-8

    def test_constant_zero_from_target_start(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(32, 2))
        cfg = FlowConfig(steps=3, step_size=0.2, batch_size=32, sinkhorn=FAST)
        sim = simulate_flow(pts, pts, cfg)
        trace = objective_trace(sim, PointCloud.uniform(pts), FAST)
        assert np.abs(trace).max() <= 1e-6

    def test_nonincreasing_on_benchmark(self):
        src = dataset_sampler("8gaussians")
        tgt = dataset_sampler("moons")
        rng = np.random.default_rng(5)
        s, t = src(96, rng), tgt(96, rng)
        eta = 0.05 * data_diameter(s, t)
        cfg = FlowConfig(
            steps=12, step_size=eta, batch_size=96,
            sinkhorn=SinkhornConfig(blur=0.5, tol=1e-9, max_iters=50000),
        )
        sim = simulate_flow(s, t, cfg)
        trace = objective_trace(sim, PointCloud.uniform(t), cfg.sinkhorn)
        assert np.all(np.diff(trace) <= 1e-6)

    def test_pool_and_simulation_agree(self):
        source, target = dirac_samplers((0.0, 1.0), (3.0, 1.0))
        cfg = FlowConfig(steps=4, step_size=0.4, batch_size=2, sinkhorn=FAST, num_batches=1)
        pool = build_pool(source, target, cfg)
        sim = simulate_flow(source(2, None), target(2, None), cfg)
        tgt_cloud = PointCloud.uniform(target(2, None))
        assert np.allclose(
            objective_trace(pool, tgt_cloud, FAST),
            objective_trace(sim, tgt_cloud, FAST),
            atol=1e-12,
        )

    def test_multi_batch_pool_rejected(self):
        source, target = dirac_samplers()
        cfg = FlowConfig(steps=1, step_size=0.4, batch_size=1, sinkhorn=FAST, num_batches=2)
        pool = build_pool(source, target, cfg)
        with pytest.raises(ValueError):
            objective_trace(pool, PointCloud.uniform([[2.0, 0.0]]), FAST)


class TestDataDiameter:
    def test_known_square(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        assert data_diameter(pts) == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_union_of_sets(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[3.0, 4.0]])
        assert data_diameter(a, b) == pytest.approx(5.0, abs=1e-15)
