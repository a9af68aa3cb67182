import dataclasses
import json
import math

import numpy as np
import pytest

from conftest import assert_trace_invariants
from cplm.errors import DimensionError, DivergenceError, SolveFailure
from cplm.model import CpModel, ParamVector, cp_reconstruct, pack
from cplm.optimizer import (
    CpObjective,
    IterationRecord,
    LmConfig,
    LmState,
    TRACE_HEADER,
    Trace,
    classic_lm_iterate,
    gain_ratio,
    initial_state,
    modified_lm_iterate,
    run,
    solve_damped,
)
from cplm.tensor import DenseTensor3


class TestLmConfig:
    def test_defaults_valid(self):
        cfg = LmConfig()
        assert cfg.method == "mlm"
        assert cfg.nu0 == 2.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(max_iters=0),
            dict(tol=-1.0),
            dict(grad_tol=-1e-3),
            dict(step_tol=-1.0),
            dict(mu0=0.0),
            dict(mu0=-2.0),
            dict(nu0=1.0),
            dict(gamma=-0.1),
            dict(method="newton"),
            dict(max_mu_escalations=-1),
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(DimensionError):
            LmConfig(**kwargs)

    def test_method_aliases(self):
        assert LmConfig(method="classic-lm").method == "lm"
        assert LmConfig(method="modified-lm").method == "mlm"


class TestSolveDamped:
    def test_identity_example(self):
        h = solve_damped(np.eye(2), np.array([2.0, 4.0]), 1.0)
        assert h == pytest.approx([-1.0, -2.0])

    def test_zero_grad(self):
        assert not solve_damped(np.eye(3), np.zeros(3), 0.5).any()

    def test_dense_inverse_oracle(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((10, 10))
        gram = m.T @ m
        grad = rng.standard_normal(10)
        mu = 0.5
        h = solve_damped(gram, grad, mu)
        want = np.linalg.solve(gram + mu * np.eye(10), -grad)
        assert np.abs(h - want).max() <= 1e-10 * np.abs(want).max()
        # solve residual bound relative to the gradient norm
        lin_res = (gram + mu * np.eye(10)) @ h + grad
        assert np.linalg.norm(lin_res) < 1e-10 * np.linalg.norm(grad)

    def test_inputs_not_mutated(self):
        gram = np.eye(4)
        grad = np.ones(4)
        g0, v0 = gram.copy(), grad.copy()
        solve_damped(gram, grad, 2.0)
        assert np.array_equal(gram, g0) and np.array_equal(grad, v0)

    def test_failure_carries_mu(self):
        gram = np.diag([1.0, -50.0])
        with pytest.raises(SolveFailure) as err:
            solve_damped(gram, np.ones(2), 1.0)
        assert err.value.mu == 1.0

    def test_rejects_nonpositive_mu(self):
        with pytest.raises(DimensionError):
            solve_damped(np.eye(2), np.ones(2), 0.0)


class TestGainRatio:
    def test_no_actual_reduction_is_zero(self):
        assert gain_ratio(5.0, 5.0, 4.0) == 0.0

    def test_formula_reevaluation(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            f_x, f_trial, f_y = rng.uniform(0.1, 10.0, size=3)
            lin_h = rng.uniform(0.0, f_x * 0.99)
            lin_hhat = rng.uniform(0.0, f_y * 0.99)
            got = gain_ratio(f_x, f_trial, lin_h, f_y, lin_hhat)
            want = (f_x - f_trial) / ((f_x - lin_h) + (f_y - lin_hhat))
            assert got == pytest.approx(want, rel=1e-12)

    def test_single_solve_form(self):
        assert gain_ratio(4.0, 1.0, 2.0) == pytest.approx(1.5)

    def test_denominator_floor_returns_rejection_sentinel(self):
        assert gain_ratio(3.0, 1.0, 3.0) == -math.inf
        assert gain_ratio(3.0, 1.0, 3.0 + 1e-16) == -math.inf

    def test_non_finite_input_rejected(self):
        with pytest.raises(DimensionError):
            gain_ratio(math.nan, 1.0, 0.5)
        with pytest.raises(DimensionError):
            gain_ratio(1.0, math.inf, 0.5)
        with pytest.raises(DimensionError):
            gain_ratio(1.0, -0.5, 0.5)


class _AffineObjective:
    """F(x) = f0 + M (x - x0): the linear model is exact."""

    class _Jac:
        def __init__(self, m):
            self.m = m

        def gram(self):
            return self.m.T @ self.m

        def rmatvec(self, f):
            return self.m.T @ f

        def matvec(self, v):
            return self.m @ v

    def __init__(self, m, f0, x0):
        self.m = m
        self.f0 = f0
        self.x0 = x0
        self.n_jacobian_builds = 0
        self.n_residual_evals = 0

    def residual(self, x):
        self.n_residual_evals += 1
        return self.f0 + self.m @ (x.data - self.x0)

    def build_jacobian(self, x):
        self.n_jacobian_builds += 1
        return self._Jac(self.m)


def _affine_state(rng, rows=12, cols=6, mu0=1e-10):
    m = rng.standard_normal((rows, cols))
    f0 = rng.standard_normal(rows)
    x0 = rng.standard_normal(cols)
    obj = _AffineObjective(m, f0, x0)
    # shape tag (cols-2, 1, 1, 1) gives a parameter vector of length cols
    x = ParamVector(x0.copy(), (cols - 2, 1, 1, 1))
    state = LmState(x=x, mu=mu0, nu=2.0, objective=obj)
    return state, obj, m, f0, x0


class TestAffineResidual:
    def test_classic_gain_ratio_is_one_and_accepts(self):
        state, obj, m, f0, x0 = _affine_state(np.random.default_rng(2))
        cfg = LmConfig(max_iters=5, method="lm", grad_tol=0.0)
        state, rec = classic_lm_iterate(state, None, cfg)
        assert rec.accepted
        assert rec.rho == pytest.approx(1.0, abs=1e-9)

    def test_classic_single_step_reaches_minimizer(self):
        state, obj, m, f0, x0 = _affine_state(np.random.default_rng(3))
        cfg = LmConfig(max_iters=5, method="lm", grad_tol=0.0)
        state, rec = classic_lm_iterate(state, None, cfg)
        best, *_ = np.linalg.lstsq(m, m @ x0 - f0, rcond=None)
        assert state.x.data == pytest.approx(best, rel=1e-6, abs=1e-8)

    def test_modified_gain_ratio_is_one_while_far_from_minimum(self):
        # with an exact linear model both solves predict perfectly, so
        # rho stays 1 until the denominator floor takes over near x*
        state, obj, *_ = _affine_state(np.random.default_rng(4), mu0=0.1)
        cfg = LmConfig(max_iters=5, method="mlm", grad_tol=1e-14)
        for _ in range(2):
            state, rec = modified_lm_iterate(state, None, cfg)
            assert rec is not None and rec.accepted
            assert rec.rho == pytest.approx(1.0, abs=1e-8)


def exact_instance(dims=(10, 10, 10), rank=3, seed=12345):
    truth = CpModel.random_uniform(dims, rank, seed)
    return cp_reconstruct(truth)


class TestRecovery:
    def test_classic_recovers_exact_tensor(self):
        obs = exact_instance()
        best = math.inf
        for seed in range(5):
            cfg = LmConfig(max_iters=500, method="lm", seed=seed, rel_tol=1e-9)
            _, trace, _ = run(obs, 3, cfg)
            best = min(best, trace.final_residual / obs.norm())
        assert best < 1e-5

    def test_modified_recovers_with_fewer_builds(self):
        obs = exact_instance()
        cfg = LmConfig(max_iters=500, seed=4, rel_tol=1e-9)
        _, mlm_trace, _ = run(obs, 3, dataclasses.replace(cfg, method="mlm"))
        _, lm_trace, _ = run(obs, 3, dataclasses.replace(cfg, method="lm"))
        assert mlm_trace.final_residual / obs.norm() < 1e-5
        assert mlm_trace.jacobian_builds < len(lm_trace.records)

    def test_start_at_solution_stops_immediately(self):
        obs = exact_instance(seed=77)
        # run() draws its initial factors from the same seed used above
        cfg = LmConfig(max_iters=50, seed=77)
        _, trace, reason = run(obs, 3, cfg)
        assert reason in ("residual-tol", "grad-tol")
        assert len(trace.records) == 0

    def test_single_iteration_budget(self):
        rng = np.random.default_rng(5)
        obs = DenseTensor3((4, 4, 4), rng.random(64))
        cfg = LmConfig(max_iters=1, seed=0)
        _, trace, reason = run(obs, 2, cfg)
        assert reason == "max-iters"
        assert len(trace.records) == 1


class TestIterationInvariants:
    @pytest.mark.parametrize("method", ["lm", "mlm"])
    def test_accept_reject_bookkeeping(self, method):
        rng = np.random.default_rng(6)
        obs = DenseTensor3((6, 5, 4), rng.random(120))
        cfg = LmConfig(max_iters=60, method=method, seed=1)
        state = initial_state(obs, 3, cfg)
        iterate = modified_lm_iterate if method == "mlm" else classic_lm_iterate
        records = []
        saw_reject = False
        for _ in range(cfg.max_iters):
            before = state.x.data.tobytes()
            mu_before = state.mu
            state, rec = iterate(state, None, cfg)
            if rec is None:
                break
            records.append(rec)
            if rec.accepted:
                assert state.x.data.tobytes() != before
            else:
                saw_reject = True
                assert state.x.data.tobytes() == before
                if mu_before is not None:
                    assert state.mu > mu_before
                assert state.nu == 2.0 * rec.nu
        assert records
        assert saw_reject  # rank-3 fit of random data must hit rejections
        assert_trace_invariants(records)

    def test_build_and_eval_counters(self):
        rng = np.random.default_rng(7)
        obs = DenseTensor3((5, 4, 3), rng.random(60))
        for method, evals_per_iter in (("lm", 1), ("mlm", 2)):
            cfg = LmConfig(max_iters=25, method=method, seed=2)
            _, trace, _ = run(obs, 2, cfg)
            recs = trace.records
            assert len(recs) >= 2
            for a, b in zip(recs, recs[1:]):
                assert b.n_jacobian_builds - a.n_jacobian_builds == 1
                assert b.n_residual_evals - a.n_residual_evals == evals_per_iter

    def test_mu_nu_positive_after_every_iteration(self):
        rng = np.random.default_rng(8)
        obs = DenseTensor3((4, 5, 6), rng.random(120))
        cfg = LmConfig(max_iters=40, method="mlm", seed=3)
        _, trace, _ = run(obs, 2, cfg)
        assert_trace_invariants(trace.records)


class TestTableShapeTrace:
    def test_monotone_accepted_descent_45x35x25(self):
        rng = np.random.default_rng(np.random.SeedSequence(99))
        obs = DenseTensor3((45, 35, 25), rng.random(45 * 35 * 25))
        cfg = LmConfig(max_iters=8, method="mlm", seed=0)
        _, trace, _ = run(obs, 40, cfg)
        assert len(trace.records) == 8
        assert_trace_invariants(trace.records)
        accepted = [r.residual_norm_after for r in trace.records if r.accepted]
        assert accepted, "expected at least one accepted step"


class TestRunTermination:
    def test_reasons_cover_tolerances(self):
        obs = exact_instance((6, 6, 6), 2, seed=5)
        cfg = LmConfig(max_iters=400, seed=9, tol=1e-8)
        _, trace, reason = run(obs, 2, cfg)
        assert reason == "residual-tol"
        assert trace.final_residual <= 1e-8

    def test_step_tol_reason(self):
        rng = np.random.default_rng(10)
        obs = DenseTensor3((5, 5, 5), rng.random(125))
        cfg = LmConfig(max_iters=4000, method="lm", seed=0, step_tol=1e-9)
        _, trace, reason = run(obs, 2, cfg)
        assert reason in ("step-tol", "grad-tol")

    def test_rejects_bad_rank(self):
        obs = DenseTensor3.zeros((2, 2, 2))
        with pytest.raises(DimensionError):
            run(obs, 0, LmConfig())


class _ExplodingObjective:
    """Yields a gram so indefinite that no damping on the ladder rescues it."""

    class _Jac:
        def gram(self):
            return np.diag([1.0, -1e306, 1.0])

        def rmatvec(self, f):
            return np.ones(3)

        def matvec(self, v):
            return np.zeros(3)

    def __init__(self):
        self.n_jacobian_builds = 0
        self.n_residual_evals = 0

    def residual(self, x):
        self.n_residual_evals += 1
        return np.ones(3)

    def build_jacobian(self, x):
        self.n_jacobian_builds += 1
        return self._Jac()


def test_divergence_ladder_exhausts():
    obj = _ExplodingObjective()
    x = ParamVector(np.zeros(3), (1, 1, 1, 1))
    state = LmState(x=x, mu=1.0, nu=2.0, objective=obj)
    cfg = LmConfig(max_iters=5, method="lm", grad_tol=0.0, max_mu_escalations=4)
    with pytest.raises(DivergenceError):
        classic_lm_iterate(state, None, cfg)


class TestTraceOutputs:
    def make_trace(self):
        rec = IterationRecord(
            iter=1,
            mu=0.25,
            nu=2.0,
            rho=None,
            residual_norm_before=3.0,
            residual_norm_after=3.0,
            accepted=False,
            step_norm=0.5,
            n_jacobian_builds=1,
            n_residual_evals=2,
            elapsed=0.125,
        )
        return Trace(
            records=[rec],
            method="mlm",
            reason="max-iters",
            final_residual=3.0,
            total_seconds=1.5,
            jacobian_builds=1,
            residual_evals=2,
        )

    def test_csv_header_and_empty_rho(self, tmp_path):
        trace = self.make_trace()
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == TRACE_HEADER
        fields = lines[1].split(",")
        assert fields[3] == ""  # rho empty on solve failure
        assert fields[6] == "0"  # accepted flag
        assert fields[10] == "0"  # timing suppressed by default

    def test_csv_timing_opt_in(self, tmp_path):
        trace = self.make_trace()
        path = tmp_path / "trace.csv"
        trace.write_csv(path, include_timing=True)
        assert path.read_text().splitlines()[1].split(",")[10] == "0.125"

    def test_csv_float_precision(self, tmp_path):
        rng = np.random.default_rng(11)
        obs = DenseTensor3((4, 4, 4), rng.random(64))
        _, trace, _ = run(obs, 2, LmConfig(max_iters=5, seed=1))
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        row = path.read_text().splitlines()[1].split(",")
        assert float(row[4]) == trace.records[0].residual_norm_before

    def test_summary_keys(self):
        trace = self.make_trace()
        s = trace.summary()
        assert list(s) == [
            "method",
            "iters",
            "final_residual",
            "reason",
            "total_seconds",
            "jacobian_builds",
            "residual_evals",
        ]

    def test_summary_json_file(self, tmp_path):
        trace = self.make_trace()
        path = tmp_path / "summary.json"
        trace.write_summary(path, seed=3)
        loaded = json.loads(path.read_text())
        assert loaded["method"] == "mlm"
        assert loaded["iters"] == 1
        assert loaded["seed"] == 3


class TestDeterminism:
    def test_identical_runs_bitwise(self, tmp_path):
        rng = np.random.default_rng(12)
        obs = DenseTensor3((6, 5, 4), rng.random(120))
        cfg = LmConfig(max_iters=30, seed=5)
        m1, t1, r1 = run(obs, 3, cfg)
        m2, t2, r2 = run(obs, 3, cfg)
        assert r1 == r2
        assert m1 == m2
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        t1.write_csv(p1)
        t2.write_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
