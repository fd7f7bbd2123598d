import math

import numpy as np
import pytest

from splitmono.fbhf import (ConfigurationError, ConstantStep, SolveConfig,
                            solve_fbhf, solve_tseng_fbf)
from splitmono.operators import (ClosedConvexSet, CocoerciveMap, MaximalMonotone,
                                 MonotoneMap, ProblemSpec, normal_cone_box)
from splitmono.precond import (MetricSchedule, Preconditioner, resolvent_via_P,
                               solve_precond_fbhf, solve_variable_metric,
                               t_class_transform)


def shift_map(b, beta=1.0):
    b = np.asarray(b, dtype=float)
    return CocoerciveMap(evaluate=lambda x: x - b, beta=beta)


def random_strong_pre(rng, n, b2_matrix=None):
    G = rng.standard_normal((n, n))
    U = G.T @ G / n + 0.5 * np.eye(n)
    Sk = rng.standard_normal((n, n))
    S = (Sk - Sk.T) / 2
    return Preconditioner.from_matrix(U + S, b2_matrix=b2_matrix)


class TestResolventViaP:
    def test_linear_example(self):
        # A = Id, P = [[2,1],[0,2]]: x = (P+I)^{-1} P z = (2/3, 0) at z = (1,0)
        pre = Preconditioner.from_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
        A = MaximalMonotone.from_matrix(np.eye(2))
        x = resolvent_via_P(A, pre, np.array([1.0, 0.0]))
        assert np.allclose(x, [2.0 / 3.0, 0.0], atol=1e-12)

    def test_scalar_preconditioner_is_plain_resolvent(self):
        A = MaximalMonotone.from_matrix(np.array([[2.0, 0.3], [0.3, 1.0]]))
        gamma = 0.7
        pre = Preconditioner.from_matrix(np.eye(2) / gamma)
        z = np.array([0.4, -1.2])
        assert np.allclose(resolvent_via_P(A, pre, z),
                           A.resolvent(gamma, z), atol=1e-12)

    def test_zero_of_A_with_no_skew_drift_is_fixed(self):
        A = MaximalMonotone.from_matrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
        pre = Preconditioner.from_matrix(np.array([[1.5, 0.2], [0.2, 1.0]]))
        x = resolvent_via_P(A, pre, np.zeros(2))
        assert np.allclose(x, 0.0, atol=1e-14)

    def test_matches_direct_solve_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            pre = random_strong_pre(rng, 5)
            Q = rng.standard_normal((5, 5))
            M_A = Q.T @ Q
            A = MaximalMonotone.from_matrix(M_A)
            z = rng.standard_normal(5)
            got = resolvent_via_P(A, pre, z)
            ref = np.linalg.solve(pre.P + M_A, pre.P @ z)
            assert np.linalg.norm(got - ref) <= 1e-9

    def test_u_metric_firm_nonexpansiveness(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            pre = random_strong_pre(rng, 4)
            Q = rng.standard_normal((4, 4))
            A = MaximalMonotone.from_matrix(Q.T @ Q)
            x = rng.standard_normal(4)
            y = rng.standard_normal(4)
            jx = resolvent_via_P(A, pre, x)
            jy = resolvent_via_P(A, pre, y)
            d = jx - jy
            lhs = float(d @ (pre.P @ x - pre.P @ y))
            rhs = float(d @ (pre.U @ d))
            assert lhs >= rhs - 1e-9

    def test_forward_substitution_matches_linear_route(self):
        # block-separable linear A solved both ways must agree
        rng = np.random.default_rng(2)
        d1, d2 = 2, 3
        A1 = np.diag(rng.uniform(0.5, 2.0, d1))
        A2 = np.diag(rng.uniform(0.5, 2.0, d2))
        blockA = MaximalMonotone.product([
            (MaximalMonotone.from_matrix(A1), d1),
            (MaximalMonotone.from_matrix(A2), d2)])
        linA = MaximalMonotone.from_matrix(
            np.block([[A1, np.zeros((d1, d2))], [np.zeros((d2, d1)), A2]]))
        P = np.eye(5) * 2.0
        P[3, 0] = 0.4
        pre = Preconditioner.from_matrix(P)
        z = rng.standard_normal(5)
        assert np.allclose(resolvent_via_P(blockA, pre, z),
                           resolvent_via_P(linA, pre, z), atol=1e-10)

    def test_unsupported_operator_rejected(self):
        pre = Preconditioner.from_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
        opaque = MaximalMonotone(resolvent=lambda g, y: y)
        with pytest.raises(ConfigurationError, match="no composite resolvent"):
            resolvent_via_P(opaque, pre, np.zeros(2))

    def test_upper_triangular_block_rejected(self):
        blockA = MaximalMonotone.product([
            (normal_cone_box(-np.ones(2), np.ones(2)), 2),
            (normal_cone_box(-np.ones(2), np.ones(2)), 2)])
        P = np.eye(4)
        P[0, 3] = 0.5   # above the diagonal in block terms
        pre = Preconditioner.from_matrix(P)
        with pytest.raises(ConfigurationError, match="triangular"):
            resolvent_via_P(blockA, pre, np.zeros(4))


class TestPreconditionerConstants:
    def test_split_and_moduli(self):
        P = np.array([[2.0, 1.0], [0.0, 2.0]])
        pre = Preconditioner.from_matrix(P)
        assert np.array_equal(pre.U, [[2.0, 0.5], [0.5, 2.0]])
        assert np.array_equal(pre.S, [[0.0, 0.5], [-0.5, 0.0]])
        assert pre.rho == pytest.approx(1.5, abs=1e-9)   # eigs 2 +- 1/2
        assert pre.norm_U == pytest.approx(2.5, abs=1e-9)

    def test_k_from_b2_matrix(self):
        S = np.array([[0.0, 0.5], [-0.5, 0.0]])
        pre = Preconditioner.from_matrix(np.eye(2) + S, b2_matrix=S)
        assert pre.K == pytest.approx(0.0, abs=1e-10)
        assert pre.k_source == "b2_matrix"

    def test_k_defaults_to_skew_norm(self):
        S = np.array([[0.0, 0.5], [-0.5, 0.0]])
        pre = Preconditioner.from_matrix(np.eye(2) + S)
        assert pre.K == pytest.approx(0.5, abs=1e-10)


class TestSolvePrecondFbhf:
    def _skew_problem(self, rng, n=4, scale=0.1):
        Sk = rng.standard_normal((n, n))
        B2 = scale * (Sk - Sk.T) / 2
        b = rng.standard_normal(n)
        spec = ProblemSpec(A=MaximalMonotone.from_matrix(np.eye(n)),
                          B1=shift_map(b), B2=MonotoneMap.from_matrix(B2),
                          X=ClosedConvexSet.whole_space(), dimension=n)
        return spec, B2

    def test_scalar_precond_bitwise_identical_to_main_solver(self):
        rng = np.random.default_rng(3)
        spec, B2 = self._skew_problem(rng)
        gamma = 0.25   # dyadic so 1/(1/gamma) round-trips exactly
        pre = Preconditioner.from_matrix(np.eye(4) / gamma, b2_matrix=B2)
        cfg = SolveConfig(max_iterations=60, tolerance=1e-300, keep_iterates=True)
        z0 = rng.standard_normal(4)
        r1 = solve_precond_fbhf(spec, pre, cfg, z0)
        r2 = solve_fbhf(spec, ConstantStep(gamma=gamma), cfg, z0)
        for a, b_ in zip(r1.iterates, r2.iterates):
            assert np.array_equal(a, b_)

    def test_condition_equality_boundary_rejected(self):
        # beta = inf and K = rho exactly: the strict inequality K^2 < rho^2 fails
        S = np.array([[0.0, 1.0], [-1.0, 0.0]])
        pre = Preconditioner.from_matrix(np.eye(2) + S, b2_matrix=2.0 * S)
        # K = ||2S - S|| = 1 = rho
        spec = ProblemSpec(A=MaximalMonotone.from_matrix(np.eye(2)), B1=None,
                          B2=MonotoneMap.from_matrix(2.0 * S),
                          X=ClosedConvexSet.whole_space(), dimension=2)
        assert pre.rho == pytest.approx(1.0, abs=1e-9)
        assert pre.K == pytest.approx(1.0, abs=1e-9)
        with pytest.raises(ConfigurationError, match="metric condition"):
            solve_precond_fbhf(spec, pre, SolveConfig(max_iterations=10,
                                                      tolerance=1e-9))

    def test_violated_condition_reports_quantities(self):
        rng = np.random.default_rng(5)
        spec, B2 = self._skew_problem(rng, scale=5.0)
        pre = Preconditioner.from_matrix(0.1 * np.eye(4), b2_matrix=B2)
        with pytest.raises(ConfigurationError) as err:
            solve_precond_fbhf(spec, pre, SolveConfig(max_iterations=10,
                                                      tolerance=1e-9))
        assert "K^2" in str(err.value) and "rho" in str(err.value)

    def test_triangular_gauss_seidel_matches_tseng(self):
        # two prox blocks, skew-plus-monotone linear B2, no B1
        rng = np.random.default_rng(7)
        C = 0.2 * rng.standard_normal((2, 2))
        B2m = 0.05 * np.block([[0.5 * np.eye(2), C], [-C.T, 0.5 * np.eye(2)]])
        shift = np.array([0.3, -0.4, 0.2, 0.1])
        blockA = MaximalMonotone.product([
            (MaximalMonotone(resolvent=lambda g, y: np.clip(y - g * shift[:2], -1, 1)), 2),
            (MaximalMonotone(resolvent=lambda g, y: np.clip(y - g * shift[2:], -1, 1)), 2)])
        spec = ProblemSpec(A=blockA, B1=None,
                          B2=MonotoneMap.from_matrix(B2m),
                          X=ClosedConvexSet.whole_space(), dimension=4)
        P = np.eye(4)
        P[2:, :2] = 0.3 * rng.standard_normal((2, 2))
        pre = Preconditioner.from_matrix(P, b2_matrix=B2m)
        cfg = SolveConfig(max_iterations=200_000, tolerance=1e-12)
        r1 = solve_precond_fbhf(spec, pre, cfg)
        r2 = solve_tseng_fbf(spec, ConstantStep(), cfg)
        assert np.linalg.norm(r1.z - r2.z) <= 1e-7

    def test_box_constraint_with_nondiagonal_u_rejected(self):
        rng = np.random.default_rng(9)
        spec, B2 = self._skew_problem(rng)
        spec = ProblemSpec(A=spec.A, B1=spec.B1, B2=spec.B2,
                          X=ClosedConvexSet.box(-np.ones(4), np.ones(4)),
                          dimension=4)
        pre = random_strong_pre(rng, 4, b2_matrix=B2)
        pre = Preconditioner.from_matrix(3.0 * np.eye(4) + (pre.P - pre.P.T) / 2,
                                         b2_matrix=B2)
        # S nonzero makes the scalar fast path unavailable; U stays diagonal
        r = solve_precond_fbhf(spec, pre, SolveConfig(max_iterations=50,
                                                      tolerance=1e-9))
        assert r.iterations >= 1
        bad = Preconditioner.from_matrix(np.array(
            [[3.0, 0.5, 0, 0], [0.5, 3.0, 0, 0], [0, 0, 3.0, 0], [0, 0, 0, 3.0]]),
            b2_matrix=B2)
        with pytest.raises(ConfigurationError, match="diagonal U"):
            solve_precond_fbhf(spec, bad, SolveConfig(max_iterations=10,
                                                      tolerance=1e-9))

    def test_nonlinear_b2_requires_user_k(self):
        def ev(w):
            return np.array([math.tanh(w[0]), -math.tanh(w[1])]) * 0.0 + w * 0.0

        nonlinear = MonotoneMap(evaluate=lambda w: 0.1 * np.tanh(w))
        spec = ProblemSpec(A=MaximalMonotone.from_matrix(np.eye(2)),
                          B1=None, B2=nonlinear,
                          X=ClosedConvexSet.whole_space(), dimension=2)
        pre_plain = Preconditioner.from_matrix(np.eye(2) * 2.0 + np.array(
            [[0.0, 0.1], [-0.1, 0.0]]))
        with pytest.raises(ConfigurationError, match="explicit K"):
            solve_precond_fbhf(spec, pre_plain,
                               SolveConfig(max_iterations=10, tolerance=1e-9))
        pre = Preconditioner.from_matrix(np.eye(2) * 2.0 + np.array(
            [[0.0, 0.1], [-0.1, 0.0]]), lipschitz_K=0.25)
        r = solve_precond_fbhf(spec, pre, SolveConfig(max_iterations=50,
                                                      tolerance=1e-10, seed=0))
        assert r.reason == "tolerance"
        lying = Preconditioner.from_matrix(np.eye(2) * 2.0 + np.array(
            [[0.0, 0.1], [-0.1, 0.0]]), lipschitz_K=1e-6)
        with pytest.raises(ConfigurationError, match="Lipschitz"):
            solve_precond_fbhf(spec, lying, SolveConfig(max_iterations=10,
                                                        tolerance=1e-9, seed=0))


class TestTClassTransform:
    def test_identity_metric_unit_relaxation(self):
        A = MaximalMonotone.from_matrix(np.diag([1.0, 2.0]))
        S_op = lambda z: A.resolvent(1.0, z)
        Q = t_class_transform(S_op, np.eye(2), 1.0)
        rng = np.random.default_rng(11)
        for _ in range(20):
            z = rng.standard_normal(2)
            assert np.allclose(Q(z), S_op(z), atol=1e-14)

    def test_fixed_points_preserved(self):
        rng = np.random.default_rng(13)
        G = rng.standard_normal((3, 3))
        U = G.T @ G / 3 + np.eye(3)
        M_A = np.diag([1.0, 0.5, 2.0])
        pre = Preconditioner.from_matrix(U)
        A = MaximalMonotone.from_matrix(M_A)
        S_op = lambda z: resolvent_via_P(A, pre, z)
        Q = t_class_transform(S_op, U, 0.5 / pre.norm_U)
        assert np.allclose(Q(np.zeros(3)), np.zeros(3), atol=1e-12)

    def test_t_class_inequality_sampled(self):
        rng = np.random.default_rng(15)
        G = rng.standard_normal((3, 3))
        U = G.T @ G / 3 + np.eye(3)
        pre = Preconditioner.from_matrix(U)
        A = MaximalMonotone.from_matrix(np.diag([1.0, 3.0, 0.5]))
        S_op = lambda z: resolvent_via_P(A, pre, z)
        from splitmono.linalg import operator_norm
        Q = t_class_transform(S_op, U, 1.0 / operator_norm(U))
        # Fix(Q) = zer(A) = {0}; T-class inequality against y = 0
        for _ in range(100):
            z = rng.standard_normal(3)
            qz = Q(z)
            assert np.linalg.norm(z - qz) ** 2 <= float((z - qz) @ z) + 1e-10

    def test_mu_out_of_range(self):
        with pytest.raises(ValueError):
            t_class_transform(lambda z: z, np.eye(2), 1.5)
        with pytest.raises(ValueError):
            t_class_transform(lambda z: z, np.eye(2), 0.0)


class TestVariableMetric:
    def _strong_problem(self, rng, n=4):
        Sk = rng.standard_normal((n, n))
        B2m = 0.1 * (Sk - Sk.T) / 2
        b = rng.standard_normal(n)
        return ProblemSpec(A=MaximalMonotone.from_matrix(0.5 * np.eye(n)),
                           B1=shift_map(b), B2=MonotoneMap.from_matrix(B2m),
                           X=ClosedConvexSet.whole_space(), dimension=n), B2m

    def test_constant_schedule_agrees_with_inverted_variant(self):
        for seed in range(5):
            rng = np.random.default_rng(20 + seed)
            spec, B2m = self._strong_problem(rng)
            G = rng.standard_normal((4, 4))
            U = G.T @ G / 8 + 1.5 * np.eye(4)
            Sk = 0.05 * rng.standard_normal((4, 4))
            pre = Preconditioner.from_matrix(U + (Sk - Sk.T) / 2, b2_matrix=B2m)
            cfg = SolveConfig(max_iterations=500_000, tolerance=1e-12)
            r_vm = solve_variable_metric(spec, MetricSchedule.constant(pre), cfg)
            r_pc = solve_precond_fbhf(spec, pre, cfg)
            assert np.linalg.norm(r_vm.z - r_pc.z) <= 1e-8

    def test_scalar_schedule_is_relaxed_main_iteration(self):
        rng = np.random.default_rng(31)
        spec, B2m = self._strong_problem(rng)
        gamma = 0.5
        eta = 0.6
        pre = Preconditioner.from_matrix(np.eye(4) / gamma, b2_matrix=B2m)
        sched = MetricSchedule.constant(pre, lambdas=lambda k: eta * gamma)
        cfg = SolveConfig(max_iterations=40, tolerance=1e-300, keep_iterates=True)
        z0 = rng.standard_normal(4)
        r = solve_variable_metric(spec, sched, cfg, z0)
        # manual relaxed iteration z+ = z + eta (x + g(B2 z - B2 x) - z)
        z = z0.copy()
        for zk in r.iterates[1:]:
            fz = spec.B1.evaluate(z) + spec.B2.evaluate(z)
            x = spec.A.resolvent(gamma, z - gamma * fz)
            corr = (x - z) / gamma + spec.B2.evaluate(z) - spec.B2.evaluate(x)
            z = z + eta * gamma * corr
            assert np.linalg.norm(z - zk) <= 1e-9

    def test_alternating_schedule_converges_to_same_zero(self):
        rng = np.random.default_rng(33)
        spec, B2m = self._strong_problem(rng, n=2)
        pre1 = Preconditioner.from_matrix(1.5 * np.eye(2), b2_matrix=B2m)
        pre2 = Preconditioner.from_matrix(
            2.0 * np.eye(2) + np.array([[0.0, 0.1], [-0.1, 0.0]]), b2_matrix=B2m)
        cfg = SolveConfig(max_iterations=500_000, tolerance=1e-12)
        r_alt = solve_variable_metric(spec, MetricSchedule.cycle([pre1, pre2]), cfg)
        r_1 = solve_variable_metric(spec, MetricSchedule.constant(pre1), cfg)
        assert np.linalg.norm(r_alt.z - r_1.z) <= 1e-8

    def test_violating_schedule_names_iteration(self):
        rng = np.random.default_rng(35)
        spec, B2m = self._strong_problem(rng)
        good = Preconditioner.from_matrix(1.5 * np.eye(4), b2_matrix=B2m)
        bad = Preconditioner.from_matrix(0.01 * np.eye(4), b2_matrix=B2m)
        sched = MetricSchedule(at=lambda k: bad if k == 3 else good,
                               norm_sup=good.norm_U)
        with pytest.raises(ConfigurationError, match="P_3"):
            solve_variable_metric(spec, sched,
                                  SolveConfig(max_iterations=10, tolerance=1e-300))

    def test_requires_whole_space(self):
        rng = np.random.default_rng(37)
        spec, B2m = self._strong_problem(rng)
        boxed = ProblemSpec(A=spec.A, B1=spec.B1, B2=spec.B2,
                           X=ClosedConvexSet.box(-np.ones(4), np.ones(4)),
                           dimension=4)
        pre = Preconditioner.from_matrix(1.5 * np.eye(4), b2_matrix=B2m)
        with pytest.raises(ConfigurationError, match="X = H"):
            solve_variable_metric(boxed, MetricSchedule.constant(pre),
                                  SolveConfig(max_iterations=10, tolerance=1e-9))

    def test_step_square_sums_plateau(self):
        rng = np.random.default_rng(39)
        spec, B2m = self._strong_problem(rng)
        pre = Preconditioner.from_matrix(1.5 * np.eye(4), b2_matrix=B2m)
        sched = MetricSchedule.constant(pre, lambdas=lambda k: 0.1)
        cfg = SolveConfig(max_iterations=500, tolerance=1e-300, keep_iterates=True)
        r = solve_variable_metric(spec, sched, cfg)
        steps = [np.linalg.norm(b - a) ** 2
                 for a, b in zip(r.iterates, r.iterates[1:])]
        assert len(steps) >= 200
        assert sum(steps[-100:]) < 1e-12
