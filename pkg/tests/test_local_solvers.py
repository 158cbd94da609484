import numpy as np
import pytest

from drsr.errors import (
    ConfigurationError,
    IterateNotPositiveDefiniteError,
    PreconditionError,
    RankDeficientDataError,
    TraceConditionError,
)
from drsr.local_solvers import (
    GmsParams,
    LocalDataset,
    cadmm_local_solve,
    gmedian_local_solve,
    gms_local_solve,
    gms_majorizer,
    gms_objective,
    gms_weight_matrix,
    pca_local_solve,
)
from drsr.matops import symmetrize

import oracles

DELTA = 1e-10
E1E2 = LocalDataset(np.eye(2))


def synthetic_block(rng, n_inliers, n_outliers, dim, d, sigma=0.0):
    basis, _ = np.linalg.qr(rng.standard_normal((dim, d)))
    inliers = rng.standard_normal((n_inliers, d)) @ basis.T
    if sigma:
        inliers = inliers + sigma * rng.standard_normal((n_inliers, dim))
    outliers = rng.random((n_outliers, dim))
    return np.vstack([inliers, outliers]), basis


class TestLocalDataset:
    def test_full_rank(self):
        assert E1E2.full_rank

    def test_rejects_rank_deficient(self):
        with pytest.raises(RankDeficientDataError):
            LocalDataset(np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]))

    def test_deficient_allowed_when_requested(self):
        data = LocalDataset(np.array([[1.0, 0.0], [2.0, 0.0]]), require_full_rank=False)
        assert not data.full_rank

    def test_rejects_empty(self):
        with pytest.raises(PreconditionError):
            LocalDataset(np.empty((0, 3)))


class TestWeightMatrix:
    def test_unit_vectors(self):
        w = gms_weight_matrix(E1E2, np.eye(2) / 2, DELTA)
        assert np.allclose(w, np.eye(2), atol=1e-14)

    def test_clamp_branch(self):
        # ||Q e1|| = 0 < delta, so that term becomes x x^T / (2 delta)
        q = np.diag([0.0, 1.0])
        w = gms_weight_matrix(E1E2, q, DELTA)
        assert np.allclose(w[0, 0], 1.0 / (2 * DELTA))
        assert np.allclose(w[1, 1], 0.5)

    def test_three_point_hand_case(self):
        data = LocalDataset(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        w = gms_weight_matrix(data, np.eye(2) / 2, DELTA)
        ones = np.ones((2, 2))
        expected = np.eye(2) + ones / (2 * (np.sqrt(2) / 2))
        assert np.allclose(w, expected, atol=1e-14)

    def test_positive_definite(self):
        rng = np.random.default_rng(0)
        data = LocalDataset(rng.standard_normal((40, 6)))
        q = oracles.random_trace_one_spd(rng, 6)
        w = gms_weight_matrix(data, q, DELTA)
        assert np.linalg.eigvalsh(w)[0] > 0


class TestObjective:
    def test_single_point(self):
        data = LocalDataset(np.array([[1.0, 0.0], [0.0, 1.0]]))
        val = gms_objective(data, np.eye(2) / 2, np.zeros((2, 2)), DELTA)
        assert abs(val - 1.0) <= 1e-14  # two points, each contributes 1/2

    def test_smooth_branch_at_zero(self):
        q = np.diag([0.0, 1.0])
        data = LocalDataset(np.array([[1.0, 0.0]]), require_full_rank=False)
        val = gms_objective(data, q, np.zeros((2, 2)), DELTA)
        assert abs(val - DELTA / 2) <= 1e-20

    def test_trace_term(self):
        data = LocalDataset(np.array([[1.0, 0.0]]), require_full_rank=False)
        a = np.diag([0.1, -0.1])
        val = gms_objective(data, np.eye(2) / 2, a, DELTA)
        assert abs(val - 0.5) <= 1e-14  # tr(QA) = 0 here

    def test_requires_unit_trace(self):
        with pytest.raises(TraceConditionError):
            gms_objective(E1E2, np.eye(2), np.zeros((2, 2)), DELTA)


class TestMajorizer:
    def test_equality_at_anchor(self):
        rng = np.random.default_rng(1)
        data = LocalDataset(rng.standard_normal((30, 4)))
        q = oracles.random_trace_one_spd(rng, 4)
        a = oracles.random_traceless_symmetric(rng, 4)
        g = gms_objective(data, q, a, DELTA)
        h = gms_majorizer(data, q, q, a, DELTA)
        assert abs(g - h) <= 1e-12 * max(1.0, abs(g))

    def test_hand_case(self):
        data = LocalDataset(np.array([[1.0, 0.0]]), require_full_rank=False)
        q = np.eye(2) / 2
        q_star = np.diag([0.25, 0.75])  # ||Q* e1|| = 1/4 >= delta
        h = gms_majorizer(data, q, q_star, np.zeros((2, 2)), DELTA)
        assert abs(h - 0.625) <= 1e-14
        assert h >= gms_objective(data, q, np.zeros((2, 2)), DELTA)

    def test_dominates_objective_sweep(self):
        rng = np.random.default_rng(2)
        data = LocalDataset(rng.standard_normal((25, 5)))
        a = oracles.random_traceless_symmetric(rng, 5)
        for _ in range(1000):
            q = oracles.random_trace_one_spd(rng, 5)
            q_star = oracles.random_trace_one_spd(rng, 5)
            g = gms_objective(data, q, a, DELTA)
            h = gms_majorizer(data, q, q_star, a, DELTA)
            assert h >= g - 1e-12


class TestGmsLocalSolve:
    def test_symmetric_fixed_point(self):
        params = GmsParams()
        q, info = gms_local_solve(E1E2, np.zeros((2, 2)), params, return_info=True)
        assert np.allclose(q, np.eye(2) / 2, atol=1e-12)
        assert info.iterations == 1

    def test_recovers_clean_subspace_and_matches_oracle(self):
        rng = np.random.default_rng(3)
        block, basis = synthetic_block(rng, 70, 30, 10, 2, sigma=0.0)
        data = LocalDataset(block)
        params = GmsParams(t_gms=200)
        q = gms_local_solve(data, np.zeros((10, 10)), params)
        lam, vecs = np.linalg.eigh(q)
        angle = oracles.max_principal_angle(vecs[:, :2], basis)
        assert angle <= 1e-6
        q_ref = oracles.gms_irls(block)
        ours = oracles.gms_objective_value(block, q)
        ref = oracles.gms_objective_value(block, q_ref)
        assert abs(ours - ref) <= 1e-8 * max(1.0, abs(ref))

    def test_monotone_descent(self):
        rng = np.random.default_rng(4)
        for trial in range(50):
            block, _ = synthetic_block(rng, 30, 20, 8, 2, sigma=0.1)
            data = LocalDataset(block)
            scale = 1.0 / np.trace(np.linalg.inv(
                gms_weight_matrix(data, np.eye(8) / 8, DELTA)))
            a = oracles.random_traceless_symmetric(rng, 8)
            a *= 0.5 * scale / np.linalg.norm(a, 2)
            _, info = gms_local_solve(data, a, GmsParams(), return_info=True)
            diffs = np.diff(info.objectives)
            assert np.all(diffs <= 1e-12)

    def test_iterates_stay_definite_within_bound(self):
        rng = np.random.default_rng(5)
        block, _ = synthetic_block(rng, 60, 30, 6, 2, sigma=0.05)
        data = LocalDataset(block)
        norms = np.maximum(np.linalg.norm(block, axis=1), DELTA)
        x_star = (block / (2 * norms[:, None])).T @ block
        bound = 1.0 / np.trace(np.linalg.inv(x_star))
        a = oracles.random_traceless_symmetric(rng, 6)
        a *= 0.9 * bound / np.linalg.norm(a, 2)
        q = gms_local_solve(data, a, GmsParams(t_gms=100))
        assert np.linalg.eigvalsh(q)[0] > 0
        assert abs(np.trace(q) - 1.0) <= 1e-10

    def test_step_difference_decay(self):
        rng = np.random.default_rng(6)
        block, _ = synthetic_block(rng, 120, 60, 12, 3, sigma=0.1)
        data = LocalDataset(block)
        _, info = gms_local_solve(data, np.zeros((12, 12)), GmsParams(t_gms=200),
                                  return_info=True)
        assert info.fixed_point_residual <= 1e-8
        tail = info.step_norms[len(info.step_norms) // 2:]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(tail, tail[1:]))

    def test_warm_start_agrees(self):
        rng = np.random.default_rng(7)
        block, _ = synthetic_block(rng, 50, 25, 6, 2, sigma=0.1)
        data = LocalDataset(block)
        cold = gms_local_solve(data, np.zeros((6, 6)), GmsParams(t_gms=300))
        warm = gms_local_solve(data, np.zeros((6, 6)), GmsParams(t_gms=300),
                               initial_q=cold)
        assert np.linalg.norm(cold - warm, "fro") <= 1e-9

    def test_rejects_traced_a(self):
        with pytest.raises(TraceConditionError):
            gms_local_solve(E1E2, np.eye(2), GmsParams())

    def test_detects_definiteness_loss(self):
        rng = np.random.default_rng(8)
        block, _ = synthetic_block(rng, 40, 20, 6, 2, sigma=0.1)
        data = LocalDataset(block)
        a = oracles.random_traceless_symmetric(rng, 6, scale=1e4)
        with pytest.raises(IterateNotPositiveDefiniteError):
            gms_local_solve(data, a, GmsParams())


class TestPcaLocalSolve:
    def test_identity_case(self):
        q = pca_local_solve(E1E2, np.zeros((2, 2)))
        assert np.allclose(q, np.eye(2) / 2, atol=1e-14)

    def test_closed_form_inverse(self):
        rng = np.random.default_rng(9)
        data = LocalDataset(rng.standard_normal((40, 5)))
        q = pca_local_solve(data, np.zeros((5, 5)))
        x = data.points.T @ data.points
        expected = np.linalg.inv(x)
        expected /= np.trace(expected)
        assert np.linalg.norm(q - expected, "fro") <= 1e-10

    def test_stationarity_residual(self):
        rng = np.random.default_rng(10)
        data = LocalDataset(rng.standard_normal((60, 6)))
        a = oracles.random_traceless_symmetric(rng, 6, scale=5.0)
        q = pca_local_solve(data, a)
        x = data.points.T @ data.points
        grad = q @ x + x @ q + a
        c = np.trace(grad) / 6.0
        assert np.linalg.norm(grad - c * np.eye(6), "fro") <= 1e-9
        assert abs(np.trace(q) - 1.0) <= 1e-12

    def test_rejects_rank_deficient(self):
        bad = LocalDataset(np.array([[1.0, 0.0], [2.0, 0.0]]), require_full_rank=False)
        with pytest.raises(RankDeficientDataError):
            pca_local_solve(bad, np.zeros((2, 2)))


class TestGmedianLocalSolve:
    def test_single_point(self):
        data = LocalDataset(np.array([[3.0, -1.0]]), require_full_rank=False)
        y = gmedian_local_solve(data, np.zeros(2), DELTA, 50)
        assert np.linalg.norm(y - np.array([3.0, -1.0])) <= 2 * DELTA

    def test_collinear_median(self):
        data = LocalDataset(np.array([[0.0], [1.0], [10.0]]), require_full_rank=False)
        y = gmedian_local_solve(data, np.zeros(1), DELTA, 500)
        assert abs(y[0] - 1.0) <= 1e-6

    def test_matches_grid_search(self):
        points = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]])
        data = LocalDataset(points, require_full_rank=False)
        delta = 1e-6
        ours = gmedian_local_solve(data, np.zeros(2), delta, 2000)
        ref = oracles.grid_search_median_2d(points, delta, 0.0, 2.0)
        assert np.linalg.norm(ours - ref) <= 1e-4

    def test_matches_centralized_weiszfeld(self):
        rng = np.random.default_rng(11)
        points = rng.standard_normal((80, 4))
        data = LocalDataset(points)
        ours = gmedian_local_solve(data, np.zeros(4), DELTA, 3000)
        ref = oracles.weiszfeld(points, DELTA)
        assert np.linalg.norm(ours - ref) <= 1e-8

    def test_linear_term_shifts_solution(self):
        rng = np.random.default_rng(12)
        points = rng.standard_normal((50, 3))
        data = LocalDataset(points)
        a = np.array([4.0, -2.0, 1.0])
        y = gmedian_local_solve(data, a, DELTA, 3000)
        # stationarity of the penalized objective with the halved edge term
        w = 1.0 / np.maximum(np.linalg.norm(points - y, axis=1), DELTA)
        grad = (w @ (y - points)) + a / 2.0
        assert np.linalg.norm(grad) <= 1e-8 * (1 + np.linalg.norm(a))

    def test_bad_inputs(self):
        data = LocalDataset(np.array([[1.0, 2.0]]), require_full_rank=False)
        with pytest.raises(ConfigurationError):
            gmedian_local_solve(data, np.zeros(2), -1.0, 10)
        with pytest.raises(PreconditionError):
            gmedian_local_solve(data, np.zeros(3), DELTA, 10)


class TestCadmmLocalSolve:
    def test_reduces_to_plain_solve(self):
        rng = np.random.default_rng(13)
        block, _ = synthetic_block(rng, 40, 20, 5, 2, sigma=0.1)
        data = LocalDataset(block)
        plain = gms_local_solve(data, np.zeros((5, 5)), GmsParams())
        admm = cadmm_local_solve(data, np.zeros((5, 5)), [], np.eye(5) / 5, 0.0,
                                 GmsParams())
        assert np.linalg.norm(plain - admm, "fro") <= 1e-14

    def test_stationarity_residual(self):
        rng = np.random.default_rng(14)
        block, _ = synthetic_block(rng, 60, 30, 6, 2, sigma=0.1)
        data = LocalDataset(block)
        z = oracles.random_traceless_symmetric(rng, 6, scale=0.05)
        neighbors = [oracles.random_trace_one_spd(rng, 6) for _ in range(2)]
        own_prev = oracles.random_trace_one_spd(rng, 6)
        _, info = cadmm_local_solve(data, z, neighbors, own_prev, 0.8,
                                    GmsParams(t_gms=400), return_info=True)
        assert info.fixed_point_residual <= 1e-8

    def test_fixed_point_matches_single_node_solution(self):
        rng = np.random.default_rng(15)
        block, _ = synthetic_block(rng, 50, 25, 5, 2, sigma=0.1)
        data = LocalDataset(block)
        q_gms = gms_local_solve(data, np.zeros((5, 5)), GmsParams(t_gms=400))
        q_admm = cadmm_local_solve(data, np.zeros((5, 5)), [q_gms, q_gms], q_gms,
                                   1.5, GmsParams(t_gms=400))
        assert np.linalg.norm(q_admm - q_gms, "fro") <= 1e-7

    def test_rejects_negative_rho(self):
        with pytest.raises(ConfigurationError):
            cadmm_local_solve(E1E2, np.zeros((2, 2)), [], np.eye(2) / 2, -1.0,
                              GmsParams())
