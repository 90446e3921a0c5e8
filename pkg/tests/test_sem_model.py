import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from worstrisk.errors import DimensionMismatch, SingularD, SingularDraw, SingularSystem
from worstrisk.sem_model import (EnvironmentData, EnvironmentSpec, GaussianLaw, NoiseSpec,
                                 TransferMatrixModel, TwoPointLaw, UniformLaw, draw_transfer_matrix,
                                 embed_nonlinear_systems, embedding_design, env_rng,
                                 sample_environment, solve_sem, zero_law)


class TestTransferMatrix:
    def test_zero_deterministic(self):
        m = TransferMatrixModel.deterministic(np.zeros((3, 3)))
        np.testing.assert_array_equal(draw_transfer_matrix(m, 1), np.zeros((3, 3)))

    def test_simple_single_branch(self):
        B = np.array([[0, 0], [0.5, 0]])
        m = TransferMatrixModel.simple([(B, 1.0)])
        for s in range(5):
            np.testing.assert_array_equal(draw_transfer_matrix(m, s), B)

    def test_singular_row(self):
        B = np.array([[1.0, 0.0], [0.3, 0.0]])     # first row of I - B is zero
        with pytest.raises(SingularDraw):
            draw_transfer_matrix(TransferMatrixModel.deterministic(B), 0)

    def test_roundtrip_dict(self):
        m = TransferMatrixModel.simple([(np.zeros((2, 2)), 0.3), (np.array([[0, 0], [1, 0]]), 0.7)])
        m2 = TransferMatrixModel.from_dict(m.to_dict())
        assert m2.kind == "simple"
        np.testing.assert_array_equal(m2.matrices[1], m.matrices[1])

    def test_sampler_draws_are_invertible(self, rng):
        m = TransferMatrixModel.perturbed(np.zeros((3, 3)), 0.3)
        _, Bs = m.draw_many(rng, 200)
        assert np.all(np.abs(np.linalg.det(np.eye(3) - Bs)) > 0)


class TestSolveSem:
    def test_identity(self):
        s = solve_sem(np.zeros((2, 2)), [1, 2], [0, 0])
        assert s.y == 1
        np.testing.assert_array_equal(s.x, [2])

    def test_two_by_two(self):
        s = solve_sem([[0, 0], [1, 0]], [1, 1], [0, 0])
        assert s.y == 1 and s.x[0] == 2

    def test_singular(self):
        with pytest.raises(SingularSystem):
            solve_sem(np.eye(2), [1, 1], [0, 0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            solve_sem(np.zeros((2, 2)), [1, 2, 3], [0, 0])


class TestSampling:
    def test_all_zero(self):
        m = TransferMatrixModel.deterministic(np.zeros((3, 3)))
        d = sample_environment(m, EnvironmentSpec(0, zero_law(3)), NoiseSpec(zero_law(3)), 3, 0)
        np.testing.assert_array_equal(d.Y, 0)
        np.testing.assert_array_equal(d.X, 0)

    def test_covariance_matches_propagation(self, ref):
        n = 10 ** 5
        env = ref.envs[1]
        d = sample_environment(ref.model, env, ref.noise, n, 11)
        S = np.column_stack([d.Y, d.X])
        M = np.linalg.inv(np.eye(4) - ref.model.matrices[0])
        want = M @ (ref.noise.law.cov + env.shift_law.cov) @ M.T
        got = S.T @ S / n
        # SE of a centered Gaussian product moment: sqrt((s_ii s_jj + s_ij^2)/n)
        se = np.sqrt((np.outer(np.diag(want), np.diag(want)) + want ** 2) / n)
        assert np.all(np.abs(got - want) <= 3.5 * se)

    def test_streams_separate_by_index(self, ref):
        a = sample_environment(ref.model, EnvironmentSpec(1, ref.envs[1].shift_law), ref.noise, 5, 3)
        b = sample_environment(ref.model, EnvironmentSpec(2, ref.envs[1].shift_law), ref.noise, 5, 3)
        assert not np.allclose(a.Y, b.Y)

    def test_same_seed_same_stream(self, ref):
        a = sample_environment(ref.model, ref.envs[2], ref.noise, 50, 9)
        b = sample_environment(ref.model, ref.envs[2], ref.noise, 50, 9)
        np.testing.assert_array_equal(a.X, b.X)

    def test_prefix_stable(self, ref):
        # a longer draw extends a shorter one: the stream is consumed row by row
        a = sample_environment(ref.model, ref.envs[1], ref.noise, 20, 4)
        b = sample_environment(ref.model, ref.envs[1], ref.noise, 40, 4)
        np.testing.assert_array_equal(a.X, b.X[:20])

    def test_observational_must_be_unshifted(self):
        with pytest.raises(ValueError):
            EnvironmentSpec(0, GaussianLaw(np.zeros(2), np.eye(2)))

    def test_row_mismatch(self):
        with pytest.raises(DimensionMismatch):
            EnvironmentData(0, np.zeros((3, 2)), np.zeros(4))

    def test_simple_kind_mixture(self, rng):
        B1 = np.zeros((2, 2))
        B2 = np.array([[0, 0], [2.0, 0]])
        m = TransferMatrixModel.simple([(B1, 0.5), (B2, 0.5)])
        noise = NoiseSpec(TwoPointLaw([1, 0], [1, 0], 0.5))     # eps = (1, 0) always
        d = sample_environment(m, EnvironmentSpec(0, zero_law(2)), noise, 2000, 5)
        assert set(np.round(d.X[:, 0], 12)) == {0.0, 2.0}

    def test_laws(self, rng):
        u = UniformLaw([-1, 0], [1, 2])
        np.testing.assert_allclose(u.covariance(), np.diag([4 / 12, 4 / 12]))
        x = u.sample(rng, 10000)
        assert np.all((x >= [-1, 0]) & (x <= [1, 2]))


class TestEmbedding:
    def test_identity_map(self):
        p = 2
        _, _, C = embedding_design(p)
        # f = identity with zero noise, states chosen so f(s + shift) = column of C
        states = [(C[0, j] - C[0, j], C[1:, j] - C[1:, j], C[:, j], np.zeros(p + 1)) for j in range(p + 1)]
        B = embed_nonlinear_systems(lambda s: s, [(s[0], s[1], s[2], s[3]) for s in states])
        np.testing.assert_allclose(B, 0, atol=1e-12)

    def test_zero_map_noise_is_C(self):
        _, _, C = embedding_design(2)
        states = [(0.0, np.zeros(2), np.zeros(3), C[:, j]) for j in range(3)]
        B = embed_nonlinear_systems(lambda s: np.zeros(3), states)
        np.testing.assert_allclose(B, 0, atol=1e-12)

    def test_equal_columns_singular(self):
        states = [(0.0, np.zeros(2), np.zeros(3), np.ones(3))] * 3
        with pytest.raises(SingularD):
            embed_nonlinear_systems(lambda s: np.zeros(3), states)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_random_smooth_map_residual(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(3, 3))
        f = lambda s: np.tanh(W @ s) + 0.1 * s
        _, _, C = embedding_design(2)
        states = [(rng.normal(), rng.normal(size=2), rng.normal(size=3), rng.normal(size=3))
                  for _ in range(3)]
        D = np.column_stack([f(np.concatenate([[y], x]) + a) + e for y, x, a, e in states])
        if np.linalg.cond(D) > 1e8:
            return
        B = embed_nonlinear_systems(f, states)
        np.testing.assert_allclose(np.linalg.inv(np.eye(3) - B) @ C, D, atol=1e-8 * max(1, np.abs(D).max()))


def test_env_rng_is_counter_based():
    a = env_rng(5, 1, 0).standard_normal(3)
    b = env_rng(5, 1, 1).standard_normal(3)
    assert not np.allclose(a, b)
