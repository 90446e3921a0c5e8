import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from worstrisk.errors import DimensionMismatch
from worstrisk.population import combination_coefficients
from worstrisk.sem_model import EnvironmentData
from worstrisk.sequential import (ArrivalSchedule, StoppingConfig, conditional_covariance,
                                  conditional_variance, constant_oracle, gaussian_oracle,
                                  prefix_grams, stopping_times, stopping_times_from_matrices,
                                  truncate, variance_bound, covariance_bound)
from worstrisk.simulation import Simulator, replicate_seed


def ref_oracle(ref):
    return gaussian_oracle([np.zeros(4)] * 3, ref.second_moments())


class TestSchedule:
    def test_nondecreasing(self):
        with pytest.raises(ValueError):
            ArrivalSchedule([[2, 2], [1, 3]])

    def test_linear(self):
        s = ArrivalSchedule.linear(10, 3, 2)
        np.testing.assert_array_equal(s.counts[:, 0], [10, 20, 30])
        assert s.counts.shape == (3, 3)


class TestStopping:
    def test_population_moments_stop_immediately(self, moments):
        conf = StoppingConfig.from_moments(moments, 1.0, 0.2, m_max=4)
        G, _, _ = moments.combined(1.0)
        res = stopping_times_from_matrices([G] * 6, conf)
        assert res.times == [1, 2, 3, 4] and not res.exhausted

    def test_tiny_delta_exhausts(self, ref, moments):
        conf = StoppingConfig.from_moments(moments, 1.0, 1e-9)
        data = Simulator(ref).data([500] * 3, 1)
        res = stopping_times(ArrivalSchedule.linear(10, 50, 2), data, conf, ref.w)
        assert res.times == [] and res.exhausted

    def test_prefix_grams_match_direct(self, rng):
        d = EnvironmentData(0, rng.normal(size=(30, 2)), rng.normal(size=30))
        got = prefix_grams(d, np.array([5, 17, 30]))
        for g, n in zip(got, (5, 17, 30)):
            np.testing.assert_allclose(g, d.X[:n].T @ d.X[:n] / n, rtol=1e-12)

    def test_schedule_longer_than_data(self, rng):
        d = EnvironmentData(0, rng.normal(size=(10, 2)), rng.normal(size=10))
        with pytest.raises(DimensionMismatch):
            prefix_grams(d, np.array([5, 11]))

    def test_eventual_containment(self, ref, moments):
        # after the first entry, the fraction of indices outside the ball falls towards 0 with l
        conf = StoppingConfig.from_moments(moments, 1.0, 0.5)
        sched = ArrivalSchedule.linear(10, 400, 2)
        a = combination_coefficients(ref.w, 1.0)
        windows = []
        for s in range(200):
            data = Simulator(ref).data([4000] * 3, replicate_seed(3, s))
            mats = sum(ai * prefix_grams(d, sched.counts[:, j]) for j, (ai, d) in enumerate(zip(a, data)))
            res = stopping_times_from_matrices(mats, conf)
            out = (res.distances >= conf.radius).astype(float)
            out[:res.times[0] - 1] = np.nan
            windows.append([np.nanmean(out[i:i + 100]) if np.any(~np.isnan(out[i:i + 100])) else np.nan
                            for i in range(0, 400, 100)])
        frac = np.nanmean(windows, axis=0)
        assert np.all(np.diff(frac) <= 0)
        assert frac[-1] < 0.01 * frac[0]


class TestConditionalVariance:
    def _design(self, ref, n=200, seed=2):
        return Simulator(ref).data([n] * 3, seed)

    def test_zero_oracle(self, ref):
        rep = conditional_variance(self._design(ref), 1.0, ref.w, constant_oracle(2, 0.0))
        assert rep.total == 0
        C, det, _ = conditional_covariance(self._design(ref), 1.0, ref.w, constant_oracle(2, 0.0))
        np.testing.assert_array_equal(C, 0)
        assert det == 0

    def test_homoskedastic_trace(self, ref):
        data = self._design(ref)
        sig2 = 0.7
        rep = conditional_variance(data, 1.0, ref.w, constant_oracle(2, sig2))
        a = combination_coefficients(ref.w, 1.0)
        G = sum(ai * d.X.T @ d.X / d.n for ai, d in zip(a, data))
        H = np.linalg.inv(G)
        want = sig2 * sum(ai ** 2 / d.n ** 2 * np.trace(H @ d.X.T @ d.X @ H.T) for ai, d in zip(a, data))
        np.testing.assert_allclose(rep.total, want, rtol=1e-12)

    def test_resampling_oracle(self, ref):
        data = self._design(ref, n=300, seed=5)
        oracle = ref_oracle(ref)
        rep = conditional_variance(data, 1.0, ref.w, oracle)
        a = combination_coefficients(ref.w, 1.0)
        G = sum(ai * d.X.T @ d.X / d.n for ai, d in zip(a, data))
        H = np.linalg.inv(G)
        rng = np.random.default_rng(42)
        betas = 0
        for ai, d in zip(a, data):
            Y = oracle.mean(d.env_index, d.X) + np.sqrt(oracle.var(d.env_index, d.X)) * rng.standard_normal((10 ** 4, d.n))
            betas = betas + ai / d.n * (Y @ d.X) @ H.T
        mc = np.trace(np.cov(betas, rowvar=False))
        assert abs(mc - rep.total) / rep.total < 0.05

    def test_bound_zero_oracle(self, ref, moments):
        data = self._design(ref)
        conf = StoppingConfig.from_moments(moments, 1.0, 0.5)
        rep = conditional_variance(data, 1.0, ref.w, constant_oracle(2, 0.0))
        bound, Cm, holds = variance_bound(rep, data, conf, constant_oracle(2, 0.0))
        assert holds and bound == 0

    def test_bound_halves_when_data_doubles(self, ref, moments):
        data = self._design(ref)
        dd = [EnvironmentData(d.env_index, np.vstack([d.X, d.X]), np.concatenate([d.Y, d.Y])) for d in data]
        conf = StoppingConfig.from_moments(moments, 1.0, 0.5)
        o = ref_oracle(ref)
        b1 = variance_bound(conditional_variance(data, 1.0, ref.w, o), data, conf, o)[0]
        b2 = variance_bound(conditional_variance(dd, 1.0, ref.w, o), dd, conf, o)[0]
        np.testing.assert_allclose(b2, b1 / 2, rtol=1e-12)

    def test_bound_holds_per_run(self, ref, moments):
        conf = StoppingConfig.from_moments(moments, 1.0, 0.5)
        o = ref_oracle(ref)
        for s in range(20):
            data = Simulator(ref).data([2000] * 3, replicate_seed(11, s))
            res = stopping_times(ArrivalSchedule.linear(50, 40, 2), data, conf, ref.w)
            cut = truncate(data, ArrivalSchedule.linear(50, 40, 2).counts[res.times[0] - 1])
            rep = conditional_variance(cut, 1.0, ref.w, o, config=conf)
            assert variance_bound(rep, cut, conf, o)[2]


class TestCovariance:
    def test_p1_equals_total(self, rng):
        data = [EnvironmentData(i, rng.normal(size=(40, 1)), rng.normal(size=40)) for i in range(3)]
        o = constant_oracle(2, 1.3)
        rep = conditional_variance(data, 0.5, [np.sqrt(0.5)] * 2, o)
        C, det, had = conditional_covariance(data, 0.5, [np.sqrt(0.5)] * 2, o)
        np.testing.assert_allclose(C[0, 0], rep.total, rtol=1e-12)
        np.testing.assert_allclose(det, rep.total, rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_trace_and_hadamard(self, seed):
        rng = np.random.default_rng(seed)
        data = [EnvironmentData(i, rng.normal(size=(25, 3)), rng.normal(size=25)) for i in range(3)]
        o = constant_oracle(2, float(rng.uniform(0.1, 3)))
        rep = conditional_variance(data, float(rng.uniform(0, 5)), [np.sqrt(0.5)] * 2, o)
        np.testing.assert_allclose(np.trace(rep.covariance), rep.total, rtol=1e-10)
        assert rep.abs_det <= rep.hadamard_bound * (1 + 1e-12)

    def test_covariance_bound_reported(self, ref, moments):
        data = Simulator(ref).data([400] * 3, 3)
        conf = StoppingConfig.from_moments(moments, 1.0, 0.5)
        rep = conditional_variance(data, 1.0, ref.w, ref_oracle(ref), config=conf)
        b, holds = covariance_bound(rep)
        assert b > 0 and holds
