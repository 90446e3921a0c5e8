import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from worstrisk.bounds import (BoundInputs, BoundedTail, EmpiricalTail, GaussianTail,
                              PolynomialTail, WeakTail, concentration_rhs,
                              conditional_qvariance_mc, perturbation_inverse_bound,
                              qvariance_bound, remark_zeta_threshold, rio_moment_check,
                              risk_concentration_rhs)
from worstrisk.errors import (EventNeverOccurred, HypothesisViolated, SingularC1,
                              UnsupportedTailKind)
from worstrisk.estimator import SummaryBatch, gram_summary
from worstrisk.harness import mc_oracle_probability, parameter_event
from worstrisk.population import WeightVector, minimizer
from worstrisk.sem_model import EnvironmentSpec, GaussianLaw, NoiseSpec, TransferMatrixModel, zero_law
from worstrisk.simulation import ModelConfig, Simulator
from worstrisk.tails import gaussian_abs_moment, gaussian_weak_moment


def small_inputs(**kw):
    d = dict(c=0.5, delta=0.5, alpha=0.1, gamma=1.0, p=2, k=1, n=[1e6, 1e6], inv_norm=1.0,
             norm=2.0, z_norm=1.5, beta_norm=1.0)
    d.update(kw)
    return BoundInputs(**d)


class TestPerturbation:
    def test_equal(self):
        C = np.array([[2.0, 0.3], [0.3, 1.0]])
        app, bound, actual = perturbation_inverse_bound(C, C)
        assert app
        np.testing.assert_allclose([bound, actual], 0.0, atol=1e-14)

    def test_scalar(self):
        app, bound, actual = perturbation_inverse_bound(np.eye(2), 1.1 * np.eye(2))
        assert app
        np.testing.assert_allclose(bound, 0.1 / 0.9)
        np.testing.assert_allclose(actual, 1 - 1 / 1.1)

    def test_singular(self):
        with pytest.raises(SingularC1):
            perturbation_inverse_bound(np.zeros((2, 2)), np.eye(2))

    def test_gate(self):
        app, bound, _ = perturbation_inverse_bound(np.eye(2), 2.5 * np.eye(2))
        assert not app and bound == math.inf

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0.0, 0.999))
    def test_property(self, seed, frac):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(1, 6))
        A = rng.normal(size=(p, p))
        C1 = A @ A.T + 0.1 * np.eye(p)
        E = rng.normal(size=(p, p))
        E /= np.linalg.norm(E, 2)
        C2 = C1 + frac / np.linalg.norm(np.linalg.inv(C1), 2) * E
        app, bound, actual = perturbation_inverse_bound(C1, C2)
        assert app
        assert actual <= bound * (1 + 1e-9) + 1e-12


class TestGaussianTail:
    def setup_method(self):
        self.S = np.array([[2.0, 0.8, -0.3], [0.8, 1.0, 0.2], [-0.3, 0.2, 0.5]])
        self.t = GaussianTail([self.S, 1.5 * self.S])
        rng = np.random.default_rng(42)
        self.draw = rng.multivariate_normal(np.zeros(3), self.S, size=400_000)

    def test_box_tail_is_upper_bound(self):
        for x in (0.5, 1.5, 3.0):
            mc = np.mean(np.abs(self.draw).max(axis=1) > x)
            assert self.t.box_tail(0, x) >= mc - 3 * math.sqrt(mc * (1 - mc) / len(self.draw))

    def test_h_is_upper_bound(self):
        X = self.draw[:, 1:]
        for R in (0.5, 1.0, 2.0):
            out = np.abs(X).max(axis=1) > R
            mc = np.sum(np.sqrt(np.mean(X ** 2 * out[:, None], axis=0))) ** 2
            assert self.t.h(0, R) >= 0.98 * mc

    def test_g_is_upper_bound(self):
        S = self.draw
        for R in (0.5, 1.5, 3.0):
            out = np.abs(S).max(axis=1) > R
            mc = np.sum(np.mean(np.abs(S[:, 1:] * S[:, :1]) * out[:, None], axis=0))
            assert self.t.g(0, R) >= 0.98 * mc

    def test_per_coordinate_exact(self):
        S = self.draw
        for R in (0.3, 1.0, 2.5):
            z = np.abs(S[:, 1] * S[:, 0])
            mc, se = np.mean(z * (z > R)), np.std(z * (z > R)) / math.sqrt(len(z))
            assert abs(self.t.g_coord(0, 1, R) - mc) <= 4 * se
            x2 = S[:, 2] ** 2
            mc, se = np.mean(x2 * (x2 > R)), np.std(x2 * (x2 > R)) / math.sqrt(len(x2))
            assert abs(self.t.h_coord(0, 2, R) - mc) <= 4 * se
            y = S[:, 0]
            v = y ** 2 * (np.abs(y) > R)
            assert abs(self.t.f(0, R) - v.mean()) <= 4 * v.std() / math.sqrt(len(v))

    def test_abs_moment_closed_form(self):
        for s, mu, sd in ((2, 0, 1.3), (3.5, 0.7, 0.9), (10, -1, 2)):
            want = integrate.quad(lambda x: abs(x) ** s * stats.norm.pdf(x, mu, sd), -np.inf, np.inf)[0]
            np.testing.assert_allclose(gaussian_abs_moment(s, mu, sd), want, rtol=1e-7)

    def test_weak_moment_below_strong(self):
        for s in (3, 6, 12):
            w = gaussian_weak_moment(s, 1.4)
            assert 0 < w <= gaussian_abs_moment(s, 0, 1.4)
            # the sup is attained: value at a grid of t never exceeds it
            t = np.linspace(0.01, 20, 2000)
            assert np.max(t ** s * 2 * stats.norm.sf(t / 1.4)) <= w * (1 + 1e-6)

    def test_cross_moment(self):
        S = self.draw
        mc = np.mean(np.abs(S[:, 1] * S[:, 0]) ** 3)
        got = GaussianTail([self.S]).cross_moment(3)
        assert got >= mc * 0.97     # max over l of E|X_l Y|^3
        assert got <= 1.05 * max(np.mean(np.abs(S[:, l] * S[:, 0]) ** 3) for l in (1, 2))


class TestConcentration:
    def test_bounded_support_tail_vanishes(self):
        inp = small_inputs(n=[1e6, 1e6], alpha=0.1)
        t = BoundedTail(2, 1, radius=1.0)             # radius < n^alpha = 3.98
        r = concentration_rhs(inp, t)
        assert r.constants["log_tail_term"] == -math.inf
        rr = r.constants["r"]
        np.testing.assert_allclose(r.rhs, (4 * 2 + 2) * 2 * math.exp(-rr ** 2 * 1e6 ** 0.6), rtol=1e-12)

    def test_c_saturates(self):
        t = BoundedTail(2, 1, radius=1.0)
        a = concentration_rhs(small_inputs(c=1e6), t)
        b = concentration_rhs(small_inputs(c=1e9), t)
        assert a.log_rhs == b.log_rhs

    def test_monotone_in_n(self, moments, ref):
        tail = ref.gaussian_tail()
        vals = [concentration_rhs(BoundInputs.from_moments(moments, 1.0, 0.3, 0.9, 0.1, [n] * 3), tail)
                for n in (1e10, 1e11, 1e12, 1e13)]
        assert all(v.applicable for v in vals)
        assert all(b.log_rhs <= a.log_rhs for a, b in zip(vals, vals[1:]))

    def test_below_threshold_flagged(self, moments, ref):
        r = concentration_rhs(BoundInputs.from_moments(moments, 1.0, 0.3, 0.9, 0.1, [1000] * 3),
                              ref.gaussian_tail())
        assert not r.applicable and np.all(r.thresholds > 1000)

    def test_E_positive_and_permutation_invariant(self, ref, rng):
        data = Simulator(ref).data([500] * 3, 2)
        perm = [type(d)(d.env_index, d.X[p], d.Y[p]) for d, p in
                zip(data, (rng.permutation(500) for _ in range(3)))]
        outs = []
        for dd in (data, perm):
            m = gram_summary(dd, ref.w)
            inp = BoundInputs.from_moments(m, 1.0, 0.3, 0.9, 0.1, [1e12] * 3, zeta=10.0)
            outs.append((concentration_rhs(inp, ref.gaussian_tail()).constants["E"],
                         concentration_rhs(inp, ref.gaussian_tail(), "weak-Lzeta").constants["log_V"]))
        assert outs[0] == outs[1]
        assert outs[0][0] > 0 and math.isfinite(outs[0][1])

    def test_variant_mismatches(self, moments, ref):
        inp = BoundInputs.from_moments(moments, 1.0, 0.3, 0.9, 0.1, [1e12] * 3, zeta=10.0)
        with pytest.raises(UnsupportedTailKind):
            concentration_rhs(inp, WeakTail(3, 2, 10.0, 5.0), "moment-threshold")
        with pytest.raises(UnsupportedTailKind):
            concentration_rhs(inp, BoundedTail(3, 2, 5.0), "gaussian-corollary")
        with pytest.raises(UnsupportedTailKind):
            concentration_rhs(inp.replace(zeta=4.0), ref.gaussian_tail(), "finite-moment-corollary")

    def test_weak_variant_runs_on_weak_tail(self):
        r = concentration_rhs(small_inputs(zeta=8.0), WeakTail(2, 1, 8.0, 3.0), "weak-Lzeta")
        assert r.applicable and r.log_rhs > 0
        assert r.constants["K_minus"] <= r.constants["K_plus"]

    def test_corollaries(self, moments, ref):
        inp = BoundInputs.from_moments(moments, 1.0, 0.3, 0.9, 0.2, [1e12] * 3, zeta=10.0)
        g = concentration_rhs(inp, ref.gaussian_tail(), "gaussian-corollary")
        m = concentration_rhs(inp, ref.gaussian_tail(), "finite-moment-corollary")
        assert g.constants["log_exp_term"] == m.constants["log_exp_term"]
        assert math.isfinite(g.log_rhs) and math.isfinite(m.log_rhs)

    def test_empirical_tail(self, ref):
        S = [np.column_stack([d.Y, d.X]) for d in Simulator(ref).data([20000] * 3, 9)]
        t = EmpiricalTail(S)
        g = ref.gaussian_tail()
        assert abs(t.box_tail(0, 2.0) - g.box_tail(0, 2.0)) < 0.1
        assert t.h(0, 50.0) == 0


def two_env_model():
    B = np.array([[0, 0, 0], [0.5, 0, 0], [0.2, 0.4, 0]])
    noise = NoiseSpec(GaussianLaw(np.zeros(3), np.diag([1.0, 0.5, 0.5])))
    envs = (EnvironmentSpec(0, zero_law(3)), EnvironmentSpec(1, GaussianLaw(np.zeros(3), np.diag([0.3, 1.0, 1.0]))))
    return ModelConfig(TransferMatrixModel.deterministic(B), noise, envs, WeightVector([1.0]), "p2k1")


class TestDominance:
    def test_p2_k1_grid(self):
        cfg = two_env_model()
        m, tail, sim = cfg.moments(), cfg.gaussian_tail(), Simulator(cfg)
        checked = 0
        for c in (0.05, 0.2, 1.0):
            for n in (10 ** 9, 10 ** 11, 10 ** 13):
                rep = concentration_rhs(BoundInputs.from_moments(m, 1.0, c, 0.9, 0.1, [n, n]), tail)
                if not (rep.applicable and rep.rhs < 1):
                    continue
                checked += 1
                f, se = mc_oracle_probability(parameter_event(minimizer(m, 1.0), 1.0, c), sim.sampler(),
                                              [n, n], 2000, seed=c * 1000 + n % 97)
                assert f <= rep.rhs + 3 * se
        assert checked > 0

    def test_risk_zero_beta_convention(self):
        inp = small_inputs(beta_norm=0.0)
        r = risk_concentration_rhs(inp, BoundedTail(2, 1, 1.0))
        assert r.constants["inner"] == r.constants["E"]
        assert np.all(np.isfinite(r.thresholds))

    def test_risk_bounded_exponential_only(self):
        r = risk_concentration_rhs(small_inputs(c=100.0), BoundedTail(2, 1, 1.0))
        assert r.constants["log_tail_term"] == -math.inf
        np.testing.assert_allclose(r.log_rhs, r.constants["log_exp_term"])


class TestQVariance:
    def test_exponent_saturates(self, moments, ref):
        z = remark_zeta_threshold(0.2, 2.0) * 1.01
        inp = BoundInputs.from_moments(moments, 1.0, 1.0, 0.5, 0.2, [16000] * 3, q=2.0, zeta=z,
                                       zeta_prime=z, C=2.0)
        assert qvariance_bound(inp, ref.gaussian_tail()).constants["exponent"] == 1.0
        below = inp.replace(zeta=8.0, zeta_prime=8.0)
        assert qvariance_bound(below, ref.gaussian_tail()).constants["exponent"] < 1.0

    def test_threshold_is_exact_crossing(self):
        # at the threshold (alpha zeta - 1)(zeta - 2q)/zeta = q/2
        for a, q in ((0.2, 2.0), (0.1, 1.0), (0.24, 3.0)):
            z = remark_zeta_threshold(a, q)
            np.testing.assert_allclose((a * z - 1) * (z - 2 * q) / z, q / 2, rtol=1e-10)

    def test_doubling_cross_moment(self):
        t1 = PolynomialTail(3, 2, 20.0, M=2.0, M_tilde=1e6)
        t2 = PolynomialTail(3, 2, 20.0, M=2.0, M_tilde=2e6)
        inp = small_inputs(p=3, k=2, n=[1e4] * 3, alpha=0.2, q=2.0, zeta=20.0, zeta_prime=20.0, C=10.0)
        d1 = qvariance_bound(inp, t1).constants["log_D"]
        d2 = qvariance_bound(inp, t2).constants["log_D"]
        np.testing.assert_allclose(d2 - d1, (1 + 4 / 22) * math.log(2), rtol=1e-12)

    def test_hypothesis(self, moments, ref):
        inp = BoundInputs.from_moments(moments, 1.0, 1.0, 0.5, 0.2, [1000] * 3, zeta=40.0,
                                       zeta_prime=40.0, C=1.0)
        with pytest.raises(HypothesisViolated):
            qvariance_bound(inp, ref.gaussian_tail())

    def test_degenerate_is_zero(self):
        G = np.broadcast_to(np.eye(2), (50, 2, 2, 2)).copy()
        Z = np.ones((50, 2, 2))
        b = SummaryBatch(G, Z, np.ones((50, 2)), np.array([10, 10]), WeightVector([1.0]))
        v, pa = conditional_qvariance_mc(lambda n, s, c: b, 1.0, 10.0, 2.0, [10, 10], 50)
        assert v == 0 and pa == 1

    def test_never(self, ref):
        with pytest.raises(EventNeverOccurred):
            conditional_qvariance_mc(Simulator(ref).sampler(), 1.0, 1e-3, 2.0, [500] * 3, 100)

    def test_q2_matches_conditional_variance(self, ref):
        sim = Simulator(ref)
        v, pa = conditional_qvariance_mc(sim.sampler(), 1.0, 2.0, 2.0, [2000] * 3, 3000, seed=4)
        b = sim.batch([2000] * 3, 4, 3000)
        G, _, _ = b.combined(1.0)
        A = 1 / np.linalg.svd(G, compute_uv=False)[:, -1] <= 2.0
        beta = b.beta_hat(1.0)[A]
        two_pass = np.sum((beta - beta.mean(axis=0)) ** 2) / len(beta)
        assert pa == 1.0
        assert abs(v - two_pass) / two_pass < 0.05


class TestRio:
    @pytest.mark.parametrize("a", [2, 3, 4])
    def test_n1(self, a):
        lhs, rhs, holds = rio_moment_check("uniform", 1, a, 10000)
        np.testing.assert_allclose(rhs, (a - 1) ** (a / 2) * lhs, rtol=1e-12)
        assert holds

    def test_a2_equality_in_mean(self):
        lhs, rhs, holds = rio_moment_check("exponential", 16, 2, 200_000)
        assert holds
        np.testing.assert_allclose(lhs, rhs, rtol=0.02)

    def test_uniform_64(self):
        assert rio_moment_check("uniform", 64, 4, 10 ** 6)[2]

    def test_bad_exponent(self):
        with pytest.raises(ValueError):
            rio_moment_check("uniform", 4, 1.5, 100)
