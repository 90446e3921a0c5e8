"""The quantitative acceptance checks, each a named recipe on the reference model.

Every check returns a ``CheckResult``; the test suite and the CLI both call these.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import perturbation_inverse_bound, rio_moment_check
from .estimator import empirical_risk
from .harness import ExperimentConfig, run_experiment
from .population import (WeightVector, combination_coefficients, minimizer, objective,
                         objective_gradient, worst_risk)
from .sequential import (ArrivalSchedule, StoppingConfig, _inverse_gram, conditional_variance,
                         gaussian_oracle, stopping_times, truncate, variance_bound)
from .simulation import Simulator, reference_config, replicate_seed


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        extra = ", ".join(f"{k}={v}" for k, v in self.detail.items() if k != "rows")
        return f"{'PASS' if self.passed else 'FAIL'} [{self.number}] {self.name}: {extra}"


def _random_weights(rng, k):
    return WeightVector.normalized(rng.uniform(0.1, 1.0, k))


def check_decomposition(seed: int = 42, mc_n: int = 10 ** 6, mc_cases: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = reference_config()
    worst = 0.0
    for _ in range(100):
        w = _random_weights(rng, cfg.k)
        m = cfg.moments().with_weights(w)
        beta, tau = rng.normal(size=cfg.p), rng.uniform(-0.5, 10)
        lhs, rhs = worst_risk(m, w, tau, beta)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    # Monte Carlo side: empirical per-environment risks against the population lhs
    sim = Simulator(cfg)
    data = sim.data([mc_n] * (cfg.k + 1), seed)
    zmax = 0.0
    for _ in range(mc_cases):
        w = _random_weights(rng, cfg.k)
        beta, tau = rng.normal(size=cfg.p), rng.uniform(-0.5, 5)
        lhs, _ = worst_risk(cfg.moments(), w, tau, beta)
        er = empirical_risk(data, beta, w)
        coef = np.concatenate([[-tau], (1 + tau) * w.sq])
        est = float(coef @ er.per_env)
        var = sum(cf ** 2 * np.var((d.Y - d.X @ beta) ** 2, ddof=1) / d.n
                  for cf, d in zip(coef, data))
        zmax = max(zmax, abs(est - lhs) / math.sqrt(var))
    return CheckResult(1, "decomposition identity", worst <= 1e-10 and zmax <= 3,
                       {"max_rel_err": f"{worst:.2e}", "mc_max_z": f"{zmax:.2f}"})


def check_closed_form(seed: int = 42) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = reference_config()
    m = cfg.moments()
    ok, worst = True, 0.0
    for g in (0.0, 0.5, 1.0, 5.0):
        b = minimizer(m, g)
        _, Z, _ = m.combined(g)
        h = 1e-6
        fd = np.array([(objective(m, g, b + h * e) - objective(m, g, b - h * e)) / (2 * h)
                       for e in np.eye(cfg.p)])
        tol = 1e-6 * (1 + np.linalg.norm(Z))
        worst = max(worst, np.abs(fd).max() / tol)
        ok &= np.abs(fd).max() <= tol and np.abs(objective_gradient(m, g, b)).max() <= tol
        f0 = objective(m, g, b)
        ok &= all(objective(m, g, b + rng.normal(scale=0.1, size=cfg.p)) >= f0 for _ in range(100))
    return CheckResult(2, "closed form vs optimizer", bool(ok), {"max_grad_over_tol": f"{worst:.2e}"})


def check_consistency(seed: int = 42, seeds: int = 200, threads: int = 1) -> CheckResult:
    rep = run_experiment(ExperimentConfig("consistency", seed=seed, gammas=(1.0,), seeds=seeds,
                                          n_grid=(500, 2000, 8000, 32000), threads=threads))
    last = rep.rows[-1]
    return CheckResult(3, "consistency rate", rep.passed,
                       {"slope": f"{last['slope']:.3f}", "rel_err_32000": f"{last['mean_rel_error']:.4f}"})


def _dominance(number, name, theorem, seed, seeds, threads):
    rep = run_experiment(ExperimentConfig(
        "bound-check", seed=seed, gammas=(1.0,), seeds=seeds, n_grid=(10 ** 10, 10 ** 12, 10 ** 14),
        threads=threads, params={"theorem": theorem, "c_grid": (0.1, 0.3, 1.0), "delta": 0.9,
                                 "alpha": 0.1}))
    checked = [r for r in rep.rows if r["checked"]]
    viol = sum(not r["dominates"] for r in checked)
    return CheckResult(number, name, rep.passed,
                       {"applicable_cells": len(checked), "cells": len(rep.rows), "violations": viol,
                        "min_rhs": f"{min(r['rhs'] for r in rep.rows):.3g}", "rows": rep.rows})


def check_concentration(seed: int = 42, seeds: int = 2000, threads: int = 1) -> CheckResult:
    return _dominance(4, "concentration dominance", "1a", seed, seeds, threads)


def check_risk_concentration(seed: int = 42, seeds: int = 2000, threads: int = 1) -> CheckResult:
    return _dominance(5, "risk concentration dominance", "2", seed, seeds, threads)


def check_perturbation(seed: int = 42) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok_gated = ok_flag = True
    for _ in range(1000):
        p = int(rng.integers(1, 6))
        A = rng.normal(size=(p, p))
        C1 = A @ A.T + rng.uniform(0.05, 2) * np.eye(p)
        E = rng.normal(size=(p, p))
        E /= np.linalg.norm(E, 2)
        radius = 1 / np.linalg.norm(np.linalg.inv(C1), 2)
        # gated pair: inside the ball; ungated: on or outside it
        C2 = C1 + rng.uniform(0, 0.999) * radius * E
        app, bound, actual = perturbation_inverse_bound(C1, C2)
        ok_gated &= app and actual <= bound * (1 + 1e-12) + 1e-12
        C3 = C1 + rng.uniform(1.0, 3.0) * radius * E
        ok_flag &= not perturbation_inverse_bound(C1, C3)[0]
    return CheckResult(6, "perturbation lemma", bool(ok_gated and ok_flag),
                       {"gated_hold": bool(ok_gated), "no_false_applicable": bool(ok_flag)})


def _stopped_design(cfg, gamma, delta, seed, step=50, length=40):
    sim = Simulator(cfg)
    conf = StoppingConfig.from_moments(cfg.moments(), gamma, delta)
    sched = ArrivalSchedule.linear(step, length, cfg.k)
    data = sim.data([step * length] * (cfg.k + 1), seed)
    res = stopping_times(sched, data, conf, cfg.w)
    if not res.times:
        return None, conf, None
    return truncate(data, sched.counts[res.times[0] - 1]), conf, res.times[0]


def check_conditional_variance(seed: int = 42, resamples: int = 10 ** 4, runs: int = 20,
                               gamma: float = 1.0) -> CheckResult:
    cfg = reference_config()
    oracle = gaussian_oracle([np.zeros(cfg.p + 1)] * (cfg.k + 1), cfg.second_moments())
    rng = np.random.default_rng(seed)
    worst_rel, all_hold, used = 0.0, True, 0
    for r in range(runs):
        data, conf, tau = _stopped_design(cfg, gamma, 0.5, replicate_seed(seed, r))
        if data is None:
            continue
        used += 1
        rep = conditional_variance(data, gamma, cfg.w, oracle, m=1, tau=tau, config=conf)
        _, H = _inverse_gram(data, gamma, cfg.w)
        a = combination_coefficients(cfg.w, gamma)
        # beta_hat = H sum_i a_i X_i^T Y_i / n_i is linear in Y given X
        betas = np.zeros((resamples, cfg.p))
        for ai, d in zip(a, data):
            mu = oracle.mean(d.env_index, d.X)
            sd = np.sqrt(oracle.var(d.env_index, d.X))
            Y = mu + sd * rng.standard_normal((resamples, d.n))
            betas += ai / d.n * (Y @ d.X) @ H.T
        mc = float(np.trace(np.cov(betas, rowvar=False)))
        worst_rel = max(worst_rel, abs(mc - rep.total) / rep.total)
        all_hold &= variance_bound(rep, data, conf, oracle)[2]
    passed = used > 0 and worst_rel <= 0.05 and all_hold
    return CheckResult(7, "conditional variance exactness", bool(passed),
                       {"runs": used, "max_rel_err": f"{worst_rel:.4f}", "bound_holds_all": bool(all_hold)})


def check_covariance_determinant(seed: int = 42, runs: int = 500, gamma: float = 1.0) -> CheckResult:
    cfg = reference_config()
    oracle = gaussian_oracle([np.zeros(cfg.p + 1)] * (cfg.k + 1), cfg.second_moments())
    worst, had_ok, used = 0.0, True, 0
    for r in range(runs):
        data, conf, tau = _stopped_design(cfg, gamma, 0.5, replicate_seed(seed, r), step=25, length=200)
        if data is None:
            continue
        used += 1
        rep = conditional_variance(data, gamma, cfg.w, oracle, m=1, tau=tau)
        worst = max(worst, abs(np.trace(rep.covariance) - rep.total) / rep.total)
        had_ok &= rep.abs_det <= rep.hadamard_bound
    passed = used == runs and worst <= 1e-10 and had_ok
    return CheckResult(8, "covariance determinant", bool(passed),
                       {"runs": used, "trace_rel_err": f"{worst:.1e}", "hadamard_all": bool(had_ok)})


def check_qvariance(seed: int = 42, seeds: int = 2000, threads: int = 1) -> CheckResult:
    rep = run_experiment(ExperimentConfig("qvariance", seed=seed, gammas=(1.0,), seeds=seeds,
                                          n_grid=(1000, 4000, 16000), threads=threads,
                                          params={"q": 2.0, "C": 2.0, "zeta": 40.0,
                                                  "zeta_prime": 40.0, "alpha": 0.2}))
    return CheckResult(9, "q-variance rate", rep.passed,
                       {"slope": f"{rep.rows[0]['slope']:.3f}",
                        "applicable_n": sum(r["applicable"] for r in rep.rows),
                        "log_N": f"{rep.rows[0]['log_N']:.1f}"})


def check_rio(seed: int = 42, draws: int = 200_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok, cases = True, []
    for law in ("uniform", "exponential"):
        for a in (2, 4):
            for n in (1, 16, 64):
                lhs, rhs, holds = rio_moment_check(law, n, a, draws, rng)
                ok &= holds
                cases.append(holds)
    return CheckResult(10, "Rio moment inequality", bool(ok), {"cases_holding": f"{sum(cases)}/{len(cases)}"})


def check_determinism(seed: int = 7, out_root=None) -> CheckResult:
    import tempfile
    from pathlib import Path
    same = True
    with tempfile.TemporaryDirectory(dir=out_root) as tmp:
        for kind, params in (("consistency", {}), ("qvariance", {"zeta": 40.0, "zeta_prime": 40.0}),
                             ("bound-check", {"alpha": 0.1}), ("sequential", {})):
            outs = []
            for rep_i, thr in enumerate((1, 3)):
                d = Path(tmp) / f"{kind}_{rep_i}"
                run_experiment(ExperimentConfig(kind, seed=seed, seeds=120 if kind != "sequential" else 3,
                                                n_grid=(10 ** 10, 10 ** 12) if kind == "bound-check" else (500, 1000),
                                                params=params, out_dir=str(d), threads=thr))
                outs.append(((d / "report.json").read_bytes(), (d / "table.csv").read_bytes()))
            same &= outs[0] == outs[1]
    return CheckResult(11, "determinism", bool(same), {"byte_identical": bool(same)})


ALL_CHECKS = (check_decomposition, check_closed_form, check_consistency, check_concentration,
              check_risk_concentration, check_perturbation, check_conditional_variance,
              check_covariance_determinant, check_qvariance, check_rio, check_determinism)


def run_all(threads: int = 1, printer=print) -> list:
    out = []
    for fn in ALL_CHECKS:
        kw = {"threads": threads} if "threads" in fn.__code__.co_varnames else {}
        res = fn(**kw)
        printer(res.line())
        out.append(res)
    return out
