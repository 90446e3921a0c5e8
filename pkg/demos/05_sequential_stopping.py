"""Sequential design: stop once the pooled Gram matrix is close enough to its limit,
then compute the exact conditional variance of beta_hat given the covariates.

Run: python3 demos/05_sequential_stopping.py
"""
import numpy as np

from worstrisk.sequential import (ArrivalSchedule, StoppingConfig, conditional_variance,
                                  gaussian_oracle, stopping_times, truncate, variance_bound)
from worstrisk.simulation import Simulator, reference_config

cfg = reference_config()
gamma = 1.0
conf = StoppingConfig.from_moments(cfg.moments(), gamma, delta=0.5)
sched = ArrivalSchedule.linear(step=50, length=40, k=cfg.k)
data = Simulator(cfg).data([50 * 40] * 3, seed=3)

res = stopping_times(sched, data, conf, cfg.w)
print(f"stopping radius {conf.radius:.4f}; stopping indices {res.times[:5]} exhausted={res.exhausted}")

tau = res.times[0]
stopped = truncate(data, sched.counts[tau - 1])
oracle = gaussian_oracle([np.zeros(cfg.p + 1)] * 3, cfg.second_moments())
rep = conditional_variance(stopped, gamma, cfg.w, oracle, m=1, tau=tau, config=conf)
value, bound, holds = variance_bound(rep, stopped, conf, oracle)
print(f"n at stop: {[d.n for d in stopped]}")
print(f"E[|beta_hat - E beta_hat|^2 | X] = {rep.total:.3e}; bound {bound:.3e}; holds={holds}")
print(f"|det Cov| = {rep.abs_det:.3e} <= Hadamard {rep.hadamard_bound:.3e}")
