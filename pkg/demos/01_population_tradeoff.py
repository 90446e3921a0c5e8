"""Population view: how the worst-case parameter and its risk move with gamma.

Run: python3 demos/01_population_tradeoff.py
"""
import numpy as np

from worstrisk.population import minimal_risk, minimizer, risk_plus_delta, worst_risk
from worstrisk.simulation import reference_config

cfg = reference_config()
m = cfg.moments()
print(f"reference model: p={cfg.p}, k={cfg.k}, w={np.round(cfg.w.w, 4)}")

# gamma = 0 is least squares on the reference environment, larger gamma buys
# robustness against shifts along the pooled shift directions
for g in (0.0, 0.5, 1.0, 5.0, 50.0, np.inf):
    b = minimizer(m, g)
    # at gamma = inf only the shift part R_delta is minimized
    print(f"gamma={g:>5}: beta={np.array2string(b, precision=4)}  R={minimal_risk(m, g):.4f}")

# R_+ + gamma R_delta is twice the worst risk over shifts of strength tau = (gamma-1)/2
g = 5.0
tau = (g - 1) / 2
bg = minimizer(m, g)
plus, delta = risk_plus_delta(m, bg)
lhs, rhs = worst_risk(m, cfg.w, tau, bg)
print(f"\nat gamma={g}: R_plus={plus:.4f}, R_delta={delta:.4f}; "
      f"worst risk (tau={tau}) = {lhs:.4f} = {rhs:.4f}")

# the minimizer really is the worst-risk minimizer: perturbing it only hurts
rng = np.random.default_rng(0)
best = min(worst_risk(m, cfg.w, tau, bg + 0.05 * rng.normal(size=cfg.p))[0] for _ in range(200))
print(f"best of 200 random perturbations: {best:.4f} >= {lhs:.4f}")
