"""Root-n consistency: RMSE of beta_hat over a doubling grid of sample sizes.

Run: python3 demos/03_consistency_rate.py
"""
from worstrisk.harness import ExperimentConfig, run_experiment

rep = run_experiment(ExperimentConfig("consistency", seed=42, gammas=(0.0, 1.0), seeds=200,
                                      n_grid=(500, 2000, 8000, 32000)))
print(rep.to_csv())
for name, ok in rep.checks.items():
    print(f"{'PASS' if ok else 'FAIL'} {name}")
# a slope near -1/2 in log(RMSE) vs log(n) is the sqrt(n) rate
