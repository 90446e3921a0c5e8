"""Two building blocks: the matrix inverse perturbation bound and the Rio moment inequality.

Run: python3 demos/06_moment_tools.py
"""
import numpy as np

from worstrisk.bounds import perturbation_inverse_bound, rio_moment_check

rng = np.random.default_rng(42)
A = rng.normal(size=(3, 3))
C1 = A @ A.T + np.eye(3)
for eps in (0.01, 0.1, 0.5):
    E = rng.normal(size=(3, 3))
    C2 = C1 + eps * E / np.linalg.norm(E, 2)
    app, bound, actual = perturbation_inverse_bound(C1, C2)
    print(f"eps={eps}: applicable={app}, |C1^-1 - C2^-1| = {actual:.4f} <= {bound:.4f}")

for law in ("uniform", "exponential", "gaussian"):
    lhs, rhs, ok = rio_moment_check(law, 64, 4, 200_000)
    print(f"{law:>12}: E|S_n|^4 = {lhs:.4g} <= {rhs:.4g} : {ok}")
