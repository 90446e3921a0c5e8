"""Empirical Gram summaries and the plug-in worst-risk minimizer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyEnvironment, MissingEnvironment
from .population import MomentSet, as_weights, check_gamma, combination_coefficients
from .sem_model import SINGULAR_RTOL, EnvironmentData


@dataclass(frozen=True)
class GramSummary(MomentSet):
    """Empirical moments per environment, plus the sample counts ``n``."""
    n: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        n = np.asarray(self.n, dtype=np.int64).reshape(-1)
        if n.size != self.G.shape[0]:
            raise DimensionMismatch("one count per environment")
        object.__setattr__(self, "n", n)


def _column_means(P: np.ndarray, compensated: bool) -> np.ndarray:
    """Row-order independent column means.

    compensated=True uses correctly rounded fsum; otherwise the column is sorted
    before summing, which is also bit-stable under row permutations and vectorized.
    """
    n = P.shape[0]
    if compensated:
        return np.array([math.fsum(P[:, j]) for j in range(P.shape[1])]) / n
    return np.sort(P, axis=0).sum(axis=0) / n


def environment_moments(X: np.ndarray, Y: np.ndarray, compensated: bool = True):
    p = X.shape[1]
    iu = np.triu_indices(p)
    P = np.concatenate([X[:, iu[0]] * X[:, iu[1]], X * Y[:, None], (Y * Y)[:, None]], axis=1)
    m = _column_means(P, compensated)
    ng = iu[0].size
    G = np.zeros((p, p))
    G[iu] = m[:ng]
    G = G + np.triu(G, 1).T
    return G, m[ng:ng + p], m[-1]


def gram_summary(data, w, compensated: bool = True) -> GramSummary:
    w = as_weights(w)
    by_index = {d.env_index: d for d in data}
    k = w.k
    missing = [i for i in range(k + 1) if i not in by_index]
    if missing:
        raise MissingEnvironment(f"missing environments {missing}")
    if len(by_index) != k + 1 or len(data) != k + 1:
        raise DimensionMismatch(f"expected environments 0..{k}, got {sorted(by_index)}")
    ps = {by_index[i].p for i in range(k + 1)}
    if len(ps) != 1:
        raise DimensionMismatch("covariate dimension differs across environments")
    G, Z, y2, n = [], [], [], []
    for i in range(k + 1):
        d = by_index[i]
        if d.n < 1:
            raise EmptyEnvironment(f"environment {i} has no rows")
        g, z, yy = environment_moments(d.X, d.Y, compensated)
        G.append(g)
        Z.append(z)
        y2.append(yy)
        n.append(d.n)
    return GramSummary(np.stack(G), np.stack(Z), np.array(y2), w, "empirical", np.array(n))


@dataclass(frozen=True)
class EstimateResult:
    beta_hat: np.ndarray
    gram_invertible: bool
    gram_condition: float
    risk_hat: float
    used_pseudo_inverse: bool
    gamma: float = 0.0


def _solve_gram(M, b, tolerance):
    s = np.linalg.svd(M, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    ok = bool(s[0] > 0 and s[-1] >= tolerance * s[0])
    if ok:
        return np.linalg.solve(M, b), True, cond
    return np.linalg.pinv(M, rcond=tolerance) @ b, False, cond


def plug_in_estimate(summary: MomentSet, gamma: float, tolerance: float = SINGULAR_RTOL) -> EstimateResult:
    """beta_hat = (G_+ + gamma G_delta)^{-1}_g (Z_+ + gamma Z_delta).

    The generalized inverse is the ordinary inverse when the smallest singular value
    is at least ``tolerance`` times the largest and Moore-Penrose otherwise.
    """
    gamma = check_gamma(gamma)
    G, Z, y2 = summary.combined(gamma)
    beta, ok, cond = _solve_gram(G, Z, tolerance)
    risk = float(y2 - 2 * beta @ Z + beta @ G @ beta)
    return EstimateResult(beta, ok, cond, risk, not ok, gamma)


@dataclass(frozen=True)
class EmpiricalRisk:
    per_env: np.ndarray
    plus: float | None
    delta: float | None
    total: float | None = None


def empirical_risk(data, beta, w, gamma: float | None = None) -> EmpiricalRisk:
    """Mean squared residuals per environment and their weighted combinations.

    R_+ = R_0 + sum w_i^2 R_i and R_delta = sum w_i^2 R_i - R_0, mirroring the
    population definitions. With w=None only the per-environment risks are returned.
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    data = sorted(data, key=lambda d: d.env_index)
    R = []
    for d in data:
        if d.p != beta.size:
            raise DimensionMismatch(f"beta has length {beta.size}, data has p={d.p}")
        r = d.Y - d.X @ beta
        R.append(math.fsum(r * r) / d.n)
    R = np.array(R)
    if w is None:
        return EmpiricalRisk(R, None, None)
    w = as_weights(w)
    if w.k != R.size - 1:
        raise DimensionMismatch(f"{R.size} environments but {w.k} weights")
    shifted = float(w.sq @ R[1:])
    plus, delta = R[0] + shifted, shifted - R[0]
    total = None if gamma is None else float(combination_coefficients(w, gamma) @ R)
    return EmpiricalRisk(R, plus, delta, total)


@dataclass(frozen=True)
class SummaryBatch:
    """Gram summaries for many independent replicates, stacked on a leading axis."""
    G: np.ndarray    # (S, k+1, p, p)
    Z: np.ndarray    # (S, k+1, p)
    y2: np.ndarray   # (S, k+1)
    n: np.ndarray    # (k+1,)
    w: object

    def __len__(self):
        return self.G.shape[0]

    def combined(self, gamma: float):
        a = combination_coefficients(self.w, gamma)
        return (np.einsum("i,sipq->spq", a, self.G), np.einsum("i,sip->sp", a, self.Z),
                self.y2 @ a)

    def beta_hat(self, gamma: float, tolerance: float = SINGULAR_RTOL) -> np.ndarray:
        G, Z, _ = self.combined(gamma)
        s = np.linalg.svd(G, compute_uv=False)
        ok = (s[:, 0] > 0) & (s[:, -1] >= tolerance * s[:, 0])
        out = np.empty_like(Z)
        if ok.any():
            out[ok] = np.linalg.solve(G[ok], Z[ok][..., None])[..., 0]
        for j in np.flatnonzero(~ok):
            out[j] = np.linalg.pinv(G[j], rcond=tolerance) @ Z[j]
        return out

    def risk_hat(self, gamma: float) -> np.ndarray:
        G, Z, y2 = self.combined(gamma)
        b = self.beta_hat(gamma)
        return y2 - 2 * np.einsum("sp,sp->s", b, Z) + np.einsum("sp,spq,sq->s", b, G, b)

    def __getitem__(self, j) -> GramSummary:
        return GramSummary(self.G[j], self.Z[j], self.y2[j], as_weights(self.w), "empirical", self.n)
