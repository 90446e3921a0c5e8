"""Arrival schedules, stopping times and conditional (co)variance diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import csv

import numpy as np

from .errors import DimensionMismatch, SingularGram
from .estimator import gram_summary
from .population import as_weights, combination_coefficients, MomentSet
from .sem_model import SINGULAR_RTOL, EnvironmentData


@dataclass(frozen=True)
class ArrivalSchedule:
    """Cumulative per-environment counts, one row per index l = 1, 2, ..."""
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] == 0:
            raise ValueError("schedule must be a nonempty (L, k+1) array")
        if np.any(c < 1):
            raise ValueError("schedule entries must be >= 1")
        if np.any(np.diff(c, axis=0) < 0):
            raise ValueError("schedule must be coordinate-wise nondecreasing")
        object.__setattr__(self, "counts", c)

    @classmethod
    def linear(cls, step: int, length: int, k: int):
        l = np.arange(1, length + 1)[:, None]
        return cls(np.repeat(step * l, k + 1, axis=1))

    @classmethod
    def from_csv(cls, path):
        """One row of cumulative counts n0,...,nk per index l; a header row is optional."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                row = [v.strip() for v in row if v.strip()]
                if not row:
                    continue
                try:
                    rows.append([int(float(v)) for v in row])
                except ValueError:
                    if rows:
                        raise ValueError(f"{path}: non-numeric schedule row {row}") from None
        if len({len(r) for r in rows}) > 1:
            raise ValueError(f"{path}: schedule rows differ in width")
        return cls(np.array(rows))

    def __len__(self):
        return self.counts.shape[0]


@dataclass(frozen=True)
class StoppingConfig:
    delta: float
    reference: np.ndarray
    gamma: float
    m_max: int = 1
    mode: str = "oracle"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie strictly inside (0, 1)")
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))

    @classmethod
    def from_moments(cls, moments: MomentSet, gamma: float, delta: float, m_max: int = 1,
                     mode: str = "oracle"):
        G, _, _ = moments.combined(gamma)
        return cls(delta, G, gamma, m_max, mode)

    @property
    def inverse_norm(self) -> float:
        return float(np.linalg.norm(np.linalg.inv(self.reference), 2))

    @property
    def radius(self) -> float:
        return self.delta * self.inverse_norm


@dataclass(frozen=True)
class StoppingResult:
    times: list
    exhausted: bool
    distances: np.ndarray = field(repr=False, default=None)


def prefix_grams(data: EnvironmentData, counts: np.ndarray) -> np.ndarray:
    """G_hat of the first n rows for every n in ``counts``."""
    X = data.X
    if counts.max() > data.n:
        raise DimensionMismatch(f"environment {data.env_index} has {data.n} rows, "
                                f"schedule needs {counts.max()}")
    outer = X[:, :, None] * X[:, None, :]
    cum = np.cumsum(outer, axis=0)
    return cum[counts - 1] / counts[:, None, None]


def stopping_times_from_matrices(matrices: Sequence[np.ndarray], config: StoppingConfig) -> StoppingResult:
    mats = np.asarray(matrices, dtype=float)
    dist = np.linalg.norm(mats - config.reference, ord=2, axis=(1, 2))
    hits = np.flatnonzero(dist < config.radius) + 1
    times = hits[: config.m_max].tolist()
    return StoppingResult(times, len(times) < config.m_max, dist)


def stopping_times(schedule: ArrivalSchedule, data_stream, config: StoppingConfig, w) -> StoppingResult:
    """tau_{delta,m}: the m-th schedule index l with
    ||(G_+ + gamma G_delta) - (G_hat_+(n_l) + gamma G_hat_delta(n_l))||_2 < delta ||(G_+ + gamma G_delta)^{-1}||_2.
    """
    a = combination_coefficients(w, config.gamma)
    data = sorted(data_stream, key=lambda d: d.env_index)
    if len(data) != schedule.counts.shape[1]:
        raise DimensionMismatch("schedule width must equal number of environments")
    combo = sum(ai * prefix_grams(d, schedule.counts[:, j]) for j, (ai, d) in enumerate(zip(a, data)))
    return stopping_times_from_matrices(combo, config)


def truncate(data_stream, counts) -> list:
    data = sorted(data_stream, key=lambda d: d.env_index)
    return [d.head(int(n)) for d, n in zip(data, counts)]


# ---------------------------------------------------------------- oracles

@dataclass(frozen=True)
class CondVarOracle:
    """Conditional mean/variance of Y given X per environment."""
    mean_fns: tuple
    var_fns: tuple
    sup_var: tuple

    def mean(self, i: int, X) -> np.ndarray:
        return np.asarray(self.mean_fns[i](np.atleast_2d(X)), dtype=float)

    def var(self, i: int, X) -> np.ndarray:
        v = np.broadcast_to(np.asarray(self.var_fns[i](np.atleast_2d(X)), dtype=float),
                            (np.atleast_2d(X).shape[0],))
        if np.any(v < 0):
            raise ValueError("conditional variance must be nonnegative")
        return v


def gaussian_oracle(means: Sequence, covs: Sequence) -> CondVarOracle:
    """Oracle for jointly Gaussian (Y, X) with given mean vectors and covariances."""
    mfs, vfs, sups = [], [], []
    for mu, S in zip(means, covs):
        mu, S = np.asarray(mu, float), np.asarray(S, float)
        coef = np.linalg.solve(S[1:, 1:], S[1:, 0])
        v = float(S[0, 0] - S[0, 1:] @ coef)
        mfs.append(lambda X, mu=mu, coef=coef: mu[0] + (X - mu[1:]) @ coef)
        vfs.append(lambda X, v=v: np.full(X.shape[0], v))
        sups.append(v)
    return CondVarOracle(tuple(mfs), tuple(vfs), tuple(sups))


def constant_oracle(k: int, variance: float = 0.0, mean: Callable | None = None) -> CondVarOracle:
    mf = mean or (lambda X: np.zeros(X.shape[0]))
    return CondVarOracle(tuple([mf] * (k + 1)),
                         tuple([lambda X: np.full(X.shape[0], variance)] * (k + 1)),
                         tuple([variance] * (k + 1)))


# ---------------------------------------------------------------- diagnostics

def variance_coefficients(w, gamma: float) -> np.ndarray:
    """Squared coefficient of X_i^T Y_i / n_i in Z_+ + gamma Z_delta."""
    return combination_coefficients(w, gamma) ** 2


@dataclass(frozen=True)
class ConditionalVarianceReport:
    m: int | None
    tau: int | None
    n: np.ndarray
    terms: np.ndarray
    total: float
    cm_variance: float | None
    covariance: np.ndarray
    abs_det: float
    hadamard_bound: float
    l1_bound: float
    cm_covariance: float | None = None


def _inverse_gram(data, gamma, w):
    s = gram_summary(data, w)
    G, _, _ = s.combined(gamma)
    sv = np.linalg.svd(G, compute_uv=False)
    if not (sv[0] > 0 and sv[-1] >= SINGULAR_RTOL * sv[0]):
        raise SingularGram("G_hat_+ + gamma G_hat_delta is singular at the stopping time")
    return s, np.linalg.inv(G)


def conditional_covariance(data, gamma: float, w, oracle: CondVarOracle):
    """C_tau = sum_i c_i / n_i^2 H X_i^T D^i X_i H^T with H = (G_hat_+ + gamma G_hat_delta)^{-1}.

    Returns (C_tau, |det C_tau|, Hadamard bound prod_c ||column_c||_2).
    """
    C, _, _ = _covariance_parts(data, gamma, w, oracle)
    return C, abs(float(np.linalg.det(C))), float(np.prod(np.linalg.norm(C, axis=0)))


def _covariance_parts(data, gamma, w, oracle):
    data = sorted(data, key=lambda d: d.env_index)
    s, H = _inverse_gram(data, gamma, w)
    c = variance_coefficients(w, gamma)
    p = H.shape[0]
    C = np.zeros((p, p))
    terms = np.zeros(len(data))
    for i, d in enumerate(data):
        v = oracle.var(d.env_index, d.X)
        HX = d.X @ H.T
        terms[i] = c[i] / d.n ** 2 * float(np.sum(np.sum(HX * HX, axis=1) * v))
        C += c[i] / d.n ** 2 * (HX.T * v) @ HX
    return 0.5 * (C + C.T), terms, (s, H)


def conditional_variance(data, gamma: float, w, oracle: CondVarOracle, m: int | None = None,
                         tau: int | None = None, config: StoppingConfig | None = None
                         ) -> ConditionalVarianceReport:
    """Exact Var(beta_hat | X) = sum_i c_i / n_i^2 sum_u ||H x_u||^2 Var(Y | X = x_u)."""
    w = as_weights(w)
    C, terms, (s, H) = _covariance_parts(data, gamma, w, oracle)
    p = C.shape[0]
    data = sorted(data, key=lambda d: d.env_index)
    cm_var = cm_cov = None
    if config is not None:
        cm_var = variance_constant(data, oracle, config)
        cm_cov = covariance_constant(data, oracle, config, H)
    return ConditionalVarianceReport(
        m=m, tau=tau, n=s.n.copy(), terms=terms, total=float(terms.sum()), cm_variance=cm_var,
        covariance=C, abs_det=abs(float(np.linalg.det(C))),
        hadamard_bound=float(np.prod(np.linalg.norm(C, axis=0))),
        l1_bound=float(np.abs(C).sum(axis=0).max() ** p), cm_covariance=cm_cov)


def variance_constant(data, oracle: CondVarOracle, config: StoppingConfig) -> float:
    """C_m = sqrt(p) ||G^{-1}||^2 (1 + delta(1+delta)) (1+gamma) max_i sup Var_i tr(G_hat_i)."""
    data = sorted(data, key=lambda d: d.env_index)
    p = data[0].p
    scale = max(oracle.sup_var[d.env_index] * float(np.sum(d.X ** 2)) / d.n for d in data)
    dl = config.delta
    return float(np.sqrt(p) * config.inverse_norm ** 2 * (1 + dl * (1 + dl))
                 * (1 + config.gamma) * scale)


def covariance_constant(data, oracle, config: StoppingConfig, H: np.ndarray) -> float:
    """(4(1+gamma))^p max_i (||H - G^{-1}||_1 + ||G^{-1}||_1)^{2p} ||M^i||_1^p,
    with M^i = X_i^T D^i X_i / n_i and the maximum over every environment."""
    data = sorted(data, key=lambda d: d.env_index)
    p = data[0].p
    Ginv = np.linalg.inv(config.reference)
    lead = (np.linalg.norm(H - Ginv, 1) + np.linalg.norm(Ginv, 1)) ** (2 * p)
    worst = 0.0
    for d in data:
        v = oracle.var(d.env_index, d.X)
        M = (d.X.T * v) @ d.X / d.n
        worst = max(worst, lead * np.linalg.norm(M, 1) ** p)
    return float((4 * (1 + config.gamma)) ** p * worst)


def variance_bound(report: ConditionalVarianceReport, data, config: StoppingConfig,
                   oracle: CondVarOracle):
    """(C_m * sum_i 1/n_i, C_m, holds)."""
    Cm = variance_constant(data, oracle, config)
    bound = Cm * float(np.sum(1.0 / report.n))
    return bound, Cm, bool(report.total <= bound)


def covariance_bound(report: ConditionalVarianceReport):
    """(C_m^cov * (sum 1/n_i)^p, holds) for the determinant."""
    p = report.covariance.shape[0]
    b = report.cm_covariance * float(np.sum(1.0 / report.n)) ** p
    return b, bool(report.abs_det <= b)
