"""Population risks, the worst-risk decomposition and the closed-form minimizer."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularGram, TauOutOfRange
from .sem_model import (GaussianLaw, NoiseSpec, TransferMatrixModel, law_second_moment,
                        SINGULAR_RTOL)


class WeightVector:
    """Unit-norm weights w over the shifted environments 1..k."""

    def __init__(self, w, atol: float = 1e-12):
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size == 0 or abs(np.linalg.norm(w) - 1.0) > atol:
            raise ValueError(f"weights must have unit l2 norm, got {np.linalg.norm(w)!r}")
        self.w = w
        self.w.setflags(write=False)

    @classmethod
    def normalized(cls, w):
        w = np.asarray(w, dtype=float)
        return cls(w / np.linalg.norm(w))

    @classmethod
    def uniform(cls, k: int):
        return cls(np.full(k, 1.0 / np.sqrt(k)))

    @property
    def k(self) -> int:
        return self.w.size

    @property
    def sq(self) -> np.ndarray:
        return self.w ** 2

    def weighted_shift(self, shifts) -> np.ndarray:
        """A_w = sum_i w_i A_i for shift draws stacked as (k, ..., p+1)."""
        shifts = np.asarray(shifts, dtype=float)
        if shifts.shape[0] != self.k:
            raise DimensionMismatch("need one shift draw per shifted environment")
        return np.tensordot(self.w, shifts, axes=1)

    def worst_shift_law(self, shift_laws, tau: float) -> GaussianLaw:
        """Gaussian law of sqrt(1+tau) A_w for independent Gaussian shifts."""
        if tau < -0.5:
            raise TauOutOfRange(tau)
        mean = sum(wi * law.mean for wi, law in zip(self.w, shift_laws))
        cov = sum(wi ** 2 * law.covariance() for wi, law in zip(self.w, shift_laws))
        return GaussianLaw(np.sqrt(1 + tau) * mean, (1 + tau) * cov)

    def __repr__(self):
        return f"WeightVector({self.w.tolist()})"


def as_weights(w) -> WeightVector:
    return w if isinstance(w, WeightVector) else WeightVector(w)


def combination_coefficients(w, gamma: float) -> np.ndarray:
    """a with sum_i a_i G_i = G_+ + gamma G_delta (index 0 is observational)."""
    sq = as_weights(w).sq
    if np.isinf(gamma):
        return np.concatenate([[-1.0], sq])
    return np.concatenate([[1.0 - gamma], (1.0 + gamma) * sq])


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not gamma >= 0:
        raise ValueError("gamma must be >= 0")
    return gamma


@dataclass(frozen=True)
class MomentSet:
    """Per-environment second moments; index 0 is observational."""
    G: np.ndarray   # (k+1, p, p)
    Z: np.ndarray   # (k+1, p)
    y2: np.ndarray  # (k+1,)
    w: WeightVector
    provenance: str = "analytic"

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        y2 = np.asarray(self.y2, dtype=float).reshape(-1)
        w = as_weights(self.w)
        if G.ndim != 3 or G.shape[1] != G.shape[2] or Z.shape != G.shape[:2] or y2.size != G.shape[0]:
            raise DimensionMismatch("inconsistent moment block shapes")
        if w.k != G.shape[0] - 1:
            raise DimensionMismatch("need k weights for k shifted environments")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "y2", y2)
        object.__setattr__(self, "w", w)

    @property
    def p(self) -> int:
        return self.G.shape[1]

    @property
    def k(self) -> int:
        return self.G.shape[0] - 1

    def _mix(self, blocks, sign):
        return sign * blocks[0] + np.tensordot(self.w.sq, blocks[1:], axes=1)

    @property
    def G_plus(self):
        return self._mix(self.G, 1.0)

    @property
    def G_delta(self):
        return self._mix(self.G, -1.0)

    @property
    def Z_plus(self):
        return self._mix(self.Z, 1.0)

    @property
    def Z_delta(self):
        return self._mix(self.Z, -1.0)

    @property
    def y2_plus(self):
        return self._mix(self.y2, 1.0)

    @property
    def y2_delta(self):
        return self._mix(self.y2, -1.0)

    def combined(self, gamma: float):
        """(G_+ + gamma G_delta, Z_+ + gamma Z_delta, y2_+ + gamma y2_delta)."""
        a = combination_coefficients(self.w, gamma)
        return (np.tensordot(a, self.G, axes=1), np.tensordot(a, self.Z, axes=1),
                float(a @ self.y2))

    def with_weights(self, w) -> "MomentSet":
        return MomentSet(self.G, self.Z, self.y2, as_weights(w), self.provenance)

    def to_json(self) -> str:
        return json.dumps({"G": self.G.tolist(), "Z": self.Z.tolist(), "y2": self.y2.tolist(),
                           "w": self.w.w.tolist(), "provenance": self.provenance})

    @classmethod
    def from_json(cls, text: str) -> "MomentSet":
        d = json.loads(text)
        return cls(np.array(d["G"]), np.array(d["Z"]), np.array(d["y2"]),
                   WeightVector(d["w"]), d.get("provenance", "analytic"))


# ---------------------------------------------------------------- moments

def second_moment_matrix(model: TransferMatrixModel, shift_law, noise: NoiseSpec) -> np.ndarray:
    """E[S S^T] for S = (I - B)^{-1}(eps + A) with eps, A independent of each other and B."""
    if model.kind == "sampler":
        raise ValueError("no closed form for sampler-kind B; use mc_moments")
    m_e, m_a = noise.law.mean, shift_law.mean
    inner = (law_second_moment(noise.law) + law_second_moment(shift_law)
             + np.outer(m_e, m_a) + np.outer(m_a, m_e))
    eye = np.eye(model.dimension)
    probs = model.probs or (1.0,)
    out = np.zeros_like(inner)
    for B, pr in zip(model.matrices, probs):
        Minv = np.linalg.inv(eye - B)
        out += pr * Minv @ inner @ Minv.T
    return out


def _blocks(S2: np.ndarray):
    return S2[1:, 1:], S2[1:, 0], S2[0, 0]


def analytic_moments(model: TransferMatrixModel, envs, noise: NoiseSpec, w) -> MomentSet:
    envs = sorted(envs, key=lambda e: e.index)
    G, Z, y2 = zip(*(_blocks(second_moment_matrix(model, e.shift_law, noise)) for e in envs))
    return MomentSet(np.stack(G), np.stack(Z), np.array(y2), as_weights(w), "analytic")


def mc_moments(model, envs, noise, w, n: int, seed: int) -> MomentSet:
    """Large-sample plug-in moments; used when no closed form exists."""
    from .sem_model import sample_environment
    from .estimator import gram_summary
    data = [sample_environment(model, e, noise, n, seed) for e in sorted(envs, key=lambda e: e.index)]
    s = gram_summary(data, w)
    return MomentSet(s.G, s.Z, s.y2, as_weights(w), f"monte-carlo(n={n}, seed={seed})")


# ---------------------------------------------------------------- risks

def _beta(moments, beta):
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != moments.p:
        raise DimensionMismatch(f"beta has length {beta.size}, expected {moments.p}")
    return beta


def quadratic_risk(y2, Z, G, beta) -> float:
    return float(y2 - 2.0 * beta @ Z + beta @ G @ beta)


def population_risk(moments: MomentSet, i: int, beta) -> float:
    beta = _beta(moments, beta)
    return quadratic_risk(moments.y2[i], moments.Z[i], moments.G[i], beta)


def risk_plus_delta(moments: MomentSet, beta):
    beta = _beta(moments, beta)
    R = np.array([population_risk(moments, i, beta) for i in range(moments.k + 1)])
    shifted = float(moments.w.sq @ R[1:])
    return R[0] + shifted, shifted - R[0]


def worst_risk(moments: MomentSet, w, tau: float, beta):
    """Both sides of the worst-risk decomposition at beta.

    lhs = (1+tau) R_{A_w} - tau R_O  with R_{A_w} = sum_i w_i^2 R_{A_i};
    rhs = R_+/2 + (1+2 tau)/2 R_delta.
    """
    if not tau >= -0.5:
        raise TauOutOfRange(f"tau={tau} < -1/2")
    m = moments.with_weights(w)
    beta = _beta(m, beta)
    R = np.array([population_risk(m, i, beta) for i in range(m.k + 1)])
    R_Aw = float(m.w.sq @ R[1:])
    lhs = (1 + tau) * R_Aw - tau * R[0]
    r_plus, r_delta = R[0] + R_Aw, R_Aw - R[0]
    rhs = 0.5 * r_plus + 0.5 * (1 + 2 * tau) * r_delta
    return lhs, rhs


def objective(moments: MomentSet, gamma: float, beta) -> float:
    """f(beta) = R_+(beta) + gamma R_delta(beta)."""
    G, Z, y2 = moments.combined(gamma)
    return quadratic_risk(y2, Z, G, _beta(moments, beta))


def objective_gradient(moments: MomentSet, gamma: float, beta) -> np.ndarray:
    G, Z, _ = moments.combined(gamma)
    return 2.0 * (G @ _beta(moments, beta) - Z)


def minimizer(moments: MomentSet, gamma: float) -> np.ndarray:
    """beta_gamma = (G_+ + gamma G_delta)^{-1}(Z_+ + gamma Z_delta).

    gamma = inf solves G_delta beta = Z_delta and requires G_delta positive definite.
    """
    gamma = check_gamma(gamma)
    if np.isinf(gamma):
        G, Z = moments.G_delta, moments.Z_delta
    else:
        G, Z, _ = moments.combined(gamma)
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= SINGULAR_RTOL * max(abs(ev).max(), np.finfo(float).tiny):
        raise SingularGram(f"Gram combination not positive definite at gamma={gamma} "
                           f"(smallest eigenvalue {ev[0]:.3e})")
    return np.linalg.solve(G, Z)


def minimal_risk(moments: MomentSet, gamma: float, beta_gamma=None) -> float:
    if beta_gamma is None:
        beta_gamma = minimizer(moments, gamma)
    return objective(moments, gamma, beta_gamma)
