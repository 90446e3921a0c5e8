"""Multi-environment linear SEM with a random transfer matrix.

Coordinates are ordered (Y, X1, ..., Xp). A row is drawn as
S = (I - B)^{-1} (eps + A) with a fresh B, eps and shift A per row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, SingularD, SingularDraw, SingularSystem

SINGULAR_RTOL = 1e-10
MAX_RETRIES = 16


def well_conditioned(M, rtol: float = SINGULAR_RTOL) -> bool:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    return bool(s[0] > 0 and s[-1] >= rtol * s[0])


def _batch_well_conditioned(Ms: np.ndarray, rtol: float = SINGULAR_RTOL) -> np.ndarray:
    s = np.linalg.svd(Ms, compute_uv=False)
    return (s[:, 0] > 0) & (s[:, -1] >= rtol * s[:, 0])


def env_rng(seed: int, env_index: int, channel: int = 0) -> np.random.Generator:
    """Counter-based stream for one (environment, channel) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(env_index), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------- laws

def _psd_factor(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min(initial=0.0) < -1e-10 * max(1.0, abs(vals).max(initial=0.0)):
        raise ValueError("covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float).reshape(mean.size, mean.size)
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", _psd_factor(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        return self.cov

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._factor.T

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class UniformLaw:
    """Independent components, component j uniform on [low_j, high_j]."""
    low: np.ndarray
    high: np.ndarray
    kind: str = field(default="uniform", init=False)

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=float).reshape(-1)
        hi = np.asarray(self.high, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("need low <= high, same length")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    def covariance(self) -> np.ndarray:
        return np.diag((self.high - self.low) ** 2 / 12.0)

    def sample(self, rng, n):
        return self.low + (self.high - self.low) * rng.random((n, self.dim))

    def to_dict(self):
        return {"kind": "uniform", "low": self.low.tolist(), "high": self.high.tolist()}


@dataclass(frozen=True)
class TwoPointLaw:
    """Independent components, component j equals high_j w.p. prob_j, else low_j."""
    low: np.ndarray
    high: np.ndarray
    prob: np.ndarray
    kind: str = field(default="two_point", init=False)

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=float).reshape(-1)
        hi = np.asarray(self.high, dtype=float).reshape(-1)
        pr = np.broadcast_to(np.asarray(self.prob, dtype=float), lo.shape).copy()
        if lo.shape != hi.shape or np.any((pr < 0) | (pr > 1)):
            raise ValueError("bad two-point law")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)
        object.__setattr__(self, "prob", pr)

    @property
    def dim(self):
        return self.low.size

    @property
    def mean(self):
        return self.low + (self.high - self.low) * self.prob

    def covariance(self):
        return np.diag((self.high - self.low) ** 2 * self.prob * (1 - self.prob))

    def sample(self, rng, n):
        hit = rng.random((n, self.dim)) < self.prob
        return np.where(hit, self.high, self.low)

    def to_dict(self):
        return {"kind": "two_point", "low": self.low.tolist(), "high": self.high.tolist(),
                "prob": self.prob.tolist()}


Law = GaussianLaw | UniformLaw | TwoPointLaw


def zero_law(dim: int) -> GaussianLaw:
    return GaussianLaw(np.zeros(dim), np.zeros((dim, dim)))


def law_from_dict(d: dict):
    kind = d.get("kind", "gaussian")
    if kind == "gaussian":
        return GaussianLaw(d["mean"], d["cov"])
    if kind == "uniform":
        return UniformLaw(d["low"], d["high"])
    if kind == "two_point":
        return TwoPointLaw(d["low"], d["high"], d.get("prob", 0.5))
    raise ValueError(f"unknown law kind {kind!r}")


def law_second_moment(law) -> np.ndarray:
    m = law.mean
    return law.covariance() + np.outer(m, m)


def is_zero_law(law) -> bool:
    return bool(np.all(law.mean == 0) and np.all(law.covariance() == 0))


# ---------------------------------------------------------------- transfer matrix

@dataclass(frozen=True)
class TransferMatrixModel:
    """Law of B.

    kinds: ``deterministic`` (one matrix), ``simple`` (finitely many matrices with
    probabilities) and ``sampler`` (base matrix plus iid N(0, scale^2) entries on mask).
    """
    dimension: int
    kind: str
    matrices: tuple
    probs: tuple = ()
    scale: float = 0.0
    mask: np.ndarray | None = None

    def __post_init__(self):
        d = int(self.dimension)
        mats = tuple(np.asarray(m, dtype=float).reshape(d, d) for m in self.matrices)
        object.__setattr__(self, "matrices", mats)
        if self.kind == "deterministic":
            if len(mats) != 1:
                raise ValueError("deterministic kind takes one matrix")
        elif self.kind == "simple":
            pr = np.asarray(self.probs, dtype=float)
            if pr.size != len(mats) or np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-12:
                raise ValueError("simple-kind probabilities must be nonnegative and sum to 1")
            object.__setattr__(self, "probs", tuple(pr.tolist()))
        elif self.kind == "sampler":
            if len(mats) != 1:
                raise ValueError("sampler kind takes one base matrix")
            mask = np.ones((d, d)) if self.mask is None else np.asarray(self.mask, dtype=float)
            object.__setattr__(self, "mask", mask.reshape(d, d))
        else:
            raise ValueError(f"unknown transfer kind {self.kind!r}")

    @classmethod
    def deterministic(cls, B):
        B = np.asarray(B, dtype=float)
        return cls(B.shape[0], "deterministic", (B,))

    @classmethod
    def simple(cls, pairs: Sequence[tuple]):
        mats = [np.asarray(m, dtype=float) for m, _ in pairs]
        return cls(mats[0].shape[0], "simple", tuple(mats), tuple(p for _, p in pairs))

    @classmethod
    def perturbed(cls, base, scale: float, mask=None):
        base = np.asarray(base, dtype=float)
        return cls(base.shape[0], "sampler", (base,), scale=float(scale), mask=mask)

    @property
    def p(self) -> int:
        return self.dimension - 1

    def draw_many(self, rng: np.random.Generator, n: int):
        """Return (branch index array or None, (n, d, d) matrices) with retries."""
        d = self.dimension
        if self.kind == "deterministic":
            return None, np.broadcast_to(self.matrices[0], (n, d, d))
        if self.kind == "simple":
            idx = rng.choice(len(self.matrices), size=n, p=np.asarray(self.probs))
            return idx, np.stack(self.matrices)[idx]
        base, mask = self.matrices[0], self.mask
        Bs = base + self.scale * mask * rng.standard_normal((n, d, d))
        eye = np.eye(d)
        bad = ~_batch_well_conditioned(eye - Bs)
        for _ in range(MAX_RETRIES):
            if not bad.any():
                break
            m = int(bad.sum())
            Bs[bad] = base + self.scale * mask * rng.standard_normal((m, d, d))
            bad[bad] = ~_batch_well_conditioned(eye - Bs[bad])
        if bad.any():
            raise SingularDraw(f"I - B singular after {MAX_RETRIES} redraws")
        return None, Bs

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dimension": self.dimension,
               "matrices": [m.tolist() for m in self.matrices]}
        if self.kind == "simple":
            out["probs"] = list(self.probs)
        if self.kind == "sampler":
            out["scale"] = self.scale
            out["mask"] = self.mask.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict):
        kind = d["kind"]
        if kind == "deterministic":
            mats = d.get("matrices") or [d["matrix"]]
            return cls.deterministic(mats[0])
        if kind == "simple":
            return cls.simple(list(zip(d["matrices"], d["probs"])))
        if kind == "sampler":
            mats = d.get("matrices") or [d["base"]]
            return cls.perturbed(mats[0], d["scale"], d.get("mask"))
        raise ValueError(f"unknown transfer kind {kind!r}")


def _check_support(model: TransferMatrixModel):
    eye = np.eye(model.dimension)
    if model.kind in ("deterministic", "simple"):
        for B, pr in zip(model.matrices, model.probs or (1.0,)):
            if pr > 0 and not well_conditioned(eye - B):
                raise SingularDraw("a support matrix of B leaves I - B singular")


def draw_transfer_matrix(model: TransferMatrixModel, rng_seed) -> np.ndarray:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    eye = np.eye(model.dimension)
    for _ in range(MAX_RETRIES + 1):
        _, Bs = model.draw_many(rng, 1)
        B = np.array(Bs[0])
        if well_conditioned(eye - B):
            return B
        if model.kind == "deterministic":
            break
    raise SingularDraw("I - B singular for every draw within the retry budget")


# ---------------------------------------------------------------- environments

@dataclass(frozen=True)
class NoiseSpec:
    law: object

    @property
    def dim(self):
        return self.law.dim


@dataclass(frozen=True)
class EnvironmentSpec:
    index: int
    shift_law: object

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("environment index must be >= 0")
        cov = self.shift_law.covariance()
        if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T):
            raise ValueError("shift covariance must be finite and symmetric")
        if self.index == 0 and not is_zero_law(self.shift_law):
            raise ValueError("the observational environment has zero shift")


@dataclass(frozen=True)
class SemSample:
    y: float
    x: np.ndarray


@dataclass(frozen=True)
class EnvironmentData:
    env_index: int
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def head(self, n: int) -> "EnvironmentData":
        return EnvironmentData(self.env_index, self.X[:n], self.Y[:n])


def solve_sem(B, eps, shift) -> SemSample:
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    eps = np.asarray(eps, dtype=float).reshape(-1)
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if eps.size != d or shift.size != d:
        raise DimensionMismatch("eps/shift length must match B")
    M = np.eye(d) - B
    if not well_conditioned(M):
        raise SingularSystem("I - B is numerically singular")
    s = np.linalg.solve(M, eps + shift)
    return SemSample(float(s[0]), s[1:].copy())


def sample_rows(model: TransferMatrixModel, shift_law, noise: NoiseSpec, n: int,
                rng_B, rng_eps, rng_A) -> np.ndarray:
    """Draw n rows of S = (Y, X) as an (n, p+1) array."""
    d = model.dimension
    _check_support(model)
    branch, Bs = model.draw_many(rng_B, n)
    eps = noise.law.sample(rng_eps, n)
    A = shift_law.sample(rng_A, n)
    rhs = eps + A
    eye = np.eye(d)
    if model.kind == "deterministic":
        return rhs @ np.linalg.inv(eye - model.matrices[0]).T
    if model.kind == "simple":
        out = np.empty_like(rhs)
        for l, B in enumerate(model.matrices):
            sel = branch == l
            if sel.any():
                out[sel] = rhs[sel] @ np.linalg.inv(eye - B).T
        return out
    return np.linalg.solve(eye - Bs, rhs[..., None])[..., 0]


def sample_environment(model: TransferMatrixModel, env: EnvironmentSpec, noise: NoiseSpec,
                       n: int, rng_seed: int) -> EnvironmentData:
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise.dim != model.dimension or env.shift_law.dim != model.dimension:
        raise DimensionMismatch("noise/shift dimension must equal p+1")
    S = sample_rows(model, env.shift_law, noise, n,
                    env_rng(rng_seed, env.index, 0),
                    env_rng(rng_seed, env.index, 1),
                    env_rng(rng_seed, env.index, 2))
    return EnvironmentData(env.index, S[:, 1:], S[:, 0])


# ---------------------------------------------------------------- nonlinear embedding

def embedding_design(p: int):
    """Noise and shift vectors used by the embedding: eps = e_0, A_i = e_i."""
    d = p + 1
    eps = np.zeros(d)
    eps[0] = 1.0
    shifts = [np.zeros(d)] + [np.eye(d)[i] for i in range(1, d)]
    C = np.column_stack([eps + a for a in shifts])
    return eps, shifts, C


def embed_nonlinear_systems(f: Callable, realized_states: Sequence[tuple]) -> np.ndarray:
    """Linear system reproducing p+1 realized nonlinear states.

    ``realized_states[i] = (y, x, shift, noise)`` for the system
    S = f(S + shift) + noise. Returns B with (I - B)^{-1} C = D where column i of C
    is eps + A_i and column i of D is f(S_i + shift_i) + noise_i.
    """
    cols = []
    for y, x, shift, noise in realized_states:
        s = np.concatenate([[float(y)], np.asarray(x, dtype=float).reshape(-1)])
        cols.append(np.asarray(f(s + np.asarray(shift, dtype=float)), dtype=float)
                    + np.asarray(noise, dtype=float))
    D = np.column_stack(cols)
    d = D.shape[0]
    if D.shape != (d, d):
        raise DimensionMismatch("need exactly p+1 systems of dimension p+1")
    if not well_conditioned(D):
        raise SingularD("D is numerically singular")
    _, _, C = embedding_design(d - 1)
    # (I - B)^{-1} C = D  <=>  I - B = C D^{-1}
    B = np.eye(d) - np.linalg.solve(D.T, C.T).T
    resid = np.linalg.solve(np.eye(d) - B, C) - D
    if np.linalg.norm(resid) > 1e-8 * max(1.0, np.linalg.norm(D)):
        raise SingularD("embedding residual above 1e-8; D too ill-conditioned")
    return B
