"""Model configurations, the shipped reference model, and replicate samplers."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionMismatch
from .estimator import SummaryBatch, environment_moments
from .population import MomentSet, WeightVector, analytic_moments, as_weights, second_moment_matrix
from .sem_model import (EnvironmentData, EnvironmentSpec, GaussianLaw, NoiseSpec,
                        TransferMatrixModel, law_from_dict, sample_environment, zero_law)
from .tails import GaussianTail

REFERENCE_B = np.array([[0.0, 0.0, 0.0, 0.0],
                        [0.8, 0.0, 0.0, 0.0],
                        [-0.4, 0.5, 0.0, 0.0],
                        [0.3, 0.0, 0.6, 0.0]])


def replicate_seed(seed: int, replicate: int) -> int:
    """Independent integer seed for replicate ``replicate`` of bank ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(replicate)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ModelConfig:
    model: TransferMatrixModel
    noise: NoiseSpec
    envs: tuple
    w: WeightVector
    name: str = "custom"
    seed: int | None = None          # default seed carried by a model file

    @property
    def p(self) -> int:
        return self.model.dimension - 1

    @property
    def k(self) -> int:
        return len(self.envs) - 1

    def moments(self) -> MomentSet:
        return analytic_moments(self.model, self.envs, self.noise, self.w)

    def second_moments(self) -> list:
        return [second_moment_matrix(self.model, e.shift_law, self.noise) for e in self.envs]

    @property
    def gaussian_centered(self) -> bool:
        laws = [self.noise.law] + [e.shift_law for e in self.envs]
        return (self.model.kind == "deterministic"
                and all(isinstance(l, GaussianLaw) and not np.any(l.mean) for l in laws))

    def gaussian_tail(self) -> GaussianTail:
        if not self.gaussian_centered:
            raise ValueError("gaussian tail needs a deterministic B and centered Gaussian laws")
        return GaussianTail(self.second_moments())

    def to_dict(self) -> dict:
        return {"name": self.name, "p": self.p, "k": self.k, "seed": self.seed,
                "transfer": self.model.to_dict(),
                "noise": self.noise.law.to_dict(),
                "shifts": [e.shift_law.to_dict() for e in self.envs[1:]],
                "w": self.w.w.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        model = TransferMatrixModel.from_dict(d["transfer"])
        noise = NoiseSpec(law_from_dict(d["noise"]))
        dim = model.dimension
        envs = [EnvironmentSpec(0, zero_law(dim))]
        envs += [EnvironmentSpec(i + 1, law_from_dict(s)) for i, s in enumerate(d["shifts"])]
        for key, have in (("p", dim - 1), ("k", len(envs) - 1)):
            if d.get(key) is not None and int(d[key]) != have:
                raise DimensionMismatch(f"model file says {key}={d[key]} but its matrices give {have}")
        w = d.get("w")
        w = WeightVector.uniform(len(envs) - 1) if w is None else WeightVector(w)
        seed = d.get("seed")
        return cls(model, noise, tuple(envs), w, d.get("name", "custom"),
                   None if seed is None else int(seed))


def load_model_config(path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_dict(json.load(fh))


def reference_config() -> ModelConfig:
    """p=3, k=2 Gaussian reference model with a fixed strictly lower-triangular B."""
    model = TransferMatrixModel.deterministic(REFERENCE_B)
    noise = NoiseSpec(GaussianLaw(np.zeros(4), np.diag([1.0, 0.5, 0.5, 0.5])))
    envs = (EnvironmentSpec(0, zero_law(4)),
            EnvironmentSpec(1, GaussianLaw(np.zeros(4), np.diag([0.25, 1.0, 0.25, 0.5]))),
            EnvironmentSpec(2, GaussianLaw(np.zeros(4), np.diag([0.25, 0.25, 1.0, 0.5]))))
    return ModelConfig(model, noise, envs, WeightVector.uniform(2), "reference")


class Simulator:
    """Draws datasets and replicate banks of Gram summaries for a model configuration."""

    def __init__(self, config: ModelConfig):
        self.config = config

    def _counts(self, n):
        n = np.broadcast_to(np.asarray(n, dtype=np.int64), (self.config.k + 1,)).copy()
        if np.any(n < 1):
            raise ValueError("counts must be >= 1")
        return n

    def data(self, n, seed: int) -> list:
        n = self._counts(n)
        c = self.config
        return [sample_environment(c.model, e, c.noise, int(ni), seed) for e, ni in zip(c.envs, n)]

    def batch(self, n, seed: int, count: int, method: str = "auto") -> SummaryBatch:
        """``count`` independent replicates of the per-environment Gram summaries.

        method="wishart" draws the sufficient statistics directly: for centered
        Gaussian rows, n * [[y2, Z^T], [Z, G]] ~ Wishart(n, E[S S^T]) exactly in law.
        """
        n = self._counts(n)
        c = self.config
        if method == "auto":
            method = "wishart" if c.gaussian_centered and n.min() > c.p + 1 else "direct"
        if method == "wishart":
            if not c.gaussian_centered:
                raise ValueError("wishart sampling needs centered Gaussian rows with fixed B")
            S2 = c.second_moments()
            W = np.empty((count, c.k + 1, c.p + 1, c.p + 1))
            for i, (ni, Si) in enumerate(zip(n, S2)):
                rng = np.random.Generator(np.random.Philox(
                    np.random.SeedSequence(int(seed), spawn_key=(i, 3))))
                draws = stats.wishart(df=int(ni), scale=Si).rvs(size=count, random_state=rng)
                W[:, i] = np.reshape(draws, (count, c.p + 1, c.p + 1)) / ni
            return SummaryBatch(W[:, :, 1:, 1:], W[:, :, 1:, 0], W[:, :, 0, 0], n, c.w)
        G = np.empty((count, c.k + 1, c.p, c.p))
        Z = np.empty((count, c.k + 1, c.p))
        y2 = np.empty((count, c.k + 1))
        for s in range(count):
            for i, d in enumerate(self.data(n, replicate_seed(seed, s))):
                G[s, i], Z[s, i], y2[s, i] = environment_moments(d.X, d.Y, compensated=False)
        return SummaryBatch(G, Z, y2, n, c.w)

    def sampler(self, method: str = "auto"):
        """Callable (n, seed, count) -> SummaryBatch, for bound MC oracles."""
        return lambda n, seed, count: self.batch(n, seed, count, method)
