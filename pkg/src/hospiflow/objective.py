"""Weighted RMSE between simulated and observed occupancy, and the noisy objective."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Scenario
from .des import OccupancyTrace, simulate
from .errors import ConfigError
from .params import ParamSpace, as_vector, canonical_space, validate_vector
from .stochastic import SeedSpec, derive_seed


@dataclass(frozen=True)
class Weights:
    bed: float = 2.0
    icu: float = 4.0
    vent: float = 8.0

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0) or not np.any(w > 0):
            raise ConfigError("weights must be nonnegative and not all zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.bed, self.icu, self.vent], dtype=float)

    def to_dict(self) -> dict:
        return {"bed": self.bed, "icu": self.icu, "vent": self.vent}


def weighted_rmse(sim: OccupancyTrace, field: OccupancyTrace, w: Weights, window: tuple[int, int]) -> float:
    """Sum over resources of ``w_k * RMSE_k`` on the inclusive day window."""
    t0, t1 = window
    a = sim.window(t0, t1).astype(float)
    b = field.window(t0, t1).astype(float)
    rmse = np.sqrt(np.mean((b - a) ** 2, axis=0))
    return float(np.dot(w.as_array(), rmse))


@dataclass(frozen=True)
class EvaluationResult:
    mean_score: float
    per_replicate: tuple[float, ...]
    replicates: int
    seed: int
    error: str | None = None

    @classmethod
    def from_scores(cls, scores, seed: int) -> "EvaluationResult":
        scores = tuple(float(s) for s in scores)
        return cls(float(np.mean(scores)), scores, len(scores), seed)

    @classmethod
    def failed(cls, seed: int, error: str) -> "EvaluationResult":
        return cls(float("nan"), (), 0, seed, error)

    @property
    def ok(self) -> bool:
        return self.error is None and np.isfinite(self.mean_score)

    def to_dict(self) -> dict:
        out = {
            "score": self.mean_score,
            "replicate_scores": list(self.per_replicate),
            "replicates": self.replicates,
            "seed": self.seed,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


def evaluate(
    x,
    scenario: Scenario,
    w: Weights,
    replicates: int,
    seed: int,
    space: ParamSpace | None = None,
    workers: int = 1,
) -> EvaluationResult:
    """Mean weighted RMSE over ``replicates`` seeded simulator runs."""
    if replicates < 1:
        raise ValueError("need at least one replicate")
    space = space or canonical_space()
    x = as_vector(x)
    problems = validate_vector(space, x)
    if problems:
        raise ValueError("invalid parameter vector: " + "; ".join(map(str, problems)))
    field_trace = scenario.field_trace()
    window = scenario.eval_days

    def one(r: int) -> float:
        trace = simulate(scenario.arrivals, x, space.graph, SeedSpec(seed, "replicate", 0, r))
        return weighted_rmse(trace, field_trace, w, window)

    if workers > 1 and replicates > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(one, range(replicates)))
    else:
        scores = [one(r) for r in range(replicates)]
    return EvaluationResult.from_scores(scores, seed)


def point_key(x) -> int:
    digest = hashlib.blake2b(np.ascontiguousarray(x, dtype=float).tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass
class SimulationObjective:
    """The simulator as a black-box objective.

    Calling it with ``x`` evaluates with a seed derived from ``(seed, x)``, so
    a point's score does not depend on when, or in which order, it is asked for.
    """

    scenario: Scenario
    weights: Weights = field(default_factory=Weights)
    replicates: int = 5
    seed: int = 0
    space: ParamSpace = field(default_factory=canonical_space)
    workers: int = 1

    def evaluate(self, x, seed: int, replicates: int | None = None) -> EvaluationResult:
        return evaluate(
            x, self.scenario, self.weights, replicates or self.replicates, seed, self.space, self.workers
        )

    def __call__(self, x) -> EvaluationResult:
        return self.evaluate(x, derive_seed(self.seed, "point", point_key(x)))
