"""Seeded random streams and the samplers built on them.

Every random draw in the package comes from a generator obtained through
:func:`derive_stream`. A stream is a pure function of the master seed and a
key ``(purpose, entity, replicate)``, so work can be split across threads in
any order and still reproduce bit-for-bit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

# Upper truncation of a duration, as a multiple of its mean.
DEFAULT_CAP_FACTOR = 10.0


def _purpose_code(purpose: str) -> int:
    return int.from_bytes(hashlib.blake2b(purpose.encode(), digest_size=4).digest(), "little")


@dataclass(frozen=True)
class SeedSpec:
    master: int
    purpose: str = "default"
    entity: int = 0
    replicate: int = 0

    def sequence(self) -> np.random.SeedSequence:
        key = (_purpose_code(self.purpose), int(self.entity), int(self.replicate))
        return np.random.SeedSequence(int(self.master) & (2**64 - 1), spawn_key=key)


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed.sequence()))


def derive_seed(master: int, purpose: str, entity: int = 0, replicate: int = 0) -> int:
    """A 63-bit integer seed for nesting: child components take it as their master seed."""
    state = SeedSpec(master, purpose, entity, replicate).sequence().generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def stream(master: int, purpose: str, entity: int = 0, replicate: int = 0) -> np.random.Generator:
    return derive_stream(SeedSpec(master, purpose, entity, replicate))


# -- durations ---------------------------------------------------------------


@dataclass(frozen=True)
class DurationSpec:
    """Gamma duration shifted by ``translation`` and truncated at ``cap``.

    The gamma scale is ``(mean - translation) / shape`` so the untruncated
    mean equals ``mean``. ``shape = inf`` gives the deterministic limit.
    """

    mean: float
    shape: float
    translation: float = 0.0
    cap: float | None = None

    def __post_init__(self):
        if not self.mean > self.translation:
            raise ValueError("mean must exceed translation")
        if not self.shape > 0:
            raise ValueError("shape must be positive")
        if self.translation < 0:
            raise ValueError("translation must be nonnegative")
        if self.cap is not None and not self.cap > self.translation:
            raise ValueError("cap must exceed translation")

    @property
    def upper(self) -> float:
        return self.cap if self.cap is not None else DEFAULT_CAP_FACTOR * self.mean

    @property
    def scale(self) -> float:
        return (self.mean - self.translation) / self.shape

    @property
    def deterministic(self) -> bool:
        return math.isinf(self.shape)


def sample_duration(spec: DurationSpec, rng: np.random.Generator) -> float:
    if spec.deterministic:
        return min(spec.mean, spec.upper)
    while True:
        value = spec.translation + rng.gamma(spec.shape, spec.scale)
        if spec.translation < value <= spec.upper:
            return float(value)


def sample_durations(
    mean: float,
    shape: float,
    translation: float,
    size: int,
    rng: np.random.Generator,
    cap: float | None = None,
) -> np.ndarray:
    """Vectorised :func:`sample_duration`; rejected draws are redrawn in place."""
    spec = DurationSpec(mean, shape, translation, cap)
    if size == 0:
        return np.empty(0)
    if spec.deterministic:
        return np.full(size, min(spec.mean, spec.upper))
    out = translation + rng.gamma(shape, spec.scale, size)
    bad = (out <= translation) | (out > spec.upper)
    while bad.any():
        out[bad] = translation + rng.gamma(shape, spec.scale, int(bad.sum()))
        bad = (out <= translation) | (out > spec.upper)
    return out


# -- designs and draws -------------------------------------------------------


def lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Jittered Latin hypercube on [0, 1)^d: one point per stratum per column."""
    if n < 2:
        raise ValueError("a Latin hypercube needs at least 2 points")
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    return (strata + rng.random((n, d))) / n


def lhs(n: int, space, rng: np.random.Generator) -> np.ndarray:
    """``n x len(space)`` Latin hypercube over the parameter bounds."""
    lo, hi = space.lower, space.upper
    return lo + lhs_unit(n, len(lo), rng) * (hi - lo)


def check_distribution(probs, atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("a distribution must be a nonempty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"probabilities sum to {p.sum():.12g}, not 1")
    return p


def categorical(probs, rng: np.random.Generator) -> int:
    p = check_distribution(probs)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1)
