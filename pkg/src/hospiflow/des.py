"""Patient-trajectory simulation and daily resource census.

Resources are demand counters: nobody queues, so a simulation run is a set
of independent walks through the state graph. Walks are vectorised over
blocks of patients; each block and state draws from its own derived stream,
which makes the output independent of how blocks are spread over workers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .params import (
    RESOURCES,
    RISK_A,
    RISK_B,
    RISK_MALE,
    SHAPE_INDEX,
    TRANSLATION_INDEX,
    Edge,
    StateGraph,
    as_vector,
)
from .stochastic import SeedSpec, derive_seed, sample_duration, sample_durations, stream, DurationSpec

REFERENCE_AGE = 50.0
EPS_FLOOR = 1e-6
BLOCK_SIZE = 4096
# x13 at or above this counts as the deterministic-duration limit.
DEGENERATE_SHAPE = 1e6


@dataclass(frozen=True)
class Patient:
    id: int
    infection_day: int
    age: float
    male: bool


@dataclass(frozen=True)
class ArrivalSchedule:
    """Patients by infection day. Patient ids are positions ``0..n-1``."""

    horizon: int
    day: np.ndarray
    age: np.ndarray
    male: np.ndarray

    def __post_init__(self):
        n = len(self.day)
        if len(self.age) != n or len(self.male) != n:
            raise ValueError("day, age and male arrays must have equal length")
        if n and (self.day.min() < 0 or self.day.max() >= self.horizon):
            raise ValueError("every infection day must lie in [0, horizon)")

    @classmethod
    def from_patients(cls, patients, horizon: int) -> "ArrivalSchedule":
        patients = sorted(patients, key=lambda p: p.id)
        return cls(
            horizon,
            np.array([p.infection_day for p in patients], dtype=np.int64),
            np.array([p.age for p in patients], dtype=float),
            np.array([p.male for p in patients], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.day)

    def patients(self) -> Iterator[Patient]:
        for i in range(len(self)):
            yield Patient(i, int(self.day[i]), float(self.age[i]), bool(self.male[i]))

    def per_day(self) -> dict[int, list[Patient]]:
        out: dict[int, list[Patient]] = {}
        for p in self.patients():
            out.setdefault(p.infection_day, []).append(p)
        return out

    def counts(self) -> np.ndarray:
        return np.bincount(self.day, minlength=self.horizon)


@dataclass(frozen=True)
class ResourceInterval:
    resource: str
    start: float
    end: float


@dataclass(frozen=True)
class OccupancyTrace:
    """Daily counts, one row per day, columns bed/icu/vent."""

    counts: np.ndarray
    start_day: int = 0

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start_day, self.start_day + len(self.counts))

    @property
    def bed(self) -> np.ndarray:
        return self.counts[:, 0]

    @property
    def icu(self) -> np.ndarray:
        return self.counts[:, 1]

    @property
    def vent(self) -> np.ndarray:
        return self.counts[:, 2]

    def window(self, t0: int, t1: int) -> np.ndarray:
        """Rows for absolute days ``t0..t1`` inclusive."""
        if t0 > t1 or t0 < self.start_day or t1 >= self.start_day + len(self.counts):
            raise ValueError(
                f"window [{t0}, {t1}] not within days [{self.start_day}, "
                f"{self.start_day + len(self.counts) - 1}]"
            )
        return self.counts[t0 - self.start_day : t1 - self.start_day + 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day", *RESOURCES])
        for day, row in zip(self.days, self.counts):
            w.writerow([int(day), *(int(v) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "OccupancyTrace":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        if rows[0] != ["day", *RESOURCES]:
            raise ValueError("trace header must be day,bed,icu,vent")
        days = [int(r[0]) for r in rows[1:]]
        counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
        return cls(counts.reshape(-1, 3), days[0] if days else 0)


# -- risk and branching ------------------------------------------------------


def assign_risk(p: Patient, x) -> float:
    x = as_vector(x)
    r = x[RISK_A - 1] * math.exp(x[RISK_B - 1] * p.age)
    return r * x[RISK_MALE - 1] if p.male else r


def risk_scale(age, male, x) -> np.ndarray:
    """``r / r_ref`` where the reference is a 50-year-old woman; ``x25`` cancels."""
    x = as_vector(x)
    s = np.exp(x[RISK_B - 1] * (np.asarray(age, dtype=float) - REFERENCE_AGE))
    return np.where(np.asarray(male, dtype=bool), s * x[RISK_MALE - 1], s)


def branch_probs(edges: tuple[Edge, ...], x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Per-patient outgoing distribution, columns aligned with ``edges``.

    ``edges`` must list the explicit edges first and the complement edge last,
    as :meth:`StateGraph.outgoing` does.
    """
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    explicit = np.empty((len(scale), len(edges) - 1))
    for k, e in enumerate(edges[:-1]):
        base = x[e.prob - 1]
        explicit[:, k] = base * scale if e.risk_sensitive else base
    total = explicit.sum(axis=1)
    over = total > 1.0
    if over.any():
        explicit[over] *= ((1.0 - EPS_FLOOR) / total[over])[:, None]
        total = explicit.sum(axis=1)
    return np.column_stack([explicit, 1.0 - total])


def effective_probs(state: str, p: Patient, x, graph: StateGraph) -> dict[str, float]:
    """Outgoing distribution of ``state`` for one patient, keyed by target state."""
    x = as_vector(x)
    edges = graph.outgoing(state)
    if not edges:
        raise ValueError(f"{state} is absorbing")
    probs = branch_probs(edges, x, risk_scale(p.age, p.male, x))[0]
    return {e.target: float(q) for e, q in zip(edges, probs)}


def _duration_spec(edge: Edge, x: np.ndarray) -> DurationSpec | None:
    if edge.duration is None:
        return None
    return DurationSpec(x[edge.duration - 1], x[SHAPE_INDEX - 1], x[TRANSLATION_INDEX - 1])


# -- simulation --------------------------------------------------------------


def simulate_patient(p: Patient, x, graph: StateGraph, rng: np.random.Generator) -> list[ResourceInterval]:
    """Walk one patient from Infected to an absorbing state."""
    x = as_vector(x)
    scale = risk_scale(p.age, p.male, x)
    state, t = graph.states[0], float(p.infection_day)
    out = []
    while not graph.is_absorbing(state):
        edges = graph.outgoing(state)
        probs = branch_probs(edges, x, scale)[0]
        k = min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), len(edges) - 1)
        spec = _duration_spec(edges[k], x)
        end = t if spec is None else t + sample_duration(spec, rng)
        tag = graph.resources.get(state)
        if tag is not None and end > t:
            out.append(ResourceInterval(tag, t, end))
        state, t = edges[k].target, end
    return out


def census(starts: np.ndarray, ends: np.ndarray, horizon: int) -> np.ndarray:
    """Count intervals ``[s, e)`` covering each midday instant ``t + 0.5``."""
    first = np.clip(np.ceil(np.asarray(starts) - 0.5), 0, horizon).astype(np.int64)
    stop = np.clip(np.ceil(np.asarray(ends) - 0.5), 0, horizon).astype(np.int64)
    keep = first < stop
    diff = np.bincount(first[keep], minlength=horizon + 1) - np.bincount(stop[keep], minlength=horizon + 1)
    return np.cumsum(diff[:horizon])


def _walk_block(arrivals: ArrivalSchedule, lo: int, hi: int, x: np.ndarray, graph: StateGraph, base_seed: int, block: int):
    """Simulate patients ``lo..hi-1``; returns per-resource (starts, ends) lists."""
    scale_all = risk_scale(arrivals.age[lo:hi], arrivals.male[lo:hi], x)
    shape, trans = x[SHAPE_INDEX - 1], x[TRANSLATION_INDEX - 1]
    pending: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {s: [] for s in graph.states}
    pending[graph.states[0]].append((np.arange(hi - lo), arrivals.day[lo:hi].astype(float)))
    intervals = {r: ([], []) for r in RESOURCES}

    for si, state in enumerate(graph.states):
        if graph.is_absorbing(state) or not pending[state]:
            continue
        idx = np.concatenate([a for a, _ in pending[state]])
        t = np.concatenate([b for _, b in pending[state]])
        if idx.size == 0:
            continue
        edges = graph.outgoing(state)
        rng = stream(base_seed, f"walk:{state}", entity=block)
        probs = branch_probs(edges, x, scale_all[idx])
        u = rng.random(idx.size)
        choice = (u[:, None] >= np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)
        end = t.copy()
        for k, e in enumerate(edges):
            sel = choice == k
            n_sel = int(sel.sum())
            if e.duration is not None and n_sel:
                end[sel] = t[sel] + sample_durations(x[e.duration - 1], shape, trans, n_sel, rng)
            if n_sel:
                pending[e.target].append((idx[sel], end[sel]))
        tag = graph.resources.get(state)
        if tag is not None:
            intervals[tag][0].append(t)
            intervals[tag][1].append(end)

    counts = np.zeros((arrivals.horizon, len(RESOURCES)), dtype=np.int64)
    for j, r in enumerate(RESOURCES):
        starts, ends = intervals[r]
        if starts:
            counts[:, j] = census(np.concatenate(starts), np.concatenate(ends), arrivals.horizon)
    return counts


def simulate(
    arrivals: ArrivalSchedule,
    x,
    graph: StateGraph,
    seed: SeedSpec,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> OccupancyTrace:
    """One stochastic run; deterministic in ``(arrivals, x, seed)`` for any ``workers``."""
    x = as_vector(x)
    base = derive_seed(seed.master, seed.purpose, seed.entity, seed.replicate)
    n = len(arrivals)
    blocks = [(b, lo, min(lo + block_size, n)) for b, lo in enumerate(range(0, n, block_size))]

    def run(job):
        b, lo, hi = job
        return _walk_block(arrivals, lo, hi, x, graph, base, b)

    total = np.zeros((arrivals.horizon, len(RESOURCES)), dtype=np.int64)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(job) for job in blocks]
    for part in parts:
        total += part
    return OccupancyTrace(total)


# -- exact oracle ------------------------------------------------------------


def _paths(graph: StateGraph, state: str, prefix=()):
    if graph.is_absorbing(state):
        yield prefix
        return
    for e in graph.outgoing(state):
        yield from _paths(graph, e.target, prefix + (e,))


def expected_occupancy_oracle(arrivals: ArrivalSchedule, x, graph: StateGraph) -> np.ndarray:
    """Exact expected daily counts by enumerating every root-to-absorbing path.

    Only defined in the deterministic-duration limit (``x13 >= 1e6``), where
    each path fixes its intervals exactly.
    """
    x = as_vector(x)
    if not x[SHAPE_INDEX - 1] >= DEGENERATE_SHAPE:
        raise ValueError("oracle requires deterministic durations")
    horizon = arrivals.horizon
    scale = risk_scale(arrivals.age, arrivals.male, x)
    expected = np.zeros((horizon, len(RESOURCES)))
    branch_cache: dict[str, np.ndarray] = {}
    for path in _paths(graph, graph.states[0]):
        prob = np.ones(len(arrivals))
        offset, spans = 0.0, []
        for e in path:
            edges = graph.outgoing(e.source)
            if e.source not in branch_cache:
                branch_cache[e.source] = branch_probs(edges, x, scale)
            prob = prob * branch_cache[e.source][:, edges.index(e)]
            dur = 0.0 if e.duration is None else x[e.duration - 1]
            tag = graph.resources.get(e.source)
            if tag is not None and dur > 0:
                spans.append((RESOURCES.index(tag), offset, offset + dur))
            offset += dur
        weight = np.bincount(arrivals.day, weights=prob, minlength=horizon)
        for day in np.flatnonzero(weight):
            for j, s, t in spans:
                covered = census(np.array([day + s]), np.array([day + t]), horizon)
                expected[:, j] += weight[day] * covered
    return expected
