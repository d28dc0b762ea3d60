"""Parameter space and hospital state graph.

The simulator is driven by 29 parameters. Indices are 1-based everywhere in the
public API (``x14`` is ``x[13]`` in the underlying array) because reports,
configs and CLI flags all talk about parameters by their number.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

N_PARAMS = 29


class Role(str, Enum):
    DURATION = "duration-days"
    PROBABILITY = "probability"
    DISTRIBUTION = "distribution"
    RISK = "risk"


# States in severity (topological) order. Healthy and Death are absorbing.
STATES = (
    "Infected",
    "Hospital",
    "Normal",
    "Intensive",
    "Ventilation",
    "IntensiveAfter",
    "Aftercare",
    "Healthy",
    "Death",
)
ABSORBING = frozenset({"Healthy", "Death"})
RESOURCES = ("bed", "icu", "vent")

RESOURCE_TAG = {
    "Infected": None,
    "Hospital": None,
    "Normal": "bed",
    "Intensive": "icu",
    "Ventilation": "vent",
    "IntensiveAfter": "icu",
    "Aftercare": "bed",
    "Healthy": None,
    "Death": None,
}


@dataclass(frozen=True)
class ParamDef:
    index: int
    name: str
    role: Role
    lower: float
    upper: float
    default: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class Edge:
    """Transition between two states.

    ``prob`` is a parameter index, or ``None`` for the complement edge that
    takes whatever probability mass the explicit siblings leave. ``duration``
    is a parameter index, or ``None`` for an instantaneous transition.
    """

    source: str
    target: str
    prob: int | None
    duration: int | None
    risk_sensitive: bool = False

    @property
    def key(self) -> str:
        return f"{self.source}->{self.target}"


@dataclass(frozen=True)
class StateGraph:
    states: tuple[str, ...]
    edges: tuple[Edge, ...]
    resources: dict[str, str | None] = field(default_factory=dict, hash=False, compare=False)

    def outgoing(self, state: str) -> tuple[Edge, ...]:
        """Outgoing edges, explicit edges first and the complement edge last."""
        out = [e for e in self.edges if e.source == state]
        return tuple(sorted(out, key=lambda e: e.prob is None))

    def is_absorbing(self, state: str) -> bool:
        return not any(e.source == state for e in self.edges)

    @property
    def transient_states(self) -> tuple[str, ...]:
        return tuple(s for s in self.states if not self.is_absorbing(s))

    @property
    def risk_sensitive_edges(self) -> frozenset[str]:
        return frozenset(e.key for e in self.edges if e.risk_sensitive)


def _edge(src, dst, prob, dur, risk=False):
    return Edge(src, dst, prob, dur, risk)


def canonical_graph() -> StateGraph:
    edges = (
        _edge("Infected", "Hospital", 14, 1),
        _edge("Infected", "Healthy", None, 24),
        _edge("Hospital", "Intensive", 15, None, True),
        _edge("Hospital", "Ventilation", 16, None, True),
        _edge("Hospital", "Normal", None, None),
        _edge("Normal", "Intensive", 17, 3, True),
        _edge("Normal", "Ventilation", 18, 4, True),
        _edge("Normal", "Death", 19, 5, True),
        _edge("Normal", "Healthy", None, 2),
        _edge("Intensive", "Ventilation", 20, 7),
        _edge("Intensive", "Death", 21, 8, True),
        _edge("Intensive", "Aftercare", None, 6),
        _edge("Ventilation", "IntensiveAfter", 22, 9),
        _edge("Ventilation", "Death", None, 10),
        _edge("IntensiveAfter", "Death", 23, 12, True),
        _edge("IntensiveAfter", "Healthy", None, 11),
        _edge("Aftercare", "Healthy", None, 28),
    )
    return StateGraph(STATES, edges, dict(RESOURCE_TAG))


D, P, G, R = Role.DURATION, Role.PROBABILITY, Role.DISTRIBUTION, Role.RISK

# (index, name, role, lower, upper, default). Shipped artifact defaults, not
# clinical ground truth.
_CANONICAL = (
    (1, "AmntDaysInfectedToHospital", D, 3.0, 14.0, 7.0),
    (2, "AmntDaysNormalToHealthy", D, 5.0, 20.0, 10.0),
    (3, "AmntDaysNormalToIntensive", D, 1.5, 8.0, 3.0),
    (4, "AmntDaysNormalToVentilation", D, 1.5, 8.0, 3.0),
    (5, "AmntDaysNormalToDeath", D, 3.0, 16.0, 8.0),
    (6, "AmntDaysIntensiveToAftercare", D, 3.0, 16.0, 8.0),
    (7, "AmntDaysIntensiveToVentilation", D, 1.0, 6.0, 2.0),
    (8, "AmntDaysIntensiveToDeath", D, 3.0, 14.0, 7.0),
    (9, "AmntDaysVentilationToIntensiveAfter", D, 5.0, 25.0, 12.0),
    (10, "AmntDaysVentilationToDeath", D, 4.0, 20.0, 10.0),
    (11, "AmntDaysIntensiveAfterToHealthy", D, 2.0, 10.0, 5.0),
    (12, "AmntDaysIntensiveAfterToDeath", D, 2.0, 10.0, 5.0),
    (13, "GammaShapeParameter", G, 0.5, 10.0, 2.0),
    (14, "FactorPatientsInfectedToHospital", P, 0.01, 0.2, 0.07),
    (15, "FactorPatientsHospitalToIntensive", P, 0.02, 0.3, 0.1),
    (16, "FactorPatientsHospitalToVentilation", P, 0.01, 0.2, 0.05),
    (17, "FactorPatientsNormalToIntensive", P, 0.02, 0.25, 0.1),
    (18, "FactorPatientsNormalToVentilation", P, 0.01, 0.2, 0.05),
    (19, "FactorPatientsNormalToDeath", P, 0.01, 0.2, 0.05),
    (20, "FactorPatientsIntensiveToVentilation", P, 0.1, 0.5, 0.3),
    (21, "FactorPatientsIntensiveToDeath", P, 0.02, 0.3, 0.1),
    (22, "FactorPatientsVentilationToIntensiveAfter", P, 0.4, 0.95, 0.7),
    (23, "FactorPatientsIntensiveAfterToDeath", P, 0.02, 0.3, 0.1),
    (24, "AmntDaysInfectedToHealthy", D, 7.0, 21.0, 14.0),
    (25, "RiskFactorA", R, 0.005, 0.05, 0.02),
    (26, "RiskFactorB", R, 0.0, 0.07, 0.03),
    (27, "RiskMale", R, 1.0, 2.0, 1.5),
    (28, "AmntDaysAftercareToHealthy", D, 3.0, 14.0, 7.0),
    (29, "GammaTranslation", G, 0.0, 0.9, 0.5),
)

SHAPE_INDEX = 13
TRANSLATION_INDEX = 29
RISK_A, RISK_B, RISK_MALE = 25, 26, 27


@dataclass(frozen=True)
class ParamSpace:
    entries: tuple[ParamDef, ...]
    graph: StateGraph

    def __post_init__(self):
        problems = check_space(self)
        if problems:
            raise ValueError("invalid parameter space: " + "; ".join(problems))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> ParamDef:
        if not 1 <= index <= len(self.entries):
            raise KeyError(f"unknown parameter index {index}")
        return self.entries[index - 1]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.entries]

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.entries])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.entries])

    @property
    def defaults(self) -> np.ndarray:
        return np.array([p.default for p in self.entries])

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def risk_sensitive_edges(self) -> frozenset[str]:
        return self.graph.risk_sensitive_edges

    def index(self, name: str) -> int:
        for p in self.entries:
            if p.name == name:
                return p.index
        raise KeyError(name)

    def replace_entry(self, index: int, **changes) -> "ParamSpace":
        """Copy of the space with one entry's fields changed (used for config overrides)."""
        entries = list(self.entries)
        old = entries[index - 1]
        fields = dict(
            index=old.index, name=old.name, role=old.role,
            lower=old.lower, upper=old.upper, default=old.default,
        )
        fields.update(changes)
        entries[index - 1] = ParamDef(**fields)
        return ParamSpace(tuple(entries), self.graph)


def check_space(space: ParamSpace) -> list[str]:
    problems = []
    entries = space.entries
    if len(entries) != N_PARAMS:
        problems.append(f"expected {N_PARAMS} parameters, got {len(entries)}")
    if len({p.name for p in entries}) != len(entries):
        problems.append("parameter names are not unique")
    for pos, p in enumerate(entries, start=1):
        if p.index != pos:
            problems.append(f"entry {pos} carries index {p.index}")
        if not p.lower < p.upper:
            problems.append(f"x{p.index}: lower bound must be below upper bound")
        if not p.lower <= p.default <= p.upper:
            problems.append(f"x{p.index}: default {p.default} outside [{p.lower}, {p.upper}]")
        if p.role is Role.PROBABILITY and not (0.0 <= p.lower and p.upper <= 1.0):
            problems.append(f"x{p.index}: probability bounds must lie in [0, 1]")
        if p.role is Role.DURATION and p.lower <= 0.0:
            problems.append(f"x{p.index}: duration bounds must be positive")
    if len(entries) == N_PARAMS:
        if entries[SHAPE_INDEX - 1].lower <= 0.0:
            problems.append(f"x{SHAPE_INDEX}: shape bound must be positive")
        t_max = entries[TRANSLATION_INDEX - 1].upper
        for p in entries:
            if p.role is Role.DURATION and p.lower <= t_max:
                problems.append(
                    f"x{p.index}: duration lower bound must exceed the translation upper bound {t_max}"
                )
        problems.extend(_check_bindings(space.graph, entries))
    return problems


def _check_bindings(graph: StateGraph, entries) -> list[str]:
    problems = []
    for state in graph.transient_states:
        n_comp = sum(e.prob is None for e in graph.outgoing(state))
        if n_comp != 1:
            problems.append(f"state {state} has {n_comp} complement edges")
    for s in ABSORBING & set(graph.states):
        if not graph.is_absorbing(s):
            problems.append(f"state {s} must be absorbing")
    for e in graph.edges:
        if graph.states.index(e.source) >= graph.states.index(e.target):
            problems.append(f"edge {e.key} breaks the severity order")
    prob_refs = [e.prob for e in graph.edges if e.prob is not None]
    dur_refs = [e.duration for e in graph.edges if e.duration is not None]
    for p in entries:
        if p.role is Role.PROBABILITY and prob_refs.count(p.index) != 1:
            problems.append(f"x{p.index}: probability bound to {prob_refs.count(p.index)} edges")
        if p.role is Role.DURATION and dur_refs.count(p.index) != 1:
            problems.append(f"x{p.index}: duration bound to {dur_refs.count(p.index)} edges")
    return problems


def canonical_space() -> ParamSpace:
    entries = tuple(ParamDef(i, n, r, lo, hi, d) for i, n, r, lo, hi, d in _CANONICAL)
    return ParamSpace(entries, canonical_graph())


# -- vectors -----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    index: int | None
    reason: str

    def __str__(self) -> str:
        where = f"x{self.index}: " if self.index is not None else ""
        return where + self.reason


def as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (N_PARAMS,):
        raise ValueError(f"parameter vector must have {N_PARAMS} components, got shape {x.shape}")
    return x


def explicit_probability_sums(graph: StateGraph, x: np.ndarray) -> dict[str, float]:
    sums = {}
    for state in graph.transient_states:
        sums[state] = float(sum(x[e.prob - 1] for e in graph.outgoing(state) if e.prob is not None))
    return sums


def validate_vector(space: ParamSpace, x) -> list[Violation]:
    """Every violation of bounds and probability mass; an empty list means valid."""
    x = as_vector(x)
    out = []
    for p in space.entries:
        v = x[p.index - 1]
        if not np.isfinite(v):
            out.append(Violation(p.index, "not finite"))
        elif not p.lower <= v <= p.upper:
            out.append(Violation(p.index, f"out of bounds: {v:g} not in [{p.lower:g}, {p.upper:g}]"))
    for state, total in explicit_probability_sums(space.graph, x).items():
        if total > 1.0 + 1e-12:
            out.append(Violation(None, f"negative complement at {state} (explicit sum {total:g})"))
    return out


def is_valid(space: ParamSpace, x) -> bool:
    return not validate_vector(space, x)


def repair(space: ParamSpace, x) -> np.ndarray:
    """Clip to bounds, then shrink explicit probabilities wherever their sum exceeds one."""
    x = np.clip(as_vector(x).copy(), space.lower, space.upper)
    for state, total in explicit_probability_sums(space.graph, x).items():
        if total > 1.0:
            for e in space.graph.outgoing(state):
                if e.prob is not None:
                    x[e.prob - 1] *= (1.0 - 1e-9) / total
    return x


def midpoint(space: ParamSpace, subset: Iterable[int]) -> dict[int, float]:
    out = {}
    for i in sorted(set(subset)):
        out[i] = space[i].midpoint
    return out


class Perturbation(NamedTuple):
    x: np.ndarray
    clamped: bool


def perturb(space: ParamSpace, x, i: int, factor: float) -> Perturbation:
    """Scale component ``i`` by ``1 + factor`` and clamp it to its bounds."""
    if factor <= -1.0:
        raise ValueError("factor must exceed -1")
    x = as_vector(x).copy()
    p = space[i]
    raw = x[i - 1] * (1.0 + factor)
    new = min(max(raw, p.lower), p.upper)
    x[i - 1] = new
    return Perturbation(x, new != raw)


# -- serialization -----------------------------------------------------------

SPACE_HEADER = ["index", "name", "role", "lower", "upper", "default"]


def space_to_csv(space: ParamSpace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SPACE_HEADER)
    for p in space.entries:
        w.writerow([p.index, p.name, p.role.value, repr(p.lower), repr(p.upper), repr(p.default)])
    return buf.getvalue()


def read_space(path: str | Path, graph: StateGraph | None = None) -> ParamSpace:
    """Load a parameter table. The graph topology is fixed in code."""
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != SPACE_HEADER:
        raise ValueError(f"{path}: header must be {','.join(SPACE_HEADER)}")
    entries = []
    for line_no, r in enumerate(rows[1:], start=2):
        try:
            idx, name, role, lo, hi, d = (c.strip() for c in r)
            entries.append(ParamDef(int(idx), name, Role(role), float(lo), float(hi), float(d)))
        except ValueError as exc:
            raise ValueError(f"{path}: row {line_no}: {exc}") from None
    return ParamSpace(tuple(entries), graph or canonical_graph())
