"""Surrogate-based sensitivity analysis.

Importance studies turn repeated surrogate fits into per-parameter positions
(``d`` for the most important, 1 for the least) and average them into an
index in ``[1/d, 1]``. Delta-error studies perturb one parameter at a time
on the simulator itself. Removal experiments rerun the optimiser with
growing sets of parameters frozen at their midpoints.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from scipy.stats import wilcoxon

from .objective import EvaluationResult
from .params import ParamSpace, as_vector, perturb, repair
from .smbo import OptimizerConfig, run
from .stochastic import derive_seed, stream
from .surrogates import (
    MODEL_TYPES,
    Design,
    ForestConfig,
    KrigingConfig,
    KrigingModel,
    fit_forest,
    fit_kriging,
    fit_linear,
    importance,
    importance_positions,
)

log = logging.getLogger(__name__)

# O_i = d marks the most important parameter, so a larger index means more important.
ORIENTATION = "descending-importance:d-is-most-important"


class _Evaluator(Protocol):
    def evaluate(self, x, seed: int, replicates: int | None = None) -> EvaluationResult: ...


@dataclass(frozen=True)
class RankTable:
    model_type: str
    runs: np.ndarray  # n x d positions, d = most important

    def __post_init__(self):
        runs = np.atleast_2d(np.asarray(self.runs, dtype=float))
        object.__setattr__(self, "runs", runs)
        d = runs.shape[1]
        if np.any(runs < 1) or np.any(runs > d):
            raise ValueError("positions must lie in 1..d")
        if not np.allclose(runs.sum(axis=1), d * (d + 1) / 2):
            raise ValueError("each run must be a (tie-averaged) permutation of 1..d")

    @property
    def n(self) -> int:
        return self.runs.shape[0]

    @property
    def d(self) -> int:
        return self.runs.shape[1]

    @classmethod
    def from_scores(cls, model_type: str, scores: Sequence[Sequence[float]]) -> "RankTable":
        return cls(model_type, np.array([importance_positions(s) for s in scores]))


def importance_index(table: RankTable) -> np.ndarray:
    return table.runs.sum(axis=0) / (table.n * table.d)


@dataclass
class ImportanceReport:
    columns: tuple[int, ...]
    tables: dict[str, RankTable]
    failures: dict[str, list[str]]
    requested: int
    seed: int
    orientation: str = ORIENTATION

    @property
    def d(self) -> int:
        return len(self.columns)

    def p_star(self, model_type: str) -> np.ndarray:
        return importance_index(self.tables[model_type])

    def top(self, model_type: str, k: int) -> list[int]:
        p = self.p_star(model_type)
        order = sorted(range(self.d), key=lambda c: (-p[c], c))
        return [self.columns[c] for c in order[:k]]

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        kinds = list(self.tables)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "name", *(f"P_{k}" for k in kinds)])
        values = {k: self.p_star(k) for k in kinds}
        for c, col in enumerate(self.columns):
            name = names[col - 1] if names is not None else f"x{col}"
            w.writerow([col, name, *(repr(float(values[k][c])) for k in kinds)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "seed": self.seed,
            "requested_runs": self.requested,
            "runs": {k: t.n for k, t in self.tables.items()},
            "failures": self.failures,
            "orientation": self.orientation,
            "p_star": {k: self.p_star(k).tolist() for k in self.tables},
        }


def _fit(model_type: str, design: Design, rng: np.random.Generator, kriging: KrigingConfig, forest: ForestConfig):
    if model_type == "kriging":
        return fit_kriging(design, kriging, rng)
    if model_type == "linear":
        return fit_linear(design)
    if model_type == "forest":
        return fit_forest(design, forest, rng)
    raise ValueError(f"unknown model type {model_type!r}")


def run_importance_study(
    design: Design,
    n: int = 20,
    model_types: Sequence[str] = MODEL_TYPES,
    seed: int = 0,
    workers: int = 1,
    kriging: KrigingConfig | None = None,
    forest: ForestConfig | None = None,
) -> ImportanceReport:
    """Fit ``n`` seeded models per family and aggregate their importance positions.

    A failed fit is logged and dropped, so a table may hold fewer than ``n`` runs.
    """
    if n < 1:
        raise ValueError("need at least one model run")
    kriging = kriging or KrigingConfig()
    forest = forest or ForestConfig()

    def one(job):
        kind, r = job
        try:
            model = _fit(kind, design, stream(seed, f"importance:{kind}", r), kriging, forest)
            return importance(model), None
        except (ValueError, np.linalg.LinAlgError) as exc:
            return None, f"run {r}: {exc}"

    jobs = [(k, r) for k in model_types for r in range(n)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    tables, failures = {}, {}
    for k in model_types:
        mine = [res for (kind, _), res in zip(jobs, results) if kind == k]
        scores = [s for s, _ in mine if s is not None]
        errs = [e for _, e in mine if e is not None]
        if errs:
            failures[k] = errs
            log.warning("%s: %d of %d fits failed", k, len(errs), n)
        if scores:
            tables[k] = RankTable.from_scores(k, scores)
    return ImportanceReport(tuple(design.columns), tables, failures, n, seed)


def delta_error(base: float, perturbed: float) -> float:
    """Absolute relative change of the mean error, in percent."""
    return abs(base - perturbed) / base * 100.0


@dataclass
class DeltaErrorReport:
    delta: float
    replicates: int
    parameters: tuple[int, ...]
    # values[i][c] = (ΔE for +delta, ΔE for -delta) on config c
    values: dict[int, list[tuple[float, float]]]
    noise: list[tuple[float, float]]
    base_errors: list[float]
    skipped: list[int] = field(default_factory=list)
    seed: int = 0

    def pooled(self, i: int) -> np.ndarray:
        return np.array(self.values[i], dtype=float).ravel()

    def noise_pooled(self) -> np.ndarray:
        return np.array(self.noise, dtype=float).ravel()

    def mean(self, i: int) -> float:
        return float(self.pooled(i).mean())

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        k = len(self.noise)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cells = [f"c{c}{s}" for c in range(k) for s in ("+", "-")]
        w.writerow(["parameter", "name", "meanDeltaE", *cells])
        for i in self.parameters:
            name = names[i - 1] if names is not None else f"x{i}"
            w.writerow([i, name, repr(self.mean(i)), *(repr(float(v)) for v in self.pooled(i))])
        noise = self.noise_pooled()
        w.writerow(["noise", "re-evaluation", repr(float(noise.mean())), *(repr(float(v)) for v in noise)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "replicates": self.replicates,
            "seed": self.seed,
            "configs": len(self.base_errors),
            "skipped": self.skipped,
            "base_errors": self.base_errors,
            "mean": {str(i): self.mean(i) for i in self.parameters},
            "noise_mean": float(self.noise_pooled().mean()) if self.noise else None,
        }


def delta_error_study(
    configs: Sequence,
    objective: _Evaluator,
    space: ParamSpace,
    delta: float = 0.2,
    replicates: int = 10,
    seed: int = 0,
    parameters: Sequence[int] | None = None,
    workers: int = 1,
) -> DeltaErrorReport:
    """One-at-a-time ±delta perturbations of each parameter around each config.

    The base error of a config uses its own seed. Each direction gets a second
    seed shared by every perturbed run and by an unperturbed re-evaluation, so
    the re-evaluation row is the noise floor a parameter without influence
    would produce.
    """
    params = tuple(parameters) if parameters is not None else tuple(range(1, len(space) + 1))
    configs = [as_vector(c) for c in configs]
    if not configs:
        raise ValueError("need at least one configuration")

    def score(x, s) -> float:
        res = objective.evaluate(x, s, replicates)
        if not res.ok:
            raise RuntimeError(res.error or "evaluation failed")
        return res.mean_score

    def pool_map(fn, items):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(fn, items))
        return [fn(it) for it in items]

    base = pool_map(lambda c: score(configs[c], derive_seed(seed, "delta-base", c)), range(len(configs)))
    kept = [c for c in range(len(configs)) if base[c] > 0]
    skipped = [c for c in range(len(configs)) if base[c] <= 0]
    for c in skipped:
        log.warning("config %d skipped: zero base error", c)

    dirs = ((0, delta), (1, -delta))

    def job(item):
        c, i, (d_id, factor) = item
        s = derive_seed(seed, "delta-direction", c, d_id)
        x = configs[c] if i == 0 else repair(space, perturb(space, configs[c], i, factor).x)
        return delta_error(base[c], score(x, s))

    items = [(c, i, d) for c in kept for i in (0, *params) for d in dirs]
    out = dict(zip(((c, i, d[0]) for c, i, d in items), pool_map(job, items)))
    values = {i: [(out[c, i, 0], out[c, i, 1]) for c in kept] for i in params}
    noise = [(out[c, 0, 0], out[c, 0, 1]) for c in kept]
    return DeltaErrorReport(delta, replicates, params, values, noise, [base[c] for c in kept], skipped, seed)


@dataclass(frozen=True)
class Grid:
    i: int
    j: int
    xi: np.ndarray
    xj: np.ndarray
    response: np.ndarray  # len(xi) x len(xj)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{self.i}", f"x{self.j}", "response"])
        for a, vi in enumerate(self.xi):
            for b, vj in enumerate(self.xj):
                w.writerow([repr(float(vi)), repr(float(vj)), repr(float(self.response[a, b]))])
        return buf.getvalue()


def parameter_grid(model, i: int, j: int, base, m: int) -> Grid:
    """Surrogate mean over an ``m x m`` grid spanning the bounds of parameters ``i`` and ``j``."""
    if i == j:
        raise ValueError("grid needs two distinct parameters")
    if m < 1:
        raise ValueError("resolution must be positive")
    cols = list(model.inputs.columns)
    if i not in cols or j not in cols:
        raise ValueError(f"model has no input for x{i if i not in cols else j}")
    ci, cj = cols.index(i), cols.index(j)
    lo, hi = model.inputs.lower, model.inputs.upper

    def axis(c):
        if m == 1:
            return np.array([0.5 * (lo[c] + hi[c])])
        return np.linspace(lo[c], hi[c], m)

    xi, xj = axis(ci), axis(cj)
    x = np.tile(as_vector(base), (m * m, 1))
    gi, gj = np.meshgrid(xi, xj, indexing="ij")
    x[:, i - 1] = gi.ravel()
    x[:, j - 1] = gj.ravel()
    pred = model.predict(model.inputs.to_unit(x))
    mean = pred[0] if isinstance(model, KrigingModel) else pred
    return Grid(i, j, xi, xj, np.asarray(mean, dtype=float).reshape(m, m))


def paired_rank_test(a, b, alternative: str = "two-sided") -> float:
    """Wilcoxon signed-rank p-value for paired samples; 1.0 when every pair is equal."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if not np.any(diff):
        return 1.0
    return float(wilcoxon(diff, alternative=alternative).pvalue)


@dataclass
class RemovalRow:
    excluded: tuple[int, ...]
    final_best: list[float]
    seconds: float

    @property
    def median(self) -> float:
        return float(np.median(self.final_best))


@dataclass
class RemovalTable:
    rows: list[RemovalRow]
    seeds: list[int]

    def compare(self, a: int, b: int, alternative: str = "two-sided") -> float:
        """Paired rank test between rows ``a`` and ``b`` (paired by optimiser seed)."""
        return paired_rank_test(self.rows[a].final_best, self.rows[b].final_best, alternative)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["excluded", "size", "median", *(f"seed{s}" for s in range(len(self.seeds)))])
        for r in self.rows:
            w.writerow([" ".join(map(str, r.excluded)), len(r.excluded), repr(r.median), *map(repr, r.final_best)])
        return buf.getvalue()


def removal_experiment(
    space: ParamSpace,
    objective,
    exclusion_sets: Sequence[Sequence[int]],
    cfg: OptimizerConfig,
    repeats: int = 10,
) -> RemovalTable:
    """Rerun the optimiser for each exclusion set; repeat ``r`` shares its seed across sets."""
    sets = [tuple(sorted(set(s))) for s in exclusion_sets]
    for prev, cur in zip(sets, sets[1:]):
        if not set(prev) < set(cur):
            raise ValueError("exclusion sets must be nested and strictly increasing")
    seeds = [derive_seed(cfg.seed, "removal", r) for r in range(repeats)]
    rows = []
    for s in sets:
        t = time.perf_counter()
        best = [run(objective, space, replace(cfg, mask=frozenset(s), seed=sd)).final_best for sd in seeds]
        rows.append(RemovalRow(s, best, time.perf_counter() - t))
    return RemovalTable(rows, seeds)
