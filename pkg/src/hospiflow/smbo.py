"""Sequential model-based optimisation with a Kriging surrogate.

Loop: Latin hypercube start design, then fit -> propose -> evaluate until
the budget of expensive evaluations is spent. Masked parameters sit at the
midpoint of their bounds and are simulated but never searched.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .objective import EvaluationResult
from .params import ParamSpace, repair
from .stochastic import lhs_unit, stream
from .surrogates import Design, KrigingConfig, KrigingModel, expected_improvement_from, fit_kriging

log = logging.getLogger(__name__)

INFILL_EI = "expected-improvement"
INFILL_MEAN = "predicted-value"

Objective = Callable[[np.ndarray], "EvaluationResult | float"]


@dataclass(frozen=True)
class OptimizerConfig:
    budget: int = 100
    # None means 2 * (free dimensions) + 2
    init_size: int | None = None
    infill: str = INFILL_EI
    replicates: int = 5
    mask: frozenset[int] = frozenset()
    starts: int = 200
    steps: int = 50
    seed: int = 0
    workers: int = 1
    kriging: KrigingConfig = field(default_factory=KrigingConfig)

    def free(self, space: ParamSpace) -> list[int]:
        return [i for i in range(1, len(space) + 1) if i not in self.mask]

    def initial_size(self, space: ParamSpace) -> int:
        return self.init_size if self.init_size is not None else 2 * len(self.free(space)) + 2

    def check(self, space: ParamSpace, design: bool = True) -> None:
        if self.infill not in (INFILL_EI, INFILL_MEAN):
            raise ValueError(f"unknown infill criterion {self.infill!r}")
        bad = [i for i in self.mask if not 1 <= i <= len(space)]
        if bad:
            raise ValueError(f"mask holds unknown parameter indices {bad}")
        if not self.free(space):
            raise ValueError("mask leaves no free dimensions")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if not design:
            return
        n0 = self.initial_size(space)
        if n0 < 2:
            raise ValueError("initial design needs at least 2 points")
        if n0 > self.budget:
            raise ValueError(f"initial design ({n0}) exceeds the budget ({self.budget})")

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "init_size": self.init_size,
            "infill": self.infill,
            "replicates": self.replicates,
            "mask": sorted(self.mask),
            "starts": self.starts,
            "steps": self.steps,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Evaluation:
    x: np.ndarray
    result: EvaluationResult
    tag: str


@dataclass
class OptimizationRecord:
    evaluations: list[Evaluation]
    best_trajectory: list[float]
    config: dict
    method: str = "smbo"
    timings: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.evaluations)

    @property
    def scores(self) -> np.ndarray:
        return np.array([e.result.mean_score for e in self.evaluations])

    @property
    def final_best(self) -> float:
        return self.best_trajectory[-1] if self.best_trajectory else float("inf")

    @property
    def best(self) -> Evaluation:
        ok = [e for e in self.evaluations if e.result.ok]
        if not ok:
            raise ValueError("no successful evaluation")
        return min(ok, key=lambda e: e.result.mean_score)

    def design(self, space: ParamSpace, columns=None) -> Design:
        ok = [e for e in self.evaluations if e.result.ok]
        X = np.array([e.x for e in ok])
        y = np.array([e.result.mean_score for e in ok])
        return Design.from_raw(X, y, space, columns)

    def to_dict(self) -> dict:
        def num(v):
            return v if np.isfinite(v) else None

        return {
            "method": self.method,
            "config": self.config,
            "evaluations": [
                {"iteration": k, "tag": e.tag, "x": e.x.tolist(), **e.result.to_dict()}
                for k, e in enumerate(self.evaluations)
            ],
            "best_trajectory": [num(v) for v in self.best_trajectory],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = len(self.evaluations[0].x) if self.evaluations else 0
        w.writerow(["iteration", *(f"x{i}" for i in range(1, d + 1)), "meanScore", "bestSoFar"])
        for k, (e, b) in enumerate(zip(self.evaluations, self.best_trajectory)):
            w.writerow([k, *(repr(float(v)) for v in e.x), repr(e.result.mean_score), repr(b)])
        return buf.getvalue()


def fix_excluded(space: ParamSpace, mask) -> dict[int, float]:
    mask = set(mask)
    if mask and mask >= set(range(1, len(space) + 1)):
        raise ValueError("mask leaves no free dimensions")
    return {i: space[i].midpoint for i in sorted(mask)}


def _assemble(space: ParamSpace, free: list[int], unit: np.ndarray, fixed: dict[int, float]) -> np.ndarray:
    """Full raw vectors from unit coordinates on the free dimensions."""
    unit = np.atleast_2d(unit)
    out = np.tile(space.midpoints, (len(unit), 1))
    sel = [i - 1 for i in free]
    out[:, sel] = space.lower[sel] + unit * (space.upper[sel] - space.lower[sel])
    for i, v in fixed.items():
        out[:, i - 1] = v
    return out


def initial_design(space: ParamSpace, cfg: OptimizerConfig) -> list[np.ndarray]:
    cfg.check(space)
    free = cfg.free(space)
    rng = stream(cfg.seed, "initial-design")
    unit = lhs_unit(cfg.initial_size(space), len(free), rng)
    return [repair(space, x) for x in _assemble(space, free, unit, fix_excluded(space, cfg.mask))]


def _infill_score(model: KrigingModel, U: np.ndarray, best: float, infill: str) -> np.ndarray:
    mean, sd = model.predict(U)
    if infill == INFILL_EI:
        return expected_improvement_from(mean, sd, best)
    return -mean


def propose(
    model: KrigingModel,
    record: OptimizationRecord,
    space: ParamSpace,
    cfg: OptimizerConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Maximise the infill criterion on the surrogate and return a full, valid vector."""
    rng = rng if rng is not None else stream(cfg.seed, "propose", len(record))
    free = cfg.free(space)
    k = len(free)
    ok = [e for e in record.evaluations if e.result.ok]
    seen = Design.from_raw(np.array([e.x for e in ok]), np.zeros(len(ok)), space, free).X if ok else np.empty((0, k))
    best = min((e.result.mean_score for e in ok), default=np.inf)

    pos = rng.random((cfg.starts, k))
    if ok:
        order = np.argsort([e.result.mean_score for e in ok], kind="stable")[: min(5, cfg.starts)]
        pos[: len(order)] = np.clip(seen[order], 0.0, 1.0)
    val = _infill_score(model, pos, best, cfg.infill)
    step = np.full(cfg.starts, 0.1)
    rows = np.arange(cfg.starts)
    for _ in range(cfg.steps):
        coord = rng.integers(k, size=cfg.starts)
        plus, minus = pos.copy(), pos.copy()
        plus[rows, coord] = np.minimum(plus[rows, coord] + step, 1.0)
        minus[rows, coord] = np.maximum(minus[rows, coord] - step, 0.0)
        scores = _infill_score(model, np.vstack([plus, minus]), best, cfg.infill)
        sp, sm = scores[: cfg.starts], scores[cfg.starts :]
        take_plus = (sp > val) & (sp >= sm)
        take_minus = (sm > val) & ~take_plus
        pos[take_plus], val[take_plus] = plus[take_plus], sp[take_plus]
        pos[take_minus], val[take_minus] = minus[take_minus], sm[take_minus]
        moved = take_plus | take_minus
        step = np.where(moved, np.minimum(step * 1.25, 0.5), step * 0.8)

    u = pos[int(np.argmax(val))].copy()
    fixed = fix_excluded(space, cfg.mask)
    x = repair(space, _assemble(space, free, u, fixed)[0])
    for _ in range(100):
        ux = Design.from_raw(x[None, :], [0.0], space, free).X[0]
        if not len(seen) or np.min(np.linalg.norm(seen - ux, axis=1)) >= 1e-9:
            break
        u = np.clip(ux + rng.normal(0.0, 1e-3, k), 0.0, 1.0)
        x = repair(space, _assemble(space, free, u, fixed)[0])
    return x


def _call(objective: Objective, x: np.ndarray) -> EvaluationResult:
    try:
        out = objective(x)
    except Exception as exc:  # recorded, budget still spent
        log.warning("evaluation failed: %s", exc)
        return EvaluationResult.failed(0, f"{type(exc).__name__}: {exc}")
    if isinstance(out, EvaluationResult):
        return out
    return EvaluationResult.from_scores([float(out)], 0)


def _evaluate_all(objective: Objective, xs, workers: int) -> list[EvaluationResult]:
    if workers > 1 and len(xs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda x: _call(objective, x), xs))
    return [_call(objective, x) for x in xs]


def _trajectory(evals: list[Evaluation]) -> list[float]:
    best, out = np.inf, []
    for e in evals:
        if e.result.ok:
            best = min(best, e.result.mean_score)
        out.append(float(best))
    return out


def run(objective: Objective, space: ParamSpace, cfg: OptimizerConfig) -> OptimizationRecord:
    cfg.check(space)
    timings = {"initial": 0.0, "fit": 0.0, "propose": 0.0, "evaluate": 0.0}
    t = time.perf_counter()
    xs = initial_design(space, cfg)
    results = _evaluate_all(objective, xs, cfg.workers)
    evals = [Evaluation(x, r, "initial") for x, r in zip(xs, results)]
    timings["initial"] = time.perf_counter() - t
    record = OptimizationRecord(evals, _trajectory(evals), cfg.to_dict(), "smbo", timings)
    free = cfg.free(space)

    while len(evals) < cfg.budget:
        it = len(evals)
        t = time.perf_counter()
        ok = [e for e in evals if e.result.ok]
        model = None
        if len(ok) >= 2:
            design = record.design(space, free)
            model = fit_kriging(design, cfg.kriging, stream(cfg.seed, "kriging", it))
        timings["fit"] += time.perf_counter() - t

        t = time.perf_counter()
        if model is None:
            u = stream(cfg.seed, "fallback", it).random(len(free))
            x = repair(space, _assemble(space, free, u, fix_excluded(space, cfg.mask))[0])
        else:
            x = propose(model, record, space, cfg, stream(cfg.seed, "propose", it))
        timings["propose"] += time.perf_counter() - t

        t = time.perf_counter()
        evals.append(Evaluation(x, _call(objective, x), "infill"))
        timings["evaluate"] += time.perf_counter() - t
        record.best_trajectory = _trajectory(evals)

    record.best_trajectory = _trajectory(evals)
    return record


def random_search_baseline(objective: Objective, space: ParamSpace, cfg: OptimizerConfig) -> OptimizationRecord:
    """Uniform random search with the same budget and bookkeeping as :func:`run`."""
    cfg.check(space, design=False)
    free = cfg.free(space)
    rng = stream(cfg.seed, "random-search")
    fixed = fix_excluded(space, cfg.mask)
    t = time.perf_counter()
    xs = [repair(space, x) for x in _assemble(space, free, rng.random((cfg.budget, len(free))), fixed)]
    evals = [Evaluation(x, r, "random") for x, r in zip(xs, _evaluate_all(objective, xs, cfg.workers))]
    return OptimizationRecord(
        evals, _trajectory(evals), cfg.to_dict(), "random", {"evaluate": time.perf_counter() - t}
    )


def with_mask(cfg: OptimizerConfig, mask) -> OptimizerConfig:
    return replace(cfg, mask=frozenset(int(i) for i in mask))
