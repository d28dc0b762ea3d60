import json

import numpy as np
import pytest

from hospiflow.objective import EvaluationResult
from hospiflow.params import is_valid
from hospiflow.smbo import (
    INFILL_MEAN,
    Evaluation,
    OptimizationRecord,
    OptimizerConfig,
    fix_excluded,
    initial_design,
    propose,
    random_search_baseline,
    run,
)
from hospiflow.surrogates import fit_kriging

FREE5 = (1, 2, 3, 5, 6)
CENTER = np.array([0.2, 0.7, 0.4, 0.9, 0.35])


def mask_except(free):
    return frozenset(set(range(1, 30)) - set(free))


def sphere(space, free=FREE5, center=CENTER):
    sel = [i - 1 for i in free]

    def f(x):
        u = (x[sel] - space.lower[sel]) / (space.upper[sel] - space.lower[sel])
        return float(np.sum((u - center) ** 2))

    return f


def test_initial_design_valid(space):
    xs = initial_design(space, OptimizerConfig(init_size=10))
    assert len(xs) == 10 and all(is_valid(space, x) for x in xs)


def test_initial_design_masked_dimension_at_midpoint(space):
    xs = initial_design(space, OptimizerConfig(init_size=10, mask=frozenset({13})))
    assert all(x[12] == space[13].midpoint for x in xs)


def test_initial_design_stratified_on_free_dims(space):
    xs = np.array(initial_design(space, OptimizerConfig(init_size=10, budget=20, mask=mask_except(FREE5))))
    for i in FREE5:
        u = (xs[:, i - 1] - space[i].lower) / (space[i].upper - space[i].lower)
        assert sorted(np.floor(u * 10).astype(int)) == list(range(10))


def test_fix_excluded(space):
    assert fix_excluded(space, set()) == {}
    s = space.replace_entry(5, lower=3.0, upper=9.0, default=6.0)
    assert fix_excluded(s, {5}) == {5: 6.0}
    with pytest.raises(ValueError, match="mask leaves no free dimensions"):
        fix_excluded(space, range(1, 30))


def test_config_checks(space):
    with pytest.raises(ValueError, match="no free"):
        OptimizerConfig(mask=frozenset(range(1, 30))).check(space)
    with pytest.raises(ValueError, match="exceeds the budget"):
        OptimizerConfig(budget=10, init_size=12).check(space)
    with pytest.raises(ValueError, match="unknown parameter"):
        OptimizerConfig(mask=frozenset({30})).check(space)
    assert OptimizerConfig().initial_size(space) == 60
    assert OptimizerConfig(mask=frozenset({1, 2})).initial_size(space) == 56


def record_of(space, xs, ys):
    evals = [Evaluation(x, EvaluationResult.from_scores([y], 0), "initial") for x, y in zip(xs, ys)]
    return OptimizationRecord(evals, [], {})


def test_predicted_value_finds_bowl_minimum(space):
    cfg = OptimizerConfig(init_size=12, budget=20, infill=INFILL_MEAN, mask=mask_except((2,)))
    xs = initial_design(space, cfg)
    u = lambda x: (x[1] - space[2].lower) / (space[2].upper - space[2].lower)  # noqa: E731
    rec = record_of(space, xs, [(u(x) - 0.3) ** 2 for x in xs])
    model = fit_kriging(rec.design(space, [2]), rng=np.random.default_rng(0))
    cand = propose(model, rec, space, cfg)
    assert abs(u(cand) - 0.3) < 0.05
    assert is_valid(space, cand)
    masked = [i for i in range(1, 30) if i != 2]
    assert all(cand[i - 1] == space[i].midpoint for i in masked)


def test_flat_surrogate_still_proposes(space):
    cfg = OptimizerConfig(init_size=6, budget=10, mask=mask_except(FREE5))
    xs = initial_design(space, cfg)
    rec = record_of(space, xs, [1.0] * 6)
    model = fit_kriging(rec.design(space, FREE5))
    assert model.degenerate
    cand = propose(model, rec, space, cfg)
    assert is_valid(space, cand)
    assert min(np.linalg.norm(cand - x) for x in xs) > 0


def test_budget_equal_to_design(space):
    f = sphere(space)
    rec = run(f, space, OptimizerConfig(budget=8, init_size=8, mask=mask_except(FREE5)))
    assert len(rec) == 8 and all(e.tag == "initial" for e in rec.evaluations)
    assert rec.final_best == min(f(e.x) for e in rec.evaluations)


def test_record_bookkeeping_and_determinism(space):
    cfg = OptimizerConfig(budget=18, init_size=8, mask=mask_except(FREE5), seed=3)
    a = run(sphere(space), space, cfg)
    b = run(sphere(space), space, cfg)
    assert len(a) == len(a.best_trajectory) == 18
    assert np.all(np.diff(a.best_trajectory) <= 0)
    assert a.to_csv() == b.to_csv()
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    xs = np.array([e.x for e in a.evaluations])
    masked = sorted(mask_except(FREE5))
    assert np.all(xs[:, [i - 1 for i in masked]] == xs[0, [i - 1 for i in masked]])
    assert len({tuple(x) for x in xs}) == 18


def test_trajectory_csv_shape(space):
    rec = run(sphere(space), space, OptimizerConfig(budget=10, init_size=8, mask=mask_except(FREE5)))
    lines = rec.to_csv().splitlines()
    assert lines[0].split(",")[0] == "iteration" and lines[0].split(",")[-2:] == ["meanScore", "bestSoFar"]
    assert len(lines) == 11 and len(lines[1].split(",")) == 32


def test_failures_are_recorded_and_consume_budget(space):
    calls = []

    def flaky(x):
        calls.append(1)
        if len(calls) % 3 == 0:
            raise RuntimeError("simulator crashed")
        return sphere(space)(x)

    rec = run(flaky, space, OptimizerConfig(budget=15, init_size=8, mask=mask_except(FREE5)))
    assert len(rec) == 15 == len(calls)
    failed = [e for e in rec.evaluations if not e.result.ok]
    assert failed and "simulator crashed" in failed[0].result.error
    assert np.all(np.diff(rec.best_trajectory) <= 0)


def test_surrogate_sees_only_mean_scores(space):
    def obj(x):
        return EvaluationResult.from_scores([1.0, 3.0], 0)

    rec = run(obj, space, OptimizerConfig(budget=9, init_size=8, mask=mask_except(FREE5)))
    seen = rec.design(space, FREE5).y
    assert np.all(seen == 2.0)


def test_random_search_baseline(space):
    cfg = OptimizerConfig(budget=20, init_size=8, mask=mask_except(FREE5), seed=2)
    a = random_search_baseline(sphere(space), space, cfg)
    b = random_search_baseline(sphere(space), space, cfg)
    assert a.to_csv() == b.to_csv() and len(a) == 20
    assert all(is_valid(space, e.x) for e in a.evaluations)


def test_sphere_improves_on_initial_design(space):
    ratios = []
    for seed in range(10):
        cfg = OptimizerConfig(budget=60, init_size=20, mask=mask_except(FREE5), seed=seed)
        rec = run(sphere(space), space, cfg)
        ratios.append(rec.final_best / rec.best_trajectory[19])
    assert np.median(ratios) <= 0.2


def test_workers_do_not_change_the_record(space):
    cfg = OptimizerConfig(budget=12, init_size=8, mask=mask_except(FREE5), seed=4)
    a = run(sphere(space), space, cfg)
    b = run(sphere(space), space, OptimizerConfig(**{**cfg.__dict__, "workers": 4}))
    assert a.to_csv() == b.to_csv()
