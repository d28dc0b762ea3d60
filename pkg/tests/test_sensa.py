import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hospiflow.objective import EvaluationResult
from hospiflow.sensa import (
    ORIENTATION,
    RankTable,
    delta_error,
    delta_error_study,
    importance_index,
    paired_rank_test,
    parameter_grid,
    removal_experiment,
    run_importance_study,
)
from hospiflow.smbo import OptimizerConfig, run
from hospiflow.stochastic import lhs_unit, stream
from hospiflow.surrogates import (
    Design,
    ForestConfig,
    KrigingConfig,
    fit_forest,
    fit_kriging,
    fit_linear,
    importance,
    importance_positions,
)


def one_run(top=None, bottom=None, d=29):
    order = list(range(d))
    if top is not None:
        order.remove(top)
        order.append(top)
    if bottom is not None:
        order.remove(bottom)
        order.insert(0, bottom)
    pos = np.empty(d)
    pos[order] = np.arange(1, d + 1)
    return pos


def test_index_extremes_for_single_run():
    p = importance_index(RankTable("linear", one_run(top=4, bottom=7)))
    assert p[4] == 1.0
    assert p[7] == pytest.approx(1 / 29)


def test_index_two_runs():
    a = one_run(top=0)
    b = one_run()
    b[[0, int(np.flatnonzero(b == 27)[0])]] = b[[int(np.flatnonzero(b == 27)[0]), 0]]
    table = RankTable("kriging", np.vstack([a, b]))
    assert table.runs[:, 0].tolist() == [29, 27]
    assert importance_index(table)[0] == pytest.approx(56 / 58)


def test_rank_table_rejects_non_permutations():
    with pytest.raises(ValueError):
        RankTable("linear", np.array([[1, 1, 1]]))
    with pytest.raises(ValueError):
        RankTable("linear", np.array([[0, 2, 4]]))


@settings(max_examples=200, deadline=None)
@given(
    st.integers(2, 30).flatmap(
        lambda d: st.lists(st.lists(st.floats(-1e6, 1e6), min_size=d, max_size=d), min_size=1, max_size=8)
    )
)
def test_index_bounds_and_rank_sum_identity(scores):
    table = RankTable.from_scores("forest", scores)
    p = importance_index(table)
    d = table.d
    assert np.all(p >= 1 / d - 1e-15) and np.all(p <= 1 + 1e-15)
    assert abs(p.mean() - (d + 1) / (2 * d)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(-500, 500), min_size=8, max_size=8), min_size=1, max_size=5))
def test_index_invariant_under_monotone_transform(runs):
    s = np.array(runs, dtype=float)
    a = importance_index(RankTable.from_scores("k", s))
    b = importance_index(RankTable.from_scores("k", np.exp(s / 100) * 3 + 1))
    assert np.array_equal(a, b)


def planted_design(seed, n=60, d=6, active=(1, 2)):
    rng = stream(seed, "planted")
    X = lhs_unit(n, d, rng)
    y = 3 * X[:, active[0]] + 2 * X[:, active[1]] + X[:, active[0]] * X[:, active[1]] + rng.normal(0, 0.05, n)
    return Design.from_unit(X, y, columns=tuple(range(10, 10 + d)))


FAST_FOREST = ForestConfig(n_trees=100)


def test_planted_parameters_lead_every_family():
    rep = run_importance_study(planted_design(1), n=3, seed=5, forest=FAST_FOREST)
    assert rep.orientation == ORIENTATION
    for kind in ("kriging", "linear", "forest"):
        assert set(rep.top(kind, 2)) == {11, 12}, kind


def test_constant_response_gives_flat_index():
    d = planted_design(2)
    flat = Design.from_unit(d.X, np.full(d.n, 3.0), d.columns)
    rep = run_importance_study(flat, n=4, seed=1, forest=FAST_FOREST)
    for kind in rep.tables:
        p = rep.p_star(kind)
        assert p.max() - p.min() <= 2 / flat.d


def test_single_run_is_direct_rank_mapping():
    d = planted_design(3)
    rep = run_importance_study(d, n=1, model_types=("kriging", "forest"), seed=9, forest=FAST_FOREST)
    k = fit_kriging(d, KrigingConfig(), stream(9, "importance:kriging", 0))
    f = fit_forest(d, FAST_FOREST, stream(9, "importance:forest", 0))
    assert np.array_equal(rep.p_star("kriging"), importance_positions(importance(k)) / d.d)
    assert np.array_equal(rep.p_star("forest"), importance_positions(importance(f)) / d.d)
    lin = importance_positions(importance(fit_linear(d))) / d.d
    assert np.array_equal(run_importance_study(d, 1, ("linear",)).p_star("linear"), lin)


def test_failed_fits_are_reported():
    d = planted_design(4, n=6)
    rep = run_importance_study(d, n=2, model_types=("linear", "forest"), forest=FAST_FOREST)
    assert "linear" not in rep.tables and len(rep.failures["linear"]) == 2
    assert rep.tables["forest"].n == 2
    assert rep.to_dict()["runs"] == {"forest": 2}


def test_study_is_deterministic_across_workers():
    d = planted_design(5)
    a = run_importance_study(d, n=3, seed=2, forest=FAST_FOREST)
    b = run_importance_study(d, n=3, seed=2, forest=FAST_FOREST, workers=3)
    assert a.to_csv() == b.to_csv()


def test_report_csv_layout(space):
    rep = run_importance_study(planted_design(6), n=2, seed=0, forest=FAST_FOREST)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "parameter,name,P_kriging,P_linear,P_forest"
    assert len(lines) == 7 and lines[1].startswith("10,x10,")


# -- delta error --------------------------------------------------------------------


def test_delta_error_formula():
    assert delta_error(100.0, 120.0) == pytest.approx(20.0)
    assert delta_error(100.0, 80.0) == pytest.approx(20.0)


class ToyEvaluator:
    """Error grows with x14; x24 plays no part; each seed adds its own noise."""

    def __init__(self, base=10.0):
        self.base = base

    def evaluate(self, x, seed, replicates=None):
        noise = stream(seed, "toy").normal(0, 0.1, replicates or 1)
        return EvaluationResult.from_scores(self.base + 40 * x[13] + noise, seed)


def configs(space, k=10, seed=0):
    rng = np.random.default_rng(seed)
    return [space.lower + (0.25 + 0.5 * rng.random(29)) * (space.upper - space.lower) for _ in range(k)]


def test_null_parameter_matches_noise_and_active_exceeds_it(space):
    rep = delta_error_study(configs(space), ToyEvaluator(), space, replicates=5, parameters=(14, 24))
    assert np.array_equal(rep.pooled(24), rep.noise_pooled())
    assert paired_rank_test(rep.pooled(24), rep.noise_pooled()) == 1.0
    assert paired_rank_test(rep.pooled(14), rep.noise_pooled(), "greater") < 0.05
    assert np.all(rep.pooled(14) >= 0)


def test_zero_delta_reproduces_noise(space):
    rep = delta_error_study(configs(space, 4), ToyEvaluator(), space, delta=0.0, replicates=3, parameters=(2, 14))
    for i in (2, 14):
        assert np.array_equal(rep.pooled(i), rep.noise_pooled())


def test_zero_base_error_configs_are_skipped(space):
    class Zero(ToyEvaluator):
        def evaluate(self, x, seed, replicates=None):
            return EvaluationResult.from_scores([0.0], seed)

    rep = delta_error_study(configs(space, 3), Zero(), space, parameters=(14,))
    assert rep.skipped == [0, 1, 2] and rep.values[14] == []


def test_delta_report_csv(space):
    rep = delta_error_study(configs(space, 2), ToyEvaluator(), space, replicates=2)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "parameter,name,meanDeltaE,c0+,c0-,c1+,c1-"
    assert len(lines) == 1 + 29 + 1 and lines[-1].startswith("noise,")


def test_delta_study_workers_invariant(space):
    a = delta_error_study(configs(space, 3), ToyEvaluator(), space, replicates=2, parameters=(3, 14))
    b = delta_error_study(configs(space, 3), ToyEvaluator(), space, replicates=2, parameters=(3, 14), workers=4)
    assert a.to_csv() == b.to_csv()


# -- grids ------------------------------------------------------------------------


def grid_model(y_of, space):
    cols = (13, 14, 2)
    sel = [c - 1 for c in cols]
    X = lhs_unit(40, 3, np.random.default_rng(0))
    design = Design(X, y_of(X), cols, space.lower[sel], space.upper[sel])
    return fit_kriging(design, rng=np.random.default_rng(1))


def test_grid_ignores_inactive_axis(space):
    model = grid_model(lambda X: np.sin(3 * X[:, 1]) + X[:, 2] ** 2, space)
    g = parameter_grid(model, 14, 13, space.midpoints, 15)
    along_i = np.ptp(g.response, axis=0).max()
    along_j = np.ptp(g.response, axis=1).max()
    assert along_j < 0.05 * along_i
    assert g.response.shape == (15, 15)


def test_single_cell_grid_sits_at_midpoints(space):
    model = grid_model(lambda X: X[:, 0] + 2 * X[:, 1], space)
    base = space.defaults.copy()
    g = parameter_grid(model, 13, 14, base, 1)
    x = base.copy()
    x[12], x[13] = space[13].midpoint, space[14].midpoint
    assert g.response[0, 0] == pytest.approx(model.predict(model.inputs.to_unit(x))[0][0], rel=1e-12)


def test_constant_model_grid(space):
    model = grid_model(lambda X: np.full(len(X), 4.0), space)
    g = parameter_grid(model, 13, 2, space.defaults, 6)
    assert np.allclose(g.response, 4.0, atol=1e-9)
    lines = g.to_csv().splitlines()
    assert lines[0] == "x13,x2,response" and len(lines) == 37


def test_grid_errors(space):
    model = grid_model(lambda X: X[:, 0], space)
    with pytest.raises(ValueError):
        parameter_grid(model, 13, 13, space.defaults, 3)
    with pytest.raises(ValueError, match="x5"):
        parameter_grid(model, 13, 5, space.defaults, 3)


def test_grid_is_pure(space):
    model = grid_model(lambda X: X[:, 0] * X[:, 1], space)
    a = parameter_grid(model, 13, 14, space.defaults, 5)
    b = parameter_grid(model, 13, 14, space.defaults, 5)
    assert a.to_csv() == b.to_csv()


# -- removal ------------------------------------------------------------------------


def toy_objective(space):
    sel = [0, 1, 2, 4]
    target = np.array([0.9, 0.1, 0.5, 0.5])
    keep = set(range(1, 30)) - {1, 2, 3, 5, 24}

    def f(x):
        u = (x[sel] - space.lower[sel]) / (space.upper - space.lower)[sel]
        return float(np.sum((u - target) ** 2) * 100 + 1)

    return f, frozenset(keep)


def test_removal_rows_and_baseline(space):
    f, mask = toy_objective(space)
    cfg = OptimizerConfig(budget=14, init_size=8, mask=mask, seed=3)
    sets = [sorted(mask), sorted(mask | {24}), sorted(mask | {24, 1})]
    table = removal_experiment(space, f, sets, cfg, repeats=3)
    assert [len(r.final_best) for r in table.rows] == [3, 3, 3]
    plain = run(f, space, OptimizerConfig(budget=14, init_size=8, mask=mask, seed=table.seeds[0]))
    assert table.rows[0].final_best[0] == plain.final_best
    assert table.to_csv().splitlines()[0].startswith("excluded,size,median")


def test_removal_sets_must_nest(space):
    f, _ = toy_objective(space)
    with pytest.raises(ValueError, match="nested"):
        removal_experiment(space, f, [[1, 2], [1, 3]], OptimizerConfig(budget=5, init_size=4), repeats=1)


def test_paired_rank_test_all_equal():
    assert paired_rank_test([1, 2, 3], [1, 2, 3]) == 1.0
    assert paired_rank_test(np.arange(10) + 1.0, np.zeros(10), "greater") < 0.01
