import numpy as np
import pytest

from hospiflow.data import ArrivalSpec, generate_synthetic
from hospiflow.des import OccupancyTrace
from hospiflow.errors import ConfigError
from hospiflow.objective import EvaluationResult, SimulationObjective, Weights, evaluate, weighted_rmse
from hospiflow.params import repair


def trace(bed, icu=None, vent=None, start=0):
    n = len(bed)
    cols = [bed, icu or [0] * n, vent or [0] * n]
    return OccupancyTrace(np.array(cols, dtype=np.int64).T, start)


def test_hand_computed_bed_only_score():
    field, sim = trace([10, 20]), trace([13, 24])
    # sqrt((9 + 16) / 2)
    assert weighted_rmse(sim, field, Weights(1, 0, 0), (0, 1)) == pytest.approx(3.5355339059327378, abs=1e-9)


def test_perfect_prediction_scores_zero():
    t = trace([1, 2, 3], [4, 5, 6], [7, 8, 9])
    assert weighted_rmse(t, t, Weights(), (0, 2)) == 0.0


def test_linear_in_weights():
    a, b = trace([1, 2, 3], [0, 1, 0], [2, 2, 2]), trace([3, 2, 1], [1, 1, 1], [0, 0, 5])
    one = weighted_rmse(a, b, Weights(2, 4, 8), (0, 2))
    two = weighted_rmse(a, b, Weights(4, 8, 16), (0, 2))
    assert two == pytest.approx(2 * one, rel=1e-14)


def test_window_uses_absolute_days():
    sim = trace([0, 0, 5, 5, 0])
    field = OccupancyTrace(np.array([[5, 0, 0], [5, 0, 0]]), start_day=2)
    assert weighted_rmse(sim, field, Weights(1, 0, 0), (2, 3)) == 0.0


def test_bad_weights():
    with pytest.raises(ConfigError):
        Weights(-1, 1, 1)
    with pytest.raises(ConfigError):
        Weights(0, 0, 0)


def test_single_replicate_equals_its_score(small_scenario, space):
    r = evaluate(space.defaults, small_scenario, Weights(), 1, seed=3)
    assert r.replicates == 1 and r.mean_score == r.per_replicate[0]


def test_evaluation_is_deterministic(small_scenario, space):
    a = evaluate(space.defaults, small_scenario, Weights(), 10, seed=8)
    b = evaluate(space.defaults, small_scenario, Weights(), 10, seed=8, workers=4)
    assert a == b
    assert a.mean_score == pytest.approx(np.mean(a.per_replicate))


def test_invalid_vector_rejected(small_scenario, space):
    x = space.defaults.copy()
    x[13] = 2.0
    with pytest.raises(ValueError, match="x14"):
        evaluate(x, small_scenario, Weights(), 1, seed=0)


def test_doubling_admissions_worsens_fit(space):
    scenario = generate_synthetic(space.defaults, ArrivalSpec.constant(40, 45), seed=9)
    doubled = space.defaults.copy()
    doubled[13] *= 2
    a = [evaluate(space.defaults, scenario, Weights(), 3, seed=t).mean_score for t in range(20)]
    b = [evaluate(doubled, scenario, Weights(), 3, seed=t).mean_score for t in range(20)]
    assert np.median(b) > np.median(a)


def test_truth_beats_random_vectors(space, small_scenario):
    obj = SimulationObjective(small_scenario, replicates=3, seed=1)
    at_truth = obj(small_scenario.x_true).mean_score
    rng = np.random.default_rng(0)
    random_scores = [
        obj(repair(space, space.lower + rng.random(29) * (space.upper - space.lower))).mean_score for _ in range(100)
    ]
    assert np.mean(at_truth < np.array(random_scores)) >= 0.95


def test_objective_seed_depends_only_on_point(small_scenario, space):
    obj = SimulationObjective(small_scenario, replicates=2, seed=5)
    a = obj(space.defaults)
    obj(space.midpoints)
    assert obj(space.defaults) == a


def test_failed_result_shape():
    r = EvaluationResult.failed(3, "boom")
    assert not r.ok and np.isnan(r.mean_score) and r.to_dict()["error"] == "boom"
