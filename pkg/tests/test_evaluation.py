import json

import numpy as np
import pytest

from bayesdrop.evaluation import (
    PREDICTORS,
    SMOKE_DATA,
    GridSpec,
    RunSettings,
    accuracy,
    derive_seed,
    grid_search,
    run_experiment,
    write_experiment,
)
from bayesdrop.mask_distribution import MaskDistribution
from bayesdrop.models import GAUSSIAN, PLAIN, LogisticRegressionModel
from bayesdrop.synthetic_data import DataConfig, Dataset, bayes_optimal_accuracy, generate

FAST = RunSettings(iterations=2000)


@pytest.fixture(scope="module")
def smoke_splits():
    return generate(SMOKE_DATA)


def test_accuracy_constant_half_predicts_one():
    ds = Dataset(np.ones((10, 1)), np.array([0, 1] * 5, dtype=np.int8), "test", None)
    assert accuracy(LogisticRegressionModel.zeros(1), PLAIN, ds) == 0.5


def test_accuracy_perfect():
    X = np.array([[1.0], [-2.0], [0.5], [-0.1]])
    ds = Dataset(X, (X[:, 0] > 0).astype(np.int8), "test", None)
    assert accuracy(LogisticRegressionModel([5.0]), PLAIN, ds) == 1.0


def test_accuracy_hand_count():
    X = np.array([[-3.0], [-2.0], [-1.0], [-0.5], [0.0], [0.2], [0.7], [1.0], [2.0], [4.0]])
    y = np.array([0, 1, 0, 0, 0, 1, 0, 1, 1, 1], dtype=np.int8)
    # predictions: x >= 0 -> 1, giving 1s at rows 4..9; correct: 0,2,3,5,7,8,9
    assert accuracy(LogisticRegressionModel([1.0]), PLAIN, Dataset(X, y, "test", None)) == 0.7


def test_accuracy_empty_rejected():
    ds = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int8), "test", None)
    with pytest.raises(ValueError):
        accuracy(LogisticRegressionModel.zeros(2), PLAIN, ds)


def test_accuracy_gaussian_uses_keep_probs():
    X = np.array([[1.0, -1.0]])
    ds = Dataset(X, np.array([1], dtype=np.int8), "test", None)
    model = LogisticRegressionModel([1.0, 1.5])
    assert accuracy(model, GAUSSIAN, ds, MaskDistribution.per_feature([0.5, 0.5])) == 0.0
    assert accuracy(model, GAUSSIAN, ds, MaskDistribution.per_feature([0.9, 0.1])) == 1.0


def test_predictor_pairing():
    assert PREDICTORS["mle"].kind == "plain"
    assert PREDICTORS["fixed"].kind == "expected_mask"
    assert PREDICTORS["uor"].kind == PREDICTORS["for"].kind == "gaussian"


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(0, "train", a) for a in ("mle", "fixed", "uor", "for")}
    assert len(seeds) == 4
    assert derive_seed(5, "data") == derive_seed(5, "data")
    assert derive_seed(5, "data") != derive_seed(6, "data")


# -- grid ---------------------------------------------------------------------------------


def test_default_grid_sizes():
    g = GridSpec()
    assert len(g.cells("for")) == len(g.cells("uor")) == 144
    assert len(g.cells("mle")) == len(g.cells("fixed")) == 12
    assert g.a_set == (3e-4, 1e-3, 3e-2, 1e-2)
    assert g.d_set == (1e3, 1e4, 1e5)


def test_grid_rejects_non_positive():
    with pytest.raises(ValueError):
        GridSpec(a_set=(0.0,))
    with pytest.raises(ValueError):
        GridSpec(b_set=())


def test_singleton_grid_returns_cell(smoke_splits):
    res = grid_search(GridSpec.singleton(1e-2, 1e3, 1e-2, 1e4), "for", smoke_splits, 0, FAST)
    assert res.schedule == (1e-2, 1e3, 1e-2, 1e4)
    assert len(res.cells) == 1
    res = grid_search(GridSpec.singleton(1e-2, 1e3), "mle", smoke_splits, 0, FAST)
    assert res.schedule == (1e-2, 1e3, None, None)


def test_dominant_cell_wins(smoke_splits):
    grid = GridSpec(a_set=(3e-4, 1e-3, 1e-2), b_set=(1e2, 1e3))
    target = (1e-3, 1e2, None, None)
    res = grid_search(grid, "mle", smoke_splits, 0, FAST,
                      cell_iterations=lambda cell: 2000 if cell == target else 0)
    assert res.schedule == target
    assert res.best.validation_accuracy >= max(c.validation_accuracy for c in res.cells)


def test_ties_broken_by_small_a_then_c_then_b_then_d(smoke_splits):
    # zero iterations everywhere: every cell predicts the same thing
    grid = GridSpec(a_set=(1e-2, 3e-4), b_set=(1e4, 1e2), c_set=(3e-2, 1e-3), d_set=(1e5, 1e3))
    res = grid_search(grid, "for", smoke_splits, 0, FAST, cell_iterations=lambda cell: 0)
    assert res.schedule == (3e-4, 1e2, 1e-3, 1e3)
    assert len({c.validation_accuracy for c in res.cells}) == 1


def test_failed_cells_are_recorded():
    # feature scale 1e150: a step of 1e160 overflows theta, 1e-3 does not
    splits = generate(DataConfig(n_informative=2, n_noise=3, n_train=30, n_valid=20, n_test=0,
                                 feature_std=1e150))
    grid = GridSpec(a_set=(1e-3, 1e160), b_set=(1e2,))
    res = grid_search(grid, "mle", splits, 0, FAST, cell_iterations=lambda cell: 50)
    failed = [c for c in res.cells if c.error]
    assert [c.cell[0] for c in failed] == [1e160]
    assert "non-finite" in failed[0].error and failed[0].validation_accuracy is None
    assert res.schedule == (1e-3, 1e2, None, None)


def test_all_cells_failing_raises():
    from bayesdrop.training import TrainingError

    splits = generate(DataConfig(n_informative=2, n_noise=3, n_train=30, n_valid=20, n_test=0,
                                 feature_std=1e150))
    with pytest.raises(TrainingError, match="every grid cell failed"):
        grid_search(GridSpec.singleton(1e160, 1e4), "mle", splits, 0, FAST)


def test_grid_search_parallel_matches_serial(smoke_splits):
    grid = GridSpec(a_set=(1e-3, 1e-2), b_set=(1e2, 1e3), c_set=(1e-2,), d_set=(1e4,))
    serial = grid_search(grid, "for", smoke_splits, 1, FAST)
    parallel = grid_search(grid, "for", smoke_splits, 1, FAST, workers=2)
    assert [c.cell for c in serial.cells] == [c.cell for c in parallel.cells]
    assert [c.validation_accuracy for c in serial.cells] == [c.validation_accuracy for c in parallel.cells]
    np.testing.assert_array_equal(serial.best.q.logits, parallel.best.q.logits)


def test_grid_search_needs_splits(smoke_splits):
    with pytest.raises(ValueError):
        grid_search(GridSpec.singleton(1e-3, 1e3), "mle", {"train": smoke_splits["train"]}, 0)


# -- experiment ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def smoke_result():
    return run_experiment(SMOKE_DATA, GridSpec.singleton(1e-2, 1e3, 1e-2, 1e4), seed=0,
                          settings=RunSettings(iterations=5000))


def test_smoke_experiment_rows(smoke_result):
    assert [r.algorithm for r in smoke_result.algorithms] == ["mle", "fixed", "uor", "for"]
    assert not smoke_result.failed
    for r in smoke_result.algorithms:
        assert 0.0 <= r.test_accuracy <= 1.0
        assert r.cells_tried == 1
    assert len(smoke_result.row("for").keep_probs) == 50
    assert len(set(smoke_result.row("uor").keep_probs)) == 1
    assert smoke_result.row("mle").keep_probs is None
    assert all(0 < p < 1 for p in smoke_result.row("for").keep_probs)


def test_smoke_experiment_bayes_reference(smoke_result):
    assert smoke_result.bayes_optimal == bayes_optimal_accuracy(SMOKE_DATA)


def test_experiment_deterministic(smoke_result, tmp_path):
    again = run_experiment(SMOKE_DATA, GridSpec.singleton(1e-2, 1e3, 1e-2, 1e4), seed=0,
                           settings=RunSettings(iterations=5000))
    assert again.to_json() == smoke_result.to_json()
    a = write_experiment(smoke_result, tmp_path / "a")
    b = write_experiment(again, tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read()


def test_experiment_outputs(smoke_result, tmp_path):
    paths = write_experiment(smoke_result, tmp_path)
    doc = json.loads(open(paths["result"]).read())
    assert "wall_time" not in doc["algorithms"][0]
    assert doc["settings"]["delta"] == 1e-3
    assert doc["settings"]["initial_keep_prob"] == 0.5
    acc_lines = open(paths["accuracy"]).read().splitlines()
    assert acc_lines[0].startswith("algorithm,predictor,test_accuracy")
    assert len(acc_lines) == 6 and acc_lines[-1].startswith("bayes_optimal,")
    rate_lines = open(paths["dropout_rates"]).read().splitlines()
    assert rate_lines[0] == "feature,role,uor_dropout_rate,for_dropout_rate"
    assert len(rate_lines) == 51
    assert rate_lines[1].split(",")[1] == "informative" and rate_lines[6].split(",")[1] == "noise"
    timed = json.loads(smoke_result.to_json(include_timing=True))
    assert all(r["wall_time"] >= 0 for r in timed["algorithms"])


def test_experiment_records_failures():
    data = DataConfig(n_informative=2, n_noise=2, n_train=20, n_valid=10, n_test=10, feature_std=1e150)
    res = run_experiment(data, GridSpec.singleton(1e160, 1e4, 1.0, 1e4), seed=0,
                         settings=RunSettings(iterations=200), algorithms=("mle", "for"))
    assert res.failed
    assert all(r.error and r.test_accuracy is None for r in res.algorithms)
    assert "every grid cell failed" in res.algorithms[0].error


def test_experiment_per_algorithm_grid():
    grids = {"mle": GridSpec.singleton(1e-3, 1e2), "for": GridSpec.singleton(1e-2, 1e3, 1e-2, 1e5)}
    res = run_experiment(SMOKE_DATA, grids, 0, RunSettings(iterations=500), algorithms=("mle", "for"))
    assert res.row("mle").schedule == {"a": 1e-3, "b": 1e2, "c": None, "d": None}
    assert res.row("for").schedule["d"] == 1e5


def test_repeats_report_variance():
    res = run_experiment(SMOKE_DATA, GridSpec.singleton(1e-2, 1e3, 1e-2, 1e4), 0,
                         RunSettings(iterations=500), algorithms=("fixed",), repeats=3)
    row = res.row("fixed")
    assert len(row.test_accuracy_repeats) == 3
    assert row.test_accuracy_repeats[0] == row.test_accuracy
