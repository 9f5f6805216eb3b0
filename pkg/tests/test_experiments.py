import math
import time

import numpy as np
import pytest

from manyclass.experiments import (LOG_FLOOR, MethodSpec, bias_metric, default_alphas,
                                   generate_synthetic, param_diff_metric, run_alpha_sweep,
                                   run_comparison, run_variance_study, search_learning_rate,
                                   suggested_threshold)
from manyclass.model import ConfigurationError, softmax
from manyclass.trainer import TrainerConfig


def test_single_class_labels_all_zero():
    prob = generate_synthetic(30, 3, 1, 0)
    assert np.all(prob.data.labels == 0)


def test_zero_true_weights_give_uniform_labels():
    N, C = 50_000, 10
    prob = generate_synthetic(N, 2, C, 4, true_params=np.zeros((C, 2)))
    counts = np.bincount(prob.data.labels, minlength=C)
    sd = math.sqrt(N * 0.1 * 0.9)
    assert np.all(np.abs(counts - N / C) < 3 * sd)


def test_generation_deterministic_per_seed():
    a, b = generate_synthetic(40, 3, 6, 9), generate_synthetic(40, 3, 6, 9)
    np.testing.assert_array_equal(a.data.inputs, b.data.inputs)
    np.testing.assert_array_equal(a.data.labels, b.data.labels)
    np.testing.assert_array_equal(a.true_params, b.true_params)


def test_labels_follow_true_model():
    prob = generate_synthetic(20_000, 2, 3, 1, true_params=np.array([[1.0, 0], [0, 1.0], [0, 0]]))
    x = prob.data.inputs
    p = np.exp(x @ prob.true_params.T)
    p /= p.sum(axis=1, keepdims=True)
    expected = p.sum(axis=0)
    counts = np.bincount(prob.data.labels, minlength=3)
    assert np.all(np.abs(counts - expected) < 4 * np.sqrt(expected))


def test_full_scale_generation_is_fast():
    t = time.perf_counter()
    prob = generate_synthetic(2000, 100, 1000, 1)
    assert time.perf_counter() - t < 5.0
    assert prob.data.inputs.shape == (2000, 100)


def test_invalid_sizes_rejected():
    with pytest.raises(ConfigurationError):
        generate_synthetic(0, 3, 3, 0)


def test_bias_metric_examples():
    W0 = np.random.default_rng(0).standard_normal((5, 3))
    x = np.random.default_rng(1).standard_normal((7, 3))
    assert bias_metric(W0, W0, x) == LOG_FLOOR
    # p = (0.6, 0.4) against (0.5, 0.5)
    W = np.array([[math.log(1.5)], [0.0]])
    assert bias_metric(W, np.zeros((2, 1)), [[1.0]]) == pytest.approx(math.log(0.1), abs=1e-12)


def test_bias_metric_row_shift_invariant():
    rng = np.random.default_rng(3)
    W, W0 = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    x = rng.standard_normal((9, 4))
    v = rng.standard_normal(4) * 3
    ref = bias_metric(W, W0, x)
    assert bias_metric(W + v, W0, x) == pytest.approx(ref, abs=1e-10)
    assert bias_metric(W, W0 + v, x) == pytest.approx(ref, abs=1e-10)


def test_param_diff_examples():
    A = np.random.default_rng(0).standard_normal((4, 3))
    assert param_diff_metric(A, A) == LOG_FLOOR
    assert param_diff_metric(A, A + 0.1) == pytest.approx(math.log(0.1), abs=1e-12)
    B = np.random.default_rng(1).standard_normal((4, 3))
    oracle = math.log(sum(abs(a - b) for a, b in zip(A.ravel(), B.ravel())) / 12)
    assert param_diff_metric(A, B) == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ConfigurationError):
        param_diff_metric(A, B.T)


@pytest.fixture(scope="module")
def small_problem():
    return generate_synthetic(200, 5, 40, 3)


def test_exact_only_comparison_has_sentinel_param_diff(small_problem):
    comp = run_comparison(small_problem, ["exact"], TrainerConfig(iterations=30, minibatch_size=20,
                                                                  eval_every=10))
    assert list(comp.traces) == ["exact"]
    assert all(r["param_diff"] == LOG_FLOOR for r in comp.traces["exact"].records)


def test_comparison_contract(small_problem):
    cfg = TrainerConfig(iterations=20, minibatch_size=20, eval_every=5)
    methods = ["exact", "sampled-bernoulli", "sampled-importance", "ranking", "nce",
               "negative-sampling", "blackout"]
    comp = run_comparison(small_problem, [MethodSpec.of(m, K=5) if m != "exact" else m
                                          for m in methods], cfg)
    assert list(comp.traces) == methods
    for tag, trace in comp.traces.items():
        its = [r["iteration"] for r in trace.records]
        assert its == [0, 5, 10, 15, 20]
        assert trace.records[0]["param_diff"] == LOG_FLOOR
        assert trace.records[0]["exact_ll"] == pytest.approx(200 * math.log(1 / 40))
        ops = [r["op_count"] for r in trace.records]
        assert all(a <= b for a, b in zip(ops, ops[1:]))
    assert comp.traces["exact"].records[-1]["op_count"] == 20 * 20 * 40
    assert comp.traces["sampled-importance"].records[-1]["op_count"] == 20 * 20 * 6


def test_reference_op_budget():
    prob = generate_synthetic(100, 4, 1000, 0)
    cfg = TrainerConfig(iterations=1, minibatch_size=50, eval_every=1)
    comp = run_comparison(prob, ["exact", MethodSpec.of("sampled-importance", K=20),
                                 MethodSpec.of("sampled-bernoulli", K=20)], cfg)
    assert comp.traces["exact"].records[-1]["op_count"] == 50_000
    assert comp.traces["sampled-importance"].records[-1]["op_count"] == 1050
    assert abs(comp.traces["sampled-bernoulli"].records[-1]["op_count"] - 1050) < 0.25 * 1050


def test_comparison_rejects_duplicates_and_empty(small_problem):
    with pytest.raises(ConfigurationError):
        run_comparison(small_problem, [], TrainerConfig())
    with pytest.raises(ConfigurationError):
        run_comparison(small_problem, ["exact", "exact"], TrainerConfig())


def test_comparison_records_divergence_and_continues(small_problem):
    cfg = TrainerConfig(iterations=60, minibatch_size=20, eval_every=10, momentum=0.0)
    comp = run_comparison(small_problem, ["exact", MethodSpec.of("exact", tag="hot",
                                                                learning_rate=1e307)], cfg)
    assert comp.traces["hot"].diverged
    assert comp.any_diverged
    assert not comp.traces["exact"].diverged
    assert comp.traces["exact"].records[-1]["iteration"] == 60


def test_comparison_metadata(small_problem):
    comp = run_comparison(small_problem, ["exact", MethodSpec.of("ranking", K=3)],
                          TrainerConfig(iterations=2, minibatch_size=10))
    meta = comp.metadata
    assert meta["input_distribution"] == "standard normal"
    assert meta["C"] == 40 and meta["iterations"] == 2
    assert "threshold=" in meta["method.ranking"]


def test_suggested_threshold():
    assert suggested_threshold(1000) == pytest.approx(6.9068, abs=1e-4)
    alphas = default_alphas(1000)
    assert 1.0 in alphas and math.log(999) in alphas


def test_alpha_sweep_contract(small_problem):
    cfg = TrainerConfig(iterations=10, minibatch_size=20, eval_every=5)
    comp = run_alpha_sweep(small_problem, [1.0, math.log(39)], cfg, K=5)
    tags = list(comp.traces)
    assert tags[0] == "exact"
    assert tags[1:] == ["ranking(alpha=1)", "ranking(alpha=3.66356)"]
    with pytest.raises(ConfigurationError):
        run_alpha_sweep(small_problem, [0.0], cfg)


def test_single_alpha_matches_plain_ranking_run(small_problem):
    cfg = TrainerConfig(iterations=15, minibatch_size=20, eval_every=5)
    sweep = run_alpha_sweep(small_problem, [2.0], cfg, K=5)
    direct = run_comparison(small_problem, ["exact", MethodSpec.of(
        "ranking", tag="ranking(alpha=2)", K=5, ranking_threshold=2.0)], cfg)
    assert sweep.traces["ranking(alpha=2)"].records == direct.traces["ranking(alpha=2)"].records


def test_learning_rate_search_picks_a_stable_rate(small_problem):
    cfg = TrainerConfig(minibatch_size=20)
    lr = search_learning_rate(small_problem, MethodSpec.of("exact"), cfg, pilot_iterations=50)
    assert lr in (0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025, 0.001, 0.0005)
    assert lr < 0.32


def test_variance_study_full_compute_is_exact():
    rows = run_variance_study(200, 1.0, 2000, 0)
    bern = next(r for r in rows if r["estimator"] == "bernoulli")
    assert bern["closed_form_variance"] == 0.0
    assert bern["empirical_variance"] < 1e-20
    assert bern["empirical_mean"] == pytest.approx(bern["exact_Z"], rel=1e-12)


def test_variance_study_rows_and_validation():
    rows = run_variance_study(100, 0.05, 5000, 1, profile="lognormal")
    assert [r["estimator"] for r in rows] == ["importance", "bernoulli"]
    assert rows[0]["S"] == 5
    for r in rows:
        assert abs(r["empirical_variance"] / r["closed_form_variance"] - 1) < 0.2
    for f in (0.0, 1.5):
        with pytest.raises(ConfigurationError):
            run_variance_study(100, f, 100, 0)
    with pytest.raises(ConfigurationError):
        run_variance_study(100, 0.1, 100, 0, profile="flat")


def test_softmax_of_true_params_reference():
    # sanity: true model probabilities are a distribution at full-size inputs
    prob = generate_synthetic(5, 10, 50, 2)
    p = softmax(prob.data.inputs @ prob.true_params.T)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
