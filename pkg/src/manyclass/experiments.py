"""Synthetic realisable problems, evaluation metrics and method comparisons.

Comparisons run every method in lockstep from the same zero initialisation
over the same minibatch sequence, so traces can be compared iteration by
iteration. The exact log-likelihood, the prediction bias against the true
model and the parameter difference against the exact-gradient run are
instrumentation: they are not charged to the op budget.
"""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import Estimator, EstimatorConfig
from .model import ConfigurationError, Dataset, log_likelihood, predict_proba
from .samplers import (ImportanceConfig, bernoulli_variance, build_frequency_table,
                       estimate_Z_bernoulli, estimate_Z_importance, importance_variance)
from .trainer import MetricsTrace, Run, TrainerConfig

log = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-300)
LR_GRID = (0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025, 0.001, 0.0005)
Z_PROFILES = ("sparse", "lognormal")
VARIANCE_FIELDS = ("estimator", "f", "C", "S", "trials", "exact_Z", "empirical_mean",
                   "empirical_variance", "closed_form_variance")
CSV_FIELDS = ("iteration", "method", "exact_ll", "bias", "param_diff", "op_count", "wallclock_ms")


@dataclass
class SyntheticProblem:
    true_params: np.ndarray
    data: Dataset
    gen_seed: int | None

    @property
    def C(self) -> int:
        return self.data.C


def generate_synthetic(N: int, D: int, C: int, seed: int, true_params=None) -> SyntheticProblem:
    """Standard-normal inputs and weights; labels sampled from the true softmax."""
    if min(N, D, C) < 1:
        raise ConfigurationError("N, D and C must all be positive")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, D))
    if true_params is None:
        W0 = rng.standard_normal((C, D))
    else:
        W0 = np.asarray(true_params, dtype=np.float64)
        if W0.shape != (C, D):
            raise ConfigurationError(f"true_params must have shape {(C, D)}")
    if C == 1:
        labels = np.zeros(N, dtype=np.int64)
    else:
        P = predict_proba(W0, X)
        # inverse-cdf sampling, one uniform per datapoint
        u = rng.random(N)
        labels = (P.cumsum(axis=1) < u[:, None]).sum(axis=1)
        labels = np.minimum(labels, C - 1)
    return SyntheticProblem(W0, Dataset(X, labels, C), seed)


def _floored_log(x: float) -> float:
    return math.log(x) if x > 1e-300 else LOG_FLOOR


def bias_metric(W, true_W, inputs, true_probs=None) -> float:
    """log of the mean (over datapoints and classes) |p_W(c|x) - p_true(c|x)|."""
    P = predict_proba(W, inputs)
    P0 = predict_proba(true_W, inputs) if true_probs is None else true_probs
    return _floored_log(float(np.mean(np.abs(P - P0))))


def param_diff_metric(A, B) -> float:
    """log of the mean absolute entrywise difference between two weight matrices."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ConfigurationError("parameter matrices differ in shape")
    return _floored_log(float(np.mean(np.abs(A - B))))


@dataclass
class MethodSpec:
    """A labelled estimator configuration with an optional learning-rate override."""

    tag: str
    estimator: EstimatorConfig
    learning_rate: float | None = None

    @classmethod
    def of(cls, method: str, **kw) -> "MethodSpec":
        lr = kw.pop("learning_rate", None)
        tag = kw.pop("tag", method)
        return cls(tag, EstimatorConfig(method=method, **kw), lr)


@dataclass
class Comparison:
    traces: dict
    reference: str = "exact"
    metadata: dict = field(default_factory=dict)

    @property
    def any_diverged(self) -> bool:
        return any(t.diverged for t in self.traces.values())

    def rows(self):
        """CSV rows in declared method order, then iteration order."""
        for tag, trace in self.traces.items():
            for r in trace.records:
                yield {"method": tag, **r}


def _stream_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def run_comparison(problem: SyntheticProblem, methods, trainer_cfg: TrainerConfig,
                   smoothing: float = 1.0, time_it: bool = False,
                   reference_tag: str = "exact") -> Comparison:
    """Train every method in lockstep and record metrics every ``eval_every`` steps.

    An exact-gradient reference run is always trained (it supplies the
    parameter-difference baseline); it is reported only if listed.
    """
    methods = [m if isinstance(m, MethodSpec) else MethodSpec.of(m) for m in methods]
    if not methods:
        raise ConfigurationError("at least one method is required")
    tags = [m.tag for m in methods]
    if len(set(tags)) != len(tags):
        raise ConfigurationError("method tags must be unique")
    data = problem.data
    freq = build_frequency_table(data.labels, data.C, smoothing)
    W0 = np.zeros((data.C, data.D))
    true_probs = predict_proba(problem.true_params, data.inputs)

    specs = list(methods)
    if reference_tag not in tags:
        specs.append(MethodSpec.of("exact", tag=reference_tag))
    runs = {}
    for spec in specs:
        if spec.tag == reference_tag and spec.estimator.method != "exact":
            raise ConfigurationError(f"reference tag {reference_tag!r} must use the exact method")
        cfg = trainer_cfg if spec.learning_rate is None else replace(
            trainer_cfg, learning_rate=spec.learning_rate)
        runs[spec.tag] = Run(data, W0, Estimator(spec.estimator, freq), cfg,
                             stream=_stream_id(spec.tag), time_it=time_it)
    traces = {s.tag: MetricsTrace(s.estimator.method, learning_rate=runs[s.tag].cfg.learning_rate)
              for s in specs}
    ref = runs[reference_tag]

    def evaluate(it):
        for tag, run in runs.items():
            if run.diverged and traces[tag].records and it > 0:
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                rec = {
                    "iteration": it,
                    "exact_ll": log_likelihood(run.W, data),
                    "bias": bias_metric(run.W, problem.true_params, data.inputs, true_probs),
                    "param_diff": param_diff_metric(run.W, ref.W),
                    "op_count": run.counter.count,
                    "wallclock_ms": int(round(run.elapsed * 1000)) if time_it else 0,
                }
            traces[tag].records.append(rec)

    evaluate(0)
    for it in range(trainer_cfg.iterations):
        for run in runs.values():
            run.step(it)
        done = it + 1
        if done % trainer_cfg.eval_every == 0 or done == trainer_cfg.iterations:
            evaluate(done)
    for tag, run in runs.items():
        traces[tag].diverged = run.diverged
        traces[tag].divergence_message = run.message
        traces[tag].degenerate_draws = run.degenerate

    out = {t: traces[t] for t in tags}
    meta = {
        "N": data.N, "D": data.D, "C": data.C, "gen_seed": problem.gen_seed,
        "input_distribution": "standard normal", "weight_distribution": "standard normal",
        "smoothing": smoothing, **{k: getattr(trainer_cfg, k) for k in (
            "learning_rate", "momentum", "minibatch_size", "iterations", "seed", "eval_every")},
    }
    for spec in methods:
        meta[f"method.{spec.tag}"] = _describe(spec, runs[spec.tag].cfg.learning_rate, data.C)
    return Comparison(out, reference_tag, meta)


def _describe(spec: MethodSpec, lr: float, C: int) -> str:
    e = spec.estimator
    parts = [f"method={e.method}", f"lr={lr!r}"]
    if e.method != "exact":
        parts.append(f"K={e.K}")
    if e.method in ("sampled-bernoulli", "sampled-importance"):
        parts.append(f"positive_set_mode={e.positive_set_mode}")
    if e.method == "sampled-importance":
        parts.append(f"importance_power={e.importance_power!r}")
    if e.method == "ranking":
        parts.append(f"threshold={e.threshold(C)!r}")
    if e.method in ("ranking", "negative-sampling"):
        parts.append(f"noise_power={e.noise_power!r}")
    if e.method == "nce":
        parts.append(f"nce_noise_power={e.nce_noise_power!r} nce_z={e.nce_z!r}")
    if e.method == "blackout":
        parts.append(f"blackout_power={e.blackout_power!r}")
    return " ".join(parts)


def search_learning_rate(problem: SyntheticProblem, spec: MethodSpec, trainer_cfg: TrainerConfig,
                         grid=LR_GRID, pilot_iterations: int = 200,
                         smoothing: float = 1.0) -> float:
    """Largest rate in ``grid`` whose pilot run converges.

    A pilot converges when it stays finite and its exact log-likelihood at the
    end of the pilot is above the starting value and no more than 1% (in
    absolute terms) below the best value it reached.
    """
    data = problem.data
    freq = build_frequency_table(data.labels, data.C, smoothing)
    W0 = np.zeros((data.C, data.D))
    ll0 = log_likelihood(W0, data)
    check_every = max(1, pilot_iterations // 10)
    for lr in sorted(grid, reverse=True):
        cfg = replace(trainer_cfg, learning_rate=lr)
        run = Run(data, W0, Estimator(spec.estimator, freq), cfg, stream=_stream_id(spec.tag))
        best = ll0
        ll = ll0
        for it in range(pilot_iterations):
            if not run.step(it):
                break
            if (it + 1) % check_every == 0:
                ll = log_likelihood(run.W, data)
                best = max(best, ll)
        if not run.diverged and math.isfinite(ll) and ll > ll0 and ll >= best - 0.01 * abs(best):
            log.info("%s: learning rate %g", spec.tag, lr)
            return lr
    return min(grid)


def default_methods(K: int = 20, ranking_threshold: float | None = None):
    return [
        MethodSpec.of("exact"),
        MethodSpec.of("sampled-bernoulli", K=K),
        MethodSpec.of("sampled-importance", K=K),
        MethodSpec.of("ranking", K=K, ranking_threshold=ranking_threshold),
        MethodSpec.of("blackout", K=K),
    ]


def suggested_threshold(C: int) -> float:
    return math.log(C - 1)


def default_alphas(C: int):
    return [1.0, 2.0, suggested_threshold(C), 9.0]


def run_alpha_sweep(problem: SyntheticProblem, alphas, trainer_cfg: TrainerConfig, K: int = 20,
                    ranking_lr: float | None = None, smoothing: float = 1.0,
                    time_it: bool = False, noise_power: float = 0.0) -> Comparison:
    """Ranking runs for each threshold plus the exact-gradient reference run.

    All ranking runs share ``ranking_lr`` (default: the trainer rate) so the
    threshold is the only thing that varies between them.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigurationError("at least one threshold is required")
    if any(not a > 0 for a in alphas):
        raise ConfigurationError("ranking thresholds must be positive")
    methods = [MethodSpec.of("exact")]
    for a in alphas:
        methods.append(MethodSpec.of("ranking", tag=f"ranking(alpha={a:.6g})", K=K,
                                     ranking_threshold=a, noise_power=noise_power,
                                     learning_rate=ranking_lr))
    return run_comparison(problem, methods, trainer_cfg, smoothing, time_it)


def synthetic_scores(C: int, rng: np.random.Generator, profile: str = "sparse",
                     density: float = 0.01, spread: float = 3.0) -> np.ndarray:
    """Unnormalised class scores z >= 0 used by the variance study.

    ``sparse``: each z_c is Exponential(1) with probability ``density``, else 0,
    so a few classes dominate the sum. ``lognormal``: z_c = exp(spread * g).
    """
    if profile == "sparse":
        if not 0 < density <= 1:
            raise ConfigurationError("density must lie in (0, 1]")
        return rng.exponential(1.0, C) * (rng.random(C) < density)
    if profile == "lognormal":
        return np.exp(spread * rng.standard_normal(C))
    raise ConfigurationError(f"unknown z profile {profile!r}; valid: {', '.join(Z_PROFILES)}")


def run_variance_study(C: int, f: float, trials: int, seed: int, profile: str = "sparse",
                       density: float = 0.01, spread: float = 3.0) -> list[dict]:
    """Importance vs Bernoulli estimates of Z at matched expected compute.

    Importance sampling draws S = max(1, round(f C)) classes uniformly with
    replacement; Bernoulli sampling keeps each class with probability f.
    Returns one row per estimator with empirical and closed-form variances.
    """
    if not 0 < f <= 1:
        raise ConfigurationError("compute fraction f must lie in (0, 1]")
    if C < 1 or trials < 2:
        raise ConfigurationError("C must be positive and trials at least 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    z = synthetic_scores(C, rng, profile, density, spread)
    S = max(1, int(round(f * C)))
    q = np.full(C, 1.0 / C)
    b = np.full(C, float(f))
    est_is = estimate_Z_importance(z, ImportanceConfig(S, q), rng, size=trials)
    est_b = estimate_Z_bernoulli(z, b, rng, size=trials)
    Z = float(z.sum())
    rows = []
    for name, est, var in (("importance", est_is, importance_variance(z, q, S)),
                           ("bernoulli", est_b, bernoulli_variance(z, b))):
        rows.append({"estimator": name, "f": float(f), "C": C, "S": S, "trials": int(trials),
                     "exact_Z": Z, "empirical_mean": float(est.mean()),
                     "empirical_variance": float(est.var(ddof=1)), "closed_form_variance": var})
    return rows
