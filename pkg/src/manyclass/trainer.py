"""Minibatch stochastic gradient ascent with classical momentum."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimators import Estimator
from .model import ConfigurationError, Dataset, OpCounter, SparseGradient

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """A gradient or parameter update produced non-finite values."""


@dataclass
class TrainerConfig:
    learning_rate: float = 0.002
    momentum: float = 0.99
    minibatch_size: int = 50
    iterations: int = 2000
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.minibatch_size < 1:
            raise ConfigurationError("minibatch_size must be positive")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be nonnegative")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be positive")


@dataclass
class OptimizerState:
    velocity: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros_like(cls, W) -> "OptimizerState":
        return cls(np.zeros_like(np.asarray(W, dtype=np.float64)))


def sga_step(W, state: OptimizerState, grad, cfg: TrainerConfig, inplace: bool = False):
    """One momentum ascent step.

    ``velocity <- momentum * velocity + grad``; every velocity row decays, but
    for a :class:`SparseGradient` only the touched rows of ``W`` move.
    Returns ``(W, state)``; with ``inplace`` the arrays are updated in place.
    """
    if not inplace:
        W = np.array(W, dtype=np.float64)
        state = OptimizerState(state.velocity.copy(), state.iteration)
    v = state.velocity
    if isinstance(grad, SparseGradient):
        if not grad.is_finite():
            raise DivergenceError(f"non-finite gradient at iteration {state.iteration}")
        v *= cfg.momentum
        v[grad.classes] += grad.rows
        W[grad.classes] += cfg.learning_rate * v[grad.classes]
    else:
        grad = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient at iteration {state.iteration}")
        v *= cfg.momentum
        v += grad
        W += cfg.learning_rate * v
    state.iteration += 1
    return W, state


def minibatch_schedule(N: int, minibatch_size: int, seed: int, iteration: int) -> np.ndarray:
    """Indices of the minibatch used at ``iteration``.

    Each epoch is a fresh seeded permutation split into consecutive batches;
    a ragged final batch is kept. Depends only on (seed, iteration).
    """
    if not 1 <= minibatch_size <= N:
        raise ConfigurationError(f"minibatch_size must lie in [1, {N}]")
    per_epoch = -(-N // minibatch_size)
    epoch, slot = divmod(iteration, per_epoch)
    if minibatch_size == N:
        return np.arange(N)
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0, epoch])).permutation(N)
    return perm[slot * minibatch_size:(slot + 1) * minibatch_size]


def draw_rng(seed: int, stream: int, iteration: int) -> np.random.Generator:
    """Sampler stream for one (run, iteration), independent of the batch schedule."""
    return np.random.default_rng(np.random.SeedSequence([seed, 1, stream, iteration]))


@dataclass
class MetricsTrace:
    method: str
    records: list = field(default_factory=list)
    diverged: bool = False
    divergence_message: str = ""
    degenerate_draws: int = 0
    learning_rate: float | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])


Hook = Callable[[int, np.ndarray, int], dict]


class Run:
    """A single training run that can be advanced one iteration at a time.

    Used directly by :func:`train` and in lockstep by the comparison harness
    so all methods share the same minibatch sequence.
    """

    def __init__(self, data: Dataset, W0, estimator: Estimator, cfg: TrainerConfig,
                 stream: int = 0, time_it: bool = False):
        if cfg.minibatch_size > data.N:
            raise ConfigurationError("minibatch_size exceeds the number of datapoints")
        self.data = data
        self.W = np.array(W0, dtype=np.float64)
        self.state = OptimizerState.zeros_like(self.W)
        self.estimator = estimator
        self.cfg = cfg
        self.stream = stream
        self.counter = OpCounter()
        self.diverged = False
        self.message = ""
        self.degenerate = 0
        self.time_it = time_it
        self.elapsed = 0.0

    def step(self, iteration: int) -> bool:
        if self.diverged:
            return False
        t0 = time.perf_counter() if self.time_it else 0.0
        idx = minibatch_schedule(self.data.N, self.cfg.minibatch_size, self.cfg.seed, iteration)
        batch = self.data.subset(idx)
        try:
            # overflow is caught below as a divergence
            with np.errstate(over="ignore", invalid="ignore"):
                draw = self.estimator.draw(batch, draw_rng(self.cfg.seed, self.stream, iteration))
                grad = self.estimator.gradient(self.W, batch, draw, self.counter)
                self.degenerate += grad.degenerate
                sga_step(self.W, self.state, grad, self.cfg, inplace=True)
                if not np.all(np.isfinite(self.W[grad.classes])):
                    raise DivergenceError(f"non-finite parameters at iteration {iteration}")
        except DivergenceError as exc:
            self.diverged = True
            self.message = str(exc)
            log.warning("%s diverged: %s", self.estimator.cfg.method, exc)
            return False
        finally:
            if self.time_it:
                self.elapsed += time.perf_counter() - t0
        return True


def train(data: Dataset, W0, estimator: Estimator, cfg: TrainerConfig,
          hooks: list[Hook] = (), stream: int = 0) -> MetricsTrace:
    """Run ``cfg.iterations`` ascent steps, calling hooks every ``eval_every``.

    Hooks receive ``(iteration, W, op_count)`` and return a dict merged into
    that iteration's record. Iteration 0 (before any step) is always recorded.
    """
    run = Run(data, W0, estimator, cfg, stream)
    trace = MetricsTrace(estimator.cfg.method, learning_rate=cfg.learning_rate)

    def record(it):
        rec = {"iteration": it, "op_count": run.counter.count}
        for h in hooks:
            rec.update(h(it, run.W, run.counter.count))
        trace.records.append(rec)

    record(0)
    for it in range(cfg.iterations):
        if not run.step(it):
            break
        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
            record(it + 1)
    trace.diverged = run.diverged
    trace.divergence_message = run.message
    trace.degenerate_draws = run.degenerate
    return trace
