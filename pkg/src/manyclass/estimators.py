"""Minibatch gradient estimators for softmax regression with many classes.

Every estimator works on a minibatch together with a draw of sampled
classes and returns a :class:`~manyclass.model.SparseGradient` touching only
the classes it evaluated. Methods:

``exact``
    full softmax likelihood gradient.
``sampled-bernoulli`` / ``sampled-importance``
    likelihood with the normaliser replaced by an explicit sum over a
    positive set plus a kappa-weighted sum over sampled negatives.
``ranking``
    mean of log sigmoid(s_c - s_d - threshold) over negatives d.
``nce``
    noise-contrastive estimation with a fixed normaliser.
``negative-sampling``
    log sigmoid(s_c) + mean_d log(1 - sigmoid(s_d)).
``blackout``
    discriminative objective over a 1/Q(c)-weighted local softmax.

The logistic function is the usual increasing one, 1 / (1 + exp(-x)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import samplers
from .model import ConfigurationError, Dataset, OpCounter, SparseGradient, gradient_exact, log_likelihood
from .samplers import FrequencyTable, NegativeBatch, NegativeDraw

METHODS = (
    "exact",
    "sampled-bernoulli",
    "sampled-importance",
    "ranking",
    "nce",
    "negative-sampling",
    "blackout",
)
SAMPLED_LIKELIHOOD = ("sampled-bernoulli", "sampled-importance")
POSITIVE_SET_MODES = ("own-label-only", "minibatch-labels-shared")


@dataclass
class EstimatorConfig:
    method: str = "exact"
    K: int = 20
    positive_set_mode: str = "own-label-only"
    ranking_threshold: float | None = None  # None -> log(C - 1)
    importance_power: float = 1.0
    noise_power: float = 0.0  # ranking / negative-sampling negatives, 0 -> uniform
    nce_noise_power: float = 1.0
    nce_z: float = 1.0
    blackout_power: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        if self.positive_set_mode not in POSITIVE_SET_MODES:
            raise ConfigurationError(
                f"unknown positive_set_mode {self.positive_set_mode!r}; "
                f"valid: {', '.join(POSITIVE_SET_MODES)}")
        if self.method != "exact" and self.K < 1:
            raise ConfigurationError("K must be at least 1 for sampled methods")
        if self.ranking_threshold is not None and not self.ranking_threshold > 0:
            raise ConfigurationError("ranking threshold must be positive")
        if not self.nce_z > 0:
            raise ConfigurationError("nce_z must be positive")

    def threshold(self, C: int) -> float:
        if self.ranking_threshold is not None:
            return float(self.ranking_threshold)
        if C < 3:
            raise ConfigurationError("default ranking threshold log(C-1) needs C >= 3")
        return math.log(C - 1)


@dataclass
class SampledSet:
    """Explicit classes and sampled negatives for one datapoint."""

    positives: np.ndarray
    negatives: NegativeDraw
    label: int

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.int64).reshape(-1)
        if self.label not in self.positives:
            raise ConfigurationError("the explicit set must contain the true label")
        if np.intersect1d(self.positives, self.negatives.classes).size:
            raise ConfigurationError("negatives must not overlap the explicit set")


@dataclass
class SampledBatch:
    """Padded positives and negatives for a whole minibatch."""

    positives: np.ndarray
    pos_mask: np.ndarray
    label_pos: np.ndarray
    negatives: NegativeBatch
    extra: dict = field(default_factory=dict)

    @classmethod
    def own_label(cls, labels, negatives: NegativeBatch) -> "SampledBatch":
        labels = np.asarray(labels, dtype=np.int64)
        M = labels.size
        return cls(labels[:, None], np.ones((M, 1), dtype=bool), np.zeros(M, dtype=np.int64),
                   negatives)

    @classmethod
    def from_sets(cls, sets) -> "SampledBatch":
        P = max(s.positives.size for s in sets)
        M = len(sets)
        pos = np.zeros((M, P), dtype=np.int64)
        pmask = np.zeros((M, P), dtype=bool)
        label_pos = np.empty(M, dtype=np.int64)
        for m, s in enumerate(sets):
            pos[m, :s.positives.size] = s.positives
            pmask[m, :s.positives.size] = True
            label_pos[m] = int(np.flatnonzero(s.positives == s.label)[0])
        return cls(pos, pmask, label_pos, NegativeBatch.from_draws([s.negatives for s in sets]))

    def entry_count(self) -> int:
        return int(self.pos_mask.sum() + self.negatives.mask.sum())


def _entry_scores(W, X, classes):
    """Scores W[classes[m, j]] . X[m] for a padded (M, T) class array."""
    return np.einsum("mjd,md->mj", W[classes], X)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


# -- sampled likelihood -------------------------------------------------------

def _likelihood_terms(W, batch: Dataset, draw: SampledBatch):
    P = draw.positives.shape[1]
    classes = np.concatenate([draw.positives, draw.negatives.classes], axis=1)
    mask = np.concatenate([draw.pos_mask, draw.negatives.mask], axis=1)
    log_w = np.concatenate(
        [np.zeros(draw.positives.shape), np.log(draw.negatives.kappa)], axis=1)
    t = np.where(mask, _entry_scores(W, batch.inputs, classes) + log_w, -np.inf)
    log_zt = logsumexp(t, axis=1)
    p = np.where(mask, np.exp(t - log_zt[:, None]), 0.0)
    target = np.zeros_like(p)
    target[np.arange(batch.N), draw.label_pos] = 1.0
    s_label = t[np.arange(batch.N), draw.label_pos]
    return classes, mask, p, target, s_label, log_zt, P


def z_tilde(W, x, s: SampledSet) -> float:
    """Explicit sum over the positives plus kappa-weighted sum over the negatives."""
    return float(np.exp(log_z_tilde(W, x, s)))


def log_z_tilde(W, x, s: SampledSet) -> float:
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    t = np.concatenate([W[s.positives] @ x,
                        W[s.negatives.classes] @ x + np.log(s.negatives.kappa)])
    return float(logsumexp(t))


def p_tilde(W, x, s: SampledSet) -> tuple[np.ndarray, np.ndarray]:
    """Approximate class probabilities over the positives followed by the negatives.

    Returns ``(classes, probs)``; a negative drawn twice appears twice.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    classes = np.concatenate([s.positives, s.negatives.classes])
    t = np.concatenate([W[s.positives] @ x,
                        W[s.negatives.classes] @ x + np.log(s.negatives.kappa)])
    return classes, np.exp(t - logsumexp(t))


def gamma_tilde(W, batch: Dataset, draw: SampledBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-entry weights delta - p_tilde, with the entry classes and validity mask."""
    classes, mask, p, target, *_ = _likelihood_terms(W, batch, draw)
    return classes, np.where(mask, target - p, 0.0), mask


def gradient_sampled_likelihood(W, batch: Dataset, draw: SampledBatch,
                                counter: OpCounter | None = None) -> SparseGradient:
    W = np.asarray(W, dtype=np.float64)
    classes, mask, p, target, *_ = _likelihood_terms(W, batch, draw)
    ops = int(mask.sum())
    if counter is not None:
        counter.add(ops)
    degenerate = int(np.sum(draw.negatives.sizes == 0))
    return SparseGradient.from_weights(classes, np.where(mask, target - p, 0.0), batch.inputs,
                                       op_count=ops, degenerate=degenerate)


def objective_sampled_likelihood(W, batch: Dataset, draw: SampledBatch) -> float:
    *_, s_label, log_zt, _ = _likelihood_terms(np.asarray(W, dtype=np.float64), batch, draw)
    return float(np.sum(s_label - log_zt))


# -- ranking ------------------------------------------------------------------

def _ranking_margins(W, batch, negatives: NegativeBatch, threshold):
    X = batch.inputs
    s_pos = np.einsum("md,md->m", W[batch.labels], X)
    s_neg = _entry_scores(W, X, negatives.classes)
    return s_pos[:, None] - s_neg - threshold


def _check_nonempty(negatives: NegativeBatch, what: str):
    if np.any(negatives.sizes == 0):
        raise ConfigurationError(f"{what} needs at least one negative per datapoint")


def gradient_ranking(W, batch: Dataset, negatives: NegativeBatch, threshold: float,
                     counter: OpCounter | None = None) -> SparseGradient:
    if not threshold > 0:
        raise ConfigurationError("ranking threshold must be positive")
    _check_nonempty(negatives, "ranking")
    W = np.asarray(W, dtype=np.float64)
    mask = negatives.mask
    n_neg = mask.sum(axis=1, keepdims=True)
    pull = np.where(mask, expit(-_ranking_margins(W, batch, negatives, threshold)), 0.0) / n_neg
    classes = np.concatenate([batch.labels[:, None], negatives.classes], axis=1)
    weights = np.concatenate([pull.sum(axis=1, keepdims=True), -pull], axis=1)
    ops = batch.N + int(mask.sum())
    if counter is not None:
        counter.add(ops)
    return SparseGradient.from_weights(classes, weights, batch.inputs, op_count=ops)


def objective_ranking(W, batch: Dataset, negatives: NegativeBatch, threshold: float) -> float:
    _check_nonempty(negatives, "ranking")
    margins = _ranking_margins(np.asarray(W, dtype=np.float64), batch, negatives, threshold)
    terms = np.where(negatives.mask, _log_sigmoid(margins), 0.0)
    return float(np.sum(terms.sum(axis=1) / negatives.mask.sum(axis=1)))


# -- NCE ----------------------------------------------------------------------

def _nce_logits(W, batch, noise: NegativeBatch, noise_dist, z):
    """log p'(c) - log(k p_n(c)) for the true class and each noise draw."""
    X = batch.inputs
    k = noise.mask.sum(axis=1)
    log_kpn = np.log(k)[:, None] + np.log(noise_dist)[noise.classes]
    s_pos = np.einsum("md,md->m", W[batch.labels], X)
    pos = s_pos - math.log(z) - (np.log(k) + np.log(noise_dist[batch.labels]))
    neg = _entry_scores(W, X, noise.classes) - math.log(z) - log_kpn
    return pos, neg


def gradient_nce(W, batch: Dataset, noise: NegativeBatch, noise_dist, z: float = 1.0,
                 counter: OpCounter | None = None) -> SparseGradient:
    """NCE gradient with the per-datapoint normaliser held fixed at ``z``.

    ``noise`` holds the k noise draws per datapoint, taken from ``noise_dist``
    over all classes (the true class may be drawn).
    """
    noise_dist = np.asarray(noise_dist, dtype=np.float64)
    if np.any(noise_dist <= 0):
        raise ConfigurationError("noise distribution must be positive on every class")
    _check_nonempty(noise, "NCE")
    pos, neg = _nce_logits(np.asarray(W, dtype=np.float64), batch, noise, noise_dist, z)
    weights = np.concatenate(
        [expit(-pos)[:, None], np.where(noise.mask, -expit(neg), 0.0)], axis=1)
    classes = np.concatenate([batch.labels[:, None], noise.classes], axis=1)
    ops = batch.N + int(noise.mask.sum())
    if counter is not None:
        counter.add(ops)
    return SparseGradient.from_weights(classes, weights, batch.inputs, op_count=ops)


def objective_nce(W, batch: Dataset, noise: NegativeBatch, noise_dist, z: float = 1.0) -> float:
    noise_dist = np.asarray(noise_dist, dtype=np.float64)
    pos, neg = _nce_logits(np.asarray(W, dtype=np.float64), batch, noise, noise_dist, z)
    return float(np.sum(_log_sigmoid(pos)) + np.sum(np.where(noise.mask, _log_sigmoid(-neg), 0.0)))


# -- negative sampling --------------------------------------------------------

def gradient_negative_sampling(W, batch: Dataset, negatives: NegativeBatch,
                               counter: OpCounter | None = None) -> SparseGradient:
    _check_nonempty(negatives, "negative sampling")
    W = np.asarray(W, dtype=np.float64)
    X = batch.inputs
    n_neg = negatives.mask.sum(axis=1, keepdims=True)
    s_pos = np.einsum("md,md->m", W[batch.labels], X)
    s_neg = _entry_scores(W, X, negatives.classes)
    weights = np.concatenate(
        [expit(-s_pos)[:, None], np.where(negatives.mask, -expit(s_neg), 0.0) / n_neg], axis=1)
    classes = np.concatenate([batch.labels[:, None], negatives.classes], axis=1)
    ops = batch.N + int(negatives.mask.sum())
    if counter is not None:
        counter.add(ops)
    return SparseGradient.from_weights(classes, weights, X, op_count=ops)


def objective_negative_sampling(W, batch: Dataset, negatives: NegativeBatch) -> float:
    _check_nonempty(negatives, "negative sampling")
    W = np.asarray(W, dtype=np.float64)
    X = batch.inputs
    s_pos = np.einsum("md,md->m", W[batch.labels], X)
    s_neg = _entry_scores(W, X, negatives.classes)
    neg = np.where(negatives.mask, _log_sigmoid(-s_neg), 0.0).sum(axis=1)
    return float(np.sum(_log_sigmoid(s_pos) + neg / negatives.mask.sum(axis=1)))


# -- BlackOut -----------------------------------------------------------------

def _blackout_terms(W, batch, Q, negatives: NegativeBatch):
    """Logits of the weighted local softmax and log(1 - p_tilde(d)) for each negative."""
    Q = np.asarray(Q, dtype=np.float64)
    X = batch.inputs
    classes = np.concatenate([batch.labels[:, None], negatives.classes], axis=1)
    mask = np.concatenate([np.ones((batch.N, 1), dtype=bool), negatives.mask], axis=1)
    t = _entry_scores(W, X, classes) - np.log(Q[classes])
    t = np.where(mask, t, -np.inf)
    log_z = logsumexp(t, axis=1)
    T = classes.shape[1]
    # log-sum-exp of all entries except j, for each negative entry j
    excl = np.broadcast_to(t[:, None, :], (batch.N, T, T)).copy()
    idx = np.arange(T)
    excl[:, idx, idx] = -np.inf
    log_z_excl = logsumexp(excl[:, 1:, :], axis=2)
    return classes, mask, t, log_z, log_z_excl


def gradient_blackout(W, batch: Dataset, Q, negatives: NegativeBatch,
                      counter: OpCounter | None = None) -> SparseGradient:
    W = np.asarray(W, dtype=np.float64)
    classes, mask, t, log_z, log_z_excl = _blackout_terms(W, batch, Q, negatives)
    log_p = t - log_z[:, None]
    p = np.where(mask, np.exp(log_p), 0.0)
    neg_mask = mask[:, 1:]
    # log of p_d / (1 - p_d) for each negative; p_j * odds_d <= p_d keeps products bounded
    log_odds = np.where(neg_mask, t[:, 1:] - log_z_excl, -np.inf)
    log_cross = log_p[:, :, None] + log_odds[:, None, :]
    T = classes.shape[1]
    log_cross[:, np.arange(1, T), np.arange(T - 1)] = -np.inf
    g = np.exp(log_cross).sum(axis=2)
    g[:, 0] += 1.0 - p[:, 0]
    g[:, 1:] -= 2.0 * p[:, 1:]
    g = np.where(mask, g, 0.0)
    ops = int(mask.sum())
    if counter is not None:
        counter.add(ops)
    degenerate = int(np.sum(negatives.sizes == 0))
    return SparseGradient.from_weights(classes, g, batch.inputs, op_count=ops,
                                       degenerate=degenerate)


def objective_blackout(W, batch: Dataset, Q, negatives: NegativeBatch) -> float:
    classes, mask, t, log_z, log_z_excl = _blackout_terms(
        np.asarray(W, dtype=np.float64), batch, Q, negatives)
    log_p_pos = t[:, 0] - log_z
    log_one_minus = np.where(mask[:, 1:], log_z_excl - log_z[:, None], 0.0)
    return float(np.sum(log_p_pos + log_one_minus.sum(axis=1)))


# -- configured estimator -----------------------------------------------------

class Estimator:
    """An :class:`EstimatorConfig` bound to a class-frequency table.

    ``draw`` samples the classes one minibatch needs; ``gradient`` and
    ``objective`` evaluate the method on a fixed draw.
    """

    def __init__(self, cfg: EstimatorConfig, freq: FrequencyTable):
        self.cfg = cfg
        self.freq = freq
        self.C = freq.C
        self._alpha_by_count: dict[int, float] = {}
        m = cfg.method
        if m == "sampled-importance":
            self.q = freq.power(cfg.importance_power)
        elif m in ("ranking", "negative-sampling"):
            self.q = freq.power(cfg.noise_power)
        elif m == "nce":
            self.q = freq.power(cfg.nce_noise_power)
        elif m == "blackout":
            self.q = freq.power(cfg.blackout_power)
        else:
            self.q = None
        if m in ("ranking",):
            self.threshold = cfg.threshold(self.C)
        if m != "exact" and self.C < 2:
            raise ConfigurationError("sampled methods need at least two classes")

    def alpha_for_label(self, label: int) -> float:
        """Bernoulli exponent when only ``label`` is excluded (cached by class count)."""
        key = int(self.freq.counts[label])
        if key not in self._alpha_by_count:
            K = min(self.cfg.K, self.C - 1)
            self._alpha_by_count[key] = samplers.solve_alpha_exponent(self.freq, [label], K)
        return self._alpha_by_count[key]

    def _shared_positives(self, labels):
        uniq = np.unique(labels)
        M = labels.size
        positives = np.broadcast_to(uniq, (M, uniq.size)).copy()
        label_pos = np.searchsorted(uniq, labels)
        return uniq, positives, label_pos

    def draw(self, batch: Dataset, rng: np.random.Generator) -> SampledBatch | None:
        cfg, labels = self.cfg, batch.labels
        M = labels.size
        if cfg.method == "exact":
            return None
        if cfg.method in SAMPLED_LIKELIHOOD and cfg.positive_set_mode == "minibatch-labels-shared":
            uniq, positives, label_pos = self._shared_positives(labels)
            n_comp = self.C - uniq.size
            if n_comp == 0:
                neg = NegativeBatch(np.zeros((M, 0), np.int64), np.ones((M, 0)),
                                    np.zeros((M, 0), bool))
            elif cfg.method == "sampled-bernoulli":
                bc = samplers.bernoulli_config(self.freq, uniq, min(cfg.K, n_comp))
                one = samplers.bernoulli_draw(bc, uniq, rng)
                neg = NegativeBatch.from_draws([one] * M)
            else:
                ic = samplers.ImportanceConfig(cfg.K, self.q)
                one = samplers.importance_draw(ic, uniq, rng)
                neg = NegativeBatch.from_draws([one] * M)
            return SampledBatch(positives, np.ones(positives.shape, bool), label_pos, neg)

        if cfg.method == "sampled-bernoulli":
            alphas = np.array([self.alpha_for_label(c) for c in labels])
            b_rows = np.minimum(self.freq.f[None, :] ** alphas[:, None], 1.0)
            b_rows[np.arange(M), labels] = 0.0
            neg = samplers.bernoulli_draw_batch(b_rows, rng)
        elif cfg.method == "nce":
            d = rng.choice(self.C, size=(M, cfg.K), p=self.q)
            neg = NegativeBatch(d, np.ones(d.shape), np.ones(d.shape, bool))
        else:
            neg = samplers.importance_draw_batch(self.q, labels[:, None], cfg.K, rng)
        return SampledBatch.own_label(labels, neg)

    def gradient(self, W, batch: Dataset, draw: SampledBatch | None,
                 counter: OpCounter | None = None) -> SparseGradient:
        m = self.cfg.method
        if m == "exact":
            return gradient_exact(W, batch, counter)
        if m in SAMPLED_LIKELIHOOD:
            return gradient_sampled_likelihood(W, batch, draw, counter)
        if m == "ranking":
            return gradient_ranking(W, batch, draw.negatives, self.threshold, counter)
        if m == "nce":
            return gradient_nce(W, batch, draw.negatives, self.q, self.cfg.nce_z, counter)
        if m == "negative-sampling":
            return gradient_negative_sampling(W, batch, draw.negatives, counter)
        return gradient_blackout(W, batch, self.q, draw.negatives, counter)

    def objective(self, W, batch: Dataset, draw: SampledBatch | None) -> float:
        return objective_value(self.cfg.method, W, batch, draw, estimator=self)


def objective_value(method: str, W, batch: Dataset, draw: SampledBatch | None,
                    estimator: Estimator | None = None, **kw) -> float:
    """Objective whose gradient the corresponding estimator returns.

    ``kw`` supplies method settings when no ``estimator`` is given:
    ``threshold`` (ranking), ``noise_dist`` and ``z`` (nce), ``Q`` (blackout).
    """
    if method == "exact":
        return log_likelihood(W, batch)
    if method in SAMPLED_LIKELIHOOD:
        return objective_sampled_likelihood(W, batch, draw)
    if method == "ranking":
        thr = kw.get("threshold", estimator.threshold if estimator else None)
        return objective_ranking(W, batch, draw.negatives, thr)
    if method == "nce":
        dist = kw.get("noise_dist", estimator.q if estimator else None)
        z = kw.get("z", estimator.cfg.nce_z if estimator else 1.0)
        return objective_nce(W, batch, draw.negatives, dist, z)
    if method == "negative-sampling":
        return objective_negative_sampling(W, batch, draw.negatives)
    if method == "blackout":
        Q = kw.get("Q", estimator.q if estimator else None)
        return objective_blackout(W, batch, Q, draw.negatives)
    raise ConfigurationError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
