"""Class-frequency tables and negative-class samplers.

Two ways of estimating a sum Z = sum_i z_i from a subset of its terms:

* importance sampling: S i.i.d. draws d_s ~ q, Z ~ (1/S) sum_s z_{d_s} / q(d_s)
* Bernoulli sampling: include term i independently with probability b_i,
  Z ~ sum_{i included} z_i / b_i

Both are unbiased. The Bernoulli form never repeats a term and recovers the
exact sum when every b_i = 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .model import ConfigurationError

ALPHA_UPPER = 64.0


@dataclass
class FrequencyTable:
    counts: np.ndarray
    f: np.ndarray
    smoothing: float = 1.0

    @property
    def C(self) -> int:
        return self.f.shape[0]

    def power(self, exponent: float) -> np.ndarray:
        """Distribution proportional to f(c)**exponent."""
        q = self.f ** exponent
        return q / q.sum()


@dataclass
class BernoulliConfig:
    K: float
    alpha_exponent: float
    b: np.ndarray


@dataclass
class ImportanceConfig:
    S: int
    q: np.ndarray


@dataclass
class NegativeDraw:
    classes: np.ndarray
    kappa: np.ndarray


@dataclass
class NegativeBatch:
    """Padded per-datapoint negatives: entries where ``mask`` is False are unused."""

    classes: np.ndarray
    kappa: np.ndarray
    mask: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def row(self, m: int) -> NegativeDraw:
        keep = self.mask[m]
        return NegativeDraw(self.classes[m, keep], self.kappa[m, keep])

    @classmethod
    def from_draws(cls, draws) -> "NegativeBatch":
        T = max([d.classes.size for d in draws] + [0])
        M = len(draws)
        classes = np.zeros((M, T), dtype=np.int64)
        kappa = np.ones((M, T))
        mask = np.zeros((M, T), dtype=bool)
        for m, d in enumerate(draws):
            k = d.classes.size
            classes[m, :k] = d.classes
            kappa[m, :k] = d.kappa
            mask[m, :k] = True
        return cls(classes, kappa, mask)


def build_frequency_table(labels, C: int, smoothing: float = 1.0) -> FrequencyTable:
    """Smoothed class frequencies f(c) = (count(c) + smoothing) / (N + smoothing * C)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if smoothing < 0:
        raise ConfigurationError("smoothing must be nonnegative")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ConfigurationError(f"labels must lie in [0, {C})")
    counts = np.bincount(labels, minlength=C)
    if smoothing == 0 and np.any(counts == 0):
        raise ConfigurationError(
            "unobserved classes have zero frequency; use a positive smoothing count")
    f = (counts + smoothing) / (labels.size + smoothing * C)
    return FrequencyTable(counts, f, float(smoothing))


def _as_freq(f) -> np.ndarray:
    return f.f if isinstance(f, FrequencyTable) else np.asarray(f, dtype=np.float64)


def _allowed_mask(C: int, excluded) -> np.ndarray:
    allowed = np.ones(C, dtype=bool)
    if excluded is not None:
        allowed[np.asarray(list(excluded) if isinstance(excluded, (set, frozenset)) else excluded,
                           dtype=np.int64)] = False
    return allowed


def solve_alpha_exponent(f, excluded, K: float, rtol: float = 1e-9) -> float:
    """Exponent alpha >= 0 with sum_{d not excluded} f(d)**alpha == K.

    The sum is strictly decreasing in alpha when every f < 1, so the root is
    bracketed in [0, ALPHA_UPPER] and located by bisection.
    """
    f = _as_freq(f)
    fa = f[_allowed_mask(f.size, excluded)]
    n = fa.size
    if not 0 < K <= n:
        raise ConfigurationError(f"K={K} must lie in (0, {n}] (size of the allowed set)")
    if np.any(fa >= 1.0) or np.any(fa <= 0.0):
        raise ConfigurationError("frequencies must lie strictly inside (0, 1)")
    if K == n:
        return 0.0
    log_f = np.log(fa)

    def excess(alpha):
        return np.exp(alpha * log_f).sum() - K

    if excess(ALPHA_UPPER) > 0:
        raise ConfigurationError(f"no exponent in [0, {ALPHA_UPPER}] reaches K={K}")
    alpha = bisect(excess, 0.0, ALPHA_UPPER, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                   maxiter=400)
    if abs(excess(alpha)) > rtol * K:
        raise ArithmeticError(f"bisection stalled at alpha={alpha}")
    return float(alpha)


def bernoulli_config(f, excluded, K: float) -> BernoulliConfig:
    freq = _as_freq(f)
    alpha = solve_alpha_exponent(freq, excluded, K)
    return BernoulliConfig(K, alpha, np.minimum(freq ** alpha, 1.0))


def importance_config(q, S: int) -> ImportanceConfig:
    q = np.asarray(q, dtype=np.float64)
    if S < 1:
        raise ConfigurationError("need at least one importance draw")
    if np.any(q < 0) or not np.isclose(q.sum(), 1.0):
        raise ConfigurationError("proposal must be a probability vector")
    return ImportanceConfig(int(S), q)


def bernoulli_draw(cfg: BernoulliConfig, excluded, rng: np.random.Generator) -> NegativeDraw:
    """Include each allowed class d independently with probability b_d; kappa = 1/b_d."""
    allowed = _allowed_mask(cfg.b.size, excluded)
    hit = (rng.random(cfg.b.size) < cfg.b) & allowed
    classes = np.flatnonzero(hit)
    return NegativeDraw(classes, 1.0 / cfg.b[classes])


def _restricted_cdf(q: np.ndarray, allowed: np.ndarray) -> tuple[np.ndarray, float]:
    qa = np.where(allowed, q, 0.0)
    total = qa.sum()
    if total <= 0:
        raise ConfigurationError("proposal has no mass on the allowed classes")
    if np.any(q[allowed] <= 0):
        raise ConfigurationError("proposal must be positive on every allowed class")
    return np.cumsum(qa), total


def importance_draw(cfg: ImportanceConfig, excluded, rng: np.random.Generator) -> NegativeDraw:
    """S i.i.d. draws from q renormalised over the allowed classes (repeats allowed).

    Sampling is by inversion of the cumulative distribution; each draw carries
    kappa = 1 / (S * q_allowed(d)).
    """
    allowed = _allowed_mask(cfg.q.size, excluded)
    cdf, total = _restricted_cdf(cfg.q, allowed)
    u = rng.random(cfg.S) * total
    idx = np.searchsorted(cdf, u, side="right")
    idx = _fix_overflow(idx, allowed)
    return NegativeDraw(idx, total / (cfg.S * cfg.q[idx]))


def _fix_overflow(idx: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    # u rounded up onto the final cdf value: map to the last allowed class
    over = idx >= allowed.size
    if np.any(over):
        idx = idx.copy()
        idx[over] = np.flatnonzero(allowed)[-1]
    return idx


def importance_draw_batch(q, excluded_rows, S: int, rng: np.random.Generator) -> NegativeBatch:
    """One importance draw of size S per datapoint, each with its own excluded set."""
    q = np.asarray(q, dtype=np.float64)
    M = len(excluded_rows)
    u = rng.random((M, S))
    classes = np.empty((M, S), dtype=np.int64)
    kappa = np.empty((M, S))
    for m, excl in enumerate(excluded_rows):
        allowed = _allowed_mask(q.size, excl)
        cdf, total = _restricted_cdf(q, allowed)
        idx = _fix_overflow(np.searchsorted(cdf, u[m] * total, side="right"), allowed)
        classes[m] = idx
        kappa[m] = total / (S * q[idx])
    return NegativeBatch(classes, kappa, np.ones((M, S), dtype=bool))


def bernoulli_draw_batch(b_rows: np.ndarray, rng: np.random.Generator) -> NegativeBatch:
    """Independent inclusion per (datapoint, class); ``b_rows`` is zero on excluded classes."""
    hit = rng.random(b_rows.shape) < b_rows
    sizes = hit.sum(axis=1)
    T = int(sizes.max()) if sizes.size else 0
    order = np.argsort(~hit, axis=1, kind="stable")[:, :T]
    mask = np.take_along_axis(hit, order, axis=1)
    b_sel = np.take_along_axis(b_rows, order, axis=1)
    kappa = np.where(mask, 1.0 / np.where(mask, b_sel, 1.0), 1.0)
    return NegativeBatch(order.astype(np.int64), kappa, mask)


def estimate_Z_importance(z, cfg: ImportanceConfig, rng: np.random.Generator, size=None):
    """Importance-sampling estimate(s) of sum(z); ``size`` gives independent repeats."""
    z = np.asarray(z, dtype=np.float64)
    n = 1 if size is None else int(size)
    d = rng.choice(z.size, size=(n, cfg.S), p=cfg.q)
    est = np.mean(z[d] / cfg.q[d], axis=1)
    return float(est[0]) if size is None else est


def estimate_Z_bernoulli(z, b, rng: np.random.Generator, size=None, chunk: int = 2048):
    """Bernoulli-sampling estimate(s) of sum(z)."""
    z = np.asarray(z, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(b <= 0) or np.any(b > 1):
        raise ConfigurationError("inclusion probabilities must lie in (0, 1]")
    w = z / b
    n = 1 if size is None else int(size)
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        hit = rng.random((stop - start, z.size)) < b
        out[start:stop] = hit @ w
    return float(out[0]) if size is None else out


def importance_variance(z, q, S: int) -> float:
    """Variance (1/S) (sum_c z_c^2 / q_c - Z^2) of the importance estimate."""
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float((np.sum(z * z / q) - z.sum() ** 2) / S)


def bernoulli_variance(z, b) -> float:
    """Variance sum_c (1/b_c - 1) z_c^2 of the Bernoulli estimate."""
    z = np.asarray(z, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sum((1.0 / b - 1.0) * z * z))
