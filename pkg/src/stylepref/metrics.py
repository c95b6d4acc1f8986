"""Shared statistical primitives: AUC, accuracy, NLL, bootstrap, binomial test."""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import rankdata

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class LabeledScorePair:
    score_diff: float  # score of A minus score of B
    label: bool  # True = A preferred


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValidationError("confidence interval lower bound exceeds upper bound")


def _split(items):
    diffs = np.array([it.score_diff for it in items], dtype=np.float64)
    labels = np.array([bool(it.label) for it in items])
    if not np.all(np.isfinite(diffs)):
        raise ValidationError("score_diff values must be finite")
    return diffs, labels


def roc_auc(items) -> float:
    """Mann-Whitney AUC of score_diff against the preference label.

    Ties between a positive and a negative count 0.5. O(n log n) via
    average-rank sums.
    """
    diffs, labels = _split(items)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("roc_auc needs at least one positive and one negative label")
    ranks = rankdata(diffs, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pairwise_accuracy(items) -> float:
    """Fraction of items whose score_diff sign matches the label; zero diffs count 0.5."""
    diffs, labels = _split(items)
    if len(diffs) == 0:
        raise DomainError("pairwise_accuracy needs at least one item")
    signs = np.sign(diffs)
    want = np.where(labels, 1.0, -1.0)
    credit = np.where(signs == 0, 0.5, (signs == want).astype(np.float64))
    return float(credit.mean())


def log_sigmoid(x):
    """Numerically safe log(sigmoid(x))."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def mean_nll(items) -> float:
    """Mean pairwise logistic loss -log sigmoid(+/- score_diff)."""
    diffs, labels = _split(items)
    if len(diffs) == 0:
        raise DomainError("mean_nll needs at least one item")
    signed = np.where(labels, diffs, -diffs)
    return float(np.mean(-log_sigmoid(signed)))


def bootstrap_ci(samples, b: int, level: float, seed: int) -> ConfidenceInterval:
    """Percentile bootstrap CI of the mean of boolean samples.

    Replicate r uses its own generator seeded with seed + r, so results do not
    depend on execution order.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DomainError("bootstrap_ci needs a non-empty sample")
    if b < 100:
        raise DomainError("bootstrap_ci needs b >= 100 replicates")
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    n = x.size
    stats = np.empty(b)
    for r in range(b):
        rng = np.random.default_rng(seed + r)
        stats[r] = x[rng.integers(0, n, n)].mean()
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(stats, [alpha, 1.0 - alpha])
    return ConfidenceInterval(float(lower), float(upper), level)


def binomial_pvalue(successes: int, n: int, p0: float) -> float:
    """Exact two-sided binomial test.

    The p-value sums the probabilities of all outcomes no more likely than the
    observed one, evaluated in log space.
    """
    if n < 1 or not 0 <= successes <= n:
        raise DomainError("need 0 <= successes <= n and n >= 1")
    if not 0.0 < p0 < 1.0:
        raise DomainError("p0 must lie in (0, 1)")
    k = np.arange(n + 1)
    logpmf = (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + k * np.log(p0)
        + (n - k) * np.log1p(-p0)
    )
    # small log-space slack so equal-probability outcomes are kept despite rounding
    mask = logpmf <= logpmf[successes] + 1e-9
    return float(min(1.0, np.exp(logsumexp(logpmf[mask]))))
