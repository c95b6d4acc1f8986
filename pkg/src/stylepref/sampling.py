"""Speaker-condition matching: exact t-SNE, density clustering, cluster caps."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError

EARLY_EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_EARLY = 0.5
MOMENTUM_LATE = 0.8
LEARNING_RATE = 200.0


@dataclass(frozen=True)
class Projection2D:
    points: np.ndarray  # (n, 2)
    final_kl: float
    first_kl: float  # KL after the first gradient step, for progress checks


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray  # (n,), int; -1 = noise


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _conditional_probs(dists: np.ndarray, perplexity: float, tol: float = 1e-5) -> np.ndarray:
    """Per-row Gaussian affinities with precision found by bisection on entropy."""
    n = dists.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        di = np.delete(dists[i], i)
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        for _ in range(64):
            w = np.exp(-di * beta)
            s = w.sum()
            if s <= 0:
                h, pi = 0.0, w
            else:
                pi = w / s
                h = np.log(s) + beta * np.dot(di, w) / s
            if abs(h - target) < tol:
                break
            if h > target:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = (beta + beta_lo) / 2.0
        row = np.insert(pi, i, 0.0)
        s = row.sum()
        if s <= 0:
            # equidistant neighbors make the entropy flat in beta and the
            # weights can underflow entirely; fall back to uniform affinities
            row = np.full(n, 1.0 / (n - 1))
            row[i] = 0.0
            p[i] = row
        else:
            p[i] = row / s
    return p


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _low_dim_affinities(y: np.ndarray):
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, 1e-12), num


def tsne_project(emb: np.ndarray, perplexity: float, iterations: int, seed: int) -> Projection2D:
    """Exact O(N^2) t-SNE to 2-D with early exaggeration and momentum schedule.

    Deterministic for a fixed seed. final_kl is the (unexaggerated) KL
    divergence at the last iteration.
    """
    x = np.asarray(emb, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("embedding matrix must be 2-D with at least 2 rows")
    if not np.all(np.isfinite(x)):
        raise ValidationError("embedding matrix contains non-finite values")
    n = x.shape[0]
    if perplexity <= 0 or 3.0 * perplexity >= n:
        raise ConfigError(f"perplexity {perplexity} too large for {n} rows (need 3*perplexity < rows)")
    if iterations < 250:
        raise ConfigError("iterations must be >= 250")

    cond = _conditional_probs(_pairwise_sq_dists(x), perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p / p.sum(), 1e-300)

    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    first_kl = np.nan
    q = None

    for it in range(iterations):
        p_eff = p * EARLY_EXAGGERATION if it < EXAGGERATION_ITERS else p
        q, num = _low_dim_affinities(y)
        pq = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)

        momentum = MOMENTUM_EARLY if it < EXAGGERATION_ITERS else MOMENTUM_LATE
        same_sign = np.sign(grad) == np.sign(vel)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        vel = momentum * vel - LEARNING_RATE * gains * grad
        y = y + vel
        y = y - y.mean(axis=0)
        if it == 0:
            q1, _ = _low_dim_affinities(y)
            first_kl = _kl(p, q1)

    q_final, _ = _low_dim_affinities(y)
    return Projection2D(points=y, final_kl=_kl(p, q_final), first_kl=first_kl)


def cluster_points(proj: Projection2D, eps: float, min_pts: int) -> ClusterLabels:
    """DBSCAN over the 2-D projection; noise points get label -1."""
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    if min_pts < 1:
        raise ConfigError("min_pts must be >= 1")
    pts = np.asarray(proj.points, dtype=np.float64)
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return ClusterLabels(labels)

    d = np.sqrt(_pairwise_sq_dists(pts))
    neighbors = [np.flatnonzero(d[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    visited = np.zeros(n, dtype=bool)
    cluster_id = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        # grow a new cluster from this core point by density connectivity
        stack = [i]
        visited[i] = True
        labels[i] = cluster_id
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in neighbors[j]:
                if labels[k] == -1:
                    labels[k] = cluster_id
                if not visited[k]:
                    visited[k] = True
                    if core[k]:
                        stack.append(k)
        cluster_id += 1
    return ClusterLabels(labels)


def cap_clusters(records, labels: ClusterLabels, max_per_cluster: int, seed: int) -> list:
    """Downsample each cluster to at most max_per_cluster records.

    Selection is seeded uniform sampling without replacement; noise points
    (-1) always pass through. Input order is preserved.
    """
    lab = np.asarray(labels.labels)
    if len(lab) != len(records):
        raise ValidationError(f"labels length {len(lab)} != records length {len(records)}")
    if max_per_cluster < 1:
        raise ConfigError("max_per_cluster must be >= 1")

    keep = np.zeros(len(records), dtype=bool)
    keep[lab == -1] = True
    rng = np.random.default_rng(seed)
    for cid in sorted(set(lab[lab >= 0].tolist())):
        idx = np.flatnonzero(lab == cid)
        if len(idx) <= max_per_cluster:
            keep[idx] = True
        else:
            chosen = rng.choice(idx, size=max_per_cluster, replace=False)
            keep[chosen] = True
    return [r for r, k in zip(records, keep) if k]
