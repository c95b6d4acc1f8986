"""Judgment analyses: win rates, proxy concordance, multivariate logistic model."""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import lineio, metrics
from .acoustics import PROXY_NAMES
from .errors import DomainError, ValidationError
from .metrics import ConfidenceInterval, LabeledScorePair

DIMENSION_GROUPS = {
    "emotional_explicitness": ("arousal",),
    "timbre_difference": ("f1_median_hz", "f2_median_hz", "f3_median_hz"),
    "prosodic_salience": ("mean_f0_hz", "voicing_ratio", "spectral_flux_mean"),
    "articulation_clarity": (
        "syllable_rate_per_s",
        "articulation_rate_per_s",
        "pause_ratio",
        "mean_pause_s",
    ),
}


@dataclass(frozen=True)
class JudgmentRecord:
    pair_id: str
    rater_id: str
    choice: str  # "A" or "B", canonical pair slots
    session_id: str
    presented_left: str  # which slot was played on the left
    timestamp: float

    def __post_init__(self):
        if self.choice not in ("A", "B"):
            raise ValidationError(f"choice must be A or B, got {self.choice!r}")
        if self.presented_left not in ("A", "B"):
            raise ValidationError(f"presented_left must be A or B, got {self.presented_left!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "JudgmentRecord":
        return cls(
            pair_id=str(obj["pair_id"]),
            rater_id=str(obj["rater_id"]),
            choice=str(obj["choice"]),
            session_id=str(obj["session_id"]),
            presented_left=str(obj["presented_left"]),
            timestamp=float(obj.get("timestamp", 0.0)),
        )


def load_judgments(path) -> list[JudgmentRecord]:
    return [JudgmentRecord.from_dict(o) for o in lineio.read_objects(path)]


def save_judgments(path, judgments) -> None:
    lineio.write_objects(path, (j.to_dict() for j in judgments))


@dataclass(frozen=True)
class PCRResult:
    proxy_name: str
    pcr: float
    direction: str  # "higher" or "lower"
    n_used: int
    ci: ConfidenceInterval
    p_value: float


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    l2: float

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(x) - self.feature_means) / self.feature_stds
        return 1.0 / (1.0 + np.exp(-np.clip(z @ self.weights, -700, 700)))

    def decision(self, x: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(x) - self.feature_means) / self.feature_stds
        return z @ self.weights


@dataclass
class DiffDataset:
    """Orientation-augmented feature-difference rows.

    Rows come in mates: row 2i is (x, y) for judgment i and row 2i+1 is
    (-x, not y).
    """

    x: np.ndarray  # (2m, d)
    y: np.ndarray  # (2m,), bool
    feature_names: tuple[str, ...]
    n_dropped: int = 0


@dataclass
class CVReport:
    fold_accuracy: list[float]
    fold_auc: list[float]
    mean_acc: float
    std_acc: float
    mean_auc: float
    std_auc: float
    coefficients: dict[str, float] = field(default_factory=dict)


def _pair_index(pairs) -> dict:
    return {p.pair_id: p for p in pairs}


def empirical_win_rate(judgments, pairs) -> dict[str, tuple[int, int, float]]:
    """Per-utterance (wins, appearances, rate) over all judgments."""
    by_id = _pair_index(pairs)
    wins: dict[str, int] = {}
    apps: dict[str, int] = {}
    for j in judgments:
        if j.pair_id not in by_id:
            raise ValidationError(f"judgment references unknown pair {j.pair_id!r}")
        p = by_id[j.pair_id]
        winner = p.utt_a if j.choice == "A" else p.utt_b
        loser = p.utt_b if j.choice == "A" else p.utt_a
        wins[winner] = wins.get(winner, 0) + 1
        apps[winner] = apps.get(winner, 0) + 1
        apps[loser] = apps.get(loser, 0) + 1
    return {u: (wins.get(u, 0), apps[u], wins.get(u, 0) / apps[u]) for u in apps}


def corpus_win_matrix(judgments, pairs, records) -> dict[tuple[str, str], float]:
    """Cross-source win rates: cell (s1, s2) = share of s1-vs-s2 judgments won by s1."""
    by_id = _pair_index(pairs)
    source = {r.id: r.source for r in records}
    wins: dict[tuple[str, str], int] = {}
    counts: dict[tuple[str, str], int] = {}
    for j in judgments:
        p = by_id[j.pair_id]
        sa, sb = source[p.utt_a], source[p.utt_b]
        if sa == sb:
            continue
        winner_src = sa if j.choice == "A" else sb
        for s1, s2 in ((sa, sb), (sb, sa)):
            counts[(s1, s2)] = counts.get((s1, s2), 0) + 1
            if winner_src == s1:
                wins[(s1, s2)] = wins.get((s1, s2), 0) + 1
    return {k: wins.get(k, 0) / n for k, n in counts.items()}


def compute_pcr(proxy_name, proxies, judgments, pairs, b: int, seed: int) -> PCRResult:
    """Pairwise concordance rate of one proxy against the judgments.

    Exact ties on the proxy are excluded. pcr is reported in the favorable
    direction (always >= 0.5); the bootstrap CI and binomial p-value use the
    per-judgment concordance indicators.
    """
    if proxy_name not in PROXY_NAMES:
        raise DomainError(f"unknown proxy {proxy_name!r}")
    by_id = _pair_index(pairs)
    indicators = []
    for j in judgments:
        p = by_id[j.pair_id]
        va = proxies.get(p.utt_a)
        vb = proxies.get(p.utt_b)
        if va is None or vb is None:
            continue
        xa = getattr(va, proxy_name)
        xb = getattr(vb, proxy_name)
        if xa is None or xb is None or xa == xb:
            continue
        preferred, other = (xa, xb) if j.choice == "A" else (xb, xa)
        indicators.append(1.0 if preferred > other else 0.0)
    if not indicators:
        raise DomainError(f"{proxy_name}: no usable judgments (all missing or tied)")

    ind = np.asarray(indicators)
    raw = float(ind.mean())
    direction = "higher" if raw >= 0.5 else "lower"
    favorable = ind if direction == "higher" else 1.0 - ind
    ci = metrics.bootstrap_ci(favorable, b=b, level=0.95, seed=seed)
    p_value = metrics.binomial_pvalue(int(favorable.sum()), len(favorable), 0.5)
    return PCRResult(
        proxy_name=proxy_name,
        pcr=float(favorable.mean()),
        direction=direction,
        n_used=len(favorable),
        ci=ci,
        p_value=p_value,
    )


def build_diff_dataset(pairs, proxies, judgments) -> DiffDataset:
    """One row x = proxy(A) - proxy(B) per judgment plus its mirrored mate (-x, not y).

    Judgments with any absent proxy on either side are dropped and counted.
    """
    by_id = _pair_index(pairs)
    rows = []
    labels = []
    dropped = 0
    for j in judgments:
        p = by_id[j.pair_id]
        va = proxies.get(p.utt_a)
        vb = proxies.get(p.utt_b)
        if va is None or vb is None:
            dropped += 1
            continue
        da = [getattr(va, n) for n in PROXY_NAMES]
        db = [getattr(vb, n) for n in PROXY_NAMES]
        if any(v is None for v in da) or any(v is None for v in db):
            dropped += 1
            continue
        x = np.asarray(da, dtype=np.float64) - np.asarray(db, dtype=np.float64)
        y = j.choice == "A"
        rows.append(x)
        labels.append(y)
        rows.append(-x)
        labels.append(not y)
    x = np.asarray(rows) if rows else np.empty((0, len(PROXY_NAMES)))
    return DiffDataset(
        x=x,
        y=np.asarray(labels, dtype=bool),
        feature_names=PROXY_NAMES,
        n_dropped=dropped,
    )


def fit_logistic(data: DiffDataset, l2: float = 1e-4, max_iter: int = 100, tol: float = 1e-8) -> LogisticModel:
    """L2-regularized logistic regression without intercept, solved by damped Newton.

    Features are standardized with the dataset's own mean/std; no intercept is
    fit because difference features must score antisymmetrically.
    """
    x, y = data.x, data.y.astype(np.float64)
    if x.shape[0] < 2 or len(set(data.y.tolist())) < 2:
        raise DomainError("logistic fit needs >= 2 rows with both classes present")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    if np.any(stds <= 0):
        zero = [data.feature_names[i] for i in np.flatnonzero(stds <= 0)]
        raise DomainError(f"constant features cannot be standardized: {zero}")
    z = (x - means) / stds

    n, d = z.shape
    w = np.zeros(d)

    def loss_grad(wv):
        s = np.clip(z @ wv, -700, 700)
        p = 1.0 / (1.0 + np.exp(-s))
        nll = float(np.mean(np.logaddexp(0.0, -np.where(y > 0.5, s, -s))))
        loss = nll + 0.5 * l2 * float(wv @ wv)
        grad = z.T @ (p - y) / n + l2 * wv
        return loss, grad, p

    loss, grad, p = loss_grad(w)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return LogisticModel(weights=w, feature_means=means, feature_stds=stds, l2=l2)
        r = p * (1.0 - p)
        hess = (z.T * r) @ z / n + l2 * np.eye(d)
        step = np.linalg.solve(hess, grad)
        # damping: halve the step while it increases the loss
        t = 1.0
        for _ in range(50):
            w_new = w - t * step
            new_loss, new_grad, new_p = loss_grad(w_new)
            if new_loss <= loss + 1e-12 or t < 1e-12:
                break
            t *= 0.5
        w, loss, grad, p = w_new, new_loss, new_grad, new_p
    gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise DomainError(f"logistic fit did not converge: gradient norm {gnorm:.3e}")
    return LogisticModel(weights=w, feature_means=means, feature_stds=stds, l2=l2)


def _subset_dataset(data: DiffDataset, feature_subset) -> DiffDataset:
    if feature_subset is None:
        return data
    idx = [data.feature_names.index(n) for n in feature_subset]
    return DiffDataset(
        x=data.x[:, idx],
        y=data.y,
        feature_names=tuple(feature_subset),
        n_dropped=data.n_dropped,
    )


def cross_validate(data: DiffDataset, k: int = 5, feature_subset=None, seed: int = 0,
                   l2: float = 1e-4) -> CVReport:
    """Stratified k-fold CV keeping each row and its mirrored mate in one fold."""
    if k < 2:
        raise DomainError("cross-validation needs k >= 2")
    data = _subset_dataset(data, feature_subset)
    m = data.x.shape[0] // 2  # judgment-level units; mates at rows 2i, 2i+1
    if m < k:
        raise DomainError("fewer judgments than folds")
    unit_y = data.y[0::2]

    rng = np.random.default_rng(seed)
    fold_of = np.empty(m, dtype=int)
    for cls in (False, True):
        members = np.flatnonzero(unit_y == cls)
        rng.shuffle(members)
        fold_of[members] = np.arange(len(members)) % k

    accs, aucs = [], []
    for fold in range(k):
        test_units = np.flatnonzero(fold_of == fold)
        train_units = np.flatnonzero(fold_of != fold)
        tr_rows = np.concatenate([2 * train_units, 2 * train_units + 1])
        te_rows = np.concatenate([2 * test_units, 2 * test_units + 1])
        tr = DiffDataset(data.x[tr_rows], data.y[tr_rows], data.feature_names)
        if len(set(data.y[te_rows].tolist())) < 2:
            raise DomainError(f"fold {fold} does not contain both classes")
        model = fit_logistic(tr, l2=l2)
        scores = model.decision(data.x[te_rows])
        items = [LabeledScorePair(float(s), bool(yy)) for s, yy in zip(scores, data.y[te_rows])]
        accs.append(metrics.pairwise_accuracy(items))
        aucs.append(metrics.roc_auc(items))

    final = fit_logistic(data, l2=l2)
    coeffs = {n: float(wv) for n, wv in zip(data.feature_names, final.weights)}
    return CVReport(
        fold_accuracy=accs,
        fold_auc=aucs,
        mean_acc=float(np.mean(accs)),
        std_acc=float(np.std(accs, ddof=1)),
        mean_auc=float(np.mean(aucs)),
        std_auc=float(np.std(aucs, ddof=1)),
        coefficients=coeffs,
    )
