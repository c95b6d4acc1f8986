"""Pairwise ranking model: aggregator -> mean pool -> MLP -> scalar score.

Trained by minimizing -log sigmoid(s_winner - s_loser) with SGD + momentum.
The aggregator is either the identity over frame features ("mean_pool") or a
single-layer bidirectional tanh recurrence ("recurrent").
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import embio, metrics
from .errors import DomainError, ParseError, ValidationError
from .metrics import LabeledScorePair

MODEL_MAGIC = b"PSRM"
MODEL_VERSION = 1

AGGREGATORS = ("mean_pool", "recurrent")


@dataclass
class ScoreModel:
    aggregator: str
    input_dim: int
    hidden_dim: int
    mlp_dims: tuple[int, ...]  # layer widths, ending in 1
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 60
    l2: float = 1e-5
    seed: int = 0
    patience: int = 8
    val_fraction: float = 0.1
    aggregator: str = "mean_pool"
    hidden_dim: int = 128
    mlp_hidden: tuple[int, ...] = (64,)

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("learning rate, batch size and epochs must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValidationError(f"aggregator must be one of {AGGREGATORS}")


class FeatureStore:
    """Loads per-utterance frame-feature files `<id>.fse` with a small cache."""

    def __init__(self, directory):
        self.directory = directory
        self._cache: dict[str, np.ndarray] = {}

    def get(self, utt_id: str) -> np.ndarray:
        if utt_id not in self._cache:
            path = os.path.join(self.directory, f"{utt_id}.fse")
            frames = embio.read_embeddings(path)
            if frames.shape[0] < 1:
                raise ValidationError(f"{utt_id}: empty feature sequence")
            self._cache[utt_id] = frames
        return self._cache[utt_id]


def init_model(aggregator: str, input_dim: int, hidden_dim: int = 128,
               mlp_hidden: tuple[int, ...] = (64,), seed: int = 0) -> ScoreModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    if aggregator not in AGGREGATORS:
        raise ValidationError(f"unknown aggregator {aggregator!r}")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {}
    if aggregator == "recurrent":
        for d in ("f", "b"):
            params[f"rnn_{d}_w"] = uniform((hidden_dim, input_dim), input_dim)
            params[f"rnn_{d}_u"] = uniform((hidden_dim, hidden_dim), hidden_dim)
            params[f"rnn_{d}_b"] = np.zeros(hidden_dim)
        pooled = 2 * hidden_dim
    else:
        pooled = input_dim

    dims = (pooled, *mlp_hidden, 1)
    for layer in range(len(dims) - 1):
        params[f"mlp{layer}_w"] = uniform((dims[layer + 1], dims[layer]), dims[layer])
        params[f"mlp{layer}_b"] = np.zeros(dims[layer + 1])
    return ScoreModel(
        aggregator=aggregator,
        input_dim=input_dim,
        hidden_dim=hidden_dim if aggregator == "recurrent" else 0,
        mlp_dims=dims,
        params=params,
    )


def _forward(m: ScoreModel, frames: np.ndarray):
    """Score with cached intermediates for backprop."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != m.input_dim:
        raise ValidationError(
            f"feature sequence shape {frames.shape} incompatible with input dim {m.input_dim}"
        )
    cache = {"frames": frames}
    if m.aggregator == "recurrent":
        t_len = frames.shape[0]
        h = m.hidden_dim
        hf = np.zeros((t_len + 1, h))
        hb = np.zeros((t_len + 1, h))
        p = m.params
        for t in range(t_len):
            hf[t + 1] = np.tanh(p["rnn_f_w"] @ frames[t] + p["rnn_f_u"] @ hf[t] + p["rnn_f_b"])
        for t in range(t_len - 1, -1, -1):
            hb[t] = np.tanh(p["rnn_b_w"] @ frames[t] + p["rnn_b_u"] @ hb[t + 1] + p["rnn_b_b"])
        z = np.concatenate([hf[1:], hb[:-1]], axis=1)
        cache["hf"], cache["hb"] = hf, hb
    else:
        z = frames
    zbar = z.mean(axis=0)
    cache["z"], cache["zbar"] = z, zbar

    acts = [zbar]
    n_layers = len(m.mlp_dims) - 1
    for layer in range(n_layers):
        pre = m.params[f"mlp{layer}_w"] @ acts[-1] + m.params[f"mlp{layer}_b"]
        acts.append(np.tanh(pre) if layer < n_layers - 1 else pre)
    cache["acts"] = acts
    return float(acts[-1][0]), cache


def _backward(m: ScoreModel, cache, dscore: float) -> dict[str, np.ndarray]:
    """Gradient of (dscore * score) w.r.t. every parameter."""
    grads = {k: np.zeros_like(v) for k, v in m.params.items()}
    acts = cache["acts"]
    n_layers = len(m.mlp_dims) - 1

    delta = np.array([dscore])
    for layer in range(n_layers - 1, -1, -1):
        grads[f"mlp{layer}_w"] += np.outer(delta, acts[layer])
        grads[f"mlp{layer}_b"] += delta
        if layer > 0:
            back = m.params[f"mlp{layer}_w"].T @ delta
            delta = back * (1.0 - acts[layer] ** 2)  # tanh'
        else:
            dzbar = m.params[f"mlp{layer}_w"].T @ delta

    z = cache["z"]
    t_len = z.shape[0]
    dz = np.tile(dzbar / t_len, (t_len, 1))

    if m.aggregator == "recurrent":
        frames = cache["frames"]
        hf, hb = cache["hf"], cache["hb"]
        h = m.hidden_dim
        p = m.params
        dhf_next = np.zeros(h)
        for t in range(t_len - 1, -1, -1):
            dh = dz[t, :h] + dhf_next
            dpre = dh * (1.0 - hf[t + 1] ** 2)
            grads["rnn_f_w"] += np.outer(dpre, frames[t])
            grads["rnn_f_u"] += np.outer(dpre, hf[t])
            grads["rnn_f_b"] += dpre
            dhf_next = p["rnn_f_u"].T @ dpre
        dhb_prev = np.zeros(h)
        for t in range(t_len):
            dh = dz[t, h:] + dhb_prev
            dpre = dh * (1.0 - hb[t] ** 2)
            grads["rnn_b_w"] += np.outer(dpre, frames[t])
            grads["rnn_b_u"] += np.outer(dpre, hb[t + 1])
            grads["rnn_b_b"] += dpre
            dhb_prev = p["rnn_b_u"].T @ dpre
    return grads


def score_utterance(m: ScoreModel, frames: np.ndarray) -> float:
    score, _ = _forward(m, frames)
    return score


def pair_probability(m: ScoreModel, frames_a: np.ndarray, frames_b: np.ndarray) -> float:
    """sigma(score(a) - score(b)), overflow-safe."""
    d = score_utterance(m, frames_a) - score_utterance(m, frames_b)
    return float(np.exp(metrics.log_sigmoid(d)))


def _pair_loss_grads(m: ScoreModel, frames_a, frames_b, a_preferred: bool):
    """Pairwise logistic loss and its parameter gradients for one judgment."""
    sa, cache_a = _forward(m, frames_a)
    sb, cache_b = _forward(m, frames_b)
    d = sa - sb if a_preferred else sb - sa
    loss = float(np.logaddexp(0.0, -d))
    # dL/d(diff) = -sigma(-diff); diff = s_winner - s_loser
    dd = -float(np.exp(metrics.log_sigmoid(-d)))
    da, db = (dd, -dd) if a_preferred else (-dd, dd)
    ga = _backward(m, cache_a, da)
    gb = _backward(m, cache_b, db)
    grads = {k: ga[k] + gb[k] for k in ga}
    return loss, grads


def gradient_check(m: ScoreModel, frames_a, frames_b, a_preferred: bool, epsilon: float = 1e-5) -> float:
    """Max relative error of analytic pairwise-loss gradients vs central differences."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise DomainError("epsilon must lie in [1e-7, 1e-3]")
    _, analytic = _pair_loss_grads(m, frames_a, frames_b, a_preferred)

    def loss_at() -> float:
        loss, _ = _pair_loss_grads(m, frames_a, frames_b, a_preferred)
        return loss

    worst = 0.0
    for key, arr in m.params.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_at()
            flat[i] = orig - epsilon
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic[key].reshape(-1)[i])
            # the floor absorbs central-difference float noise (~eps_machine / epsilon)
            # for components whose true gradient is exactly zero, e.g. the final
            # bias, which cancels in the score difference
            err = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


def _mean_nll_items(m: ScoreModel, items, store) -> float:
    losses = []
    for utt_a, utt_b, a_preferred in items:
        sa = score_utterance(m, store.get(utt_a))
        sb = score_utterance(m, store.get(utt_b))
        d = sa - sb if a_preferred else sb - sa
        losses.append(np.logaddexp(0.0, -d))
    return float(np.mean(losses))


def train_ranker(items, store, cfg: TrainConfig):
    """Train on (utt_a, utt_b, a_preferred) triples; returns (model, log rows).

    A seeded validation slice is held out for early stopping; the model with
    the best validation NLL is returned. Pair orientation is re-randomized
    each epoch so neither slot acquires a bias.
    """
    cfg.validate()
    items = list(items)
    if not items:
        raise DomainError("no training pairs")
    input_dim = store.get(items[0][0]).shape[1]
    model = init_model(cfg.aggregator, input_dim, cfg.hidden_dim, cfg.mlp_hidden, seed=cfg.seed)

    rng = np.random.default_rng(cfg.seed + 1)
    order = rng.permutation(len(items))
    n_val = max(1, int(round(cfg.val_fraction * len(items)))) if len(items) > 1 else 0
    val_items = [items[i] for i in order[:n_val]]
    train_items = [items[i] for i in order[n_val:]] or items

    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    best_params = model.copy_params()
    best_val = math.inf
    bad_epochs = 0
    log_rows = []

    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_items))
        flips = rng.random(len(train_items)) < 0.5
        epoch_losses = []
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            acc = {k: np.zeros_like(v) for k, v in model.params.items()}
            for bi in batch:
                utt_a, utt_b, a_pref = train_items[bi]
                if flips[bi]:
                    utt_a, utt_b, a_pref = utt_b, utt_a, not a_pref
                loss, grads = _pair_loss_grads(model, store.get(utt_a), store.get(utt_b), a_pref)
                if not math.isfinite(loss):
                    raise DomainError(f"non-finite loss at epoch {epoch}, pair ({utt_a}, {utt_b})")
                epoch_losses.append(loss)
                for k in acc:
                    acc[k] += grads[k]
            scale = 1.0 / len(batch)
            for k, w in model.params.items():
                g = acc[k] * scale + cfg.l2 * w
                velocity[k] = 0.9 * velocity[k] - cfg.learning_rate * g
                w += velocity[k]

        train_nll = float(np.mean(epoch_losses))
        val_nll = _mean_nll_items(model, val_items, store) if val_items else train_nll
        log_rows.append({"epoch": epoch, "train_nll": train_nll, "valid_nll": val_nll})
        if val_nll < best_val - 1e-6:
            best_val = val_nll
            best_params = model.copy_params()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break

    model.params = best_params
    return model, log_rows


def evaluate_ranker(m: ScoreModel, items, store):
    """Score held-out pairs and return (nll, accuracy, auc)."""
    if not items:
        raise DomainError("no evaluation pairs")
    scored = []
    for utt_a, utt_b, a_preferred in items:
        d = score_utterance(m, store.get(utt_a)) - score_utterance(m, store.get(utt_b))
        scored.append(LabeledScorePair(score_diff=d, label=bool(a_preferred)))
    return metrics.mean_nll(scored), metrics.pairwise_accuracy(scored), metrics.roc_auc(scored)


def save_model(m: ScoreModel, path) -> None:
    """Canonical binary serialization; identical models produce identical bytes."""
    keys = sorted(m.params)
    header = {
        "aggregator": m.aggregator,
        "input_dim": m.input_dim,
        "hidden_dim": m.hidden_dim,
        "mlp_dims": list(m.mlp_dims),
        "params": {k: list(m.params[k].shape) for k in keys},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        for k in keys:
            fh.write(m.params[k].astype("<f8").tobytes(order="C"))


def load_model(path) -> ScoreModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ParseError(f"{path}: not a model file")
        meta = fh.read(8)
        if len(meta) < 8:
            raise ParseError(f"{path}: truncated header")
        version, blob_len = struct.unpack("<II", meta)
        if version != MODEL_VERSION:
            raise ParseError(f"{path}: unsupported model version {version}")
        blob = fh.read(blob_len)
        if len(blob) < blob_len:
            raise ParseError(f"{path}: truncated header")
        header = json.loads(blob.decode("utf-8"))
        params = {}
        for k in sorted(header["params"]):
            shape = tuple(header["params"][k])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) < count * 8:
                raise ParseError(f"{path}: truncated parameter block {k}")
            params[k] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ParseError(f"{path}: trailing bytes after parameters")
    return ScoreModel(
        aggregator=header["aggregator"],
        input_dim=int(header["input_dim"]),
        hidden_dim=int(header["hidden_dim"]),
        mlp_dims=tuple(header["mlp_dims"]),
        params=params,
    )
