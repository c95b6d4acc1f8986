"""Construction of the sparse, balanced A/B comparison set.

Pairs are constrained by text similarity (not too far apart) and speaker
similarity (not likely the same speaker), ranked by a weighted sum of the two
cosine similarities, and added greedily with cross-source pairs prioritized.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import lineio
from .errors import ConfigError, DomainError, ValidationError


@dataclass(frozen=True)
class PairingConfig:
    quota: int
    seed: int = 0
    min_text_sim: float = 0.2
    max_speaker_sim: float = 0.75
    weight_text: float = 0.5
    weight_speaker: float = 0.5
    shortlist_size: int = 50

    def validate(self) -> None:
        if self.weight_text < 0 or self.weight_speaker < 0:
            raise ConfigError("similarity weights must be >= 0")
        if self.weight_text + self.weight_speaker <= 0:
            raise ConfigError("weight_text + weight_speaker must be > 0")
        if self.quota < 1:
            raise ConfigError("quota must be >= 1")
        if self.shortlist_size < 1:
            raise ConfigError("shortlist_size must be >= 1")


@dataclass(frozen=True)
class ComparisonPair:
    pair_id: str
    utt_a: str
    utt_b: str
    split: str
    cross_source: bool
    text_sim: float
    speaker_sim: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict, lineno: int = 0) -> "ComparisonPair":
        try:
            return cls(
                pair_id=str(obj["pair_id"]),
                utt_a=str(obj["utt_a"]),
                utt_b=str(obj["utt_b"]),
                split=str(obj["split"]),
                cross_source=bool(obj["cross_source"]),
                text_sim=float(obj["text_sim"]),
                speaker_sim=float(obj["speaker_sim"]),
            )
        except KeyError as exc:
            raise ValidationError(f"line {lineno}: pair missing key {exc}") from exc


def load_pairs(path) -> list[ComparisonPair]:
    return [ComparisonPair.from_dict(o, i) for i, o in enumerate(lineio.read_objects(path), 1)]


def save_pairs(path, pairs) -> None:
    lineio.write_objects(path, (p.to_dict() for p in pairs))


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DomainError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine similarity undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("embedding matrix contains a zero row")
    return mat / norms


class _SimilarityIndex:
    """Precomputed pairwise text/speaker similarities for one pool."""

    def __init__(self, pool, text_emb, spk_emb):
        self.pool = list(pool)
        self.index = {r.id: i for i, r in enumerate(self.pool)}
        t = _unit_rows(np.asarray([text_emb[r.text_embedding_ref] for r in self.pool]))
        s = _unit_rows(np.asarray([spk_emb[r.speaker_embedding_ref] for r in self.pool]))
        self.text_sim = t @ t.T
        self.spk_sim = s @ s.T


def _shortlist_from_index(idx: _SimilarityIndex, i: int, cfg: PairingConfig):
    """Eligible candidates of pool item i, ranked by the weighted similarity sum."""
    ts = idx.text_sim[i]
    ss = idx.spk_sim[i]
    cands = []
    for j in range(len(idx.pool)):
        if j == i:
            continue
        if ts[j] >= cfg.min_text_sim and ss[j] <= cfg.max_speaker_sim:
            score = cfg.weight_text * ts[j] + cfg.weight_speaker * ss[j]
            cands.append((idx.pool[j].id, float(score)))
    cands.sort(key=lambda c: (-c[1], c[0]))
    return cands[: cfg.shortlist_size]


def candidate_shortlist(target: str, pool, text_emb, spk_emb, cfg: PairingConfig):
    """Ranked (candidate id, combined score) shortlist for one utterance."""
    cfg.validate()
    idx = _SimilarityIndex(pool, text_emb, spk_emb)
    if target not in idx.index:
        raise DomainError(f"target utterance {target!r} not in pool")
    return _shortlist_from_index(idx, idx.index[target], cfg)


def _pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


def build_pairs(pool, text_emb, spk_emb, cfg: PairingConfig):
    """Two-phase greedy pair selection.

    Phase 1 walks utterances in seeded random order, repeatedly adding each
    one's best unused cross-source candidate until the quota is reached or no
    cross-source pair can be added. Phase 2 fills any remaining quota with
    same-source pairs under the same rule.

    Returns (pairs, shortfall) where shortfall is the number of pairs short of
    the quota when even same-source pairs run out.
    """
    cfg.validate()
    pool = list(pool)
    if len(pool) < 2:
        raise DomainError("pair construction needs a pool of at least 2 utterances")
    splits = {r.split for r in pool}
    if len(splits) != 1:
        raise ValidationError(f"pool mixes splits {sorted(splits)}; build pairs per split")
    split = splits.pop()

    idx = _SimilarityIndex(pool, text_emb, spk_emb)
    shortlists = [_shortlist_from_index(idx, i, cfg) for i in range(len(pool))]
    source = {r.id: r.source for r in pool}

    order = np.arange(len(pool))
    np.random.default_rng(cfg.seed).shuffle(order)

    used: set[tuple[str, str]] = set()
    pairs: list[ComparisonPair] = []

    def run_phase(cross_only: bool) -> None:
        while len(pairs) < cfg.quota:
            added_any = False
            for i in order:
                if len(pairs) >= cfg.quota:
                    return
                a = pool[i].id
                for cand_id, _score in shortlists[i]:
                    cross = source[a] != source[cand_id]
                    if cross != cross_only:
                        continue
                    key = _pair_key(a, cand_id)
                    if key in used:
                        continue
                    used.add(key)
                    ja = idx.index[key[0]]
                    jb = idx.index[key[1]]
                    pairs.append(
                        ComparisonPair(
                            pair_id=f"{key[0]}__{key[1]}",
                            utt_a=key[0],
                            utt_b=key[1],
                            split=split,
                            cross_source=cross,
                            text_sim=float(idx.text_sim[ja, jb]),
                            speaker_sim=float(idx.spk_sim[ja, jb]),
                        )
                    )
                    added_any = True
                    break
            if not added_any:
                return

    run_phase(cross_only=True)
    run_phase(cross_only=False)
    shortfall = cfg.quota - len(pairs)
    return pairs, shortfall
