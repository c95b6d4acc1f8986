"""Synthetic-data generator: the quantitative test bed for the whole pipeline.

Each utterance gets a latent style strength theta ~ Normal(0, spread). The
waveform parameters that drive the acoustic proxies (pause fraction, syllable
rate, resonances, pitch) vary linearly with theta, frame-feature files are
theta-informative noisy vectors, and judgments are sampled from the logistic
choice model P(A preferred) = sigma(theta_A - theta_B). Ground-truth theta is
written alongside so tests can compute exact Bayes rates.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import embio, lineio, pairing
from .acoustics import Waveform, save_wav
from .analysis import JudgmentRecord, save_judgments
from .corpus import UtteranceRecord, save_manifest
from .errors import ValidationError


@dataclass(frozen=True)
class SimulationConfig:
    n_utterances: int
    n_pairs: int
    n_judgments: int
    latent_spread: float = 1.5
    seed: int = 0
    sample_rate: int = 16_000
    feature_dim: int = 8
    test_fraction: float = 0.2

    def validate(self) -> None:
        if self.n_utterances < 4 or self.n_pairs < 1 or self.n_judgments < 1:
            raise ValidationError("simulation sizes must be positive (>= 4 utterances)")
        if self.latent_spread < 0:
            raise ValidationError("latent_spread must be >= 0")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def _resonator_cascade(x: np.ndarray, sr: int, freqs, bws) -> np.ndarray:
    for f, bw in zip(freqs, bws):
        r = np.exp(-np.pi * bw / sr)
        theta = 2.0 * np.pi * f / sr
        x = lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], x)
    return x


def _voiced_burst(duration_s: float, sr: int, f0: float, formants, rng) -> np.ndarray:
    n = max(int(round(duration_s * sr)), 1)
    t = np.arange(n) / sr
    src = np.zeros(n)
    k = 1
    while k * f0 < 4000.0:
        src += np.sin(2.0 * np.pi * k * f0 * t) / k
        k += 1
    out = _resonator_cascade(src, sr, formants, (80.0, 120.0, 160.0))
    ramp = min(int(0.020 * sr), n // 2)
    if ramp > 0:
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[-ramp:] = env[:ramp][::-1]
        out = out * env
    return out


def synthesize_utterance(duration_s: float, f0: float, formants, syllable_rate: float,
                         pause_frac: float, sr: int, rng) -> Waveform:
    """Burst-train speech surrogate with controllable proxy-relevant structure."""
    pause_total = pause_frac * duration_s
    n_pauses = 2 if pause_total >= 0.40 else (1 if pause_total >= 0.18 else 0)
    pause_len = pause_total / n_pauses if n_pauses else 0.0
    speech_total = duration_s - n_pauses * pause_len
    n_syl = max(1, int(round(syllable_rate * duration_s)))
    slot = speech_total / n_syl

    pieces = []
    pause_after = {n_syl // 3, (2 * n_syl) // 3} if n_pauses == 2 else ({n_syl // 2} if n_pauses else set())
    for i in range(n_syl):
        burst = _voiced_burst(slot * 0.7, sr, f0, formants, rng)
        pieces.append(burst)
        pieces.append(np.zeros(int(round(slot * 0.3 * sr))))
        if (i + 1) in pause_after:
            pieces.append(np.zeros(int(round(pause_len * sr))))
    x = np.concatenate(pieces)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.3 * x / peak
    return Waveform(samples=x, sample_rate_hz=sr)


def _clip(v, lo, hi):
    return float(min(max(v, lo), hi))


def run_simulation(cfg: SimulationConfig, out_dir: str) -> dict:
    """Write manifest, waveforms, embeddings, feature files, pairs, judgments, theta.

    Returns the paths of everything written.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    wav_dir = os.path.join(out_dir, "wav")
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(wav_dir, exist_ok=True)
    os.makedirs(feat_dir, exist_ok=True)

    n = cfg.n_utterances
    theta = rng.normal(0.0, cfg.latent_spread, n) if cfg.latent_spread > 0 else np.zeros(n)
    te = np.clip(theta, -3.0, 3.0)

    n_test = max(2, int(round(cfg.test_fraction * n)))
    split_perm = rng.permutation(n)
    splits = np.array(["train"] * n, dtype=object)
    splits[split_perm[:n_test]] = "test"

    # style-correlated corpus labels so cross-source contrasts carry signal
    sources = np.where(rng.random(n) < sigmoid(1.2 * theta), "styled", "plain")

    # embeddings: speaker clusters, near-duplicate text topics, theta-informative frames
    spk_centers = rng.normal(0.0, 1.0, (6, 16))
    spk_cluster = rng.integers(0, 6, n)
    spk = 3.0 * spk_centers[spk_cluster] + rng.normal(0.0, 0.5, (n, 16))
    text_base = rng.normal(0.0, 1.0, 16)
    text = text_base + rng.normal(0.0, 0.35, (n, 16))
    feat_direction = rng.normal(0.0, 1.0, cfg.feature_dim)
    feat_direction /= np.linalg.norm(feat_direction)

    records = []
    for i in range(n):
        uid = f"u{i:05d}"
        f0 = _clip(170.0 + 12.0 * te[i] + rng.normal(0.0, 3.0), 80.0, 380.0)
        f1 = _clip(550.0 - 35.0 * te[i] + rng.normal(0.0, 10.0), 320.0, 800.0)
        f2 = _clip(1500.0 - 80.0 * te[i] + rng.normal(0.0, 20.0), 1050.0, 2200.0)
        f3 = _clip(2600.0 - 90.0 * te[i] + rng.normal(0.0, 25.0), 2100.0, 3600.0)
        rate = _clip(3.8 + 0.35 * te[i] + rng.normal(0.0, 0.05), 1.5, 6.0)
        pause_frac = _clip(0.22 - 0.04 * te[i] + rng.normal(0.0, 0.01), 0.02, 0.5)
        duration = float(rng.uniform(2.5, 4.0))

        w = synthesize_utterance(duration, f0, (f1, f2, f3), rate, pause_frac, cfg.sample_rate, rng)
        wav_path = os.path.join(wav_dir, f"{uid}.wav")
        save_wav(wav_path, w)

        t_len = int(rng.integers(8, 21))
        frames = theta[i] * feat_direction + rng.normal(0.0, 0.4, (t_len, cfg.feature_dim))
        embio.write_embeddings(os.path.join(feat_dir, f"{uid}.fse"), frames)

        records.append(
            UtteranceRecord(
                id=uid,
                source=str(sources[i]),
                split=str(splits[i]),
                audio_path=wav_path,
                duration_s=w.duration_s,
                transcript=f"synthetic utterance {i}",
                script_likeness=int(rng.integers(1, 3)),
                cer=float(rng.uniform(0.0, 0.10)),
                predicted_mos=float(rng.uniform(3.2, 4.8)),
                arousal=_clip(0.5 + 0.09 * te[i] + rng.normal(0.0, 0.01), 0.0, 1.0),
                speaker_embedding_ref=i,
                text_embedding_ref=i,
            )
        )

    paths = {
        "manifest": os.path.join(out_dir, "manifest.jsonl"),
        "speaker_embeddings": os.path.join(out_dir, "speaker.psem"),
        "text_embeddings": os.path.join(out_dir, "text.psem"),
        "pairs_train": os.path.join(out_dir, "pairs_train.jsonl"),
        "pairs_test": os.path.join(out_dir, "pairs_test.jsonl"),
        "judgments": os.path.join(out_dir, "judgments.jsonl"),
        "theta": os.path.join(out_dir, "theta.jsonl"),
        "wav_dir": wav_dir,
        "feature_dir": feat_dir,
    }
    save_manifest(paths["manifest"], records)
    embio.write_embeddings(paths["speaker_embeddings"], spk)
    embio.write_embeddings(paths["text_embeddings"], text)

    spk_mat = spk
    text_mat = text
    theta_by_id = {r.id: float(theta[i]) for i, r in enumerate(records)}

    n_test_pairs = max(1, int(round(cfg.test_fraction * cfg.n_pairs)))
    quotas = {"train": cfg.n_pairs - n_test_pairs, "test": n_test_pairs}
    all_pairs = []
    for offset, split in enumerate(("train", "test"), start=1):
        pool = [r for r in records if r.split == split]
        pcfg = pairing.PairingConfig(quota=quotas[split], seed=cfg.seed + offset)
        split_pairs, _short = pairing.build_pairs(pool, text_mat, spk_mat, pcfg)
        pairing.save_pairs(paths[f"pairs_{split}"], split_pairs)
        all_pairs.extend(split_pairs)

    # spread judgments evenly over pairs, choices from the logistic model
    jrng = np.random.default_rng(cfg.seed + 9999)
    pair_cycle = np.tile(np.arange(len(all_pairs)), cfg.n_judgments // len(all_pairs) + 1)
    pair_cycle = pair_cycle[: cfg.n_judgments]
    n_raters = max(10, cfg.n_judgments // 100)
    judgments = []
    for idx, pi in enumerate(pair_cycle):
        p = all_pairs[pi]
        p_a = sigmoid(theta_by_id[p.utt_a] - theta_by_id[p.utt_b])
        choice = "A" if jrng.random() < p_a else "B"
        judgments.append(
            JudgmentRecord(
                pair_id=p.pair_id,
                rater_id=f"r{idx % n_raters:04d}",
                choice=choice,
                session_id=f"sim{idx // 25:05d}",
                presented_left="A" if jrng.random() < 0.5 else "B",
                timestamp=0.0,
            )
        )
    save_judgments(paths["judgments"], judgments)
    lineio.write_objects(paths["theta"], ({"id": r.id, "theta": theta_by_id[r.id]} for r in records))
    return paths


def load_theta(path) -> dict[str, float]:
    return {o["id"]: float(o["theta"]) for o in lineio.read_objects(path)}


def bayes_accuracy(judgments, pairs, theta: dict[str, float]) -> float:
    """Best attainable pairwise accuracy on these judgments, from the true theta."""
    by_id = {p.pair_id: p for p in pairs}
    probs = [
        sigmoid(abs(theta[by_id[j.pair_id].utt_a] - theta[by_id[j.pair_id].utt_b]))
        for j in judgments
    ]
    return float(np.mean(probs))


def bayes_auc(judgments, pairs, theta: dict[str, float]) -> float:
    """Expected AUC of the optimal score delta-theta over the orientation-augmented rows.

    Each judgment contributes scores +/-d with positive-class weights
    sigma(+/-d) and negative-class weights sigma(-/+d); the expectation over
    label draws is computed exactly by weighted rank summation.
    """
    by_id = {p.pair_id: p for p in pairs}
    deltas = np.array(
        [theta[by_id[j.pair_id].utt_a] - theta[by_id[j.pair_id].utt_b] for j in judgments]
    )
    scores = np.concatenate([deltas, -deltas])
    w_pos = np.concatenate([sigmoid(deltas), sigmoid(-deltas)])
    w_neg = np.concatenate([sigmoid(-deltas), sigmoid(deltas)])
    order = np.argsort(scores, kind="mergesort")
    s, wp, wn = scores[order], w_pos[order], w_neg[order]
    # group ties so equal scores get the 0.5 credit
    total = 0.0
    below_neg = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tie_neg = wn[i:j].sum()
        tie_pos = wp[i:j].sum()
        total += tie_pos * (below_neg + 0.5 * tie_neg)
        below_neg += tie_neg
        i = j
    return float(total / (w_pos.sum() * w_neg.sum()))
