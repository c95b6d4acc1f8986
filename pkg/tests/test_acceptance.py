"""End-to-end acceptance gate.

Each test is one acceptance criterion, checked at its stated tolerance and
time budget; the conftest terminal hook prints one pass/fail line per
criterion at the end of the run.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import binom, spearmanr

from stylepref import analysis, embio, metrics, pairing, ranker, simulate
from stylepref.acoustics import (
    PROXY_NAMES,
    ProxyVector,
    Waveform,
    estimate_f0,
    estimate_formants,
    extract_proxies,
    segment_pauses,
)
from stylepref.analysis import DIMENSION_GROUPS, DiffDataset, JudgmentRecord
from stylepref.collect import AnnotationService, RaterProfile
from stylepref.errors import DomainError
from stylepref.pairing import ComparisonPair, PairingConfig

from conftest import make_sawtooth, make_sine
from test_acoustics import make_resonant_voice, tone_silence_signal
from test_corpus import make_record
from test_pairing import cosine_matrix, make_pool, reference_build


def judgment_items(pairs, judgments):
    by_id = {p.pair_id: p for p in pairs}
    return [
        (by_id[j.pair_id].utt_a, by_id[j.pair_id].utt_b, j.choice == "A")
        for j in judgments
        if j.pair_id in by_id
    ]


def test_criterion_01_auc_matches_brute_force():
    """Rank-based AUC equals the O(n^2) count on 500 random tied sets, 1e-12."""
    start = time.monotonic()
    rng = np.random.default_rng(101)
    for _ in range(500):
        n = int(rng.integers(2, 201))
        # coarse quantization forces plenty of exact score ties
        scores = np.round(rng.normal(0.0, 1.0, n), 1)
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        items = [metrics.LabeledScorePair(float(s), bool(y)) for s, y in zip(scores, labels)]
        got = metrics.roc_auc(items)
        pos = scores[labels][:, None]
        neg = scores[~labels][None, :]
        brute = (np.sum(pos > neg) + 0.5 * np.sum(pos == neg)) / (pos.size * neg.size)
        assert abs(got - brute) <= 1e-12
    assert time.monotonic() - start < 10.0


def test_criterion_02_gradient_check():
    """Analytic pairwise-loss gradients vs central differences, 20 seeds, both aggregators."""
    start = time.monotonic()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for aggregator in ("mean_pool", "recurrent"):
            m = ranker.init_model(aggregator, input_dim=3, hidden_dim=4, mlp_hidden=(5,), seed=seed)
            fa = rng.normal(0.0, 1.0, (int(rng.integers(3, 8)), 3))
            fb = rng.normal(0.0, 1.0, (int(rng.integers(3, 8)), 3))
            err = ranker.gradient_check(m, fa, fb, bool(rng.random() < 0.5), epsilon=1e-5)
            assert err < 1e-4, (seed, aggregator, err)
    assert time.monotonic() - start < 30.0


def test_criterion_03_pair_probability_antisymmetry(tmp_path):
    """P(a>b) + P(b>a) = 1 to 1e-12; the zero model's mean NLL is ln 2."""
    for draw in range(1000):
        rng = np.random.default_rng(draw)
        aggregator = "recurrent" if draw % 2 else "mean_pool"
        m = ranker.init_model(aggregator, input_dim=4, hidden_dim=6, mlp_hidden=(8,), seed=draw)
        fa = rng.normal(0.0, 2.0, (int(rng.integers(2, 7)), 4))
        fb = rng.normal(0.0, 2.0, (int(rng.integers(2, 7)), 4))
        total = ranker.pair_probability(m, fa, fb) + ranker.pair_probability(m, fb, fa)
        assert abs(total - 1.0) <= 1e-12

    zero = ranker.init_model("mean_pool", input_dim=4, mlp_hidden=(8,), seed=0)
    for key in zero.params:
        zero.params[key][:] = 0.0
    rng = np.random.default_rng(7)
    items = []
    for i in range(40):
        for tag in ("a", "b"):
            embio.write_embeddings(tmp_path / f"u{i}{tag}.fse", rng.normal(0.0, 1.0, (5, 4)))
        items.append((f"u{i}a", f"u{i}b", bool(rng.random() < 0.5)))
    nll, _, _ = ranker.evaluate_ranker(zero, items, ranker.FeatureStore(str(tmp_path)))
    assert abs(nll - math.log(2.0)) <= 1e-12


def test_criterion_04_ranker_recovers_latent_quality(sim_run, sim_data):
    """Held-out accuracy within 5 points of the Bayes rate; Spearman >= 0.9."""
    start = time.monotonic()
    store = ranker.FeatureStore(sim_data["paths"]["feature_dir"])
    train_items = judgment_items(sim_data["pairs_train"], sim_data["judgments"])
    test_items = judgment_items(sim_data["pairs_test"], sim_data["judgments"])

    model, _ = ranker.train_ranker(train_items, store, ranker.TrainConfig())
    _, acc, _ = ranker.evaluate_ranker(model, test_items, store)

    test_judgments = [
        j for j in sim_data["judgments"]
        if j.pair_id in {p.pair_id for p in sim_data["pairs_test"]}
    ]
    bayes = simulate.bayes_accuracy(test_judgments, sim_data["pairs_test"], sim_data["theta"])
    assert abs(acc - bayes) <= 0.05, (acc, bayes)

    ids = sorted(sim_data["theta"])
    scores = [ranker.score_utterance(model, store.get(uid)) for uid in ids]
    rho = spearmanr(scores, [sim_data["theta"][uid] for uid in ids]).statistic
    assert rho >= 0.9, rho
    assert time.monotonic() - start < 120.0


def _proxy_vector(rng):
    vals = {name: float(np.round(rng.normal(0.0, 1.0), 1)) for name in PROXY_NAMES}
    return ProxyVector(**vals)


def test_criterion_05_pcr_manual_counts_and_negation():
    """PCR matches manual counting on 10 hand-built sets; negation flips direction only."""
    for trial in range(10):
        rng = np.random.default_rng(trial)
        n_pairs = int(rng.integers(4, 12))
        pairs = [
            ComparisonPair(f"p{i}", f"a{i}", f"b{i}", "train", True, 0.5, 0.3)
            for i in range(n_pairs)
        ]
        proxies = {}
        for p in pairs:
            proxies[p.utt_a] = _proxy_vector(rng)
            proxies[p.utt_b] = _proxy_vector(rng)
        judgments = [
            JudgmentRecord(p.pair_id, "r0", "A" if rng.random() < 0.5 else "B", "s0", "A", 0.0)
            for p in pairs
            for _ in range(int(rng.integers(1, 4)))
        ]
        name = PROXY_NAMES[trial % len(PROXY_NAMES)]
        got = analysis.compute_pcr(name, proxies, judgments, pairs, b=200, seed=trial)

        # independent manual count
        by_id = {p.pair_id: p for p in pairs}
        wins = used = 0
        for j in judgments:
            p = by_id[j.pair_id]
            xa = getattr(proxies[p.utt_a], name)
            xb = getattr(proxies[p.utt_b], name)
            if xa == xb:
                continue
            used += 1
            preferred = xa if j.choice == "A" else xb
            other = xb if j.choice == "A" else xa
            wins += preferred > other
        raw = wins / used
        want = raw if raw >= 0.5 else 1.0 - raw
        assert got.n_used == used
        assert got.pcr == pytest.approx(want, abs=1e-12)
        assert got.direction == ("higher" if raw >= 0.5 else "lower")

        flipped = {
            uid: ProxyVector(**{
                k: (-getattr(v, k) if k == name else getattr(v, k)) for k in PROXY_NAMES
            })
            for uid, v in proxies.items()
        }
        neg = analysis.compute_pcr(name, flipped, judgments, pairs, b=200, seed=trial)
        assert neg.pcr == got.pcr
        assert neg.n_used == got.n_used
        if raw != 0.5:
            assert neg.direction != got.direction

    # every proxy yields a result row
    rng = np.random.default_rng(99)
    pairs = [ComparisonPair(f"p{i}", f"a{i}", f"b{i}", "train", True, 0.5, 0.3) for i in range(6)]
    proxies = {u: _proxy_vector(rng) for p in pairs for u in (p.utt_a, p.utt_b)}
    judgments = [JudgmentRecord(p.pair_id, "r0", "A", "s0", "A", 0.0) for p in pairs]
    for name in PROXY_NAMES:
        row = analysis.compute_pcr(name, proxies, judgments, pairs, b=200, seed=0)
        assert row.proxy_name == name


def test_criterion_06_binomial_exactness_and_bootstrap_coverage():
    """binomial_pvalue matches direct pmf summation; bootstrap coverage in [0.91, 0.99]."""
    start = time.monotonic()
    for n in range(1, 501):
        pmf = binom.pmf(np.arange(n + 1), n, 0.5)
        order = np.argsort(pmf)
        csum = np.cumsum(pmf[order])
        ranks = np.searchsorted(pmf[order], pmf * (1.0 + 1e-9), side="right")
        for k in range(n + 1):
            want = min(1.0, float(csum[ranks[k] - 1]))
            assert abs(metrics.binomial_pvalue(k, n, 0.5) - want) <= 1e-10, (k, n)

    covered = 0
    for r in range(200):
        rng = np.random.default_rng(5000 + r)
        x = (rng.random(500) < 0.6).astype(float)
        ci = metrics.bootstrap_ci(x, b=1000, level=0.95, seed=3 * r + 1)
        covered += ci.lower <= 0.6 <= ci.upper
    assert 0.91 <= covered / 200 <= 0.99, covered / 200
    assert time.monotonic() - start < 120.0


def test_criterion_07_logistic_recovery_and_cv(sim_data, sim_proxies):
    """Weight recovery, prediction antisymmetry, and CV AUC against the Bayes AUC."""
    d = len(PROXY_NAMES)
    rng = np.random.default_rng(17)
    w_true = rng.normal(0.0, 1.0, d)
    w_true /= np.linalg.norm(w_true)
    n = 10_000
    x = rng.normal(0.0, 1.0, (n, d))
    y = rng.random(n) < 1.0 / (1.0 + np.exp(-2.5 * (x @ w_true)))
    rows = np.empty((2 * n, d))
    rows[0::2], rows[1::2] = x, -x
    labels = np.empty(2 * n, dtype=bool)
    labels[0::2], labels[1::2] = y, ~y
    data = DiffDataset(x=rows, y=labels, feature_names=PROXY_NAMES)
    model = analysis.fit_logistic(data)
    w_hat = model.weights / model.feature_stds
    cosine = float(w_hat @ w_true) / float(np.linalg.norm(w_hat))
    assert cosine >= 0.99, cosine

    probe = rng.normal(0.0, 3.0, (500, d))
    total = model.predict_proba(probe) + model.predict_proba(-probe)
    assert np.max(np.abs(total - 1.0)) <= 1e-10

    all_pairs = sim_data["pairs_train"] + sim_data["pairs_test"]
    diff = analysis.build_diff_dataset(all_pairs, sim_proxies, sim_data["judgments"])
    combined = analysis.cross_validate(diff, k=5, seed=0)
    bayes = simulate.bayes_auc(sim_data["judgments"], all_pairs, sim_data["theta"])
    assert abs(combined.mean_auc - bayes) <= 0.03, (combined.mean_auc, bayes)
    for group, features in DIMENSION_GROUPS.items():
        single = analysis.cross_validate(diff, k=5, feature_subset=features, seed=0)
        assert combined.mean_auc - single.mean_auc >= -0.01, (group, single.mean_auc)


def test_criterion_08_acoustic_proxies(sim_proxies):
    """F0, formants, pause ratio, rate ordering, and gain invariance."""
    for f0 in (80.0, 97.5, 120.0, 150.0, 185.0, 230.0, 280.0, 340.0, 400.0):
        track = estimate_f0(make_sine(f0))
        voiced = track.f0_hz[track.voiced]
        assert voiced.size > 0
        assert np.max(np.abs(voiced - f0)) <= 2.0, f0
    for f0 in (80, 100, 125, 160, 200, 250, 320, 400):
        track = estimate_f0(make_sawtooth(f0))
        voiced = track.f0_hz[track.voiced]
        assert voiced.size > 0
        assert np.max(np.abs(voiced - f0)) <= 2.0, f0

    w = make_resonant_voice(formants=(500.0, 1500.0, 2500.0))
    f1, f2, f3 = estimate_formants(w, estimate_f0(w))
    assert abs(f1 - 500.0) <= 50.0
    assert abs(f2 - 1500.0) <= 50.0
    assert abs(f3 - 2500.0) <= 50.0

    layouts = [
        ([("tone", 1.0), ("silence", 0.5), ("tone", 1.0), ("silence", 0.5), ("tone", 1.0)], 0.25),
        ([("tone", 1.4), ("silence", 0.6), ("tone", 2.0)], 0.15),
        ([("tone", 3.0)], 0.0),
    ]
    for segments, want in layouts:
        seg = segment_pauses(tone_silence_signal(segments))
        ratio = sum(e - s for s, e in seg.pauses) / seg.total_s
        assert abs(ratio - want) <= 0.02, (segments, ratio)

    for pv in sim_proxies.values():
        assert pv.articulation_rate_per_s >= pv.syllable_rate_per_s - 1e-9

    rec = make_record()
    base = extract_proxies(rec, make_resonant_voice())
    for gain in (0.1, 0.25, 0.5, 1.0):
        scaled = Waveform(samples=gain * make_resonant_voice().samples, sample_rate_hz=16_000)
        pv = extract_proxies(rec, scaled)
        for name in PROXY_NAMES:
            a, b = getattr(base, name), getattr(pv, name)
            assert (a is None) == (b is None), name
            if a is not None:
                assert abs(b - a) <= 0.01 * max(abs(a), 1e-9), (name, gain, a, b)


def test_criterion_09_pairing_invariants_and_oracle():
    """200 random pools satisfy all pairing invariants; a 6-utterance case matches the oracle."""
    rng = np.random.default_rng(1234)
    pool, text, spk = make_pool(rng, 6, n_sources=2)
    cfg = PairingConfig(quota=12, seed=5)
    pairs, _ = pairing.build_pairs(pool, text, spk, cfg)
    assert [(p.utt_a, p.utt_b) for p in pairs] == reference_build(pool, text, spk, cfg)

    for trial in range(200):
        pool, text, spk = make_pool(rng, int(rng.integers(6, 30)), n_sources=3)
        cfg = PairingConfig(quota=int(rng.integers(3, 60)), seed=trial, shortlist_size=12)
        pairs, _ = pairing.build_pairs(pool, text, spk, cfg)
        again, _ = pairing.build_pairs(pool, text, spk, cfg)
        assert pairs == again, "selection is not deterministic for a fixed seed"

        keys = [tuple(sorted((p.utt_a, p.utt_b))) for p in pairs]
        assert len(keys) == len(set(keys)), "duplicate unordered pair"
        tmat = cosine_matrix(np.asarray([text[r.text_embedding_ref] for r in pool]))
        smat = cosine_matrix(np.asarray([spk[r.speaker_embedding_ref] for r in pool]))
        idx = {r.id: i for i, r in enumerate(pool)}
        for p in pairs:
            assert tmat[idx[p.utt_a], idx[p.utt_b]] >= cfg.min_text_sim - 1e-12
            assert smat[idx[p.utt_a], idx[p.utt_b]] <= cfg.max_speaker_sim + 1e-12

        if any(not p.cross_source for p in pairs):
            # phase 1 ran to its fixpoint: no cross-source candidate was skipped
            chosen = {tuple(sorted((p.utt_a, p.utt_b))) for p in pairs if p.cross_source}
            source = {r.id: r.source for r in pool}
            for rec in pool:
                for cand, _ in pairing.candidate_shortlist(rec.id, pool, text, spk, cfg):
                    if source[rec.id] != source[cand]:
                        assert tuple(sorted((rec.id, cand))) in chosen


def make_service_pairs(n):
    return [
        ComparisonPair(f"u{2*i:04d}__u{2*i+1:04d}", f"u{2*i:04d}", f"u{2*i+1:04d}",
                       "train", True, 0.5, 0.3)
        for i in range(n)
    ]


def test_criterion_10_collection_protocol(tmp_path):
    """Scripted 25-trial session, rejection semantics, durability, side balance."""
    log = str(tmp_path / "log.jsonl")
    svc = AnnotationService(make_service_pairs(60), {}, log, session_size=25, seed=2)
    profile = RaterProfile("r1", "<=20s", "male", "medium")
    sess = svc.create_session(profile)
    script = []
    for t in range(25):
        trial = svc.next_trial(sess.session_id)
        assert trial["trial_number"] == t + 1
        side = "left" if t % 3 else "right"
        script.append((trial["pair_id"], trial["left_audio"], side))
        svc.submit_judgment(sess.session_id, trial["pair_id"], side)
    svc.submit_description(sess.session_id, "breathy, exaggerated prosody")

    judgments, _ = svc.export_judgments()
    assert len(judgments) == 25
    by_pair = {p.pair_id: p for p in make_service_pairs(60)}
    for j, (pair_id, left_audio, side) in zip(judgments, script):
        assert j.pair_id == pair_id
        chosen_utt = left_audio if side == "left" else (
            by_pair[pair_id].utt_b if left_audio == by_pair[pair_id].utt_a else by_pair[pair_id].utt_a
        )
        want = "A" if chosen_utt == by_pair[pair_id].utt_a else "B"
        assert j.choice == want, "judgment was not canonicalized from the presented side"

    # duplicate and out-of-order submissions are rejected without touching the log
    sess2 = svc.create_session(RaterProfile("r2", "30s", "female", "high"))
    first = svc.next_trial(sess2.session_id)
    svc.submit_judgment(sess2.session_id, first["pair_id"], "left")
    with open(log, "rb") as fh:
        before = fh.read()
    with pytest.raises(DomainError):
        svc.submit_judgment(sess2.session_id, first["pair_id"], "left")
    later_pair = sess2.trial_list[10][0]
    with pytest.raises(DomainError):
        svc.submit_judgment(sess2.session_id, later_pair, "right")
    with open(log, "rb") as fh:
        assert fh.read() == before
    svc.close()

    # restart from the log: acked records and the session cursor survive
    svc = AnnotationService(make_service_pairs(60), {}, log, session_size=25, seed=2)
    judgments, _ = svc.export_judgments()
    assert len(judgments) == 26
    resumed = svc.next_trial(sess2.session_id)
    assert resumed["trial_number"] == 2
    svc.close()

    # presented-left balance over 2000 fresh trials
    svc = AnnotationService(make_service_pairs(40), {}, str(tmp_path / "log2.jsonl"),
                            session_size=25, seed=9)
    left_a = total = 0
    for r in range(80):
        sess = svc.create_session(RaterProfile(f"bal{r:03d}", "40s", "other/unstated", "low"))
        for _, side in sess.trial_list:
            left_a += side == "A"
            total += 1
    svc.close()
    assert total == 2000
    assert 0.45 <= left_a / total <= 0.55, left_a / total


def run_pipeline(base):
    run = os.path.join(base, "run")
    os.makedirs(run)
    cli = [sys.executable, "-m", "stylepref.cli"]

    def step(*args):
        return subprocess.run(
            cli + list(args), cwd=run, check=True, capture_output=True, text=True
        ).stdout

    step("simulate", "--out", "data", "--n-utterances", "40", "--n-pairs", "120",
         "--n-judgments", "600", "--latent-spread", "1.5", "--seed", "5")
    step("extract", "--manifest", "data/manifest.jsonl", "--out", "proxies.jsonl")
    step("pair", "--manifest", "data/manifest.jsonl", "--text-embeddings", "data/text.psem",
         "--speaker-embeddings", "data/speaker.psem", "--out", "pairs.jsonl",
         "--quota", "30", "--seed", "7")
    step("analyze", "--manifest", "data/manifest.jsonl",
         "--pairs", "data/pairs_train.jsonl", "data/pairs_test.jsonl",
         "--judgments", "data/judgments.jsonl", "--proxies", "proxies.jsonl",
         "--out-dir", "analysis", "--bootstrap", "200")
    step("train", "--pairs", "data/pairs_train.jsonl", "--judgments", "data/judgments.jsonl",
         "--features", "data/features", "--out-model", "model.psrm",
         "--log-csv", "train_log.csv", "--epochs", "12", "--seed", "1")
    eval_out = step("eval", "--model", "model.psrm", "--pairs", "data/pairs_test.jsonl",
                    "--judgments", "data/judgments.jsonl", "--features", "data/features")

    files = {}
    for root, _, names in os.walk(run):
        for name in names:
            path = os.path.join(root, name)
            with open(path, "rb") as fh:
                files[os.path.relpath(path, run)] = fh.read()
    return eval_out, files


def test_criterion_11_pipeline_byte_reproducible(tmp_path):
    """Two fixed-seed runs of the whole pipeline produce identical bytes."""
    start = time.monotonic()
    out_a, files_a = run_pipeline(str(tmp_path / "a"))
    out_b, files_b = run_pipeline(str(tmp_path / "b"))
    assert out_a == out_b
    assert sorted(files_a) == sorted(files_b)
    for name in files_a:
        assert files_a[name] == files_b[name], f"{name} differs between runs"
    assert time.monotonic() - start < 300.0
