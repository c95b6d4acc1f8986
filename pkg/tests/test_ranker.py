"""Pairwise ranking model: gradients, symmetry, training, serialization."""

import math

import numpy as np
import pytest

from stylepref import embio, ranker
from stylepref.errors import DomainError, ParseError, ValidationError
from stylepref.ranker import (
    FeatureStore,
    TrainConfig,
    gradient_check,
    init_model,
    load_model,
    pair_probability,
    save_model,
    score_utterance,
    train_ranker,
)


def small_model(aggregator, seed=0, input_dim=3):
    return init_model(aggregator, input_dim=input_dim, hidden_dim=4, mlp_hidden=(5,), seed=seed)


def random_frames(rng, input_dim=3):
    return rng.normal(size=(int(rng.integers(2, 9)), input_dim))


class TestGradients:
    @pytest.mark.parametrize("aggregator", ranker.AGGREGATORS)
    def test_analytic_matches_central_differences(self, aggregator):
        rng = np.random.default_rng(0)
        for seed in range(5):
            m = small_model(aggregator, seed=seed)
            err = gradient_check(m, random_frames(rng), random_frames(rng), bool(seed % 2))
            assert err < 1e-4, (aggregator, seed, err)

    def test_epsilon_guarded(self):
        m = small_model("mean_pool")
        frames = np.zeros((2, 3))
        with pytest.raises(DomainError):
            gradient_check(m, frames, frames, True, epsilon=1.0)


class TestScoring:
    def test_mean_pool_permutation_invariant(self):
        rng = np.random.default_rng(1)
        m = small_model("mean_pool")
        frames = random_frames(rng)
        shuffled = frames[rng.permutation(len(frames))]
        assert score_utterance(m, frames) == pytest.approx(score_utterance(m, shuffled), abs=1e-12)

    def test_recurrent_is_order_sensitive(self):
        rng = np.random.default_rng(2)
        m = small_model("recurrent")
        frames = rng.normal(size=(6, 3))
        assert score_utterance(m, frames) != pytest.approx(score_utterance(m, frames[::-1]), abs=1e-9)

    @pytest.mark.parametrize("aggregator", ranker.AGGREGATORS)
    def test_pair_probability_antisymmetric(self, aggregator):
        rng = np.random.default_rng(3)
        for seed in range(20):
            m = small_model(aggregator, seed=seed)
            a, b = random_frames(rng), random_frames(rng)
            assert pair_probability(m, a, b) + pair_probability(m, b, a) == pytest.approx(1.0, abs=1e-12)

    def test_zero_model_scores_zero(self):
        m = small_model("mean_pool")
        for k in m.params:
            m.params[k][...] = 0.0
        rng = np.random.default_rng(4)
        assert score_utterance(m, random_frames(rng)) == 0.0
        assert pair_probability(m, random_frames(rng), random_frames(rng)) == 0.5

    def test_wrong_input_dim_rejected(self):
        m = small_model("mean_pool")
        with pytest.raises(ValidationError):
            score_utterance(m, np.zeros((4, 7)))


def write_pair_corpus(tmp_path, rng, n_utts=30, n_pairs=120, dim=4, signal=1.0):
    """Feature files plus judgments driven by a 1-D latent quality."""
    feat_dir = tmp_path / "features"
    quality = rng.normal(0.0, 1.5, n_utts)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    ids = [f"u{i:03d}" for i in range(n_utts)]
    for i, uid in enumerate(ids):
        frames = signal * quality[i] * direction + 0.3 * rng.normal(size=(int(rng.integers(4, 10)), dim))
        embio.write_embeddings(feat_dir / f"{uid}.fse", frames)
    items = []
    for _ in range(n_pairs):
        i, j = rng.choice(n_utts, size=2, replace=False)
        p_i = 1.0 / (1.0 + math.exp(-(quality[i] - quality[j])))
        items.append((ids[i], ids[j], bool(rng.random() < p_i)))
    return FeatureStore(str(feat_dir)), items, dict(zip(ids, quality))


class TestTraining:
    def test_learns_latent_order(self, tmp_path):
        rng = np.random.default_rng(5)
        store, items, quality = write_pair_corpus(tmp_path, rng)
        model, log_rows = train_ranker(items, store, TrainConfig(epochs=30, seed=0))
        assert log_rows[0]["train_nll"] > log_rows[-1]["train_nll"]
        scores = {uid: score_utterance(model, store.get(uid)) for uid in quality}
        # rank agreement with the generating quality
        ids = list(quality)
        agree = total = 0
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                total += 1
                agree += (scores[ids[i]] > scores[ids[j]]) == (quality[ids[i]] > quality[ids[j]])
        assert agree / total > 0.8

    def test_deterministic_per_seed(self, tmp_path):
        rng = np.random.default_rng(6)
        store, items, _ = write_pair_corpus(tmp_path, rng, n_utts=12, n_pairs=40)
        cfg = TrainConfig(epochs=5, seed=9)
        m1, log1 = train_ranker(items, store, cfg)
        m2, log2 = train_ranker(items, store, cfg)
        assert log1 == log2
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k], m2.params[k])

    def test_early_stopping_restores_best(self, tmp_path):
        rng = np.random.default_rng(7)
        store, items, _ = write_pair_corpus(tmp_path, rng, n_utts=12, n_pairs=60)
        cfg = TrainConfig(epochs=60, patience=2, seed=1, learning_rate=0.3)
        model, log_rows = train_ranker(items, store, cfg)
        best = min(r["valid_nll"] for r in log_rows)
        assert len(log_rows) <= 60
        assert best <= log_rows[-1]["valid_nll"] + 1e-9

    def test_empty_items_rejected(self, tmp_path):
        with pytest.raises(DomainError):
            train_ranker([], FeatureStore(str(tmp_path)), TrainConfig())

    def test_evaluate_zero_model_nll_is_ln2(self, tmp_path):
        rng = np.random.default_rng(8)
        store, items, _ = write_pair_corpus(tmp_path, rng, n_utts=10, n_pairs=30)
        m = init_model("mean_pool", input_dim=4, mlp_hidden=(5,), seed=0)
        for k in m.params:
            m.params[k][...] = 0.0
        nll, acc, auc = ranker.evaluate_ranker(m, items, store)
        assert nll == pytest.approx(math.log(2.0), abs=1e-12)
        assert acc == pytest.approx(0.5)


class TestSerialization:
    @pytest.mark.parametrize("aggregator", ranker.AGGREGATORS)
    def test_round_trip(self, tmp_path, aggregator):
        m = small_model(aggregator, seed=3)
        path = tmp_path / "model.psrm"
        save_model(m, path)
        back = load_model(path)
        assert back.aggregator == m.aggregator
        assert back.mlp_dims == m.mlp_dims
        assert set(back.params) == set(m.params)
        for k in m.params:
            np.testing.assert_array_equal(back.params[k], m.params[k])
        rng = np.random.default_rng(0)
        frames = random_frames(rng)
        assert score_utterance(back, frames) == score_utterance(m, frames)

    def test_identical_models_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a.psrm", tmp_path / "b.psrm"
        save_model(small_model("recurrent", seed=5), a)
        save_model(small_model("recurrent", seed=5), b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "m.psrm"
        save_model(small_model("mean_pool"), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(ParseError):
            load_model(path)

    def test_trailing_bytes_detected(self, tmp_path):
        path = tmp_path / "m.psrm"
        save_model(small_model("mean_pool"), path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(ParseError):
            load_model(path)

    def test_bad_magic_detected(self, tmp_path):
        path = tmp_path / "m.psrm"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParseError):
            load_model(path)


class TestFeatureStore:
    def test_missing_file_raises(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        with pytest.raises(FileNotFoundError):
            store.get("nope")

    def test_cache_returns_same_array(self, tmp_path):
        embio.write_embeddings(tmp_path / "u.fse", np.ones((3, 2)))
        store = FeatureStore(str(tmp_path))
        assert store.get("u") is store.get("u")
