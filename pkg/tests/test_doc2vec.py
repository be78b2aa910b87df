import math

import numpy as np
import pytest

from ueba.doc2vec import (
    Doc2VecParams,
    Vocabulary,
    build_vocab,
    cosine,
    dbow_round,
    infer_vector,
    infer_vectors,
    load_model,
    save_model,
    train_dbow,
)

A = [f"c:\\apps\\a{i}.exe" for i in range(30)]
B = [f"c:\\tools\\b{i}.exe" for i in range(30)]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestVocab:
    def test_counts_and_order(self):
        v = build_vocab([["a", "b", "a"]], min_count=1)
        assert len(v) == 2 and v.total == 3
        assert v.index["a"] == 0 and list(v.counts) == [2, 1]

    def test_min_count(self):
        v = build_vocab([["a", "b", "a"]], min_count=2)
        assert v.tokens == ["a"]

    def test_tie_break_lexicographic(self):
        v = build_vocab([["zeta", "alpha"]])
        assert v.tokens == ["alpha", "zeta"]

    def test_all_filtered(self):
        with pytest.raises(ValueError):
            build_vocab([["a"]], min_count=2)
        with pytest.raises(ValueError):
            build_vocab([])

    def test_noise_distribution(self):
        v = build_vocab([["a"] * 8 + ["b"] * 2 + ["c"]])
        expected = np.array([8, 2, 1]) ** 0.75
        np.testing.assert_allclose(v.noise_distribution, expected / expected.sum(), atol=1e-12)
        assert abs(v.noise_distribution.sum() - 1) < 1e-9

    def test_text_round_trip(self):
        v = build_vocab([["b", "a", "a", "c c"]])
        back = Vocabulary.loads(v.dumps())
        assert back.tokens == v.tokens and list(back.counts) == list(v.counts)


class TestUpdate:
    def test_single_step_hand_check(self):
        # V = 2, one target (id 0), one negative (id 1)
        d = np.array([0.1, -0.2])
        words = np.array([[0.3, 0.4], [-0.5, 0.2]])
        w_t, w_n = words[0].copy(), words[1].copy()
        alpha = 0.1
        loss, new_d = dbow_round(d, words, np.array([0]), np.array([[1]]), alpha)

        s_t, s_n = d @ w_t, d @ w_n
        assert loss == pytest.approx(-math.log(sigmoid(s_t)) - math.log(sigmoid(-s_n)), rel=1e-12)
        g_t = alpha * (1 - sigmoid(s_t))
        g_n = -alpha * sigmoid(s_n)
        np.testing.assert_allclose(new_d, d + g_t * w_t + g_n * w_n, rtol=1e-12)
        np.testing.assert_allclose(words[0], w_t + g_t * d, rtol=1e-12)
        np.testing.assert_allclose(words[1], w_n + g_n * d, rtol=1e-12)

        assert sigmoid(new_d @ w_t) > sigmoid(s_t)
        after, _ = dbow_round(new_d, words.copy(), np.array([0]), np.array([[1]]), 0.0)
        assert after < loss

    def test_noise_equal_to_target_ignored(self):
        words = np.array([[0.3, 0.4], [-0.5, 0.2]])
        d = np.array([0.1, -0.2])
        _, only_pos = dbow_round(d, words.copy(), np.array([0]), np.array([[0]]), 0.1)
        g_t = 0.1 * (1 - sigmoid(d @ words[0]))
        np.testing.assert_allclose(only_pos, d + g_t * words[0])


class TestTraining:
    def test_shapes(self):
        corpus = [list(np.random.default_rng(0).choice(A, 10)) for _ in range(5)]
        m = train_dbow(corpus, Doc2VecParams(dim=64, epochs=3))
        assert m.doc_vectors.shape == (5, 64)
        assert m.word_vectors.shape == (len(m.vocab), 64)
        v, flag = infer_vector(m, corpus[0])
        assert v.shape == (64,) and not flag
        assert np.all(np.isfinite(m.doc_vectors))

    def test_deterministic(self):
        corpus = [list(np.random.default_rng(i).choice(A + B, 12)) for i in range(8)]
        a = train_dbow(corpus, Doc2VecParams(seed=3, epochs=5))
        b = train_dbow(corpus, Doc2VecParams(seed=3, epochs=5))
        assert a.doc_vectors.tobytes() == b.doc_vectors.tobytes()
        assert a.word_vectors.tobytes() == b.word_vectors.tobytes()

    def test_empty_documents_skipped(self):
        m = train_dbow([["a", "b"], [], ["b"]], Doc2VecParams(epochs=2, dim=4))
        assert m.history.skipped_docs == 1
        np.testing.assert_array_equal(m.doc_vectors[1], 0)

    def test_loss_decreases(self):
        rng = np.random.default_rng(1)
        corpus = [list(rng.choice(A if k % 2 else B, 15)) for k in range(30)]
        loss = train_dbow(corpus, Doc2VecParams(seed=1)).history.epoch_loss
        assert loss[-1] < loss[0]
        for prev, cur in zip(loss, loss[1:]):
            assert cur <= prev * 1.05

    def test_identical_documents_cluster(self):
        wins = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            doc = list(rng.choice(A, 20))
            other = list(rng.choice(B, 20))
            m = train_dbow([doc, doc, other], Doc2VecParams(seed=seed))
            D = m.doc_vectors
            wins += cosine(D[0], D[1]) > cosine(D[0], D[2])
        assert wins >= 95


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(7)
    corpus = [list(rng.choice(A if k % 2 else B, 15)) for k in range(20)]
    return corpus, train_dbow(corpus, Doc2VecParams(seed=7))


class TestInference:
    def test_all_oov(self, model):
        _, m = model
        v, flag = infer_vector(m, ["never-seen.exe", "nope.exe"])
        assert flag and np.all(v == 0)
        v, flag = infer_vector(m, [])
        assert flag and np.all(v == 0)

    def test_zero_steps_returns_seeded_init(self, model):
        corpus, m = model
        a, _ = infer_vector(m, corpus[0], steps=0)
        b, _ = infer_vector(m, corpus[0], steps=0)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a).max() <= 0.5 / m.dim
        c, _ = infer_vector(m, corpus[0], steps=5)
        assert not np.array_equal(a, c)

    def test_recovers_training_vector(self, model):
        corpus, m = model
        sims = [cosine(infer_vector(m, corpus[i])[0], m.doc_vectors[i]) for i in range(len(corpus))]
        assert np.mean(sims) > 0.5

    def test_batch_independent(self, model):
        corpus, m = model
        docs = corpus[:6] + [["oov.exe"], corpus[2], corpus[0][:3]]
        batch, flags = infer_vectors(m, docs)
        for i, doc in enumerate(docs):
            single, flag = infer_vector(m, doc)
            assert flag == flags[i]
            np.testing.assert_array_equal(single, batch[i])
        assert flags.tolist() == [False] * 6 + [True, False, False]

    def test_oov_tokens_skipped(self, model):
        corpus, m = model
        v, flag = infer_vector(m, list(corpus[3]) + ["unknown.exe"])
        assert not flag
        assert cosine(v, m.doc_vectors[3]) > 0.3


class TestCosine:
    def test_basic(self):
        u = np.array([1.0, 2.0, -3.0])
        assert cosine(u, u) == pytest.approx(1.0)
        assert cosine(u, -u) == pytest.approx(-1.0)
        assert cosine([1, 0], [0, 1]) == 0.0
        assert cosine([0, 0], [1, 1]) == 0.0


def test_persistence(tmp_path):
    corpus = [["a.exe", "b.exe"], ["b.exe", "c.exe", "c.exe"]]
    m = train_dbow(corpus, Doc2VecParams(epochs=2, dim=8, seed=5))
    save_model(m, tmp_path)
    back = load_model(tmp_path)
    assert back.params == m.params
    np.testing.assert_array_equal(back.word_vectors, m.word_vectors)
    np.testing.assert_array_equal(back.doc_vectors, m.doc_vectors)
    np.testing.assert_array_equal(infer_vector(back, corpus[1])[0], infer_vector(m, corpus[1])[0])
