from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse
from scipy.special import expit

from quantcal import textclf
from quantcal.textclf import (ProxyModel, TrainingError, Vocabulary, cross_validate, featurize,
                              fit_l1_logistic, logistic_gradient, logistic_objective, predict_proba,
                              read_scores, select_lambda, train, write_scores)

POS_WORDS = "vote senate election".split()
NEG_WORDS = "recipe guitar pasta".split()


def toy_corpus(n=40, seed=0):
    rng = np.random.default_rng(seed)

    def doc(words):
        return " ".join(rng.choice(words, size=int(rng.integers(10, 20))))

    return [doc(POS_WORDS) for _ in range(n)], [doc(NEG_WORDS) for _ in range(n)]


def test_featurize_ngrams():
    f = featurize("Vote for healthcare reform")
    assert set(f) == {"vote for", "for healthcare", "healthcare reform",
                      "vote for healthcare", "for healthcare reform"}
    assert all(c == 1 for c in f.values())


def test_featurize_edge_cases():
    assert featurize("hello") == {}
    assert featurize("VOTE for") == featurize("vote FOR")
    assert featurize("a-b, c") == featurize("a b c")
    assert featurize("go go go go")["go go"] == 3


def test_vocabulary_prunes_rare():
    v = Vocabulary.build(["a b", "a b", "c d"], min_count=2)
    assert v.terms() == ["a b"]
    X = v.transform(["a b c d", "x y"])
    assert X.shape == (2, 1) and X.toarray().tolist() == [[1.0], [0.0]]


def test_separable_training_accuracy():
    pos, neg = toy_corpus()
    model = train(pos, neg, lam=1e-3, min_count=1)
    pred = model.predict_proba(pos + neg) > 0.5
    assert (pred == np.r_[np.ones(len(pos)), np.zeros(len(neg))].astype(bool)).all()
    assert model.nonzero < len(model.vocabulary)


def test_large_lambda_zeroes_weights():
    pos, neg = toy_corpus()
    model = train(pos, neg[:20], lam=10.0, min_count=1)
    assert model.nonzero == 0
    assert predict_proba(model, "anything at all") == pytest.approx(40 / 60)


def test_duplicated_data_gives_same_model():
    pos, neg = toy_corpus(seed=3)
    a = train(pos, neg, lam=1e-2, min_count=1, tol=1e-10, max_epochs=2000)
    b = train(pos * 2, neg * 2, lam=1e-2, min_count=1, vocabulary=a.vocabulary, tol=1e-10,
              max_epochs=2000)
    assert np.allclose(a.weights, b.weights, atol=1e-6) and a.bias == pytest.approx(b.bias, abs=1e-6)


def test_single_class_rejected():
    with pytest.raises(TrainingError):
        train(["a b c"], [], lam=0.1)


def test_predict_proba_basics():
    vocab = Vocabulary({"a b": 0, "b c": 1})
    zero = ProxyModel(np.zeros(2), 0.0, vocab, 1.0)
    assert predict_proba(zero, "a b c") == 0.5
    m = ProxyModel(np.array([0.7, -0.2]), 0.3, vocab, 1.0)
    assert predict_proba(m, "solo") == pytest.approx(expit(0.3))
    # adding an n-gram with positive weight raises the probability
    assert predict_proba(m, "x a b") > predict_proba(m, "x")
    assert predict_proba(m, "a b c") == pytest.approx(expit(0.3 + 0.7 - 0.2))


def test_prediction_ignores_feature_order():
    pos, neg = toy_corpus()
    model = train(pos, neg, lam=1e-3, min_count=1)
    assert predict_proba(model, "vote senate. guitar pasta") == predict_proba(model, "guitar pasta. vote senate")


def test_objective_monotone_trace():
    pos, neg = toy_corpus(seed=5)
    noisy_pos = pos + neg[:5]
    model = train(noisy_pos, neg[5:], lam=1e-3, min_count=1)
    tr = np.array(model.objective_trace)
    assert (np.diff(tr) <= 1e-12).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = 30, 6
    X = sparse.csr_matrix(rng.poisson(0.7, (n, d)).astype(float))
    y = (rng.random(n) < 0.5).astype(float)
    w, b = rng.normal(0, 0.5, d), float(rng.normal())
    gw, gb = logistic_gradient(X, y, w, b)
    h = 1e-6
    fd = np.empty(d + 1)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd[j] = (logistic_objective(X, y, w + e, b, 0.0) - logistic_objective(X, y, w - e, b, 0.0)) / (2 * h)
    fd[d] = (logistic_objective(X, y, w, b + h, 0.0) - logistic_objective(X, y, w, b - h, 0.0)) / (2 * h)
    an = np.r_[gw, gb]
    scale = np.maximum(np.abs(fd), 1e-3)
    assert np.max(np.abs(an - fd) / scale) < 1e-5


def test_fit_satisfies_optimality_conditions():
    rng = np.random.default_rng(1)
    X = sparse.csr_matrix(rng.poisson(0.5, (200, 15)).astype(float))
    true = np.r_[1.5, -1.0, np.zeros(13)]
    y = (rng.random(200) < expit(X @ true - 0.3)).astype(float)
    lam = 0.01
    w, b, _ = fit_l1_logistic(X, y, lam, tol=1e-12, max_epochs=5000)
    gw, gb = logistic_gradient(X, y, w, b)
    assert abs(gb) < 1e-6
    nz = w != 0
    assert np.allclose(gw[nz], -lam * np.sign(w[nz]), atol=1e-5)
    assert (np.abs(gw[~nz]) <= lam + 1e-6).all()


def test_cv_separable():
    pos, neg = toy_corpus()
    m = cross_validate(pos, neg, k=5, lam=1e-3, min_count=1)
    assert (m.accuracy, m.false_positive_rate, m.false_negative_rate, m.folds) == (1.0, 0.0, 0.0, 5)


def test_cv_shuffled_labels_near_chance():
    pos, neg = toy_corpus(n=60)
    texts = pos + neg
    accs = []
    for seed in range(10):
        perm = np.random.default_rng(seed).permutation(len(texts))
        sp = [texts[i] for i in perm[:60]]
        sn = [texts[i] for i in perm[60:]]
        accs.append(cross_validate(sp, sn, k=5, lam=1e-3, min_count=1, seed=seed).accuracy)
    assert abs(np.mean(accs) - 0.5) < 0.05


def test_cv_argument_errors():
    pos, neg = toy_corpus(n=4)
    with pytest.raises(ValueError):
        cross_validate(pos, neg, k=1)
    with pytest.raises(ValueError):
        cross_validate(pos, neg, k=5)


def test_select_lambda_prefers_stronger_penalty_on_ties():
    pos, neg = toy_corpus()
    best, res = select_lambda(pos, neg, grid=(1e-4, 1e-3), k=3, min_count=1)
    assert res[1e-4].accuracy == res[1e-3].accuracy == 1.0 and best == 1e-3


def test_model_and_scores_roundtrip(tmp_path):
    pos, neg = toy_corpus()
    model = train(pos, neg, lam=1e-3, min_count=1)
    model.save(tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0].startswith("bias ") and all("\t" in ln for ln in lines[2:])
    back = ProxyModel.load(tmp_path / "m.txt")
    texts = pos[:5] + neg[:5] + ["vote pasta vote"]
    assert np.allclose(back.predict_proba(texts), model.predict_proba(texts), rtol=0, atol=1e-15)
    write_scores(["a", "b"], [0.25, np.float64(0.5)], tmp_path / "s.csv")
    assert read_scores(tmp_path / "s.csv") == {"a": 0.25, "b": 0.5}
