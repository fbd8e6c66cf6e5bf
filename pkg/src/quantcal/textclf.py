"""Proxy classifier: word bigram/trigram counts into an L1-penalised logistic
regression, fit by cyclic coordinate descent with soft-thresholding.

The objective is the *mean* logistic loss plus ``lam * ||w||_1``; the bias is
not penalised.  Using the mean keeps the solution unchanged when the training
set is replicated.
"""
from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

NGRAM_ORDERS = (2, 3)
DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def featurize(text: str) -> Counter:
    """Counts of every contiguous word bigram and trigram in ``text``."""
    toks = tokenize(text)
    out: Counter = Counter()
    for n in NGRAM_ORDERS:
        for i in range(len(toks) - n + 1):
            out[" ".join(toks[i:i + n])] += 1
    return out


@dataclass
class Vocabulary:
    index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 5) -> "Vocabulary":
        counts: Counter = Counter()
        for t in texts:
            counts.update(featurize(t))
        kept = sorted(g for g, c in counts.items() if c >= min_count)
        return cls({g: i for i, g in enumerate(kept)})

    def __len__(self):
        return len(self.index)

    def terms(self) -> list[str]:
        out = [""] * len(self.index)
        for g, i in self.index.items():
            out[i] = g
        return out

    def transform(self, texts: Sequence[str]) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for r, t in enumerate(texts):
            for g, c in featurize(t).items():
                j = self.index.get(g)
                if j is not None:
                    rows.append(r)
                    cols.append(j)
                    vals.append(c)
        return sparse.csr_matrix((np.asarray(vals, dtype=float), (rows, cols)),
                                 shape=(len(texts), len(self.index)))


@dataclass
class ProxyModel:
    weights: np.ndarray
    bias: float
    vocabulary: Vocabulary
    lam: float
    objective_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))

    def decision(self, texts: Sequence[str]) -> np.ndarray:
        X = self.vocabulary.transform(texts)
        return self.bias + X @ self.weights

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        return expit(self.decision(texts))

    def save(self, path: str | Path) -> None:
        terms = self.vocabulary.terms()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"bias {float(self.bias)!r}\n")
            fh.write(f"lambda {float(self.lam)!r}\n")
            for j in np.flatnonzero(self.weights):
                fh.write(f"{terms[j]}\t{float(self.weights[j])!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "ProxyModel":
        bias, lam, terms, weights = 0.0, float("nan"), [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if "\t" in line:
                    g, w = line.split("\t")
                    terms.append(g)
                    weights.append(float(w))
                elif line.startswith("bias "):
                    bias = float(line[5:])
                elif line.startswith("lambda "):
                    lam = float(line[7:])
        vocab = Vocabulary({g: i for i, g in enumerate(terms)})
        return cls(np.asarray(weights, dtype=float), bias, vocab, lam)


def predict_proba(model: ProxyModel, text: str) -> float:
    return float(model.predict_proba([text])[0])


class TrainingError(RuntimeError):
    pass


def logistic_objective(X, y, w, b, lam) -> float:
    z = b + X @ w
    # log(1 + e^z) - y z, stable for large |z|
    loss = np.logaddexp(0.0, z) - y * z
    return float(loss.mean() + lam * np.abs(w).sum())


def logistic_gradient(X, y, w, b) -> tuple[np.ndarray, float]:
    """Gradient of the unpenalised mean loss with respect to (w, b)."""
    r = expit(b + X @ w) - y
    return np.asarray(X.T @ r).ravel() / len(y), float(r.mean())


def _soft(x: float, t: float) -> float:
    return math.copysign(max(abs(x) - t, 0.0), x)


def fit_l1_logistic(X, y, lam: float, tol: float = 1e-6, max_epochs: int = 200,
                    ) -> tuple[np.ndarray, float, list[float]]:
    """Cyclic coordinate descent for mean logistic loss + lam*|w|_1.

    Each coordinate takes a proximal Newton step and backtracks until its
    penalised objective does not increase, so the epoch objective is
    monotone. Zero coordinates whose gradient is inside the subdifferential
    at the start of an epoch are skipped for that epoch; the loop stops only
    after a full pass with relative objective change below ``tol``.
    """
    X = sparse.csc_matrix(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    w = np.zeros(d)
    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    b = math.log(ybar / (1 - ybar))
    z = np.full(n, b)
    indptr, indices, data = X.indptr, X.indices, X.data

    def objective():
        return float((np.logaddexp(0.0, z) - y * z).mean() + lam * np.abs(w).sum())

    trace = [objective()]
    full_pass = True
    for _ in range(max_epochs):
        mu = expit(z)
        grad = np.asarray(X.T @ (mu - y)).ravel() / n
        if full_pass:
            active = np.arange(d)
        else:
            active = np.flatnonzero((w != 0) | (np.abs(grad) > lam))

        for j in active:
            lo, hi = indptr[j], indptr[j + 1]
            if lo == hi:
                continue
            rows = indices[lo:hi]
            xj = data[lo:hi]
            zr = z[rows]
            yr = y[rows]
            mur = expit(zr)
            g = float(xj @ (mur - yr)) / n
            h = max(float((xj * xj) @ (mur * (1 - mur))) / n, 1e-10)
            wj = w[j]
            target = _soft(wj - g / h, lam / h)
            step = target - wj
            if step == 0.0:
                continue
            base = float((np.logaddexp(0.0, zr) - yr * zr).sum()) / n + lam * abs(wj)
            while True:
                znew = zr + step * xj
                new = float((np.logaddexp(0.0, znew) - yr * znew).sum()) / n \
                    + lam * abs(wj + step)
                if new <= base + 1e-15 or abs(step) < 1e-12:
                    break
                step *= 0.5
            if new > base + 1e-15:
                continue
            w[j] = wj + step
            z[rows] = znew

        # bias: plain Newton with backtracking
        for _ in range(3):
            mu = expit(z)
            g = float((mu - y).mean())
            h = max(float((mu * (1 - mu)).mean()), 1e-10)
            step = -g / h
            base = float((np.logaddexp(0.0, z) - y * z).mean())
            while True:
                new = float((np.logaddexp(0.0, z + step) - y * (z + step)).mean())
                if new <= base + 1e-15 or abs(step) < 1e-12:
                    break
                step *= 0.5
            if new <= base + 1e-15:
                b += step
                z = z + step

        obj = objective()
        if not math.isfinite(obj):
            raise TrainingError(f"non-finite objective {obj} after epoch {len(trace)}; "
                                f"max|w|={np.abs(w).max():.3g}, bias={b:.3g}")
        if obj > trace[-1] + 1e-12 * max(1.0, abs(trace[-1])):
            raise TrainingError(f"objective increased {trace[-1]} -> {obj}")
        rel = abs(trace[-1] - obj) / max(abs(trace[-1]), 1e-12)
        trace.append(obj)
        if rel < tol:
            if full_pass:
                break
            full_pass = True
        else:
            full_pass = False
    return w, b, trace


def train(positives: Sequence[str], negatives: Sequence[str], lam: float,
          min_count: int = 5, vocabulary: Vocabulary | None = None,
          tol: float = 1e-6, max_epochs: int = 200) -> ProxyModel:
    if not positives or not negatives:
        raise TrainingError("training needs both positive and negative examples")
    if lam <= 0:
        raise ValueError("lam must be positive")
    texts = list(positives) + list(negatives)
    y = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
    vocab = vocabulary or Vocabulary.build(texts, min_count=min_count)
    X = vocab.transform(texts)
    w, b, trace = fit_l1_logistic(X, y, lam, tol=tol, max_epochs=max_epochs)
    return ProxyModel(w, b, vocab, lam, trace)


@dataclass
class CvMetrics:
    accuracy: float
    false_positive_rate: float
    false_negative_rate: float
    folds: int


def stratified_folds(n_pos: int, n_neg: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id for each example (positives first, then negatives)."""
    fold = np.empty(n_pos + n_neg, dtype=int)
    fold[:n_pos] = rng.permutation(np.arange(n_pos) % k)
    fold[n_pos:] = rng.permutation(np.arange(n_neg) % k)
    return fold


def cross_validate(positives: Sequence[str], negatives: Sequence[str], k: int = 5,
                   lam: float = 1e-2, seed: int = 0, min_count: int = 5,
                   threshold: float = 0.5) -> CvMetrics:
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(positives) < k or len(negatives) < k:
        raise ValueError(f"each class needs at least k={k} examples")
    texts = list(positives) + list(negatives)
    y = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
    fold = stratified_folds(len(positives), len(negatives), k, np.random.default_rng(seed))
    pred = np.empty(len(texts))
    for f in range(k):
        tr = np.flatnonzero(fold != f)
        te = np.flatnonzero(fold == f)
        pos = [texts[i] for i in tr if y[i] == 1]
        neg = [texts[i] for i in tr if y[i] == 0]
        model = train(pos, neg, lam, min_count=min_count)
        pred[te] = model.predict_proba([texts[i] for i in te])
    hit = pred > threshold
    pos, neg = y == 1, y == 0
    return CvMetrics(accuracy=float((hit == pos).mean()),
                     false_positive_rate=float(hit[neg].mean()),
                     false_negative_rate=float((~hit[pos]).mean()),
                     folds=k)


def select_lambda(positives, negatives, grid=DEFAULT_LAMBDA_GRID, k=5, seed=0,
                  min_count=5) -> tuple[float, dict[float, CvMetrics]]:
    results = {lam: cross_validate(positives, negatives, k=k, lam=lam, seed=seed,
                                   min_count=min_count) for lam in grid}
    # ties go to the stronger penalty
    best = max(grid, key=lambda lam: (results[lam].accuracy, lam))
    return best, results


def write_scores(ids: Sequence[str], probs: Sequence[float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "probability"])
        for i, p in zip(ids, probs):
            w.writerow([i, repr(float(p))])


def read_scores(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["id"]: float(row["probability"]) for row in csv.DictReader(fh)}
