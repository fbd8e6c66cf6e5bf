"""Synthetic corpora with known ground truth.

Scores are drawn from 10-bin histograms conditional on (community group,
true label), uniformly within the chosen bin, so stratum membership is
exact by construction.  The truth ledger is recomputed from the realised
labels, not from the generating prevalences.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import calibrate as cal
from .corpus import CommentRecord
from .judgments import Aggregation, RatingRecord, aggregate
from .strata import K, neyman_allocate, profile, stratum_counts, strata_of
from .toxmodel import CellCounts, design_row

GROUPS = ("pol", "nonpol")


@dataclass
class CommunitySpec:
    name: str
    comment_count: int
    true_prevalence: float
    group: str


@dataclass
class SynthSpec:
    seed: int
    communities: list[CommunitySpec]
    # group -> {"political": hist, "nonpolitical": hist}
    score_model: dict[str, dict[str, list[float]]]
    rater_accuracy: float = 0.9
    toxicity_model: dict[str, float] | None = None
    glmm_truth: dict | None = None

    def validate(self) -> None:
        if not self.communities:
            raise ValueError("spec has no communities")
        names = [c.name for c in self.communities]
        if len(set(names)) != len(names):
            raise ValueError("community names must be unique")
        for c in self.communities:
            if c.comment_count <= 0:
                raise ValueError(f"{c.name}: comment_count must be positive")
            if not 0.0 <= c.true_prevalence <= 1.0:
                raise ValueError(f"{c.name}: prevalence {c.true_prevalence} outside [0,1]")
            if c.group not in self.score_model:
                raise ValueError(f"{c.name}: no score model for group {c.group!r}")
        for g, model in self.score_model.items():
            for label in ("political", "nonpolitical"):
                h = np.asarray(model[label], dtype=float)
                if len(h) != K or (h < 0).any() or abs(h.sum() - 1) > 1e-9:
                    raise ValueError(f"score histogram {g}/{label} is not a {K}-bin distribution")
        if not 0.0 <= self.rater_accuracy <= 1.0:
            raise ValueError("rater_accuracy must be a probability")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        raw = json.loads(text)
        raw["communities"] = [CommunitySpec(**c) for c in raw["communities"]]
        return cls(**raw)


@dataclass
class TruthLedger:
    communities: list[str]
    groups: list[str]
    N: np.ndarray
    realized_prevalence: np.ndarray
    expected_prevalence: np.ndarray
    cumulative: float

    def sweep(self, ys) -> np.ndarray:
        vol = self.N * self.realized_prevalence
        total = vol.sum()
        return np.array([vol[self.realized_prevalence < y].sum() / total if total else 1.0
                         for y in ys])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["community", "group", "N", "realized_prevalence", "expected_prevalence"])
            for row in zip(self.communities, self.groups, self.N, self.realized_prevalence,
                           self.expected_prevalence):
                w.writerow([row[0], row[1], int(row[2]), repr(float(row[3])), repr(float(row[4]))])
            w.writerow(["__all__", "", int(self.N.sum()), repr(float(self.cumulative)), ""])


@dataclass
class SynthCorpus:
    spec: SynthSpec
    community: np.ndarray  # index into spec.communities
    label: np.ndarray
    score: np.ndarray
    cross: np.ndarray | None = None
    toxicity: np.ndarray | None = None
    truth: TruthLedger = field(default=None)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.spec.communities]

    @property
    def group(self) -> np.ndarray:
        g = np.array([c.group for c in self.spec.communities])
        return g[self.community]

    def ids(self) -> np.ndarray:
        return np.array([f"t{i:08d}" for i in range(len(self.label))], dtype=object)

    def to_records(self, start: int = 1_480_000_000) -> list[CommentRecord]:
        """Placeholder-text comment records that survive default ingestion."""
        names = self.names
        ids = self.ids()
        out = []
        for i in range(len(self.label)):
            body = f"synthetic comment {ids[i]} placeholder tokens lorem ipsum dolor sit"
            tox = None if self.toxicity is None else float(self.toxicity[i])
            out.append(CommentRecord(ids[i], names[self.community[i]], f"u{i % 997:04d}", None,
                                     start + i, body, 1, tox))
        return out


def _draw_scores(rng, hist, n) -> np.ndarray:
    bins = rng.choice(K, size=n, p=np.asarray(hist, dtype=float))
    return np.minimum((bins + rng.random(n)) / K, 1.0)


def generate(spec: SynthSpec) -> SynthCorpus:
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(len(spec.communities) + 1)
    comm, lab, sco = [], [], []
    for i, (c, ss) in enumerate(zip(spec.communities, children)):
        rng = np.random.default_rng(ss)
        y = rng.random(c.comment_count) < c.true_prevalence
        s = np.empty(c.comment_count)
        model = spec.score_model[c.group]
        s[y] = _draw_scores(rng, model["political"], int(y.sum()))
        s[~y] = _draw_scores(rng, model["nonpolitical"], int((~y).sum()))
        comm.append(np.full(c.comment_count, i))
        lab.append(y)
        sco.append(s)
    community = np.concatenate(comm)
    label = np.concatenate(lab)
    score = np.concatenate(sco)
    corpus = SynthCorpus(spec, community, label, score)

    if spec.glmm_truth is not None or spec.toxicity_model is not None:
        rng = np.random.default_rng(children[-1])
        cross_rate = (spec.glmm_truth or {}).get("cross_rate", 0.3)
        corpus.cross = rng.random(len(label)) < cross_rate
        polsub = np.array([c.group == "pol" for c in spec.communities])[community].astype(int)
        if spec.glmm_truth is not None:
            beta = np.asarray(spec.glmm_truth["beta"], dtype=float)
            alpha = rng.normal(0.0, spec.glmm_truth["sigma_alpha"], len(spec.communities))
            X = np.stack([design_row(a, b, c) for a, b, c in
                          zip(polsub, label.astype(int), corpus.cross.astype(int))])
            corpus.toxicity = expit(X @ beta + alpha[community])
        else:
            tm = spec.toxicity_model
            key = [f"{a}{b}{c}" for a, b, c in zip(polsub, label.astype(int), corpus.cross.astype(int))]
            corpus.toxicity = np.array([tm[k] for k in key])

    corpus.truth = truth_ledger(corpus)
    return corpus


def truth_ledger(corpus: SynthCorpus) -> TruthLedger:
    n_comm = len(corpus.spec.communities)
    N = np.bincount(corpus.community, minlength=n_comm).astype(float)
    pos = np.bincount(corpus.community, weights=corpus.label.astype(float), minlength=n_comm)
    realized = np.divide(pos, N, out=np.zeros(n_comm), where=N > 0)
    return TruthLedger([c.name for c in corpus.spec.communities],
                       [c.group for c in corpus.spec.communities], N, realized,
                       np.array([c.true_prevalence for c in corpus.spec.communities]),
                       float(pos.sum() / N.sum()))


def simulate_ratings(labels, accuracy: float, rng, ids=None) -> list[RatingRecord]:
    """Three independent raters, each reporting the true label with
    probability ``accuracy``."""
    labels = np.asarray(labels, dtype=bool)
    flips = rng.random((len(labels), 3)) >= accuracy
    r = (labels[:, None] ^ flips).astype(int)
    ids = ids if ids is not None else [str(i) for i in range(len(labels))]
    return [RatingRecord(str(i), tuple(row)) for i, row in zip(ids, r.tolist())]


@dataclass
class PipelineReport:
    truth: float
    naive: float
    corrected: float
    s: float
    naive_error: float
    corrected_error: float
    covered: bool
    sweep_max_deviation: float
    misassigned: int


def build_calibrators(corpus: SynthCorpus, n_pol: int = 2000, n_nonpol: int = 8000,
                      floor: int = 50, strategy=Aggregation.MAJORITY, accuracy: float | None = None,
                      seed: int | None = None) -> tuple[dict[str, cal.Calibrator], dict]:
    """Stratified rating of each generator group, as done for the known
    political list and everything else."""
    accuracy = corpus.spec.rater_accuracy if accuracy is None else accuracy
    rng = np.random.default_rng([corpus.spec.seed if seed is None else seed, 7919])
    group = corpus.group
    cals, refs = {}, {}
    for g, n, label in (("pol", n_pol, cal.POLITICAL), ("nonpol", n_nonpol, cal.NONPOLITICAL)):
        idx = np.flatnonzero(group == g)
        prof = profile(corpus.score[idx])
        refs[label] = prof
        plan = neyman_allocate(n, prof, floor)
        strata = strata_of(corpus.score[idx])
        labels = []
        for k in range(K):
            members = idx[strata == k]
            if plan.n_k[k] > len(members):
                raise ValueError(f"group {g} stratum {k + 1}: {len(members)} comments < {plan.n_k[k]}")
            pick = rng.choice(members, size=int(plan.n_k[k]), replace=False)
            ratings = simulate_ratings(corpus.label[pick], accuracy, rng)
            labels.append([aggregate(r, strategy) for r in ratings])
        cals[label] = cal.calibrator_from_labels(labels, label)
    return cals, refs


def estimate(corpus: SynthCorpus, cals, refs, threshold: float = 0.0) -> list[cal.SubredditEstimate]:
    counts = {}
    for i, name in enumerate(corpus.names):
        counts[name] = stratum_counts(corpus.score[corpus.community == i])
    return cal.estimate_communities(counts, refs[cal.POLITICAL], refs[cal.NONPOLITICAL], cals,
                                    threshold)


def evaluate_pipeline(corpus: SynthCorpus, truth: TruthLedger | None = None, threshold: float = 0.0,
                      n_pol: int = 2000, n_nonpol: int = 8000, floor: int = 50,
                      accuracy: float | None = None, z: float = 1.96,
                      ys: Sequence[float] | None = None) -> PipelineReport:
    truth = truth or corpus.truth
    cals, refs = build_calibrators(corpus, n_pol, n_nonpol, floor, accuracy=accuracy)
    ests = estimate(corpus, cals, refs, threshold)
    cum = cal.cumulative_prevalence(ests, cals)
    naive = float((corpus.score > 0.5).mean())
    ys = cal.default_grid() if ys is None else ys
    est_sweep = np.array([pt.cumulative_share for pt in cal.threshold_sweep(ests, ys)])
    by_name = {e.community: e for e in ests}
    wrong = sum((by_name[n].calibrator_choice == cal.POLITICAL) != (g == "pol")
                for n, g in zip(truth.communities, truth.groups))
    lo, hi = cum.interval(z)
    return PipelineReport(
        truth=truth.cumulative, naive=naive, corrected=cum.p, s=cum.s,
        naive_error=naive - truth.cumulative, corrected_error=cum.p - truth.cumulative,
        covered=bool(lo <= truth.cumulative <= hi),
        sweep_max_deviation=float(np.abs(est_sweep - truth.sweep(ys)).max()),
        misassigned=int(wrong))


# ---------------------------------------------------------------------------
# stock specs

def coverage_spec(seed: int, n_communities: int = 50, comments: int = 2000,
                  political_fraction: float = 0.2, rater_accuracy: float = 1.0) -> SynthSpec:
    """Communities of two groups whose classifier errs differently per group.

    In the non-political group political comments score lower and
    non-political comments carry a high-score tail, so thresholding at 0.5
    misjudges both groups.
    """
    rng = np.random.default_rng([seed, 104729])
    n_pol = max(2, int(round(n_communities * political_fraction)))
    comms = []
    for i in range(n_communities):
        group = "pol" if i < n_pol else "nonpol"
        prev = rng.uniform(0.4, 0.8) if group == "pol" else rng.uniform(0.01, 0.2)
        size = int(rng.integers(int(comments * 0.75), int(comments * 1.25) + 1))
        comms.append(CommunitySpec(f"{group}{i:03d}", size, float(prev), group))
    model = {
        "pol": {"political": _norm([1, 1, 2, 3, 5, 8, 12, 16, 22, 30]),
                "nonpolitical": _norm([4, 6, 9, 12, 16, 16, 14, 10, 7, 6])},
        "nonpol": {"political": _norm([3, 5, 8, 12, 16, 18, 15, 11, 7, 5]),
                   "nonpolitical": _norm([24, 19, 15, 11, 9, 7, 6, 4, 3, 2])},
    }
    return SynthSpec(seed, comms, model, rater_accuracy=rater_accuracy)


def _norm(v) -> list[float]:
    v = np.asarray(v, dtype=float)
    return (v / v.sum()).tolist()


def simulate_glmm_cells(beta, sigma_alpha: float, n_communities: int = 200, trials: int = 200,
                        seed: int = 0) -> tuple[list[CellCounts], dict[str, int], np.ndarray]:
    """Integer binomial cells from the random-intercept model; half the
    communities are political. Returns cells, polsub flags and the drawn
    intercepts."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    cells, polsub = [], {}
    alpha = rng.normal(0.0, sigma_alpha, n_communities)
    for s in range(n_communities):
        name = f"s{s:04d}"
        ps = s % 2
        polsub[name] = ps
        for pr in (0, 1):
            for cr in (0, 1):
                p = expit(design_row(ps, pr, cr) @ beta + alpha[s])
                cells.append(CellCounts(name, pr, cr, float(trials), float(rng.binomial(trials, p))))
    return cells, polsub, alpha


# ---------------------------------------------------------------------------
# text fixture for the command-line pipeline

_POLITICAL_WORDS = ("vote election senate congress president policy tax healthcare immigration "
                    "democrats republicans campaign law court rights government bill reform debate "
                    "party voters liberal conservative budget").split()
_GENERAL_WORDS = ("the a really think just like people time good know new great today pretty "
                  "thing way lot actually maybe still every some my your").split()
_TOPIC_WORDS = {
    "AskReddit": "question story friend life weird childhood advice job".split(),
    "pics": "photo picture camera sunset view shot color".split(),
    "funny": "joke laugh meme hilarious dog cat prank".split(),
    "nba": "basketball lakers playoffs dunk points rebound coach".split(),
    "nfl": "football quarterback touchdown season draft defense".split(),
    "soccer": "goal league striker penalty match keeper transfer".split(),
    "movies": "film director actor scene trailer sequel cinema".split(),
    "gaming": "game console level boss controller multiplayer patch".split(),
    "cooking": "recipe garlic oven sauce pasta bake flavor".split(),
    "science": "study research physics data experiment cells theory".split(),
    "music": "album song guitar concert band lyrics drummer".split(),
    "books": "novel author chapter reading library fiction series".split(),
}
_POLITICAL_COMMUNITIES = {
    "politics": "left", "Liberal": "left", "progressive": "left",
    "The_Donald": "right", "Conservative": "right", "Republican": "right",
    "PoliticalDiscussion": None,
}

FIXTURE_GLMM_BETA = (-1.4, 0.5, 0.6, 0.4, -0.1, 0.2, 0.1, 0.0)


def _sentence(rng, pool_a, pool_b, share_a, n) -> str:
    """Join ``n`` word pairs, each drawn from pool_a with probability share_a.

    Pairs are drawn from a small fixed set per pool so bigrams recur."""
    words = []
    for _ in range(n):
        pool = pool_a if rng.random() < share_a else pool_b
        i = int(rng.integers(len(pool) - 1))
        words += [pool[i], pool[i + 1]]
    return " ".join(words)


def write_text_fixture(directory: str | Path, seed: int = 0) -> Path:
    """Write a small raw text corpus with ratings, toxicity scores, seed lists
    and a pipeline config under ``directory``; returns the config path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_users = 400
    user_lean = rng.choice(np.array(["left", "right", "none"]), size=n_users, p=[0.4, 0.25, 0.35])
    left_users = np.flatnonzero(user_lean == "left")
    right_users = np.flatnonzero(user_lean == "right")

    communities = []
    for name, side in _POLITICAL_COMMUNITIES.items():
        communities.append((name, 260, rng.uniform(0.6, 0.85), side, True))
    for name in _TOPIC_WORDS:
        communities.append((name, 320, rng.uniform(0.03, 0.25), None, False))
    communities.append(("tinysub", 30, 0.1, None, False))

    alpha = {c[0]: rng.normal(0, 0.3) for c in communities}
    beta = np.asarray(FIXTURE_GLMM_BETA)
    rows, tox_rows, rating_rows = [], [], []
    t0 = 1_451_606_400  # 2016-01-01
    counter = 0
    for name, size, prev, side, is_pol in communities:
        topic = _TOPIC_WORDS.get(name, _POLITICAL_WORDS)
        posted: list[tuple[str, int]] = []
        for _ in range(size):
            counter += 1
            cid = f"c{counter:06d}"
            if side == "left" and rng.random() < 0.85:
                author = int(rng.choice(left_users))
            elif side == "right" and rng.random() < 0.85:
                author = int(rng.choice(right_users))
            else:
                author = int(rng.integers(n_users))
            political = bool(rng.random() < prev)
            if political:
                body = _sentence(rng, _POLITICAL_WORDS, topic + _GENERAL_WORDS, 0.55, int(rng.integers(6, 11)))
            else:
                body = _sentence(rng, topic, _GENERAL_WORDS + _POLITICAL_WORDS[:4], 0.45,
                                 int(rng.integers(6, 11)))
            aligned = side is not None and user_lean[author] == side
            karma = int(1 + rng.poisson(4)) if aligned or side is None else int(rng.integers(-3, 2))
            parent = f"t3_p{counter:06d}"
            cross = False
            if posted and rng.random() < 0.7:
                pid, pauthor = posted[int(rng.integers(len(posted)))]
                parent = f"t1_{pid}"
                la, lb = user_lean[author], user_lean[pauthor]
                cross = la != "none" and lb != "none" and la != lb
            x = design_row(int(is_pol), int(political), int(cross))
            tox = float(expit(x @ beta + alpha[name] + rng.normal(0, 0.4)))
            rows.append({"id": cid, "subreddit": name, "author": f"user{author:04d}",
                         "parent_id": parent, "created_utc": t0 + counter * 600, "body": body,
                         "score": karma})
            tox_rows.append((cid, round(tox, 6)))
            flips = rng.random(3) >= 0.9
            rating_rows.append((cid, *[int(political ^ f) for f in flips]))
            posted.append((cid, author))
    # rows the filters must drop
    rows.append({"id": "c_short", "subreddit": "AskReddit", "author": "user0001", "parent_id": None,
                 "created_utc": t0, "body": "too short", "score": 1})
    for i in range(5):
        rows.append({"id": f"c_bot{i}", "subreddit": "AskReddit", "author": "AutoModerator",
                     "parent_id": None, "created_utc": t0, "score": 1,
                     "body": "This comment was removed automatically because it broke a rule."})
    rows.append({"id": "c000001", "subreddit": "pics", "author": "user0002", "parent_id": None,
                 "created_utc": t0, "score": 1, "body": "duplicate id " * 6})

    with open(out / "corpus_raw.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        fh.write("{not json\n")
    with open(out / "toxicity.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "toxicity"])
        w.writerows(tox_rows)
    with open(out / "ratings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comment_id", "r1", "r2", "r3"])
        w.writerows(rating_rows)
    (out / "seeds.txt").write_text("[left]\npolitics\nLiberal\nprogressive\n"
                                   "[right]\nThe_Donald\nConservative\nRepublican\n", encoding="utf-8")
    config = {
        "corpus": "corpus_raw.jsonl", "toxicity": "toxicity.csv", "ratings": "ratings.csv",
        "seed_lists": "seeds.txt", "political_communities": sorted(_POLITICAL_COMMUNITIES),
        "filter": {"min_community_comments": 100, "min_body_chars": 50,
                   "excluded_authors": ["AutoModerator"]},
        "lam": 0.001, "cv_folds": 3, "min_ngram_count": 3,
        "n_pol": 300, "n_nonpol": 600, "floor": 5, "seed": seed, "exclude_top_m": 3,
        "synth": {"runs": 200},
    }
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
