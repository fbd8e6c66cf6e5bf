from __future__ import annotations

import math

import numpy as np
import pytest

from quantcal import synth
from quantcal.synth import CommunitySpec, SynthSpec, generate


def _flat(n=10):
    return [1 / n] * n


def two_community_spec(seed=0, prev=(0.3, 0.05)):
    model = {g: {"political": _flat(), "nonpolitical": _flat()} for g in ("pol", "nonpol")}
    return SynthSpec(seed, [CommunitySpec("a", 4000, prev[0], "pol"),
                            CommunitySpec("b", 6000, prev[1], "nonpol")], model)


def perfect_spec(seed=0):
    hot = [0.0] * 9 + [1.0]
    cold = [1.0] + [0.0] * 9
    model = {g: {"political": hot, "nonpolitical": cold} for g in ("pol", "nonpol")}
    comms = [CommunitySpec(f"p{i}", 800, 0.6, "pol") for i in range(3)]
    comms += [CommunitySpec(f"n{i}", 1500, 0.05, "nonpol") for i in range(6)]
    return SynthSpec(seed, comms, model, rater_accuracy=1.0)


def test_zero_prevalence_has_no_political_labels():
    corpus = generate(two_community_spec(prev=(0.0, 0.0)))
    assert not corpus.label.any() and corpus.truth.cumulative == 0.0


def test_empirical_prevalence_within_binomial_bound():
    spec = two_community_spec(seed=5)
    corpus = generate(spec)
    for i, c in enumerate(spec.communities):
        got = corpus.label[corpus.community == i].mean()
        assert abs(got - c.true_prevalence) <= 3 * math.sqrt(c.true_prevalence * (1 - c.true_prevalence) / c.comment_count)


def test_same_seed_same_corpus(tmp_path):
    a, b = generate(two_community_spec(seed=9)), generate(two_community_spec(seed=9))
    a.truth.write_csv(tmp_path / "a.csv")
    b.truth.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(a.score, b.score) and np.array_equal(a.label, b.label)
    assert a.to_records() == b.to_records()
    assert not np.array_equal(a.score, generate(two_community_spec(seed=10)).score)


def test_truth_ledger_matches_bruteforce():
    corpus = generate(synth.coverage_spec(2, n_communities=8, comments=300))
    t = corpus.truth
    for i, name in enumerate(t.communities):
        labels = [int(lab) for lab, c in zip(corpus.label, corpus.community) if c == i]
        assert t.N[i] == len(labels) and t.realized_prevalence[i] == sum(labels) / len(labels)
    assert t.cumulative == pytest.approx(corpus.label.mean())
    ys = [0.1, 0.3, 1.01]
    vol = t.N * t.realized_prevalence
    for y, got in zip(ys, t.sweep(ys)):
        assert got == pytest.approx(vol[t.realized_prevalence < y].sum() / vol.sum())


def test_scores_land_in_histogram_bins():
    hist = [0, 0, 1, 0, 0, 0, 0, 0, 0, 0]
    model = {"pol": {"political": hist, "nonpolitical": hist}}
    corpus = generate(SynthSpec(0, [CommunitySpec("a", 500, 0.5, "pol")], model))
    assert ((corpus.score >= 0.2) & (corpus.score < 0.3)).all()


def test_invalid_specs_rejected():
    bad = two_community_spec()
    bad.score_model["pol"]["political"] = [0.5] * 10
    with pytest.raises(ValueError):
        generate(bad)
    with pytest.raises(ValueError):
        generate(two_community_spec(prev=(1.5, 0.1)))
    spec = two_community_spec()
    spec.communities[0].comment_count = 0
    with pytest.raises(ValueError):
        generate(spec)


def test_spec_json_roundtrip():
    spec = synth.coverage_spec(1, n_communities=4, comments=100)
    assert SynthSpec.from_json(spec.to_json()) == spec


def test_glmm_truth_toxicity():
    spec = two_community_spec()
    spec.glmm_truth = {"beta": [-1, 0.5, 0.5, 0.5, 0, 0, 0, 0], "sigma_alpha": 0.0, "cross_rate": 0.5}
    corpus = generate(spec)
    ps = (corpus.community == 0).astype(int)
    expect = 1 / (1 + np.exp(-(-1 + 0.5 * ps + 0.5 * corpus.label + 0.5 * corpus.cross)))
    assert np.allclose(corpus.toxicity, expect)
    assert abs(corpus.cross.mean() - 0.5) < 0.02


def test_perfect_classifier_has_no_error():
    corpus = generate(perfect_spec())
    rep = synth.evaluate_pipeline(corpus, n_pol=200, n_nonpol=400, floor=20)
    assert abs(rep.naive_error) < 1e-12 and abs(rep.corrected_error) < 1e-12
    assert rep.misassigned == 0


def test_correction_beats_naive_on_miscalibrated_spec():
    reps = [synth.evaluate_pipeline(generate(synth.coverage_spec(s, n_communities=20, comments=1000)),
                                    n_pol=1000, n_nonpol=2000, floor=30) for s in range(5)]
    assert np.mean([abs(r.corrected_error) for r in reps]) < np.mean([abs(r.naive_error) for r in reps])
    assert min(abs(r.naive_error) for r in reps) > 0.05


def test_simulated_ratings_accuracy(rng):
    labels = rng.random(20000) < 0.3
    recs = synth.simulate_ratings(labels, 0.9, rng)
    agree = np.mean([[r == int(lab) for r in rec.ratings] for rec, lab in zip(recs, labels)])
    assert abs(agree - 0.9) < 0.01


def test_simulated_glmm_cells_shape():
    cells, polsub, alpha = synth.simulate_glmm_cells([-1] + [0] * 7, 0.2, n_communities=10, trials=30)
    assert len(cells) == 40 and sum(polsub.values()) == 5 and len(alpha) == 10
    assert all(c.N == 30 and 0 <= c.T <= 30 for c in cells)


def test_text_fixture_files(tmp_path):
    cfg = synth.write_text_fixture(tmp_path, seed=1)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"corpus_raw.jsonl", "toxicity.csv", "ratings.csv", "seeds.txt", "config.json"} <= names
    assert cfg == tmp_path / "config.json"
    other = tmp_path / "again"
    synth.write_text_fixture(other, seed=1)
    assert (other / "corpus_raw.jsonl").read_bytes() == (tmp_path / "corpus_raw.jsonl").read_bytes()
