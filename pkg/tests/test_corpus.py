from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

from quantcal import synth
from quantcal.corpus import (CommentRecord, FilterConfig, FilterReport, community_index, ingest,
                             iter_jsonl, read_corpus, record_to_raw, write_corpus)

LONG = "x" * 60


def raw(i, community="A", author="alice", body=LONG, t=100, **kw):
    d = {"id": f"c{i}", "subreddit": community, "author": author, "body": body,
         "created_utc": t, "score": 1, "parent_id": None}
    d.update(kw)
    return d


def test_length_rule():
    recs = [raw(0), raw(1, body="short text"), raw(2)]
    out, rep = ingest(recs, FilterConfig(min_community_comments=0))
    assert [r.id for r in out] == ["c0", "c2"]
    assert rep.too_short == 1


def test_fifty_chars_is_enough():
    out, rep = ingest([raw(0, body="y" * 50), raw(1, body="y" * 49)], FilterConfig(min_community_comments=0))
    assert [r.id for r in out] == ["c0"]


def test_length_counts_unicode_scalars():
    body = "é" * 50  # 100 bytes in utf-8, 50 characters
    out, _ = ingest([raw(0, body=body)], FilterConfig(min_community_comments=0))
    assert len(out) == 1


def test_community_threshold_is_strict():
    recs = [raw(i, community="small") for i in range(999)] + [raw(1000 + i, community="big") for i in range(1000)]
    out, rep = ingest(recs, FilterConfig())
    assert {r.community for r in out} == {"big"}
    assert rep.small_community == 999


def test_threshold_counts_after_other_filters():
    # 1000 records but one is too short: the community falls under the bar
    recs = [raw(i) for i in range(999)] + [raw(999, body="tiny")]
    out, rep = ingest(recs, FilterConfig())
    assert out == [] and rep.too_short == 1 and rep.small_community == 999


def test_excluded_author():
    recs = [raw(i, author="AutoModerator") for i in range(5)] + [raw(10)]
    out, rep = ingest(recs, FilterConfig(min_community_comments=0, excluded_authors={"AutoModerator"}))
    assert rep.excluded_author == 5 and len(out) == 1


def test_date_range():
    recs = [raw(0, t=5), raw(1, t=10), raw(2, t=20), raw(3, t=21)]
    out, rep = ingest(recs, FilterConfig(min_community_comments=0, date_range=(10, 20)))
    assert [r.id for r in out] == ["c1", "c2"] and rep.out_of_range == 2


def test_malformed_and_duplicates_counted_not_raised():
    recs = [raw(0), {"id": "x"}, None, raw(0, body="z" * 80), raw(1, toxicity=1.5), raw(2, score="abc")]
    out, rep = ingest(recs, FilterConfig(min_community_comments=0))
    assert [r.id for r in out] == ["c0"]
    assert out[0].body == LONG  # first occurrence wins
    assert rep.malformed == 4 and rep.duplicate == 1


def test_toxicity_override():
    out, _ = ingest([raw(0)], FilterConfig(min_community_comments=0), toxicity={"c0": 0.25})
    assert out[0].toxicity == 0.25


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(min_body_chars=-1)
    with pytest.raises(ValueError):
        FilterConfig(date_range=(10, 5))


def test_community_index():
    assert community_index([]).sizes == {} and community_index([]).total == 0
    recs = [CommentRecord(f"c{i}", c, "u", None, 0, LONG, 1) for i, c in enumerate("AAB")]
    idx = community_index(recs)
    assert idx.sizes == {"A": 2, "B": 1} and idx.total == 3


def test_index_matches_generator_bookkeeping():
    spec = synth.coverage_spec(3, n_communities=6, comments=120)
    corpus = synth.generate(spec)
    out, rep = ingest(corpus.to_records(), FilterConfig(min_community_comments=0))
    assert rep.retained == len(corpus.label)  # generator output survives ingestion
    assert community_index(out).sizes == {c.name: c.comment_count for c in spec.communities}


def test_report_text_roundtrip():
    rep = FilterReport(10, 1, 1, 2, 1, 0, 3, 2)
    assert FilterReport.from_text(rep.to_text()) == rep


def test_corpus_file_roundtrip(tmp_path):
    recs = [CommentRecord("a", "X", "u", "t1_b", 5, LONG, -2, 0.5),
            CommentRecord("b", "Y", "v", None, 6, "line\nbreak " * 6, 3)]
    p = tmp_path / "c.jsonl"
    write_corpus(recs, p)
    assert json.loads(p.read_text().splitlines()[0])["schema"] == "quantcal.corpus"
    assert read_corpus(p) == recs
    assert [record_to_raw(r)["id"] for r in recs] == ["a", "b"]


def test_iter_jsonl_skips_bad_lines(tmp_path):
    p = tmp_path / "raw.jsonl"
    p.write_text(json.dumps(raw(0)) + "\n{broken\n\n" + json.dumps(raw(1)) + "\n")
    rows = list(iter_jsonl(p))
    out, rep = ingest(rows, FilterConfig(min_community_comments=0))
    assert len(out) == 2 and rep.malformed == 1


record_st = st.builds(
    raw, i=st.integers(0, 30), community=st.sampled_from(["A", "B", "C"]),
    author=st.sampled_from(["alice", "bob", "bot"]),
    body=st.text(min_size=0, max_size=70), t=st.integers(0, 100))


@settings(max_examples=150, deadline=None)
@given(st.lists(record_st, max_size=60), st.integers(0, 8), st.integers(0, 60))
def test_filter_properties(recs, min_comm, min_chars):
    cfg = FilterConfig(min_community_comments=min_comm, min_body_chars=min_chars,
                       excluded_authors={"bot"}, date_range=(10, 90))
    out, rep = ingest(recs, cfg)
    # every retained record satisfies every rule
    sizes = community_index(out).sizes
    for r in out:
        assert r.author != "bot" and len(r.body) >= max(min_chars, 1)
        assert 10 <= r.created_at <= 90 and sizes[r.community] >= min_comm
    # the report accounts for every input record
    assert rep.retained + rep.dropped() + rep.duplicate == rep.input == len(recs)
    assert len({r.id for r in out}) == len(out)
    # idempotent
    again, rep2 = ingest(out, cfg)
    assert again == out and rep2.retained == rep.retained
