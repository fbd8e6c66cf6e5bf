from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from quantcal.corpus import CommentRecord
from quantcal.partisan import (Leaning, SeedLists, UserActivity, accumulate, classify_leaning, leanings,
                               read_leanings, write_leanings)


def rec(i, community, author, karma):
    return CommentRecord(f"c{i}", community, author, None, 0, "x" * 60, karma)


def test_accumulate_examples():
    corpus = [rec(0, "politics", "u", 3), rec(1, "Liberal", "u", 5), rec(2, "nba", "v", 10),
              rec(3, "Conservative", "w", 2), rec(4, "nba", "u", 100)]
    acts = accumulate(corpus)
    assert "v" not in acts
    assert acts["u"].left_comments == 2 and acts["u"].left_mean_karma == 4
    assert acts["u"].right_mean_karma is None
    left_total = sum(a.left_comments for a in acts.values())
    assert left_total == sum(r.community in SeedLists().left for r in corpus)


def test_classify_examples():
    assert classify_leaning(UserActivity("a", 5, 0, 15, 0)) == Leaning.LEFT
    assert classify_leaning(UserActivity("a", 5, 0, 2.5, 0)) == Leaning.UNKNOWN
    assert classify_leaning(UserActivity("a", 3, 3, 12, 6)) == Leaning.UNKNOWN
    assert classify_leaning(UserActivity("a", 1, 4, 2, 20)) == Leaning.RIGHT


def test_cross_side_mean_must_be_lower():
    # more left comments but lower left mean karma: not left
    assert classify_leaning(UserActivity("a", 4, 1, 8, 5)) == Leaning.UNKNOWN


activity_st = st.builds(UserActivity, st.just("u"), st.integers(0, 20), st.integers(0, 20),
                        st.integers(-50, 200), st.integers(-50, 200))


@given(activity_st)
def test_mirror_symmetry(a):
    swap = {Leaning.LEFT: Leaning.RIGHT, Leaning.RIGHT: Leaning.LEFT, Leaning.UNKNOWN: Leaning.UNKNOWN}
    assert classify_leaning(a.mirrored()) == swap[classify_leaning(a)]


@given(activity_st)
def test_left_and_right_exclusive(a):
    # classify_leaning checks left first; the right conditions must then fail
    if classify_leaning(a) == Leaning.LEFT:
        assert classify_leaning(a.mirrored()) != Leaning.LEFT


@given(st.lists(st.tuples(st.sampled_from(["politics", "Conservative", "nba", "pics"]),
                          st.sampled_from("abc"), st.integers(-5, 20)), max_size=30),
       st.lists(st.tuples(st.sampled_from(["nba", "pics"]), st.sampled_from("abc"), st.integers(-5, 20)),
                max_size=10))
def test_invariant_to_non_seed_activity(rows, extra):
    corpus = [rec(i, *r) for i, r in enumerate(rows)]
    more = corpus + [rec(100 + i, *r) for i, r in enumerate(extra)]
    assert leanings(corpus) == leanings(more)


def test_seed_lists_parse_and_validate(tmp_path):
    s = SeedLists.parse("# seeds\n[left]\npolitics\n\n[right]\nConservative  # right\n")
    assert s.left == {"politics"} and s.right == {"Conservative"}
    assert SeedLists.parse(s.to_text()) == s
    with pytest.raises(ValueError):
        SeedLists({"a"}, {"a"})
    with pytest.raises(ValueError):
        SeedLists.parse("[left]\na\n")
    with pytest.raises(ValueError):
        SeedLists.parse("a\n[left]\nb\n[right]\nc\n")


def test_leanings_io(tmp_path):
    lean = {"b": Leaning.RIGHT, "a": Leaning.LEFT, "c": Leaning.UNKNOWN}
    write_leanings(lean, tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text() == "user,leaning\na,left\nb,right\nc,unknown\n"
    assert read_leanings(tmp_path / "l.csv") == lean
