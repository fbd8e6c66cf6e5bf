"""Comment corpus ingestion and filtering.

Raw input is newline-delimited JSON with pushshift-style keys
(``id, subreddit, author, parent_id, created_utc, body, score``).  Records are
filtered in a fixed order: excluded authors, body length, date range, and
finally the per-community size threshold, which is evaluated on the counts
that survive the first three rules.
"""
from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Mapping

SCHEMA = "quantcal.corpus"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CommentRecord:
    id: str
    community: str
    author: str
    parent_id: str | None
    created_at: int
    body: str
    karma: int
    toxicity: float | None = None


@dataclass
class FilterConfig:
    min_community_comments: int = 1000
    min_body_chars: int = 50
    excluded_authors: frozenset[str] = frozenset()
    date_range: tuple[int, int] | None = None

    def __post_init__(self):
        if self.min_community_comments < 0 or self.min_body_chars < 0:
            raise ValueError("filter thresholds must be non-negative")
        if self.date_range is not None and self.date_range[0] > self.date_range[1]:
            raise ValueError(f"date_range start after end: {self.date_range}")
        self.excluded_authors = frozenset(self.excluded_authors)


@dataclass
class FilterReport:
    input: int = 0
    malformed: int = 0
    duplicate: int = 0
    excluded_author: int = 0
    too_short: int = 0
    out_of_range: int = 0
    small_community: int = 0
    retained: int = 0

    def dropped(self) -> int:
        return (self.malformed + self.excluded_author + self.too_short
                + self.out_of_range + self.small_community)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "FilterReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**{k: int(v) for k, v in kv.items()})


class MalformedRecord(ValueError):
    pass


def _parse_raw(raw: Mapping | CommentRecord) -> CommentRecord:
    if isinstance(raw, CommentRecord):
        return raw
    try:
        rid = raw["id"]
        community = raw["subreddit"] if "subreddit" in raw else raw["community"]
        author = raw["author"]
        body = raw["body"]
    except (KeyError, TypeError) as exc:
        raise MalformedRecord(f"missing field {exc}") from None
    if not isinstance(rid, str) or not rid:
        raise MalformedRecord("id must be a nonempty string")
    if not all(isinstance(v, str) for v in (community, author, body)):
        raise MalformedRecord("community, author and body must be strings")
    try:
        created = int(raw.get("created_utc", raw.get("created_at", 0)) or 0)
        karma = int(raw.get("score", raw.get("karma", 0)) or 0)
    except (TypeError, ValueError):
        raise MalformedRecord("non-integer created_utc or score") from None
    tox = raw.get("toxicity")
    if tox is not None:
        try:
            tox = float(tox)
        except (TypeError, ValueError):
            raise MalformedRecord("non-numeric toxicity") from None
        if not 0.0 <= tox <= 1.0:
            raise MalformedRecord(f"toxicity {tox} outside [0, 1]")
    parent = raw.get("parent_id") or None
    return CommentRecord(rid, community, author, parent, created, body, karma, tox)


def ingest(stream: Iterable[Mapping | CommentRecord], config: FilterConfig | None = None,
           toxicity: Mapping[str, float] | None = None,
           ) -> tuple[list[CommentRecord], FilterReport]:
    """Validate and filter raw records.

    Malformed records and repeated ids are skipped and counted, never raised.
    ``toxicity`` optionally overrides per-comment toxicity keyed by id.
    Retained records keep their input order.
    """
    config = config or FilterConfig()
    report = FilterReport()
    seen: set[str] = set()
    survivors: list[CommentRecord] = []
    for raw in stream:
        report.input += 1
        try:
            rec = _parse_raw(raw)
        except MalformedRecord:
            report.malformed += 1
            continue
        if rec.id in seen:
            report.duplicate += 1
            continue
        seen.add(rec.id)
        if toxicity is not None and rec.id in toxicity:
            rec = _with_toxicity(rec, toxicity[rec.id])
        if rec.author in config.excluded_authors:
            report.excluded_author += 1
        elif len(rec.body) < max(config.min_body_chars, 1):
            report.too_short += 1
        elif config.date_range is not None and not (
                config.date_range[0] <= rec.created_at <= config.date_range[1]):
            report.out_of_range += 1
        else:
            survivors.append(rec)

    sizes = Counter(r.community for r in survivors)
    corpus = [r for r in survivors if sizes[r.community] >= config.min_community_comments]
    report.small_community = len(survivors) - len(corpus)
    report.retained = len(corpus)
    return corpus, report


def _with_toxicity(rec: CommentRecord, value: float) -> CommentRecord:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise MalformedRecord(f"toxicity {value} outside [0, 1] for {rec.id}")
    return CommentRecord(rec.id, rec.community, rec.author, rec.parent_id,
                         rec.created_at, rec.body, rec.karma, value)


@dataclass
class CommunityIndex:
    members: dict[str, list[str]] = field(default_factory=dict)

    @property
    def sizes(self) -> dict[str, int]:
        return {c: len(ids) for c, ids in self.members.items()}

    @property
    def total(self) -> int:
        return sum(len(ids) for ids in self.members.values())


def community_index(corpus: Iterable[CommentRecord]) -> CommunityIndex:
    members: dict[str, list[str]] = defaultdict(list)
    for rec in corpus:
        members[rec.community].append(rec.id)
    return CommunityIndex(dict(members))


# ---------------------------------------------------------------------------
# file formats

def iter_jsonl(path: str | Path) -> Iterator[dict | None]:
    """Yield one dict per line; unparseable lines come through as ``None``
    so ingest counts them as malformed. A schema header line is skipped."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                yield None
                continue
            if isinstance(obj, dict) and obj.get("schema") == SCHEMA:
                continue
            yield obj


def read_toxicity_csv(path: str | Path) -> dict[str, float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "id":
                continue
            out[row[0]] = float(row[1])
    return out


def record_to_raw(rec: CommentRecord) -> dict:
    raw = {"id": rec.id, "subreddit": rec.community, "author": rec.author,
           "parent_id": rec.parent_id, "created_utc": rec.created_at,
           "body": rec.body, "score": rec.karma}
    if rec.toxicity is not None:
        raw["toxicity"] = rec.toxicity
    return raw


def write_corpus(corpus: Iterable[CommentRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": SCHEMA, "version": SCHEMA_VERSION}) + "\n")
        for rec in corpus:
            fh.write(json.dumps(record_to_raw(rec), ensure_ascii=False, sort_keys=True) + "\n")


def read_corpus(path: str | Path) -> list[CommentRecord]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
    if header.get("schema") != SCHEMA or header.get("version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: not a canonical corpus file (header {header})")
    return [_parse_raw(obj) for obj in iter_jsonl(path)]
