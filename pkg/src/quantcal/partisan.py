"""User political leaning from activity in seed communities."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import CommentRecord

DEFAULT_LEFT = frozenset({"politics", "Liberal", "progressive"})
DEFAULT_RIGHT = frozenset({"The_Donald", "Conservative", "Republican"})


class Leaning(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SeedLists:
    left: frozenset[str] = DEFAULT_LEFT
    right: frozenset[str] = DEFAULT_RIGHT

    def __post_init__(self):
        object.__setattr__(self, "left", frozenset(self.left))
        object.__setattr__(self, "right", frozenset(self.right))
        if not self.left or not self.right:
            raise ValueError("seed lists must be nonempty")
        if self.left & self.right:
            raise ValueError(f"seed lists overlap: {sorted(self.left & self.right)}")

    @classmethod
    def parse(cls, text: str) -> "SeedLists":
        """Two sections, ``[left]`` and ``[right]``, one community per line."""
        sections: dict[str, set[str]] = {}
        current = None
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                sections.setdefault(current, set())
            elif current is None:
                raise ValueError(f"community {line!r} before any section header")
            else:
                sections[current].add(line)
        return cls(frozenset(sections.get("left", ())), frozenset(sections.get("right", ())))

    @classmethod
    def load(cls, path: str | Path) -> "SeedLists":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return ("[left]\n" + "".join(f"{c}\n" for c in sorted(self.left))
                + "[right]\n" + "".join(f"{c}\n" for c in sorted(self.right)))


@dataclass
class UserActivity:
    user: str
    left_comments: int = 0
    right_comments: int = 0
    left_karma: int = field(default=0, repr=False)
    right_karma: int = field(default=0, repr=False)

    @property
    def left_mean_karma(self) -> float | None:
        return self.left_karma / self.left_comments if self.left_comments else None

    @property
    def right_mean_karma(self) -> float | None:
        return self.right_karma / self.right_comments if self.right_comments else None

    def mirrored(self) -> "UserActivity":
        return UserActivity(self.user, self.right_comments, self.left_comments,
                            self.right_karma, self.left_karma)


def accumulate(corpus: Iterable[CommentRecord], seeds: SeedLists = SeedLists()) -> dict[str, UserActivity]:
    users: dict[str, UserActivity] = {}
    for rec in corpus:
        if rec.community in seeds.left:
            act = users.setdefault(rec.author, UserActivity(rec.author))
            act.left_comments += 1
            act.left_karma += rec.karma
        elif rec.community in seeds.right:
            act = users.setdefault(rec.author, UserActivity(rec.author))
            act.right_comments += 1
            act.right_karma += rec.karma
    return users


def _leans(n_own, mean_own, n_other, mean_other) -> bool:
    if n_own <= n_other:
        return False
    # no activity on the other side counts as no evidence against
    if n_other > 0 and not mean_own > mean_other:
        return False
    return mean_own > 1


def classify_leaning(act: UserActivity) -> Leaning:
    if _leans(act.left_comments, act.left_mean_karma, act.right_comments, act.right_mean_karma):
        return Leaning.LEFT
    if _leans(act.right_comments, act.right_mean_karma, act.left_comments, act.left_mean_karma):
        return Leaning.RIGHT
    return Leaning.UNKNOWN


def leanings(corpus: Iterable[CommentRecord], seeds: SeedLists = SeedLists()) -> dict[str, Leaning]:
    return {u: classify_leaning(a) for u, a in accumulate(corpus, seeds).items()}


def write_leanings(lean: Mapping[str, Leaning], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "leaning"])
        for u in sorted(lean):
            w.writerow([u, Leaning(lean[u]).value])


def read_leanings(path: str | Path) -> dict[str, Leaning]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["user"]: Leaning(r["leaning"]) for r in csv.DictReader(fh)}
