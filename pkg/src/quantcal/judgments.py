"""Three-rater political/not-political judgments: label aggregation,
per-stratum prevalence and inter-rater reliability."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class Aggregation(str, enum.Enum):
    MAJORITY = "majority"
    ANY_ONE = "any_one"
    ALL_THREE = "all_three"


_MIN_POSITIVE = {Aggregation.MAJORITY: 2, Aggregation.ANY_ONE: 1, Aggregation.ALL_THREE: 3}


@dataclass(frozen=True)
class RatingRecord:
    comment_id: str
    ratings: tuple[int, int, int]

    def __post_init__(self):
        r = tuple(int(x) for x in self.ratings)
        if len(r) != 3 or any(x not in (0, 1) for x in r):
            raise ValueError(f"{self.comment_id}: need exactly three 0/1 ratings, got {self.ratings}")
        object.__setattr__(self, "ratings", r)

    @property
    def positives(self) -> int:
        return sum(self.ratings)


def aggregate(record: RatingRecord, strategy: Aggregation | str = Aggregation.MAJORITY) -> int:
    return int(record.positives >= _MIN_POSITIVE[Aggregation(strategy)])


@dataclass(frozen=True)
class StratumPrevalence:
    k: int
    n: int
    p: float
    s: float


def stratum_prevalence(labels: Sequence[int], k: int = 0) -> StratumPrevalence:
    n = len(labels)
    if n == 0:
        raise ValueError(f"stratum {k}: no rated comments")
    p = sum(labels) / n
    return StratumPrevalence(k, n, p, standard_error(p, n))


def standard_error(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)


def agreement_breakdown(records: Iterable[RatingRecord]) -> np.ndarray:
    """Share of records with 0, 1, 2 and 3 positive ratings."""
    counts = np.bincount([r.positives for r in records], minlength=4).astype(float)
    return counts / counts.sum()


def krippendorff_alpha(records: Sequence[RatingRecord]) -> float:
    """Nominal-metric alpha via the coincidence matrix (no missing data)."""
    if len(records) < 2:
        raise ValueError("alpha needs at least two rated units")
    m = 3
    # with binary values the coincidence matrix is determined by the
    # positive count per unit: off-diagonal pairs = 2*c*(m-c)
    c = np.array([r.positives for r in records], dtype=float)
    n_total = m * len(records)
    o_disagree = float((2 * c * (m - c)).sum()) / (m - 1)
    n1 = c.sum()
    n0 = n_total - n1
    e_disagree = 2 * n1 * n0 / (n_total - 1)
    if e_disagree == 0:
        return 1.0
    return 1.0 - o_disagree / e_disagree


def prevalence_by_stratum(records: Iterable[RatingRecord], stratum: dict[str, int],
                          strategy: Aggregation | str = Aggregation.MAJORITY,
                          n_strata: int = 10) -> list[StratumPrevalence]:
    """Group aggregated labels by the 1-based stratum of each comment id."""
    labels: dict[int, list[int]] = {k: [] for k in range(1, n_strata + 1)}
    for r in records:
        if r.comment_id in stratum:
            labels[stratum[r.comment_id]].append(aggregate(r, strategy))
    return [stratum_prevalence(labels[k], k) for k in range(1, n_strata + 1)]


def read_ratings(path: str | Path) -> list[RatingRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "comment_id":
                continue
            if len(row) != 4:
                raise ValueError(f"{path}: expected comment_id,r1,r2,r3, got {row}")
            out.append(RatingRecord(row[0], tuple(int(x) for x in row[1:])))
    return out


def write_ratings(records: Iterable[RatingRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comment_id", "r1", "r2", "r3"])
        for r in records:
            w.writerow([r.comment_id, *r.ratings])


def write_prevalence_table(pol: Sequence[StratumPrevalence], nonpol: Sequence[StratumPrevalence],
                           W_pol, W_nonpol, path: str | Path) -> None:
    """Calibration-table CSV: proportion, samples, prevalence and sd per group."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "W_pol", "n_pol", "p_pol", "s_pol",
                    "W_nonpol", "n_nonpol", "p_nonpol", "s_nonpol"])
        for a, b, wp, wn in zip(pol, nonpol, W_pol, W_nonpol):
            w.writerow([a.k, f"{wp:.3f}", a.n, f"{a.p:.3f}", f"{a.s:.3f}",
                        f"{wn:.3f}", b.n, f"{b.p:.3f}", f"{b.s:.3f}"])
