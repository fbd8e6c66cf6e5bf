"""Decile strata over classifier scores and Neyman allocation of a rating budget."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

K = 10


def stratum_of(p: float, k: int = K) -> int:
    """1-based decile of a probability; bins are left-closed and the last
    bin also holds 1.0."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"score {p} outside [0, 1]")
    return min(int(p * k), k - 1) + 1


def strata_of(scores, k: int = K) -> np.ndarray:
    """Vectorised :func:`stratum_of`, returning 0-based indices."""
    s = np.asarray(scores, dtype=float)
    if s.size and (np.isnan(s).any() or s.min() < 0.0 or s.max() > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    return np.minimum((s * k).astype(int), k - 1)


@dataclass(frozen=True)
class StrataProfile:
    weights: np.ndarray
    total_count: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"profile weights must be a distribution, got {w}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, weights, total_count: int = 0) -> "StrataProfile":
        """Normalise (possibly rounded) proportions to sum to one."""
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(), total_count)

    @classmethod
    def from_counts(cls, counts) -> "StrataProfile":
        c = np.asarray(counts, dtype=float)
        if c.sum() <= 0:
            raise ValueError("profile of an empty set")
        return cls(c / c.sum(), int(round(c.sum())))

    @property
    def counts(self) -> np.ndarray:
        return self.weights * self.total_count

    def __len__(self):
        return len(self.weights)


def stratum_counts(scores, k: int = K) -> np.ndarray:
    return np.bincount(strata_of(scores, k), minlength=k)


def profile(scores, k: int = K) -> StrataProfile:
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("cannot profile an empty score list")
    return StrataProfile.from_counts(stratum_counts(s, k))


def midpoint_sd(k: int, n_strata: int = K) -> float:
    """Bernoulli sd at the midpoint of the k-th (1-based) stratum."""
    if not 1 <= k <= n_strata:
        raise ValueError(f"stratum {k} outside 1..{n_strata}")
    # both factors from integers so S_k == S_{K+1-k} exactly
    return math.sqrt((k - 0.5) / n_strata * ((n_strata - k + 0.5) / n_strata))


@dataclass(frozen=True)
class AllocationPlan:
    n_k: np.ndarray
    n: int
    floor: int


def _largest_remainder(shares: np.ndarray, n: int) -> np.ndarray:
    base = np.floor(shares).astype(int)
    short = n - base.sum()
    order = np.argsort(-(shares - base), kind="stable")
    base[order[:short]] += 1
    return base


def neyman_allocate(n: int, W: StrataProfile | Sequence[float], floor: int = 50,
                    sd: Sequence[float] | None = None) -> AllocationPlan:
    """Neyman allocation with a per-stratum minimum.

    Strata whose Neyman share falls below ``floor`` are pinned at ``floor``
    and the rest of the budget is split over the remaining strata in
    proportion to their Neyman shares, repeating until nothing falls below
    the floor. Fractional shares are rounded by largest remainder so the
    plan sums to ``n``. Empty strata get nothing.
    """
    w = W.weights if isinstance(W, StrataProfile) else np.asarray(W, dtype=float)
    k = len(w)
    S = np.asarray(sd if sd is not None else [midpoint_sd(i, k) for i in range(1, k + 1)])
    live = w > 0
    if floor * live.sum() > n:
        raise ValueError(f"infeasible floor: {live.sum()} strata x {floor} > budget {n}")
    raw = w * S
    if raw.sum() <= 0:
        raise ValueError("allocation weights are all zero")
    pinned = np.zeros(k, dtype=bool)
    while True:
        free = live & ~pinned
        rest = n - floor * pinned.sum()
        shares = np.zeros(k)
        shares[pinned] = floor
        if free.any():
            shares[free] = rest * raw[free] / raw[free].sum()
        newly = free & (shares < floor)
        if not newly.any():
            break
        pinned |= newly
    return AllocationPlan(_largest_remainder(shares, n), n, floor)


def draw_sample(ids: Sequence[str], scores, plan: AllocationPlan, seed: int,
                ) -> dict[int, list[str]]:
    """Uniform sample without replacement within each stratum.

    Returns 1-based stratum -> sampled ids (in population order).
    """
    ids = np.asarray(ids, dtype=object) if not isinstance(ids, np.ndarray) else ids
    strata = strata_of(scores, len(plan.n_k))
    rng = np.random.default_rng(seed)
    out = {}
    for k, want in enumerate(plan.n_k):
        members = np.flatnonzero(strata == k)
        if want > len(members):
            raise ValueError(f"stratum {k + 1} has {len(members)} comments, "
                             f"plan asks for {want}")
        pick = np.sort(rng.choice(len(members), size=int(want), replace=False))
        out[k + 1] = ids[members[pick]].tolist()
    return out


def write_profile(values, path: str | Path, header: str = "value") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", header])
        for k, v in enumerate(values, start=1):
            w.writerow([k, repr(v.item() if hasattr(v, "item") else v)])


def read_profile(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


def write_sample(sample: Mapping[int, Sequence[str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in sorted(sample):
            for cid in sample[k]:
                fh.write(f"{cid}\n")
