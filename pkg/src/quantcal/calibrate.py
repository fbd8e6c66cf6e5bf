"""Calibrated prevalence estimation.

Two calibrators (per-stratum human-judged prevalence) are built, one from
known political communities and one from everything else.  Each community
gets the calibrator whose reference strata profile is closer in
Jensen-Shannon divergence; its prevalence is the profile-weighted sum of the
calibrator's forecasts.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .judgments import stratum_prevalence
from .strata import StrataProfile, midpoint_sd, stratum_of

POLITICAL = "political"
NONPOLITICAL = "nonpolitical"


@dataclass(frozen=True)
class Calibrator:
    p: np.ndarray
    s: np.ndarray
    label: str

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if p.shape != s.shape or (p < 0).any() or (p > 1).any() or (s < 0).any():
            raise ValueError("calibrator forecasts must be in [0,1] with non-negative errors")
        if self.label not in (POLITICAL, NONPOLITICAL):
            raise ValueError(f"unknown calibrator label {self.label!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_prevalences(cls, prevalences, label: str) -> "Calibrator":
        return cls(np.array([x.p for x in prevalences]), np.array([x.s for x in prevalences]), label)


def jsd(P, Q) -> float:
    """Jensen-Shannon divergence in bits (not the square-root distance)."""
    p = P.weights if isinstance(P, StrataProfile) else np.asarray(P, dtype=float)
    q = Q.weights if isinstance(Q, StrataProfile) else np.asarray(Q, dtype=float)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return max(0.5 * kl(p) + 0.5 * kl(q), 0.0)


def select_calibrator(D_subr, D_pol, D_nonpol, threshold: float = 0.0) -> tuple[str, float]:
    """Political calibrator iff jsd(subr, pol) - jsd(subr, nonpol) <= threshold."""
    diff = jsd(D_subr, D_pol) - jsd(D_subr, D_nonpol)
    return (POLITICAL if diff <= threshold else NONPOLITICAL), diff


def subreddit_prevalence(profile, calibrator: Calibrator) -> float:
    w = profile.weights if isinstance(profile, StrataProfile) else np.asarray(profile, dtype=float)
    return float(w @ calibrator.p)


@dataclass(frozen=True)
class SubredditEstimate:
    community: str
    profile: StrataProfile
    calibrator_choice: str
    diff: float
    p_subr: float
    N_subr: int


def estimate_community(name: str, counts, D_pol, D_nonpol, calibrators: dict[str, Calibrator],
                       threshold: float = 0.0) -> SubredditEstimate:
    prof = StrataProfile.from_counts(counts)
    choice, diff = select_calibrator(prof, D_pol, D_nonpol, threshold)
    return SubredditEstimate(name, prof, choice, diff,
                             subreddit_prevalence(prof, calibrators[choice]), prof.total_count)


def estimate_communities(strata_counts: dict[str, np.ndarray], D_pol, D_nonpol,
                         calibrators: dict[str, Calibrator], threshold: float = 0.0,
                         ) -> list[SubredditEstimate]:
    return [estimate_community(name, strata_counts[name], D_pol, D_nonpol, calibrators, threshold)
            for name in sorted(strata_counts)]


@dataclass(frozen=True)
class CumulativeEstimate:
    p: float
    s2_pol: float
    s2_nonpol: float
    s2: float
    N: int

    @property
    def s(self) -> float:
        return float(np.sqrt(self.s2))

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.p - z * self.s, self.p + z * self.s


def variance_of(N_k: dict[str, np.ndarray], s_k: dict[str, np.ndarray], N: float | None = None,
                ) -> tuple[float, float, float]:
    """Per-group sum of (N_kg / N)^2 s_kg^2, returned as (pol, nonpol, total).

    ``N`` defaults to the total of all groups' stratum counts.
    """
    if N is None:
        N = float(sum(np.sum(v) for v in N_k.values()))
    if N <= 0:
        raise ValueError("variance needs a positive comment total")
    parts = {g: float(np.sum((np.asarray(N_k[g], dtype=float) / N) ** 2
                             * np.asarray(s_k[g], dtype=float) ** 2)) for g in N_k}
    pol = parts.get(POLITICAL, 0.0)
    nonpol = parts.get(NONPOLITICAL, 0.0)
    return pol, nonpol, pol + nonpol


def cumulative_prevalence(estimates: Sequence[SubredditEstimate],
                          calibrators: dict[str, Calibrator] | None = None,
                          ) -> CumulativeEstimate:
    """Comment-weighted mean prevalence; variance needs ``calibrators``."""
    if not estimates:
        raise ValueError("no community estimates")
    N = sum(e.N_subr for e in estimates)
    p = sum(e.N_subr * e.p_subr for e in estimates) / N
    if calibrators is None:
        return CumulativeEstimate(p, 0.0, 0.0, 0.0, N)
    k = len(estimates[0].profile)
    N_k = {POLITICAL: np.zeros(k), NONPOLITICAL: np.zeros(k)}
    for e in estimates:
        N_k[e.calibrator_choice] += e.profile.counts
    s_k = {g: calibrators[g].s for g in N_k}
    s2p, s2n, s2 = variance_of(N_k, s_k, N)
    return CumulativeEstimate(p, s2p, s2n, s2, N)


@dataclass(frozen=True)
class SweepPoint:
    y: float
    cumulative_share: float
    community_count: int


def threshold_sweep(estimates: Sequence[SubredditEstimate], ys: Iterable[float]) -> list[SweepPoint]:
    """Share of all estimated political comments in communities with
    prevalence below each y, plus the number of communities whose prevalence
    falls in [previous y, y)."""
    if not estimates:
        raise ValueError("no community estimates")
    p = np.array([e.p_subr for e in estimates])
    vol = np.array([e.N_subr * e.p_subr for e in estimates])
    total = vol.sum()
    out = []
    prev = -np.inf
    for y in sorted(ys):
        below = p < y
        share = float(vol[below].sum() / total) if total > 0 else 1.0
        if below.all():
            share = 1.0
        out.append(SweepPoint(float(y), share, int(((p >= prev) & below).sum())))
        prev = y
    return out


def default_grid(step: float = 0.01) -> np.ndarray:
    return np.round(np.arange(step, 1.0 + step + 1e-9, step), 10)


def top_contributors(estimates: Sequence[SubredditEstimate], m: int = 10,
                     political_cutoff: float = 0.25) -> list[SubredditEstimate]:
    """Communities under the political cutoff ranked by N * p_subr."""
    nonpol = [e for e in estimates if e.p_subr < political_cutoff]
    if m >= len(nonpol) and m > 0:
        raise ValueError(f"cannot exclude {m} of {len(nonpol)} non-political communities")
    return sorted(nonpol, key=lambda e: (-e.N_subr * e.p_subr, e.community))[:m]


def exclude_top(estimates: Sequence[SubredditEstimate], m: int = 10, ys=None,
                political_cutoff: float = 0.25,
                ) -> tuple[list[SubredditEstimate], list[SweepPoint]]:
    removed = top_contributors(estimates, m, political_cutoff)
    gone = {e.community for e in removed}
    rest = [e for e in estimates if e.community not in gone]
    return removed, threshold_sweep(rest, default_grid() if ys is None else ys)


def share_below(estimates: Sequence[SubredditEstimate], y: float,
                calibrators: dict[str, Calibrator] | None = None) -> tuple[float, float]:
    """Share of political comments in communities with p_subr < y, with a
    delta-method standard error over the calibrator forecasts (which the
    two sides of the cut share)."""
    a = sum(e.N_subr * e.p_subr for e in estimates if e.p_subr < y)
    b = sum(e.N_subr * e.p_subr for e in estimates if e.p_subr >= y)
    if a + b == 0:
        return 1.0, 0.0
    share = a / (a + b)
    if calibrators is None:
        return share, 0.0
    var = 0.0
    for g, cal in calibrators.items():
        A = sum((e.profile.counts for e in estimates
                 if e.calibrator_choice == g and e.p_subr < y), np.zeros(len(cal.p)))
        B = sum((e.profile.counts for e in estimates
                 if e.calibrator_choice == g and e.p_subr >= y), np.zeros(len(cal.p)))
        var += float(np.sum((A * b - a * B) ** 2 * cal.s ** 2))
    return share, float(np.sqrt(var) / (a + b) ** 2)


# ---------------------------------------------------------------------------
# file formats

def write_calibrators(cals: Iterable[Calibrator], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "p", "s", "label"])
        for c in cals:
            for k, (p, s) in enumerate(zip(c.p, c.s), start=1):
                w.writerow([k, repr(float(p)), repr(float(s)), c.label])


def read_calibrators(path: str | Path) -> dict[str, Calibrator]:
    rows: dict[str, list[tuple[int, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["label"], []).append((int(r["stratum"]), float(r["p"]), float(r["s"])))
    out = {}
    for label, vals in rows.items():
        vals.sort()
        out[label] = Calibrator(np.array([v[1] for v in vals]), np.array([v[2] for v in vals]), label)
    return out


def write_estimates(estimates: Iterable[SubredditEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "N", "diff", "choice", "p_subr"])
        for e in estimates:
            w.writerow([e.community, e.N_subr, repr(float(e.diff)), e.calibrator_choice, repr(float(e.p_subr))])


def write_sweep(points: Iterable[SweepPoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "cumulative_share", "community_count"])
        for pt in points:
            w.writerow([f"{pt.y:.4f}", repr(float(pt.cumulative_share)), pt.community_count])


def write_jsd_pairs(estimates: Iterable[SubredditEstimate], D_pol, D_nonpol, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "jsd_pol", "jsd_nonpol"])
        for e in estimates:
            w.writerow([e.community, repr(float(jsd(e.profile, D_pol))), repr(float(jsd(e.profile, D_nonpol)))])


def calibrator_from_labels(labels_by_stratum: Sequence[Sequence[int]], label: str) -> Calibrator:
    """Per-stratum prevalence and standard error from aggregated labels.

    A stratum with no rated comments falls back to its midpoint forecast with
    the midpoint Bernoulli sd as its error, so it still contributes (large)
    uncertainty if a community has comments there.
    """
    K = len(labels_by_stratum)
    p, s = np.empty(K), np.empty(K)
    for k, labels in enumerate(labels_by_stratum):
        if len(labels):
            sp = stratum_prevalence(labels, k + 1)
            p[k], s[k] = sp.p, sp.s
        else:
            p[k], s[k] = (k + 0.5) / K, midpoint_sd(k + 1, K)
    return Calibrator(p, s, label)


def political_probability(score: float, calibrator: Calibrator) -> float:
    """Calibrated probability that a single comment is political."""
    return float(calibrator.p[stratum_of(score, len(calibrator.p)) - 1])
