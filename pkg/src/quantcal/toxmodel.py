"""Toxicity of replies: soft toxic/political counts, per-community cells and a
binomial GLMM with a random community intercept.

The model for cell (s, polreply, cross) is

    T ~ Binomial(N, sigmoid(alpha_s + x @ beta)),   alpha_s ~ Normal(0, sigma^2)

with x the 3-way interaction design in (polsub, polreply, cross).  N and T
may be fractional (expected counts), so the likelihood is the weighted
binomial kernel ``T*eta - N*log(1 + e^eta)`` without the combinatorial term.
The random intercept is integrated out per community by adaptive
Gauss-Hermite quadrature centred on the conditional mode.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.special import expit, logsumexp

TERMS = ("intercept", "polsub", "polreply", "cross", "polsub:polreply",
         "polsub:cross", "polreply:cross", "polsub:polreply:cross")

LOG_SIGMA_BOUNDS = (-12.0, 4.0)


@dataclass(frozen=True)
class ReplyObservation:
    reply_id: str
    community: str
    political: float
    toxicity: float
    cross: bool


@dataclass(frozen=True)
class CellCounts:
    community: str
    polreply: int
    cross: int
    N: float
    T: float


def tp_tnp(toxicity: float, political: float) -> tuple[float, float]:
    """Soft counts of toxic-and-political and toxic-and-not-political."""
    if not (0.0 <= toxicity <= 1.0 and 0.0 <= political <= 1.0):
        raise ValueError(f"probabilities outside [0,1]: {toxicity}, {political}")
    tp = toxicity * political
    return tp, toxicity - tp


def build_cells(replies: Iterable[ReplyObservation]) -> list[CellCounts]:
    acc: dict[tuple[str, int, int], list[float]] = defaultdict(lambda: [0.0, 0.0])
    for r in replies:
        tp, tnp = tp_tnp(r.toxicity, r.political)
        c = int(bool(r.cross))
        pol = acc[(r.community, 1, c)]
        pol[0] += r.political
        pol[1] += tp
        non = acc[(r.community, 0, c)]
        non[0] += 1.0 - r.political
        non[1] += tnp
    communities = sorted({k[0] for k in acc})
    out = []
    for s in communities:
        for pr, cr in product((0, 1), (0, 1)):
            if (s, pr, cr) in acc:
                N, T = acc[(s, pr, cr)]
                out.append(CellCounts(s, pr, cr, N, T))
    return out


def design_row(polsub: int, polreply: int, cross: int) -> np.ndarray:
    a, b, c = polsub, polreply, cross
    return np.array([1, a, b, c, a * b, a * c, b * c, a * b * c], dtype=float)


class GlmmError(RuntimeError):
    pass


class SeparationError(GlmmError):
    pass


class ConvergenceError(GlmmError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass
class GlmmData:
    X: np.ndarray
    N: np.ndarray
    T: np.ndarray
    group: np.ndarray
    communities: list[str]
    terms: tuple[str, ...]

    @property
    def n_groups(self) -> int:
        return len(self.communities)


def prepare(cells: Sequence[CellCounts], polsub: Mapping[str, int | bool],
            terms: Sequence[str] = TERMS) -> GlmmData:
    cols = [TERMS.index(t) for t in terms]
    rows = [c for c in cells if c.N > 0]
    if not rows:
        raise GlmmError("no cells with positive trials")
    communities = sorted({c.community for c in rows})
    gidx = {s: i for i, s in enumerate(communities)}
    missing = [s for s in communities if s not in polsub]
    if missing:
        raise GlmmError(f"no polsub flag for communities {missing[:5]}")
    X = np.array([design_row(int(polsub[c.community]), c.polreply, c.cross)[cols] for c in rows])
    N = np.array([c.N for c in rows], dtype=float)
    T = np.array([c.T for c in rows], dtype=float)
    if (T < -1e-12).any() or (T > N + 1e-9).any():
        raise GlmmError("cell counts violate 0 <= T <= N")
    T = np.clip(T, 0.0, N)
    return GlmmData(X, N, T, np.array([gidx[c.community] for c in rows]), communities, tuple(terms))


def check_identifiable(data: GlmmData) -> None:
    if np.linalg.matrix_rank(data.X) < data.X.shape[1]:
        raise GlmmError(f"design is rank deficient for terms {data.terms}; "
                        "some polsub/polreply/cross combination has no data")
    patterns, inv = np.unique(data.X, axis=0, return_inverse=True)
    inv = inv.ravel()
    tsum = np.bincount(inv, weights=data.T, minlength=len(patterns))
    nsum = np.bincount(inv, weights=data.N, minlength=len(patterns))
    for row, t, n in zip(patterns, tsum, nsum):
        if t <= 0 or t >= n:
            kind = "never" if t <= 0 else "always"
            raise SeparationError(f"cell pattern {dict(zip(data.terms, row.astype(int)))} is {kind} "
                                  f"toxic (T={t:g}, N={n:g}); check the input data")


class MarginalLikelihood:
    """Adaptive Gauss-Hermite marginal log-likelihood and its gradient in
    (beta, log sigma)."""

    def __init__(self, data: GlmmData, n_nodes: int = 21):
        if n_nodes < 15:
            raise ValueError("use at least 15 quadrature nodes")
        self.data = data
        self.z, w = np.polynomial.hermite.hermgauss(n_nodes)
        self.logw = np.log(w) + self.z ** 2
        m = len(data.N)
        self.G = sparse.csr_matrix((np.ones(m), (data.group, np.arange(m))),
                                   shape=(data.n_groups, m))

    def _gsum(self, v):
        return self.G @ v

    def modes(self, beta, sigma, iters: int = 100):
        d = self.data
        xb = d.X @ beta
        a = np.zeros(d.n_groups)
        prec = 1.0 / sigma ** 2
        for _ in range(iters):
            mu = expit(xb + a[d.group])
            g = self._gsum(d.T - d.N * mu) - a * prec
            h = self._gsum(d.N * mu * (1 - mu)) + prec
            step = np.clip(g / h, -5.0, 5.0)
            a = a + step
            if np.abs(step).max() < 1e-12:
                break
        mu = expit(xb + a[d.group])
        h = self._gsum(d.N * mu * (1 - mu)) + prec
        return a, h

    def fixed(self, beta):
        d = self.data
        eta = d.X @ beta
        ll = float(np.sum(d.T * eta - d.N * np.logaddexp(0.0, eta)))
        grad = d.X.T @ (d.T - d.N * expit(eta))
        return ll, grad

    def __call__(self, beta, log_sigma):
        """Return (loglik, d/dbeta, d/dlog_sigma, conditional modes)."""
        d = self.data
        sigma = math.exp(log_sigma)
        a_hat, h = self.modes(beta, sigma)
        scale = np.sqrt(2.0 / h)
        A = a_hat[:, None] + scale[:, None] * self.z[None, :]  # groups x nodes
        eta = (d.X @ beta)[:, None] + A[d.group]
        cell = d.T[:, None] * eta - d.N[:, None] * np.logaddexp(0.0, eta)
        logf = (self._gsum(cell) - A ** 2 / (2 * sigma ** 2)
                - 0.5 * math.log(2 * math.pi) - log_sigma)
        terms = self.logw[None, :] + logf
        lse = logsumexp(terms, axis=1)
        ll = float(np.sum(np.log(scale) + lse))
        post = np.exp(terms - lse[:, None])  # normalised node weights
        resid = d.T[:, None] - d.N[:, None] * expit(eta)
        g_beta = d.X.T @ np.sum(post[d.group] * resid, axis=1)
        g_logs = float(np.sum(post * A ** 2) / sigma ** 2 - d.n_groups)
        return ll, g_beta, g_logs, a_hat


@dataclass
class GlmmFit:
    beta: np.ndarray
    se: np.ndarray
    sigma_alpha: float
    alpha: dict[str, float]
    loglik: float
    converged: bool
    terms: tuple[str, ...] = TERMS
    n_iter: int = 0
    trace: list[float] = field(default_factory=list, repr=False)

    def coef(self) -> dict[str, float]:
        return dict(zip(self.terms, self.beta))

    def full_beta(self) -> np.ndarray:
        out = np.zeros(len(TERMS))
        for t, b in zip(self.terms, self.beta):
            out[TERMS.index(t)] = b
        return out


def fit_fixed(data: GlmmData, max_iter: int = 100, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray, float]:
    """Plain (weighted) binomial logistic regression by Newton's method.

    Returns coefficients, standard errors and log-likelihood.
    """
    X, N, T = data.X, data.N, data.T
    rate = np.clip(T.sum() / N.sum(), 1e-6, 1 - 1e-6)
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(rate / (1 - rate)) if data.terms[0] == "intercept" else 0.0
    ll_old = -np.inf
    for _ in range(max_iter):
        eta = X @ beta
        mu = expit(eta)
        ll = float(np.sum(T * eta - N * np.logaddexp(0.0, eta)))
        H = X.T @ (X * (N * mu * (1 - mu))[:, None])
        step = np.linalg.solve(H, X.T @ (T - N * mu))
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand
            ll_c = float(np.sum(T * eta_c - N * np.logaddexp(0.0, eta_c)))
            if ll_c >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        beta = cand
        if abs(ll_c - ll_old) <= tol * max(1.0, abs(ll_c)) and np.abs(t * step).max() < 1e-10:
            ll = ll_c
            break
        ll_old = ll_c
    else:
        raise ConvergenceError("fixed-effects fit did not converge")
    mu = expit(X @ beta)
    H = X.T @ (X * (N * mu * (1 - mu))[:, None])
    return beta, np.sqrt(np.diag(np.linalg.inv(H))), ll


def _numeric_hessian(grad, x, eps=1e-5):
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * eps)
    return 0.5 * (H + H.T)


def fit_glmm(cells: Sequence[CellCounts], polsub: Mapping[str, int | bool],
             terms: Sequence[str] = TERMS, sigma_alpha: float | None = None,
             n_nodes: int = 21, max_iter: int = 500, tol: float = 1e-8) -> GlmmFit:
    """Fit the random-intercept binomial model.

    ``sigma_alpha=None`` estimates the random-effect scale; a number fixes it
    (0 reduces to plain logistic regression). Standard errors come from the
    observed information of the marginal likelihood.
    """
    data = prepare(cells, polsub, terms)
    check_identifiable(data)
    if "polsub" in data.terms:
        for lv in (0, 1):
            n = sum(int(polsub[s]) == lv for s in data.communities)
            if n < 2:
                raise GlmmError(f"need at least 2 communities with polsub={lv}, got {n}")
    beta0, se0, ll0 = fit_fixed(data)
    if sigma_alpha is not None and sigma_alpha == 0:
        return GlmmFit(beta0, se0, 0.0, {s: 0.0 for s in data.communities}, ll0, True, data.terms)

    lik = MarginalLikelihood(data, n_nodes)
    p = len(beta0)
    trace: list[float] = []

    if sigma_alpha is not None:
        log_s = math.log(sigma_alpha)

        def negll(theta):
            ll, gb, _, _ = lik(theta, log_s)
            return -ll, -gb

        x0 = beta0
        bounds = None
    else:
        def negll(theta):
            ll, gb, gs, _ = lik(theta[:p], theta[p])
            return -ll, -np.r_[gb, gs]

        x0 = np.r_[beta0, math.log(0.5)]
        bounds = [(None, None)] * p + [LOG_SIGMA_BOUNDS]

    res = optimize.minimize(negll, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            callback=lambda xk: trace.append(-negll(xk)[0]),
                            options={"maxiter": max_iter, "ftol": tol * 1e-2, "gtol": 1e-7,
                                     "maxcor": 20})
    theta = res.x
    f, g = negll(theta)
    # a line-search stop with a tiny projected gradient is still an optimum
    gproj = g.copy()
    if bounds is not None:
        at_lo = theta[p] <= LOG_SIGMA_BOUNDS[0] + 1e-8 and g[p] > 0
        at_hi = theta[p] >= LOG_SIGMA_BOUNDS[1] - 1e-8 and g[p] < 0
        if at_lo or at_hi:
            gproj[p] = 0.0
    scale = max(1.0, abs(f))
    converged = res.success or np.abs(gproj).max() < 1e-4 * scale
    if not converged or res.nit >= max_iter:
        raise ConvergenceError(f"GLMM fit did not converge after {res.nit} iterations: "
                               f"{res.message}", trace)
    if len(trace) >= 2:
        rel = abs(trace[-1] - trace[-2]) / max(abs(trace[-1]), 1e-12)
        if rel > tol and np.abs(gproj).max() > 1e-3:
            raise ConvergenceError(f"relative log-likelihood change {rel:.3g} above {tol}", trace)

    beta = theta[:p]
    log_s = theta[p] if sigma_alpha is None else math.log(sigma_alpha)
    ll, _, _, a_hat = lik(beta, log_s)

    def grad_beta(b):
        return -lik(b, log_s)[1]

    if sigma_alpha is None and log_s > LOG_SIGMA_BOUNDS[0] + 1.0:
        def grad_full(t):
            return negll(t)[1]
        H = _numeric_hessian(grad_full, theta)
        cov = np.linalg.pinv(H)[:p, :p]
    else:
        cov = np.linalg.pinv(_numeric_hessian(grad_beta, beta))
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return GlmmFit(beta, se, math.exp(log_s), dict(zip(data.communities, a_hat)), ll, True,
                   data.terms, int(res.nit), trace)


CELL_ORDER = tuple(product((0, 1), (0, 1), (0, 1)))


def predict_cell_means(fit: GlmmFit) -> dict[tuple[int, int, int], float]:
    """Population-level toxicity for each (polsub, polreply, cross) at alpha = 0."""
    beta = fit.full_beta()
    return {cell: float(expit(design_row(*cell) @ beta)) for cell in CELL_ORDER}


# ---------------------------------------------------------------------------
# file formats

def write_cells(cells: Iterable[CellCounts], polsub: Mapping[str, int | bool], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "polsub", "polreply", "cross", "N", "T"])
        for c in cells:
            w.writerow([c.community, int(polsub[c.community]), c.polreply, c.cross, repr(float(c.N)), repr(float(c.T))])


def read_cells(path: str | Path) -> tuple[list[CellCounts], dict[str, int]]:
    cells, polsub = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            cells.append(CellCounts(r["community"], int(r["polreply"]), int(r["cross"]),
                                    float(r["N"]), float(r["T"])))
            polsub[r["community"]] = int(r["polsub"])
    return cells, polsub


def write_fit(fit: GlmmFit, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "estimate", "std_error"])
        for t, b, s in zip(fit.terms, fit.beta, fit.se):
            w.writerow([t, f"{b:.10g}", f"{s:.10g}"])
        w.writerow(["sigma_alpha", f"{fit.sigma_alpha:.10g}", ""])
        w.writerow(["loglik", f"{fit.loglik:.10g}", ""])


def write_cell_means(means: Mapping[tuple[int, int, int], float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["polsub", "polreply", "cross", "probability"])
        for (a, b, c), p in sorted(means.items()):
            w.writerow([a, b, c, f"{p:.10g}"])


def _parent_key(parent_id: str | None) -> str | None:
    if not parent_id:
        return None
    # pushshift prefixes comment parents with t1_, submissions with t3_
    if parent_id.startswith("t1_"):
        return parent_id[3:]
    if parent_id.startswith("t3_"):
        return None
    return parent_id


def replies_from_corpus(corpus, leaning: Mapping[str, str], political: Mapping[str, float],
                        date_range: tuple[int, int] | None = None) -> list[ReplyObservation]:
    """Reply side of parent-reply pairs where both authors have a known
    left/right leaning and the reply has toxicity and political scores."""
    by_id = {r.id: r for r in corpus}
    out = []
    for r in corpus:
        pid = _parent_key(r.parent_id)
        if pid is None or pid not in by_id or r.toxicity is None or r.id not in political:
            continue
        if date_range is not None and not date_range[0] <= r.created_at <= date_range[1]:
            continue
        a = str(getattr(leaning.get(r.author), "value", leaning.get(r.author)))
        b = str(getattr(leaning.get(by_id[pid].author), "value", leaning.get(by_id[pid].author)))
        if a not in ("left", "right") or b not in ("left", "right"):
            continue
        out.append(ReplyObservation(r.id, r.community, float(political[r.id]), r.toxicity, a != b))
    return out
