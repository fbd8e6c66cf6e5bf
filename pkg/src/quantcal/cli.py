"""Stage-per-subcommand pipeline driver.

Every stage reads its inputs from the workspace (or the paths in the
config), writes its outputs there, and records a manifest under
``manifests/<stage>.json`` with the config, its hash, the seed and sha256
digests of inputs and outputs.  Downstream stages refuse to run on
artifacts that are missing, were produced under a different config, or
were modified after being written.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import calibrate as cal
from . import corpus as corpus_mod
from . import judgments, partisan, strata, synth, textclf, toxmodel

log = logging.getLogger("quantcal")

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_UPSTREAM = 3
EXIT_LOCKED = 4


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"config field {field_name!r}: {msg}")
        self.field = field_name


class UpstreamError(RuntimeError):
    pass


class WorkspaceLocked(RuntimeError):
    pass


@dataclass
class FilterSection:
    min_community_comments: int = 1000
    min_body_chars: int = 50
    excluded_authors: list[str] = field(default_factory=list)
    date_range: list[int] | None = None


@dataclass
class SynthSection:
    runs: int = 200
    n_communities: int = 50
    comments: int = 2000
    n_pol: int = 2000
    n_nonpol: int = 8000
    floor: int = 50
    rater_accuracy: float = 1.0
    spec: str | None = None  # optional SynthSpec JSON used for every run (seed varied)


@dataclass
class PipelineConfig:
    corpus: str | None = None
    toxicity: str | None = None
    ratings: str | None = None
    seed_lists: str | None = None
    political_communities: list[str] = field(default_factory=list)
    filter: FilterSection = field(default_factory=FilterSection)
    lam: float | None = None
    lambda_grid: list[float] = field(default_factory=lambda: list(textclf.DEFAULT_LAMBDA_GRID))
    cv_folds: int = 5
    min_ngram_count: int = 5
    max_train_per_class: int | None = None
    political_cutoff: float = 0.25
    calibrator_t: float = 0.0
    aggregation: str = "majority"
    n_pol: int = 2000
    n_nonpol: int = 8000
    floor: int = 50
    seed: int = 0
    exclude_top_m: int = 10
    sweep_step: float = 0.01
    tox_date_range: list[int] | None = None
    n_nodes: int = 21
    synth: SynthSection = field(default_factory=SynthSection)
    base_dir: str = "."  # resolves relative paths; excluded from the hash

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        filt = FilterSection(**raw.pop("filter", {}))
        syn = SynthSection(**raw.pop("synth", {}))
        raw.setdefault("base_dir", str(base_dir))
        cfg = cls(filter=filt, synth=syn, **raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
        return cls.from_dict(raw, base_dir=str(path.resolve().parent))

    def validate(self) -> None:
        for name in ("political_cutoff", "calibrator_t"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"{v} outside [0, 1]")
        if self.floor < 0:
            raise ConfigError("floor", "must be non-negative")
        for name in ("n_pol", "n_nonpol"):
            if getattr(self, name) < strata.K * self.floor:
                raise ConfigError(name, f"budget {getattr(self, name)} below {strata.K} x floor")
        try:
            judgments.Aggregation(self.aggregation)
        except ValueError:
            raise ConfigError("aggregation", f"unknown strategy {self.aggregation!r}") from None
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lam", "must be positive")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ConfigError("cv_folds", "use 0 to skip or at least 2")
        if not 0 < self.sweep_step <= 1:
            raise ConfigError("sweep_step", "must be in (0, 1]")
        if self.synth.n_pol < strata.K * self.synth.floor or self.synth.n_nonpol < strata.K * self.synth.floor:
            raise ConfigError("synth", "budgets below 10 x floor")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("base_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Context:
    cfg: PipelineConfig
    ws: Path
    threads: int = 1
    inputs: dict[str, str] = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.ws / name

    def external(self, field_name: str, required: bool = True) -> Path | None:
        p = self.cfg.resolve(getattr(self.cfg, field_name))
        if p is None:
            if required:
                raise ConfigError(field_name, "required by this stage but not set")
            return None
        if not p.exists():
            raise ConfigError(field_name, f"file {p} does not exist")
        self.inputs[field_name] = sha256_file(p)
        return p


@dataclass
class Stage:
    name: str
    func: Callable[[Context], None]
    needs: tuple[str, ...]
    outputs: tuple[str, ...]
    optional_needs: tuple[str, ...] = ()


STAGES: dict[str, Stage] = {}


def stage(name, needs=(), outputs=(), optional_needs=()):
    def deco(func):
        STAGES[name] = Stage(name, func, tuple(needs), tuple(outputs), tuple(optional_needs))
        return func
    return deco


def manifest_path(ws: Path, name: str) -> Path:
    return ws / "manifests" / f"{name}.json"


def check_upstream(ctx: Context, name: str, optional: bool = False) -> bool:
    mpath = manifest_path(ctx.ws, name)
    if not mpath.exists():
        if optional:
            return False
        raise UpstreamError(f"missing upstream artifact from stage '{name}'; run `quantcal {name}` first")
    man = json.loads(mpath.read_text(encoding="utf-8"))
    if man["config_hash"] != ctx.cfg.hash():
        raise UpstreamError(f"stale input: stage '{name}' ran with config {man['config_hash']}, "
                            f"current config is {ctx.cfg.hash()}; rerun `quantcal {name}`")
    for out, digest in man["outputs"].items():
        p = ctx.path(out)
        if not p.exists():
            raise UpstreamError(f"missing upstream artifact {out} from stage '{name}'")
        if sha256_file(p) != digest:
            raise UpstreamError(f"upstream artifact {out} from stage '{name}' changed after it was "
                                f"written; rerun `quantcal {name}`")
        ctx.inputs[f"{name}:{out}"] = digest
    return True


@contextlib.contextmanager
def workspace_lock(ws: Path):
    ws.mkdir(parents=True, exist_ok=True)
    lock = ws / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise WorkspaceLocked(f"workspace {ws} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def run_stage(name: str, cfg: PipelineConfig, ws: Path, threads: int = 1) -> dict:
    st = STAGES[name]
    ctx = Context(cfg, ws, threads)
    for up in st.needs:
        check_upstream(ctx, up)
    for up in st.optional_needs:
        check_upstream(ctx, up, optional=True)
    log.info("stage %s (config %s, seed %d)", name, cfg.hash(), cfg.seed)
    st.func(ctx)
    manifest = {
        "stage": name,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": dict(sorted(ctx.inputs.items())),
        "outputs": {o: sha256_file(ctx.path(o)) for o in st.outputs},
    }
    mpath = manifest_path(ws, name)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# helpers shared by stages

def _load_corpus(ctx):
    return corpus_mod.read_corpus(ctx.path("corpus.jsonl"))


def _political_set(ctx) -> set[str]:
    if not ctx.cfg.political_communities:
        raise ConfigError("political_communities", "the known political community list is empty")
    return set(ctx.cfg.political_communities)


def _write_kv(path: Path, items: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def _read_kv(path: Path) -> dict[str, str]:
    return dict(line.split("=", 1) for line in path.read_text(encoding="utf-8").splitlines() if "=" in line)


def _strata_counts(ctx) -> dict[str, np.ndarray]:
    out = {}
    with open(ctx.path("strata_counts.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["community"]] = np.array([int(row[f"s{k}"]) for k in range(1, strata.K + 1)])
    return out


def _reference_profiles(ctx):
    return (strata.StrataProfile.from_weights(strata.read_profile(ctx.path("profile_pol.csv"))),
            strata.StrataProfile.from_weights(strata.read_profile(ctx.path("profile_nonpol.csv"))))


def _estimates(ctx) -> list[cal.SubredditEstimate]:
    counts = _strata_counts(ctx)
    out = []
    with open(ctx.path("estimates.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            prof = strata.StrataProfile.from_counts(counts[row["community"]])
            out.append(cal.SubredditEstimate(row["community"], prof, row["choice"], float(row["diff"]),
                                             float(row["p_subr"]), int(row["N"])))
    return out


def _grid(ctx):
    return cal.default_grid(ctx.cfg.sweep_step)


# ---------------------------------------------------------------------------
# stages

@stage("ingest", outputs=("corpus.jsonl", "filter_report.txt"))
def _ingest(ctx: Context):
    f = ctx.cfg.filter
    fc = corpus_mod.FilterConfig(f.min_community_comments, f.min_body_chars,
                                 frozenset(f.excluded_authors),
                                 tuple(f.date_range) if f.date_range else None)
    tox_path = ctx.external("toxicity", required=False)
    tox = corpus_mod.read_toxicity_csv(tox_path) if tox_path else None
    records, report = corpus_mod.ingest(corpus_mod.iter_jsonl(ctx.external("corpus")), fc, tox)
    corpus_mod.write_corpus(records, ctx.path("corpus.jsonl"))
    ctx.path("filter_report.txt").write_text(report.to_text(), encoding="utf-8")
    log.info("ingest kept %d of %d records", report.retained, report.input)


@stage("train-clf", needs=("ingest",), outputs=("model.txt", "cv_metrics.txt"))
def _train(ctx: Context):
    cfg = ctx.cfg
    pol = _political_set(ctx)
    records = _load_corpus(ctx)
    pos = [r.body for r in records if r.community in pol]
    neg = [r.body for r in records if r.community not in pol]
    if cfg.max_train_per_class:
        rng = np.random.default_rng([cfg.seed, 11])
        pos = [pos[i] for i in sorted(rng.permutation(len(pos))[:cfg.max_train_per_class])]
        neg = [neg[i] for i in sorted(rng.permutation(len(neg))[:cfg.max_train_per_class])]
    metrics = {}
    lam = cfg.lam
    if lam is None:
        if cfg.cv_folds < 2:
            raise ConfigError("lam", "set lam or cv_folds >= 2 to select it")
        lam, results = textclf.select_lambda(pos, neg, cfg.lambda_grid, cfg.cv_folds, cfg.seed,
                                             cfg.min_ngram_count)
        for g, m in results.items():
            metrics[f"grid_accuracy[{g!r}]"] = repr(float(m.accuracy))
        cv = results[lam]
    elif cfg.cv_folds >= 2:
        cv = textclf.cross_validate(pos, neg, cfg.cv_folds, lam, cfg.seed, cfg.min_ngram_count)
    else:
        cv = None
    model = textclf.train(pos, neg, lam, min_count=cfg.min_ngram_count)
    model.save(ctx.path("model.txt"))
    metrics.update({"lambda": repr(float(lam)), "n_positive": len(pos), "n_negative": len(neg),
                    "vocabulary": len(model.vocabulary), "nonzero_weights": model.nonzero})
    if cv is not None:
        metrics.update({"folds": cv.folds, "accuracy": repr(float(cv.accuracy)),
                        "false_positive_rate": repr(float(cv.false_positive_rate)),
                        "false_negative_rate": repr(float(cv.false_negative_rate))})
    _write_kv(ctx.path("cv_metrics.txt"), metrics)


@stage("score", needs=("ingest", "train-clf"), outputs=("scores.csv",))
def _score(ctx: Context):
    records = _load_corpus(ctx)
    model = textclf.ProxyModel.load(ctx.path("model.txt"))
    probs = model.predict_proba([r.body for r in records])
    textclf.write_scores([r.id for r in records], probs, ctx.path("scores.csv"))


@stage("stratify", needs=("ingest", "score"),
       outputs=("profile_pol.csv", "profile_nonpol.csv", "strata_counts.csv"))
def _stratify(ctx: Context):
    pol = _political_set(ctx)
    records = _load_corpus(ctx)
    scores = textclf.read_scores(ctx.path("scores.csv"))
    by_comm: dict[str, list[float]] = {}
    for r in records:
        by_comm.setdefault(r.community, []).append(scores[r.id])
    pol_scores = [s for c, v in by_comm.items() if c in pol for s in v]
    non_scores = [s for c, v in by_comm.items() if c not in pol for s in v]
    if not pol_scores or not non_scores:
        raise ConfigError("political_communities", "both community groups need comments")
    strata.write_profile(strata.profile(pol_scores).weights, ctx.path("profile_pol.csv"), "W")
    strata.write_profile(strata.profile(non_scores).weights, ctx.path("profile_nonpol.csv"), "W")
    with open(ctx.path("strata_counts.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community"] + [f"s{k}" for k in range(1, strata.K + 1)])
        for c in sorted(by_comm):
            w.writerow([c, *strata.stratum_counts(by_comm[c]).tolist()])


@stage("allocate", needs=("stratify",), outputs=("allocation_pol.csv", "allocation_nonpol.csv"))
def _allocate(ctx: Context):
    D_pol, D_non = _reference_profiles(ctx)
    for group, prof, n in (("pol", D_pol, ctx.cfg.n_pol), ("nonpol", D_non, ctx.cfg.n_nonpol)):
        plan = strata.neyman_allocate(n, prof, ctx.cfg.floor)
        strata.write_profile(plan.n_k.tolist(), ctx.path(f"allocation_{group}.csv"), "n")


@stage("sample-for-rating", needs=("ingest", "score", "allocate"),
       outputs=("sample_pol.txt", "sample_nonpol.txt"))
def _sample(ctx: Context):
    pol = _political_set(ctx)
    records = _load_corpus(ctx)
    scores = textclf.read_scores(ctx.path("scores.csv"))
    for i, group in enumerate(("pol", "nonpol")):
        members = [r.id for r in records if (r.community in pol) == (group == "pol")]
        n_k = strata.read_profile(ctx.path(f"allocation_{group}.csv")).astype(int)
        plan = strata.AllocationPlan(n_k, int(n_k.sum()), ctx.cfg.floor)
        sample = strata.draw_sample(members, [scores[m] for m in members], plan,
                                    seed=ctx.cfg.seed * 2 + i)
        strata.write_sample(sample, ctx.path(f"sample_{group}.txt"))


@stage("build-calibrators", needs=("score", "sample-for-rating"),
       outputs=("calibrators.csv", "prevalence_table.csv", "ratings_summary.txt"))
def _build_calibrators(ctx: Context):
    cfg = ctx.cfg
    scores = textclf.read_scores(ctx.path("scores.csv"))
    ratings = {r.comment_id: r for r in judgments.read_ratings(ctx.external("ratings"))}
    strategy = judgments.Aggregation(cfg.aggregation)
    cals, tables, W, rated = {}, {}, {}, []
    for group, label in (("pol", cal.POLITICAL), ("nonpol", cal.NONPOLITICAL)):
        ids = ctx.path(f"sample_{group}.txt").read_text(encoding="utf-8").split()
        missing = [i for i in ids if i not in ratings]
        if missing:
            raise UpstreamError(f"{len(missing)} sampled comments have no ratings (e.g. {missing[0]})")
        by_k: list[list[int]] = [[] for _ in range(strata.K)]
        for i in ids:
            by_k[strata.stratum_of(scores[i]) - 1].append(judgments.aggregate(ratings[i], strategy))
            rated.append(ratings[i])
        cals[label] = cal.calibrator_from_labels(by_k, label)
        tables[label] = [judgments.StratumPrevalence(k + 1, len(v), cals[label].p[k], cals[label].s[k])
                         for k, v in enumerate(by_k)]
        W[label] = strata.read_profile(ctx.path(f"profile_{group}.csv"))
    cal.write_calibrators([cals[cal.POLITICAL], cals[cal.NONPOLITICAL]], ctx.path("calibrators.csv"))
    judgments.write_prevalence_table(tables[cal.POLITICAL], tables[cal.NONPOLITICAL],
                                     W[cal.POLITICAL], W[cal.NONPOLITICAL],
                                     ctx.path("prevalence_table.csv"))
    split = judgments.agreement_breakdown(rated)
    summary = {f"share_{i}_positive": f"{v:.6f}" for i, v in enumerate(split)}
    for s in judgments.Aggregation:
        summary[f"prevalence_{s.value}"] = f"{np.mean([judgments.aggregate(r, s) for r in rated]):.6f}"
    summary["krippendorff_alpha"] = f"{judgments.krippendorff_alpha(rated):.6f}"
    summary["rated"] = len(rated)
    _write_kv(ctx.path("ratings_summary.txt"), summary)


@stage("estimate", needs=("stratify", "build-calibrators"),
       outputs=("estimates.csv", "cumulative.txt", "jsd_pairs.csv"))
def _estimate(ctx: Context):
    D_pol, D_non = _reference_profiles(ctx)
    cals = cal.read_calibrators(ctx.path("calibrators.csv"))
    ests = cal.estimate_communities(_strata_counts(ctx), D_pol, D_non, cals, ctx.cfg.calibrator_t)
    cal.write_estimates(ests, ctx.path("estimates.csv"))
    cal.write_jsd_pairs(ests, D_pol, D_non, ctx.path("jsd_pairs.csv"))
    cum = cal.cumulative_prevalence(ests, cals)
    lo, hi = cum.interval()
    _write_kv(ctx.path("cumulative.txt"), {
        "p": repr(float(cum.p)), "s": repr(float(cum.s)), "s2_pol": repr(float(cum.s2_pol)),
        "s2_nonpol": repr(float(cum.s2_nonpol)), "s2": repr(float(cum.s2)), "N": cum.N,
        "ci95_low": repr(float(lo)), "ci95_high": repr(float(hi)),
        "jsd_reference_profiles": repr(float(cal.jsd(D_pol, D_non))),
        "calibrator_t": repr(float(ctx.cfg.calibrator_t))})


@stage("sweep", needs=("stratify", "estimate"), outputs=("sweep.csv",))
def _sweep(ctx: Context):
    cal.write_sweep(cal.threshold_sweep(_estimates(ctx), _grid(ctx)), ctx.path("sweep.csv"))


@stage("exclude-top", needs=("stratify", "estimate"), outputs=("excluded.csv", "sweep_excluded.csv"))
def _exclude(ctx: Context):
    removed, pts = cal.exclude_top(_estimates(ctx), ctx.cfg.exclude_top_m, _grid(ctx),
                                   ctx.cfg.political_cutoff)
    with open(ctx.path("excluded.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "N", "p_subr", "political_comments"])
        for e in removed:
            w.writerow([e.community, e.N_subr, repr(float(e.p_subr)), repr(float(e.N_subr * e.p_subr))])
    cal.write_sweep(pts, ctx.path("sweep_excluded.csv"))


@stage("leanings", needs=("ingest",), outputs=("leanings.csv",))
def _leanings(ctx: Context):
    p = ctx.external("seed_lists", required=False)
    seeds = partisan.SeedLists.load(p) if p else partisan.SeedLists()
    partisan.write_leanings(partisan.leanings(_load_corpus(ctx), seeds), ctx.path("leanings.csv"))


@stage("tox-cells", needs=("ingest", "score", "stratify", "estimate", "leanings"),
       outputs=("cells.csv",))
def _tox_cells(ctx: Context):
    records = _load_corpus(ctx)
    scores = textclf.read_scores(ctx.path("scores.csv"))
    cals = cal.read_calibrators(ctx.path("calibrators.csv"))
    ests = {e.community: e for e in _estimates(ctx)}
    political = {r.id: cal.political_probability(scores[r.id], cals[ests[r.community].calibrator_choice])
                 for r in records}
    polsub = {c: int(e.p_subr >= ctx.cfg.political_cutoff) for c, e in ests.items()}
    lean = partisan.read_leanings(ctx.path("leanings.csv"))
    dr = tuple(ctx.cfg.tox_date_range) if ctx.cfg.tox_date_range else None
    replies = toxmodel.replies_from_corpus(records, lean, political, dr)
    toxmodel.write_cells(toxmodel.build_cells(replies), polsub, ctx.path("cells.csv"))


@stage("tox-fit", needs=("tox-cells",), outputs=("glmm_fit.csv", "cell_means.csv"))
def _tox_fit(ctx: Context):
    cells, polsub = toxmodel.read_cells(ctx.path("cells.csv"))
    fit = toxmodel.fit_glmm(cells, polsub, n_nodes=ctx.cfg.n_nodes)
    toxmodel.write_fit(fit, ctx.path("glmm_fit.csv"))
    toxmodel.write_cell_means(toxmodel.predict_cell_means(fit), ctx.path("cell_means.csv"))


def _synth_run(args):
    seed, sec = args
    if sec.spec:
        spec = synth.SynthSpec.from_json(Path(sec.spec).read_text(encoding="utf-8"))
        spec.seed = seed
        spec.rater_accuracy = sec.rater_accuracy
    else:
        spec = synth.coverage_spec(seed, sec.n_communities, sec.comments,
                                   rater_accuracy=sec.rater_accuracy)
    rep = synth.evaluate_pipeline(synth.generate(spec), n_pol=sec.n_pol, n_nonpol=sec.n_nonpol,
                                  floor=sec.floor)
    return seed, rep


@stage("synth-validate", outputs=("synth_coverage.csv", "synth_report.txt"))
def _synth_validate(ctx: Context):
    sec = dataclasses.replace(ctx.cfg.synth)
    if sec.spec:
        p = ctx.cfg.resolve(sec.spec)
        ctx.inputs["synth.spec"] = sha256_file(p)
        sec.spec = str(p)
    jobs = [(ctx.cfg.seed + i, sec) for i in range(sec.runs)]
    if ctx.threads > 1:
        with ProcessPoolExecutor(ctx.threads) as ex:
            results = list(ex.map(_synth_run, jobs))
    else:
        results = [_synth_run(j) for j in jobs]
    with open(ctx.path("synth_coverage.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "truth", "naive", "corrected", "s", "covered", "sweep_max_deviation",
                    "misassigned"])
        for seed, r in results:
            w.writerow([seed, f"{r.truth:.10f}", f"{r.naive:.10f}", f"{r.corrected:.10f}",
                        f"{r.s:.10f}", int(r.covered), f"{r.sweep_max_deviation:.10f}", r.misassigned])
    reps = [r for _, r in results]
    coverage = float(np.mean([r.covered for r in reps]))
    mae_c = float(np.mean([abs(r.corrected_error) for r in reps]))
    mae_n = float(np.mean([abs(r.naive_error) for r in reps]))
    _write_kv(ctx.path("synth_report.txt"), {
        "runs": len(reps), "coverage": f"{coverage:.4f}",
        "mean_abs_corrected_error": f"{mae_c:.6f}", "mean_abs_naive_error": f"{mae_n:.6f}",
        "passed": int(coverage >= 0.90 and mae_c < mae_n)})


@stage("report", needs=("build-calibrators", "estimate", "sweep", "exclude-top"),
       optional_needs=("tox-fit", "train-clf"),
       outputs=("table1.csv", "figure3.csv", "figure3_excluded.csv", "figure4.csv", "summary.txt"))
def _report(ctx: Context):
    cfg = ctx.cfg
    ws = ctx.ws
    (ws / "table1.csv").write_bytes((ws / "prevalence_table.csv").read_bytes())
    (ws / "figure3.csv").write_bytes((ws / "sweep.csv").read_bytes())
    (ws / "figure3_excluded.csv").write_bytes((ws / "sweep_excluded.csv").read_bytes())
    if (ws / "cell_means.csv").exists() and manifest_path(ws, "tox-fit").exists():
        (ws / "figure4.csv").write_bytes((ws / "cell_means.csv").read_bytes())
    else:
        (ws / "figure4.csv").write_text("polsub,polreply,cross,probability\n", encoding="utf-8")
    ests = _estimates(ctx)
    cals = cal.read_calibrators(ctx.path("calibrators.csv"))
    cum = cal.cumulative_prevalence(ests, cals)
    share, se = cal.share_below(ests, cfg.political_cutoff, cals)
    removed = {r["community"] for r in csv.DictReader(open(ws / "excluded.csv", encoding="utf-8"))}
    share_x, se_x = cal.share_below([e for e in ests if e.community not in removed],
                                    cfg.political_cutoff, cals)
    summary = {
        "communities": len(ests),
        "comments": cum.N,
        "prevalence": f"{cum.p:.6f}",
        "prevalence_ci95_halfwidth": f"{1.96 * cum.s:.6f}",
        "political_cutoff": cfg.political_cutoff,
        "share_below_cutoff": f"{share:.6f}",
        "share_below_cutoff_ci95_halfwidth": f"{1.96 * se:.6f}",
        "share_below_cutoff_after_exclusion": f"{share_x:.6f}",
        "share_below_cutoff_after_exclusion_ci95_halfwidth": f"{1.96 * se_x:.6f}",
        "political_calibrator_communities": sum(e.calibrator_choice == cal.POLITICAL for e in ests),
        "communities_above_cutoff": sum(e.p_subr >= cfg.political_cutoff for e in ests),
    }
    for name in ("cv_metrics.txt", "ratings_summary.txt"):
        if (ws / name).exists():
            summary.update({f"{name.split('.')[0]}.{k}": v for k, v in _read_kv(ws / name).items()})
    _write_kv(ws / "summary.txt", summary)


PIPELINE = ("ingest", "train-clf", "score", "stratify", "allocate", "sample-for-rating",
            "build-calibrators", "estimate", "sweep", "exclude-top", "leanings", "tox-cells",
            "tox-fit", "report")


# ---------------------------------------------------------------------------
# entry point

def replay(manifest_file: Path, ws: Path | None = None, threads: int = 1) -> tuple[bool, list[str]]:
    man = json.loads(Path(manifest_file).read_text(encoding="utf-8"))
    raw = dict(man["config"])
    cfg = PipelineConfig.from_dict(raw)
    ws = ws or Path(manifest_file).resolve().parent.parent
    with workspace_lock(ws):
        new = run_stage(man["stage"], cfg, ws, threads)
    diff = [o for o, d in man["outputs"].items() if new["outputs"].get(o) != d]
    return not diff, diff


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline config (JSON)")
    common.add_argument("--workspace", type=Path,
                        help="workspace directory (default: $QUANTCAL_WORKSPACE or ./workspace)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="quantcal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    sub.add_parser("run-all", parents=[common], help="run every stage in order")
    rp = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare outputs")
    rp.add_argument("manifest", type=Path)
    fx = sub.add_parser("make-fixture", help="write the bundled synthetic text fixture")
    fx.add_argument("directory", type=Path)
    fx.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    current = args.command
    try:
        if args.command == "make-fixture":
            synth.write_text_fixture(args.directory, args.seed)
            return 0
        if args.command == "replay":
            ok, diff = replay(args.manifest, args.workspace, args.threads)
            if not ok:
                print(f"replay mismatch in {', '.join(diff)}", file=sys.stderr)
                return EXIT_ERROR
            print("replay identical")
            return 0
        ws = args.workspace or Path(os.environ.get("QUANTCAL_WORKSPACE", "workspace"))
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        names = PIPELINE if args.command == "run-all" else (args.command,)
        with workspace_lock(ws):
            for current in names:
                run_stage(current, cfg, ws, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UpstreamError as exc:
        print(f"error in stage '{current}': {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except WorkspaceLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOCKED
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error in stage '{current}': {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
