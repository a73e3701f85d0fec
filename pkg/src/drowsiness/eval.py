"""Leave-one-subject-out evaluation, scoring and significance tests."""

from __future__ import annotations

import itertools
import json
import logging
import multiprocessing
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .core import PipelineConfig
from .errors import ConfigError, DataError
from .numerics import pearson_cc, rmse
from .pipelines import ALGORITHMS, AlgorithmId, SubjectFeatures, run_algorithm

log = logging.getLogger(__name__)

METRICS = ("rmse", "cc")
METRIC_NAMES = {"rmse": "RMSE", "cc": "CC"}


@dataclass(frozen=True)
class ScoreCell:
    rmse: float
    cc: float
    cc_defined: bool = True


def score(pred, truth) -> ScoreCell:
    """RMSE and CC; a constant prediction gets CC = 0 and ``cc_defined=False``."""
    r = rmse(pred, truth)
    try:
        return ScoreCell(r, pearson_cc(pred, truth))
    except DataError:
        return ScoreCell(r, 0.0, False)


@dataclass
class AnovaResult:
    F: float
    p: float
    df_effect: int
    df_residual: int
    ss_effect: float
    ss_block: float
    ss_residual: float


@dataclass
class EvalReport:
    algorithms: list[AlgorithmId]
    subjects: list[str]
    n_repeats: int
    scores: dict[tuple[AlgorithmId, str, int], ScoreCell]
    predictions: dict[tuple[AlgorithmId, str, int], np.ndarray] = field(default_factory=dict)
    grid_times: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for a, s, r in itertools.product(self.algorithms, self.subjects, range(self.n_repeats)):
            if (a, s, r) not in self.scores:
                raise DataError(f"missing score cell {(a.value, s, r)}")

    def matrix(self, metric: str) -> np.ndarray:
        """algorithm x subject matrix of repeat means."""
        M = np.empty((len(self.algorithms), len(self.subjects)))
        for i, a in enumerate(self.algorithms):
            for j, s in enumerate(self.subjects):
                M[i, j] = np.mean([getattr(self.scores[a, s, r], metric)
                                   for r in range(self.n_repeats)])
        return M

    def averages(self) -> dict[str, np.ndarray]:
        return {m: self.matrix(m).mean(axis=1) for m in METRICS}

    def anova(self, metric: str) -> AnovaResult:
        return anova_two_way(self.matrix(metric))

    def pairwise(self, metric: str) -> np.ndarray:
        """FDR-adjusted Dunn p-values, algorithm x algorithm."""
        M = self.matrix(metric)
        raw = dunn_pairwise(list(M))
        a = len(self.algorithms)
        iu = np.tril_indices(a, -1)
        adj = np.ones((a, a))
        adj[iu] = fdr_adjust(raw[iu])
        adj.T[iu] = adj[iu]
        return adj

    @property
    def undefined_cc(self) -> list[tuple[str, str, int]]:
        return [(a.value, s, r) for (a, s, r), c in sorted(
            self.scores.items(), key=lambda kv: (kv[0][0].value, kv[0][1], kv[0][2]))
            if not c.cc_defined]


# ---------------------------------------------------------------------------
# statistics


def anova_two_way(M) -> AnovaResult:
    """Two-way ANOVA without interaction, testing the row (algorithm) factor.

    Columns (subjects) act as blocks; F is the algorithm mean square over
    the algorithm x subject residual mean square with (a-1, (a-1)(s-1))
    degrees of freedom.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or min(M.shape) < 2:
        raise DataError("ANOVA needs at least 2 algorithms and 2 subjects")
    if not np.all(np.isfinite(M)):
        raise DataError("ANOVA input must be finite")
    a, s = M.shape
    g = M.mean()
    ra = M.mean(axis=1) - g
    cs = M.mean(axis=0) - g
    resid = M - g - ra[:, None] - cs[None, :]
    ss_a = s * float(np.dot(ra, ra))
    ss_s = a * float(np.dot(cs, cs))
    ss_r = float(np.sum(resid * resid))
    ss_t = float(np.sum((M - g) ** 2))
    if ss_r <= 1e-14 * max(ss_t, np.finfo(float).tiny):
        raise DataError("zero residual variance; F is undefined")
    df1, df2 = a - 1, (a - 1) * (s - 1)
    F = (ss_a / df1) / (ss_r / df2)
    return AnovaResult(F=F, p=float(stats.f.sf(F, df1, df2)), df_effect=df1,
                       df_residual=df2, ss_effect=ss_a, ss_block=ss_s, ss_residual=ss_r)


def midranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def dunn_z(groups: Sequence) -> np.ndarray:
    """Dunn z statistic for every pair of groups (antisymmetric matrix)."""
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        raise DataError("Dunn's test needs >= 2 groups with >= 2 observations each")
    sizes = np.array([g.size for g in groups])
    allx = np.concatenate(groups)
    N = allx.size
    r = midranks(allx)
    _, t = np.unique(allx, return_counts=True)
    ties = float(np.sum(t ** 3 - t)) / (12 * (N - 1))
    var = N * (N + 1) / 12 - ties
    if var <= 0:
        raise DataError("all observations are tied")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    mean_rank = np.array([r[bounds[i]:bounds[i + 1]].mean() for i in range(len(groups))])
    k = len(groups)
    z = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i != j:
                z[i, j] = (mean_rank[i] - mean_rank[j]) / np.sqrt(
                    var * (1 / sizes[i] + 1 / sizes[j]))
    return z


def dunn_pairwise(groups: Sequence) -> np.ndarray:
    """Unadjusted two-sided Dunn p-values; symmetric with a unit diagonal."""
    z = dunn_z(groups)
    p = 2 * stats.norm.sf(np.abs(z))
    np.fill_diagonal(p, 1.0)
    return np.minimum(p, 1.0)


def fdr_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DataError("expected a 1-D vector of p-values")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="mergesort")
    # (m / i) * p, the same evaluation order as R's p.adjust
    scaled = (m / np.arange(1, m + 1)) * p[order]
    q = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(q, 1.0)
    return out


# ---------------------------------------------------------------------------
# leave-one-subject-out driver


def derive_seed(master: int, target_index: int, alg: AlgorithmId, repeat: int) -> int:
    """Seed of one (target, algorithm, repeat) cell, independent of run order."""
    ss = np.random.SeedSequence([int(master), target_index, ALGORITHMS.index(alg), repeat])
    return int(ss.generate_state(1, np.uint64)[0])


# worker state inherited through fork
_WORK: dict = {}


def _run_cell(task):
    alg, t, rep = task
    data, cfg = _WORK["data"], _WORK["cfg"]
    train = [s for i, s in enumerate(data) if i != t]
    t0 = time.perf_counter()
    pred = run_algorithm(alg, train, data[t], cfg, derive_seed(cfg.seed, t, alg, rep))
    return task, pred, time.perf_counter() - t0


def loso_evaluate(dataset: Sequence[SubjectFeatures],
                  algorithms: Sequence[AlgorithmId] = ALGORITHMS,
                  cfg: PipelineConfig | None = None, jobs: int = 1,
                  progress: Callable[[str], None] | None = None) -> EvalReport:
    """Leave-one-subject-out scores for every (algorithm, target, repeat).

    Each cell gets its own seed derived from ``cfg.seed``, so the scores do
    not depend on ``jobs`` or on execution order.
    """
    cfg = cfg or PipelineConfig()
    if cfg.seed is None:
        raise ConfigError("loso_evaluate needs a master seed (cfg.seed)")
    data = list(dataset)
    if len(data) < 2:
        raise DataError("LOSO needs at least two subjects")
    ids = [s.subject_id for s in data]
    if len(set(ids)) != len(ids):
        raise DataError("subject ids must be unique")
    for s in data:
        if s.labels is None:
            raise DataError(f"subject {s.subject_id} has no labels")
    algorithms = [AlgorithmId(a) for a in algorithms]
    tasks = [(a, t, r) for t in range(len(data)) for a in algorithms
             for r in range(cfg.n_repeats)]

    _WORK.update(data=data, cfg=cfg)
    try:
        if jobs > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(jobs) as pool:
                results = list(pool.imap_unordered(_run_cell, tasks))
        else:
            results = []
            for task in tasks:
                results.append(_run_cell(task))
                if progress is not None:
                    a, t, r = task
                    progress(f"{a.display_name} target={ids[t]} repeat={r} "
                             f"{results[-1][2]:.1f}s")
    finally:
        _WORK.clear()

    scores, preds = {}, {}
    for (a, t, r), pred, _ in results:
        key = (a, ids[t], r)
        scores[key] = score(pred, data[t].labels.values)
        preds[key] = pred
    return EvalReport(algorithms, ids, cfg.n_repeats, scores, preds,
                      {s.subject_id: s.grid.times for s in data})


# ---------------------------------------------------------------------------
# output files


def _g(v: float) -> str:
    return f"{v:.6g}"


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    path.write_text("\n".join(",".join(r) for r in rows) + "\n", encoding="utf-8")


def report_to_dict(report: EvalReport) -> dict:
    cells = [{"algorithm": a.value, "subject": s, "repeat": r, "rmse": c.rmse, "cc": c.cc,
              "cc_defined": c.cc_defined}
             for (a, s, r), c in sorted(report.scores.items(),
                                        key=lambda kv: (report.algorithms.index(kv[0][0]),
                                                        report.subjects.index(kv[0][1]),
                                                        kv[0][2]))]
    return {"algorithms": [a.value for a in report.algorithms], "subjects": report.subjects,
            "n_repeats": report.n_repeats, "cells": cells}


def report_from_dict(d: dict) -> EvalReport:
    try:
        algs = [AlgorithmId(a) for a in d["algorithms"]]
        scores = {(AlgorithmId(c["algorithm"]), c["subject"], int(c["repeat"])):
                  ScoreCell(float(c["rmse"]), float(c["cc"]), bool(c["cc_defined"]))
                  for c in d["cells"]}
        return EvalReport(algs, list(d["subjects"]), int(d["n_repeats"]), scores)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed report: {exc!r}") from exc


def _safe(fn, *args):
    try:
        return fn(*args)
    except DataError as exc:
        log.warning("statistic undefined: %s", exc)
        return None


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write averages, ANOVA, pairwise and per-subject tables plus report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [a.display_name for a in report.algorithms]
    avg = report.averages()
    written = []

    rows = [["metric"] + names]
    for m in METRICS:
        rows.append([METRIC_NAMES[m]] + [_g(v) for v in avg[m]])
    _write_csv(out / "averages.csv", rows)
    written.append(out / "averages.csv")

    anova = {m: _safe(report.anova, m) for m in METRICS}
    rows = [["statistic"] + [METRIC_NAMES[m] for m in METRICS]]
    for label, attr in (("p", "p"), ("F", "F"), ("df_algorithm", "df_effect"),
                        ("df_residual", "df_residual")):
        rows.append([label] + ["" if anova[m] is None else _g(getattr(anova[m], attr))
                               for m in METRICS])
    _write_csv(out / "anova.csv", rows)
    written.append(out / "anova.csv")

    pair = {m: _safe(report.pairwise, m) for m in METRICS}
    rows = [["metric", "algorithm"] + names[:-1]]
    for m in METRICS:
        for i in range(1, len(names)):
            vals = ["" if pair[m] is None else _g(pair[m][i, j]) for j in range(i)]
            rows.append([METRIC_NAMES[m], names[i]] + vals + [""] * (len(names) - 1 - i))
    _write_csv(out / "pairwise.csv", rows)
    written.append(out / "pairwise.csv")

    rows = [["metric", "group"] + names]
    for m in METRICS:
        M = report.matrix(m)
        for j, s in enumerate(report.subjects):
            rows.append([METRIC_NAMES[m], s] + [_g(v) for v in M[:, j]])
        rows.append([METRIC_NAMES[m], "average"] + [_g(v) for v in M.mean(axis=1)])
    _write_csv(out / "fig1_data.csv", rows)
    written.append(out / "fig1_data.csv")

    doc = report_to_dict(report)
    doc["averages"] = {m: avg[m].tolist() for m in METRICS}
    doc["anova"] = {m: None if anova[m] is None else vars(anova[m]) for m in METRICS}
    doc["pairwise_adjusted_p"] = {m: None if pair[m] is None else pair[m].tolist()
                                  for m in METRICS}
    doc["undefined_cc"] = report.undefined_cc
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                     encoding="utf-8")
    written.append(out / "report.json")
    return written


def write_predictions(report: EvalReport, path) -> None:
    """CSV with one row per (algorithm, subject, repeat, grid point)."""
    rows = [["algorithm", "subject", "repeat", "grid_time_s", "prediction"]]
    for a in report.algorithms:
        for s in report.subjects:
            times = report.grid_times[s]
            for r in range(report.n_repeats):
                for t, v in zip(times.tolist(), report.predictions[a, s, r].tolist()):
                    rows.append([a.display_name, s, str(r), _g(t), _g(v)])
    _write_csv(Path(path), rows)
