"""Resampling uncertainty, repeated-split tables and paired significance tests.

The pipeline is train -> calibrate -> test: base logistic models are fitted
on the training split; stacking weights and the recalibration map on the
calibration split; every metric is evaluated on the held-out test split.
Bootstrap replicates come in two modes.  ``calibration_only`` resamples the
calibration split with the base models frozen.  ``end_to_end`` resamples the
training and calibration splits and refits everything.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from scoredecomp.decomp_est import format_float
from scoredecomp.errors import DegenerateDataError
from scoredecomp.losses import get_loss
from scoredecomp.recalib import fit_calibrator
from scoredecomp.synthgen import (
    DGPConfig,
    SyntheticDataset,
    ensemble_average,
    ensemble_stack,
    fit_logistic,
    rng_for,
    sample_dataset,
)

METHODS = ("average", "stacking", "s1", "s2", "s12")
BOOTSTRAP_MODES = ("calibration_only", "end_to_end")
EXACT_WILCOXON_MAX_N = 20


def thread_count() -> int:
    """Worker cap from ``SCOREDECOMP_THREADS`` (default 1, i.e. serial)."""
    raw = os.environ.get("SCOREDECOMP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn, items) -> list:
    """Ordered map that runs on up to :func:`thread_count` threads.

    Results come back in input order, so output does not depend on scheduling
    as long as ``fn`` derives its randomness from its argument.
    """
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# splitting and the pipeline


def split_data(n: int, fractions=(1 / 3, 1 / 3, 1 / 3), seed: int = 0) -> tuple[np.ndarray, ...]:
    """Disjoint index sets from one seeded permutation cut into contiguous slices.

    Slice ``j`` has ``floor(c_j n) - floor(c_{j-1} n)`` elements, where
    ``c_j`` is the cumulative fraction, so the union covers
    ``floor(sum(fractions) n)`` indices.

    Raises
    ------
    ValueError
        If a fraction is nonpositive, the fractions sum above one, or a
        slice comes out empty.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.ndim != 1 or fr.size == 0 or np.any(fr <= 0):
        raise ValueError("fractions must be positive")
    if fr.sum() > 1.0 + 1e-12:
        raise ValueError("fractions must sum to at most 1")
    cuts = np.floor(np.concatenate([[0.0], np.cumsum(fr)]) * n + 1e-9).astype(int)
    cuts = np.minimum(cuts, n)
    if np.any(np.diff(cuts) <= 0):
        raise ValueError("a split would be empty")
    perm = rng_for(seed, 11).permutation(n)
    return tuple(perm[cuts[j]:cuts[j + 1]] for j in range(fr.size))


@dataclass(frozen=True)
class PipelineSpec:
    """Everything that determines one pipeline run apart from the random seed.

    ``n`` is the size of the pooled dataset drawn from the synthetic process
    before splitting.  Passing ``dataset`` replaces the draw with a fixed
    dataset (``rho``, ``n`` and ``surface`` are then ignored).
    """

    rho: float = 0.0
    n: int = 2000
    surface: str = "main"
    method: str = "average"
    calibrator: str = "isotonic"
    losses: tuple[str, ...] = ("brier", "logloss")
    fractions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    calibrator_config: dict | None = None
    dataset: SyntheticDataset | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if len(self.fractions) != 3:
            raise ValueError("need train, calibration and test fractions")
        if any(f <= 0 for f in self.fractions) or sum(self.fractions) > 1 + 1e-12:
            raise ValueError("fractions must be positive and sum to at most 1")
        for name in self.losses:
            get_loss(name)

    def draw(self) -> SyntheticDataset:
        if self.dataset is not None:
            return self.dataset
        return sample_dataset(DGPConfig(rho=self.rho, n=self.n, seed=self.seed,
                                        surface=self.surface))

    def metric_names(self) -> list[str]:
        names = []
        for loss in self.losses:
            names += [f"raw_{loss}", f"recal_{loss}", f"rel_{loss}"]
        return names + ["lcs"]


@dataclass
class BaseModels:
    s1: object
    s2: object
    s12: object | None = None


def _fit_base(spec: PipelineSpec, train: SyntheticDataset) -> BaseModels:
    if spec.method == "s12":
        return BaseModels(None, None, fit_logistic(train, ("x1", "x2")))
    return BaseModels(fit_logistic(train, ("x1",)), fit_logistic(train, ("x2",)))


def _score_fn(spec: PipelineSpec, base: BaseModels, calib: SyntheticDataset):
    """Return a function mapping a dataset to the pipeline's raw score."""
    m = spec.method
    if m == "s12":
        return base.s12.predict
    if m == "s1":
        return base.s1.predict
    if m == "s2":
        return base.s2.predict
    if m == "average":
        return lambda d: ensemble_average(base.s1.predict(d), base.s2.predict(d))
    stack = ensemble_stack(base.s1.predict(calib), base.s2.predict(calib), calib.y)
    return lambda d: stack.predict(base.s1.predict(d), base.s2.predict(d))


def _evaluate(spec: PipelineSpec, base: BaseModels, calib: SyntheticDataset,
              test: SyntheticDataset) -> dict:
    score = _score_fn(spec, base, calib)
    g = fit_calibrator(spec.calibrator, score(calib), calib.y, spec.calibrator_config)
    s = score(test)
    gs = g.predict(s)
    y = test.y.astype(int)
    out = {}
    for name in spec.losses:
        loss = get_loss(name)
        out[f"raw_{name}"] = float(np.mean(loss.binary_pointwise(s, y)))
        out[f"recal_{name}"] = float(np.mean(loss.binary_pointwise(gs, y)))
        out[f"rel_{name}"] = float(np.mean(loss.binary_divergence(s, gs)))
    out["lcs"] = float(np.mean((s - gs) ** 2))
    return out


def run_pipeline(spec: PipelineSpec, data: SyntheticDataset | None = None,
                 splits=None) -> dict:
    """Metrics of one train -> calibrate -> test run.

    Returns raw and recalibrated mean loss, the reliability estimate
    ``mean d(S, g(S))`` per loss, and LCS, all on the test split.
    """
    data = spec.draw() if data is None else data
    tr, ca, te = splits if splits is not None else split_data(len(data), spec.fractions, spec.seed)
    train, calib, test = data.subset(tr), data.subset(ca), data.subset(te)
    return _evaluate(spec, _fit_base(spec, train), calib, test)


# --------------------------------------------------------------------------
# bootstrap


@dataclass
class MetricSummary:
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    point: float | None = None

    def to_dict(self) -> dict:
        d = {"mean": self.mean, "sd": self.sd, "ci_low": self.ci_low, "ci_high": self.ci_high}
        if self.point is not None:
            d["point"] = self.point
        return d

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low


@dataclass
class BootstrapResult:
    mode: str
    replicates: list[dict]
    summary: dict[str, MetricSummary]
    n_requested: int
    n_dropped: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "n_requested": self.n_requested,
            "n_used": len(self.replicates),
            "n_dropped": self.n_dropped,
            "ci": "percentile 2.5/97.5",
            "metrics": {k: v.to_dict() for k, v in self.summary.items()},
        }


def _summarize(values, point=None) -> MetricSummary:
    v = np.asarray(values, dtype=float)
    lo, hi = np.percentile(v, [2.5, 97.5])
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return MetricSummary(float(np.mean(v)), sd, float(lo), float(hi), point)


def bootstrap_pipeline(spec: PipelineSpec, mode: str = "end_to_end", R: int = 200,
                       seed: int = 0) -> BootstrapResult:
    """Percentile bootstrap of the pipeline's test metrics.

    The dataset and its split come from ``spec`` and stay fixed; replicate
    ``r`` draws its resampling indices from a stream keyed by
    ``(seed, r)``.  A replicate whose resample has a single class (so a
    model cannot be fitted) is dropped and counted in ``n_dropped``.

    Raises
    ------
    DegenerateDataError
        If fewer than two replicates survive.
    """
    if mode not in BOOTSTRAP_MODES:
        raise ValueError(f"mode must be one of {BOOTSTRAP_MODES}")
    if R < 2:
        raise ValueError("need at least two bootstrap replicates")
    data = spec.draw()
    tr, ca, te = split_data(len(data), spec.fractions, spec.seed)
    train, calib, test = data.subset(tr), data.subset(ca), data.subset(te)
    frozen = _fit_base(spec, train)
    point = _evaluate(spec, frozen, calib, test)

    def replicate(r: int):
        rng = rng_for(seed, 23, r)
        ca_b = calib.subset(rng.integers(0, len(calib), len(calib)))
        try:
            if mode == "calibration_only":
                return _evaluate(spec, frozen, ca_b, test)
            tr_b = train.subset(rng.integers(0, len(train), len(train)))
            return _evaluate(spec, _fit_base(spec, tr_b), ca_b, test)
        except DegenerateDataError:
            return None

    results = parallel_map(replicate, range(R))
    kept = [r for r in results if r is not None]
    if len(kept) < 2:
        raise DegenerateDataError("fewer than two usable bootstrap replicates")
    summary = {m: _summarize([row[m] for row in kept], point[m]) for m in spec.metric_names()}
    return BootstrapResult(mode, kept, summary, R, R - len(kept), seed)


# --------------------------------------------------------------------------
# repeated splits


@dataclass
class ReplicateTable:
    """Long-format table: one row per (seed, method) with a value per metric."""

    metrics: list[str]
    rows: list[dict]

    def __post_init__(self):
        for row in self.rows:
            missing = [m for m in ["seed", "method", *self.metrics] if m not in row]
            if missing:
                raise ValueError(f"row is missing {missing}")

    @property
    def methods(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row["method"] not in seen:
                seen.append(row["method"])
        return seen

    def seeds(self, method: str) -> list[int]:
        return [int(r["seed"]) for r in self.rows if r["method"] == method]

    def column(self, method: str, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["method"] == method], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "method", *self.metrics])
        for r in self.rows:
            w.writerow([int(r["seed"]), r["method"], *(format_float(r[m]) for m in self.metrics)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ReplicateTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[:2] != ["seed", "method"]:
            raise ValueError("replicate CSV must start with seed,method")
        metrics = header[2:]
        rows = []
        for rec in reader:
            row = {"seed": int(rec[0]), "method": rec[1]}
            row.update({m: float(v) for m, v in zip(metrics, rec[2:])})
            rows.append(row)
        return cls(metrics, rows)

    def summary(self) -> dict:
        """Per method and metric: mean, sd (ddof 1) and replicate count.

        With a single replicate the sd is undefined; it is reported as 0 and
        ``sd_defined`` is false.
        """
        out = {}
        for method in self.methods:
            per = {}
            for m in self.metrics:
                v = self.column(method, m)
                per[m] = {"mean": float(np.mean(v)),
                          "sd": float(np.std(v, ddof=1)) if v.size > 1 else 0.0}
            n = len(self.seeds(method))
            out[method] = {"n": n, "sd_defined": n > 1, "metrics": per}
        return out


def repeated_splits(spec: PipelineSpec, R: int = 50, base_seed: int = 0,
                    methods=("average", "stacking")) -> ReplicateTable:
    """Rerun the whole pipeline with seeds ``base_seed + r`` for ``r < R``.

    Each seed draws a fresh dataset and split shared by all methods, so rows
    are paired across methods.
    """
    if R < 1:
        raise ValueError("need at least one replicate")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")

    def one(r: int) -> list[dict]:
        seed = base_seed + r
        seeded = replace(spec, seed=seed)
        data = seeded.draw()
        splits = split_data(len(data), seeded.fractions, seed)
        rows = []
        for m in methods:
            row = {"seed": seed, "method": m}
            row.update(run_pipeline(replace(seeded, method=m), data, splits))
            rows.append(row)
        return rows

    rows = [row for chunk in parallel_map(one, range(R)) for row in chunk]
    return ReplicateTable(spec.metric_names(), rows)


# --------------------------------------------------------------------------
# tests


def midranks(values) -> np.ndarray:
    """Ranks 1..n with tied values sharing the average of their positions."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # sum of ranks of positive deltas
    n_eff: int
    method: str  # "exact", "normal" or "degenerate"
    n_zero: int
    all_zero: bool = False

    def to_dict(self) -> dict:
        return {"p_value": self.p_value, "statistic": self.statistic, "n_eff": self.n_eff,
                "method": self.method, "n_zero": self.n_zero, "all_zero": self.all_zero,
                "zero_handling": "dropped"}


def _exact_lower_tail(ranks: np.ndarray, stat: float) -> float:
    """``P(W+ <= stat)`` when each rank is positive independently with probability 1/2."""
    doubled = np.rint(2 * ranks).astype(int)  # midranks are multiples of 1/2
    counts = np.zeros(int(doubled.sum()) + 1)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[:-r].copy()
    limit = int(np.floor(2 * stat + 1e-9))
    return float(counts[:limit + 1].sum() / 2.0 ** ranks.size)


def wilcoxon_one_sided(deltas, exact_max_n: int = EXACT_WILCOXON_MAX_N) -> WilcoxonResult:
    """Signed-rank test of ``H1``: the deltas tend to be negative.

    Zeros are dropped and ties get midranks.  The p-value is the lower tail
    of the sum of positive ranks; it is exact (full enumeration by dynamic
    programming) up to ``exact_max_n`` nonzero deltas and otherwise uses the
    normal approximation with continuity and tie corrections.  All-zero input
    gives ``p = 1`` with ``all_zero`` set.
    """
    d = np.asarray(deltas, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("need at least one delta")
    nz = d[d != 0]
    n_zero = int(d.size - nz.size)
    if nz.size == 0:
        return WilcoxonResult(1.0, 0.0, 0, "degenerate", n_zero, all_zero=True)
    ranks = midranks(np.abs(nz))
    stat = float(ranks[nz > 0].sum())
    n = nz.size
    if n <= exact_max_n:
        return WilcoxonResult(min(1.0, _exact_lower_tail(ranks, stat)), stat, n, "exact", n_zero)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    z = (stat - mean + 0.5) / math.sqrt(var)
    return WilcoxonResult(float(min(1.0, ndtr(z))), stat, n, "normal", n_zero)


def holm_correct(pvals) -> np.ndarray:
    """Holm step-down adjusted p-values, returned in the input order."""
    p = np.asarray(pvals, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("need at least one p-value")
    if np.any((p <= 0) | (p > 1)):
        raise ValueError("p-values must lie in (0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.empty(m)
    adjusted[order] = np.maximum.accumulate(scaled)
    return adjusted


def win_rate(deltas) -> float:
    """Fraction of strictly negative deltas (method beats reference)."""
    d = np.asarray(deltas, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("need at least one delta")
    return float(np.mean(d < 0))


COMPARISON_COLUMNS = ["metric", "method", "delta_mean", "delta_sd", "win_rate", "p_raw",
                      "p_holm", "n_eff", "test"]


def paired_comparison(table: ReplicateTable, reference: str = "average",
                      metrics=None) -> list[dict]:
    """Split-wise deltas ``method - reference`` with Wilcoxon and Holm per metric.

    Raises
    ------
    ValueError
        If the reference is absent or a method's replicate seeds do not
        match the reference's (rows must be paired).
    """
    if reference not in table.methods:
        raise ValueError(f"reference {reference!r} not in table")
    metrics = list(metrics or table.metrics)
    ref_seeds = table.seeds(reference)
    others = [m for m in table.methods if m != reference]
    for m in others:
        if table.seeds(m) != ref_seeds:
            raise ValueError(f"replicate seeds of {m!r} do not match {reference!r}")
    out = []
    for metric in metrics:
        base = table.column(reference, metric)
        block = []
        for m in others:
            d = table.column(m, metric) - base
            test = wilcoxon_one_sided(d)
            block.append({
                "metric": metric,
                "method": m,
                "delta_mean": float(np.mean(d)),
                "delta_sd": float(np.std(d, ddof=1)) if d.size > 1 else 0.0,
                "win_rate": win_rate(d),
                "p_raw": test.p_value,
                "n_eff": test.n_eff,
                "test": test.method,
            })
        if block:
            adj = holm_correct([b["p_raw"] for b in block])
            for b, p in zip(block, adj):
                b["p_holm"] = float(p)
        out += block
    return out


def comparison_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], (str, int)) else format_float(r[c])
                    for c in COMPARISON_COLUMNS])
    return buf.getvalue()


__all__ = [
    "PipelineSpec", "ReplicateTable", "BootstrapResult", "MetricSummary", "WilcoxonResult",
    "split_data", "run_pipeline", "bootstrap_pipeline", "repeated_splits", "wilcoxon_one_sided",
    "holm_correct", "win_rate", "paired_comparison", "comparison_to_csv", "midranks",
    "parallel_map", "thread_count",
]
