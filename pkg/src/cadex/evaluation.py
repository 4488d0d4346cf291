"""Aggregate experiments: solutions found per sample, distance CDFs against the
nearest training counterfactual, and transferability to a random forest.

Distances are Euclidean over the encoded vector (standardized numerics, raw
ordinals, 0/1 one-hots).
"""
from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from cadex._io import atomic_write_text
from cadex.data import Dataset, Schema
from cadex.forest import fit_forest, predict_forest
from cadex.nnet import Network, predict
from cadex.search import Explanation, SearchConfig, find_alternatives

log = logging.getLogger(__name__)

QUANTILES = (0.10, 0.25, 0.50, 0.75, 0.90)


class Neighbor(NamedTuple):
    index: int
    sample: np.ndarray
    distance: float


def nearest_training_counterfactual(x: np.ndarray, label: int, train_X: np.ndarray,
                                    train_classes: np.ndarray) -> Neighbor:
    """Closest training row (L2) whose class differs from ``label``.

    ``train_classes`` is normally the model's prediction on each training row;
    pass ground-truth labels instead for the label-based variant.
    """
    train_X = np.asarray(train_X, dtype=float)
    candidates = np.flatnonzero(np.asarray(train_classes) != label)
    if len(candidates) == 0:
        raise ValueError("no training sample with a different classification")
    d = np.sqrt(np.sum((train_X[candidates] - np.asarray(x, dtype=float)) ** 2, axis=1))
    k = int(np.argmin(d))
    return Neighbor(int(candidates[k]), train_X[candidates[k]], float(d[k]))


def refused_indices(net: Network, X: np.ndarray, target: int) -> np.ndarray:
    """Rows the model does not already assign to ``target``."""
    if len(X) == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.atleast_1d(predict(net, X)) != target)


def _explain_one(args) -> list[Explanation]:
    net, x, schema, config, n_alternatives = args
    return find_alternatives(net, x, schema, config, n_alternatives)


def explain_many(net: Network, X: np.ndarray, schema: Schema, config: SearchConfig,
                 n_alternatives: int = 10, jobs: int | None = 1) -> list[list[Explanation]]:
    """find_alternatives for every row of X, optionally across worker processes.

    Results come back in row order, so the output does not depend on ``jobs``.
    """
    tasks = [(net, x, schema, config, n_alternatives) for x in X]
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [_explain_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_explain_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass
class Histogram:
    n_change: int
    counts: np.ndarray  # explanations found per sample
    explanations: list[list[Explanation]] = field(repr=False, default_factory=list)

    @property
    def bins(self) -> np.ndarray:
        return np.bincount(self.counts, minlength=11)[:11] if len(self.counts) else np.zeros(11, int)

    @property
    def median(self) -> float:
        return float(np.median(self.counts)) if len(self.counts) else 0.0


def solutions_histogram(net: Network, samples: np.ndarray, schema: Schema, base_config: SearchConfig,
                        n_changes: Sequence[int] = (5, 7, 10), n_alternatives: int = 10,
                        jobs: int | None = 1) -> dict[int, Histogram]:
    out = {}
    for n_change in n_changes:
        config = replace(base_config, n_change=n_change, n_skip=0)
        found = explain_many(net, samples, schema, config, n_alternatives, jobs)
        out[n_change] = Histogram(n_change, np.array([len(f) for f in found], dtype=int), found)
    return out


@dataclass
class CDF:
    values: np.ndarray
    fractions: np.ndarray

    @classmethod
    def of(cls, values: Sequence[float]) -> "CDF":
        v = np.sort(np.asarray(values, dtype=float))
        return cls(v, np.arange(1, len(v) + 1) / len(v))

    def quantiles(self) -> dict[float, float]:
        return {q: float(np.quantile(self.values, q)) for q in QUANTILES}


def distance_cdf(cadex_distances: Sequence[float], baseline_distances: Sequence[float]) -> tuple[CDF, CDF]:
    if len(cadex_distances) == 0 or len(baseline_distances) == 0:
        raise ValueError("distance lists must be nonempty")
    return CDF.of(cadex_distances), CDF.of(baseline_distances)


@dataclass
class TransferRun:
    seed: int
    n_agreement: int
    rate_at_least_one: float
    rate_at_least_two: float
    rate_all: float


@dataclass
class Transferability:
    runs: list[TransferRun]

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.runs]))

    @property
    def rate_at_least_one(self) -> float:
        return self._mean("rate_at_least_one")

    @property
    def rate_at_least_two(self) -> float:
        return self._mean("rate_at_least_two")

    @property
    def rate_all(self) -> float:
        return self._mean("rate_all")


def transfer_rates(forest, net_classes: np.ndarray, samples: np.ndarray,
                   explanations: list[list[Explanation]], target: int, seed: int = 0) -> TransferRun:
    """Rates for one forest over the samples on which forest and network agree."""
    agree = np.flatnonzero(np.atleast_1d(predict_forest(forest, samples)) == net_classes)
    if len(agree) == 0:
        raise ValueError("the forest and the network agree on no sample")
    hits, total = [], 0
    for i in agree:
        found = explanations[i]
        total += len(found)
        if found:
            cf = np.array([e.counterfactual for e in found])
            hits.append(int(np.sum(predict_forest(forest, cf) == target)))
        else:
            hits.append(0)
    hits = np.array(hits)
    if total == 0:
        warnings.warn("no explanations were found for any agreement sample")
    return TransferRun(
        seed=seed,
        n_agreement=len(agree),
        rate_at_least_one=float(np.mean(hits >= 1)),
        rate_at_least_two=float(np.mean(hits >= 2)),
        rate_all=float(hits.sum() / total) if total else 0.0,
    )


def transferability(net: Network, train: Dataset, samples: np.ndarray, explanations: list[list[Explanation]],
                    target: int, repeats: int = 10, seed: int = 0, n_trees: int = 100) -> Transferability:
    """Average transfer rates over ``repeats`` forests seeded seed, seed+1, ..."""
    net_classes = np.atleast_1d(predict(net, samples))
    runs = []
    for r in range(repeats):
        forest = fit_forest(train, n_trees=n_trees, seed=seed + r)
        runs.append(transfer_rates(forest, net_classes, samples, explanations, target, seed + r))
        log.info("forest seed %d: %s", seed + r, runs[-1])
    return Transferability(runs)


@dataclass
class EvalReport:
    sample_rows: np.ndarray
    histograms: dict[int, Histogram]
    cadex_distances: np.ndarray
    baseline_distances: np.ndarray
    transfer: Transferability | None
    config: dict

    @property
    def cdfs(self) -> tuple[CDF, CDF]:
        return distance_cdf(self.cadex_distances, self.baseline_distances)


def evaluate(net: Network, train: Dataset, population: Dataset, base_config: SearchConfig,
             n_changes: Sequence[int] = (5,), n_alternatives: int = 10, repeats: int = 10,
             seed: int = 0, n_trees: int = 100, use_labels: bool = False,
             jobs: int | None = 1) -> EvalReport:
    """Run every experiment on the rows of ``population`` not already classified as the target.

    CADEX distances and transferability use the explanations of the first
    ``n_changes`` entry.
    """
    rows = refused_indices(net, population.X, base_config.target)
    if len(rows) == 0:
        raise ValueError("no sample in the evaluation population needs an explanation")
    samples = population.X[rows]
    schema = population.schema
    histograms = solutions_histogram(net, samples, schema, base_config, n_changes, n_alternatives, jobs)
    main = histograms[n_changes[0]]

    train_classes = train.y if use_labels else np.atleast_1d(predict(net, train.X))
    sample_classes = np.atleast_1d(predict(net, samples))
    baseline = np.array([
        nearest_training_counterfactual(x, c, train.X, train_classes).distance
        for x, c in zip(samples, sample_classes)
    ])
    cadex = np.array([e.l2_distance for found in main.explanations for e in found])
    transfer = None
    if repeats > 0:
        transfer = transferability(net, train, samples, main.explanations, base_config.target,
                                   repeats, seed, n_trees)
    config = {
        "target": base_config.target,
        "n_changes": list(n_changes),
        "n_alternatives": n_alternatives,
        "t_flip": base_config.t_flip,
        "max_epochs": base_config.max_epochs,
        "search_lr": base_config.lr,
        "repeats": repeats,
        "forest_seed": seed,
        "n_trees": n_trees,
        "baseline_classes": "labels" if use_labels else "model",
        "distance_space": "encoded (standardized numeric, raw ordinal, one-hot)",
    }
    return EvalReport(population.rows[rows], histograms, cadex, baseline, transfer, config)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_reports(report: EvalReport, outdir: str | Path) -> list[Path]:
    """Write histogram.csv, cdf.csv, quantiles.csv, transferability.csv and summary.txt."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        atomic_write_text(outdir / name, text)
        written.append(outdir / name)

    put("histogram.csv", _csv(
        ["n_change", "solutions_found", "samples"],
        [(k, b, int(c)) for k, h in report.histograms.items() for b, c in enumerate(h.bins)],
    ))
    cadex_cdf, base_cdf = report.cdfs
    put("cdf.csv", _csv(
        ["method", "distance", "cumulative_fraction"],
        [("cadex", repr(float(v)), repr(float(f))) for v, f in zip(cadex_cdf.values, cadex_cdf.fractions)]
        + [("training_set", repr(float(v)), repr(float(f))) for v, f in zip(base_cdf.values, base_cdf.fractions)],
    ))
    qc, qb = cadex_cdf.quantiles(), base_cdf.quantiles()
    put("quantiles.csv", _csv(
        ["quantile", "cadex", "training_set"],
        [(q, repr(qc[q]), repr(qb[q])) for q in QUANTILES],
    ))
    if report.transfer is not None:
        t = report.transfer
        put("transferability.csv", _csv(
            ["forest_seed", "agreement_samples", "rate_at_least_one", "rate_at_least_two", "rate_all"],
            [(r.seed, r.n_agreement, repr(r.rate_at_least_one), repr(r.rate_at_least_two), repr(r.rate_all))
             for r in t.runs]
            + [("mean", "", repr(t.rate_at_least_one), repr(t.rate_at_least_two), repr(t.rate_all))],
        ))
    put("summary.txt", summary_text(report))
    return written


def summary_text(report: EvalReport) -> str:
    lines = [f"# distances: {report.config['distance_space']}",
             f"samples evaluated: {len(report.sample_rows)}"]
    for k, h in report.histograms.items():
        lines.append(f"n_change={k}: median solutions {h.median:g}, histogram {h.bins.tolist()}")
    qc, qb = (c.quantiles() for c in report.cdfs)
    lines.append("distance quantiles (cadex / training set):")
    for q in QUANTILES:
        lines.append(f"  {q:.2f}: {qc[q]:.4f} / {qb[q]:.4f}")
    if report.transfer is not None:
        t = report.transfer
        lines.append(f"transferability over {len(t.runs)} forests: >=1 {t.rate_at_least_one:.3f}, "
                     f">=2 {t.rate_at_least_two:.3f}, all {t.rate_all:.3f}")
    return "\n".join(lines) + "\n"
