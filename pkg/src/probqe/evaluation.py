"""Evaluation of quality scores against gold annotations.

Sequence-level scores are judged by Pearson correlation with gold quality
scores; token-level scores by Matthews correlation (MCC) against OK/BAD
labels after thresholding.  A small grid sweep over the jump finder's two
hyperparameters is included for picking settings on a dev corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .cluster import ClusterFinderConfig
from .corpus import Corpus, LABEL_OK
from .scoring import MethodConfig, QEResult, score_corpus

X_PERCENT_GRID = (0.2, 0.3, 0.4, 0.5, 0.6)
EPSILON_GRID = (0.005, 0.01, 0.1)

VALID_TARGETS = ("pearson-vs-gold", "mcc-vs-labels")


class EvaluationError(ValueError):
    """The corpus or the scores are unusable for the requested evaluation."""


class ConstantInputError(EvaluationError):
    """Correlation is undefined because one input has zero variance."""


@dataclass(frozen=True)
class EvalReport:
    """One evaluation outcome, ready for table or CSV output."""

    method: str
    grouping: str = ""
    pearson: float | None = None
    mcc: float | None = None
    threshold: float | None = None
    n: int = 0
    x_percent: float | None = None
    epsilon: float | None = None


def pearson(xs, ys) -> float:
    """Pearson correlation; raises ConstantInputError on zero-variance input."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-d sequences")
    if x.size < 2:
        raise ValueError("need at least two points for correlation")
    xc = x - x.mean()
    yc = y - y.mean()
    ssx = float(xc @ xc)
    ssy = float(yc @ yc)
    if ssx == 0.0 or ssy == 0.0:
        raise ConstantInputError("constant input; correlation undefined")
    # sqrt the factors separately: their product can underflow to zero even
    # when both variances are positive
    r = float(xc @ yc) / (math.sqrt(ssx) * math.sqrt(ssy))
    return max(-1.0, min(1.0, r))


def mcc(tp: int, fp: int, tn: int, fn: int) -> float:
    """Matthews correlation from confusion counts; 0.0 when any margin is empty."""
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def confusion_counts(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with OK as the positive class; score >= threshold predicts OK."""
    tp = fp = fn = tn = 0
    for score, label in zip(scores, labels):
        predicted_ok = score >= threshold
        actual_ok = label == LABEL_OK
        if predicted_ok and actual_ok:
            tp += 1
        elif predicted_ok:
            fp += 1
        elif actual_ok:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def tune_threshold(scores, labels) -> float:
    """Threshold maximizing MCC on the given dev tokens.

    Candidates are the midpoints between consecutive distinct scores plus the
    extreme scores themselves; ties go to the smallest threshold.
    """
    scores = list(scores)
    labels = list(labels)
    if len(scores) != len(labels) or not scores:
        raise ValueError("scores and labels must be non-empty and aligned")
    kinds = set(labels)
    if LABEL_OK not in kinds or len(kinds) < 2:
        raise EvaluationError("threshold tuning needs both OK and BAD tokens")
    distinct = sorted(set(scores))
    candidates = [distinct[0]]
    candidates += [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    candidates.append(distinct[-1])
    best_t = None
    best_m = -math.inf
    for t in sorted(set(candidates)):
        m = mcc(*confusion_counts(scores, labels, t))
        if m > best_m:
            best_t, best_m = t, m
    return best_t


def _results_by_id(results) -> dict[str, QEResult]:
    return {r.sequence_id: r for r in results}


def evaluate_sequence(corpus: Corpus, results, grouping: str = "") -> EvalReport:
    """Pearson correlation of sequence scores against gold scores."""
    by_id = _results_by_id(results)
    xs, ys = [], []
    method = ""
    for record in corpus.records:
        result = by_id.get(record.sequence_id)
        if result is None:
            raise EvaluationError(f"no score for sequence {record.sequence_id!r}")
        if record.gold_score is None:
            raise EvaluationError(
                f"sequence {record.sequence_id!r} has no gold score"
            )
        xs.append(result.sequence_score)
        ys.append(record.gold_score)
        method = result.method
    if len(xs) < 2:
        raise EvaluationError("need at least two gold-scored sequences")
    return EvalReport(
        method=method, grouping=grouping, pearson=pearson(xs, ys), n=len(xs)
    )


def token_scores_and_labels(corpus: Corpus, results) -> tuple[list[float], list[str]]:
    """Flatten aligned (token score, OK/BAD label) pairs across the corpus."""
    by_id = _results_by_id(results)
    scores: list[float] = []
    labels: list[str] = []
    for record in corpus.records:
        result = by_id.get(record.sequence_id)
        if result is None:
            raise EvaluationError(f"no score for sequence {record.sequence_id!r}")
        if record.token_labels is None:
            raise EvaluationError(
                f"sequence {record.sequence_id!r} has no token labels"
            )
        if len(result.token_scores) != len(record.token_labels):
            raise EvaluationError(
                f"sequence {record.sequence_id!r}: token scores and labels disagree"
            )
        scores.extend(result.token_scores)
        labels.extend(record.token_labels)
    return scores, labels


def evaluate_tokens(
    corpus: Corpus,
    results,
    threshold: float,
    grouping: str = "",
    macro: bool = False,
) -> EvalReport:
    """Token-level MCC at a fixed threshold.

    Micro (default) pools one confusion matrix over all tokens; macro
    averages per-sequence MCC instead, which weights short and long
    sequences equally.
    """
    by_id = _results_by_id(results)
    method = next(iter(results)).method if results else ""
    if macro:
        values = []
        n_tokens = 0
        for record in corpus.records:
            result = by_id.get(record.sequence_id)
            if result is None:
                raise EvaluationError(f"no score for sequence {record.sequence_id!r}")
            if record.token_labels is None:
                raise EvaluationError(
                    f"sequence {record.sequence_id!r} has no token labels"
                )
            values.append(
                mcc(*confusion_counts(result.token_scores, record.token_labels, threshold))
            )
            n_tokens += len(record.token_labels)
        if not values:
            raise EvaluationError("empty corpus")
        value = sum(values) / len(values)
        return EvalReport(method=method, grouping=grouping, mcc=value,
                          threshold=threshold, n=n_tokens)
    scores, labels = token_scores_and_labels(corpus, results)
    value = mcc(*confusion_counts(scores, labels, threshold))
    return EvalReport(method=method, grouping=grouping, mcc=value,
                      threshold=threshold, n=len(scores))


@dataclass(frozen=True)
class SweepEntry:
    x_percent: float
    epsilon: float
    value: float


@dataclass(frozen=True)
class SweepTable:
    """Grid-sweep outcome, best entry first.  Failed cells keep their reasons."""

    target: str
    aggregation: str
    entries: tuple[SweepEntry, ...]
    failed: tuple[tuple[float, float, str], ...] = ()

    @property
    def best(self) -> SweepEntry | None:
        return self.entries[0] if self.entries else None


def _sweep_cell_value(corpus, results, target) -> float:
    if target == "pearson-vs-gold":
        return evaluate_sequence(corpus, results).pearson
    scores, labels = token_scores_and_labels(corpus, results)
    threshold = tune_threshold(scores, labels)
    return mcc(*confusion_counts(scores, labels, threshold))


def sweep(
    corpus: Corpus,
    target: str = "pearson-vs-gold",
    x_grid=None,
    eps_grid=None,
    aggregation: str = "mean",
    workers: int = 1,
) -> SweepTable:
    """Score the corpus under every (x_percent, epsilon) pair and rank them.

    The boosted score with the jump finder is swept over the two grids
    (defaults cover the usual operating range).  Cells ordered by target
    value descending, ties by (x_percent, epsilon) ascending.
    """
    if target not in VALID_TARGETS:
        raise ValueError(f"unknown sweep target {target!r}")
    x_grid = tuple(x_grid) if x_grid is not None else X_PERCENT_GRID
    eps_grid = tuple(eps_grid) if eps_grid is not None else EPSILON_GRID
    entries: list[SweepEntry] = []
    failed: list[tuple[float, float, str]] = []
    for x, eps in product(x_grid, eps_grid):
        config = MethodConfig(
            method="boostedprob",
            aggregation=aggregation,
            cluster=ClusterFinderConfig(method="jump-cut", x_percent=x, epsilon=eps),
        )
        results, failures = score_corpus(corpus, config, workers=workers)
        if failures:
            seq_id, reason = failures[0]
            failed.append(
                (x, eps, f"{len(failures)} records unscorable; first {seq_id!r}: {reason}")
            )
            continue
        try:
            value = _sweep_cell_value(corpus, results, target)
        except ValueError as exc:
            failed.append((x, eps, str(exc)))
            continue
        entries.append(SweepEntry(x, eps, value))
    entries.sort(key=lambda e: (-e.value, e.x_percent, e.epsilon))
    return SweepTable(
        target=target,
        aggregation=aggregation,
        entries=tuple(entries),
        failed=tuple(failed),
    )


def sweep_to_csv(table: SweepTable) -> str:
    """Deterministic CSV of a sweep, one row per scored cell, best first."""
    lines = ["x_percent,epsilon,metric,value"]
    for entry in table.entries:
        lines.append(
            f"{entry.x_percent!r},{entry.epsilon!r},{table.target},{entry.value!r}"
        )
    for x, eps, reason in table.failed:
        safe = reason.replace('"', "'")
        lines.append(f'{x!r},{eps!r},{table.target},"failed: {safe}"')
    return "\n".join(lines) + "\n"


def report_to_csv(reports) -> str:
    """CSV with one row per metric per report."""
    lines = ["method,grouping,metric,value,n,threshold,x_percent,epsilon"]

    def fmt(v):
        return "" if v is None else repr(v)

    for rep in reports:
        if rep.pearson is not None:
            lines.append(
                f"{rep.method},{rep.grouping},pearson,{rep.pearson!r},{rep.n},"
                f"{fmt(rep.threshold)},{fmt(rep.x_percent)},{fmt(rep.epsilon)}"
            )
        if rep.mcc is not None:
            lines.append(
                f"{rep.method},{rep.grouping},mcc,{rep.mcc!r},{rep.n},"
                f"{fmt(rep.threshold)},{fmt(rep.x_percent)},{fmt(rep.epsilon)}"
            )
    return "\n".join(lines) + "\n"


def format_report(report: EvalReport) -> str:
    """Small human-readable table for terminal output."""
    rows = [("method", report.method)]
    if report.grouping:
        rows.append(("grouping", report.grouping))
    if report.pearson is not None:
        rows.append(("pearson", f"{report.pearson:.6f}"))
    if report.mcc is not None:
        rows.append(("mcc", f"{report.mcc:.6f}"))
    if report.threshold is not None:
        rows.append(("threshold", f"{report.threshold:.6g}"))
    rows.append(("n", str(report.n)))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
