"""Token- and sequence-level quality scores over step distributions.

The flagship score rewards agreement with the dominant cluster: a chosen
token inside the cluster earns the whole cluster's mass instead of just its
own probability, which compensates for probability mass split across
interchangeable continuations.  Raw probability and entropy scores are kept
as baselines, plus a Monte-Carlo sequence score for corpora that carry
sampled-sequence logprobs.

All scores are oriented so that higher means better quality.
"""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .cluster import ClusterFinderConfig, DominantCluster, find_cluster
from .corpus import Corpus, SequenceRecord, StepDistribution, atomic_write_text

VALID_SCORE_METHODS = (
    "boostedprob",
    "raw-probability",
    "entropy",
    "monte-carlo-entropy",
)
VALID_AGGREGATIONS = ("mean", "median", "min", "nr-dominant")


class ScoringError(ValueError):
    """A record could not be scored with the requested method."""


@dataclass(frozen=True)
class MethodConfig:
    """A scoring method plus its aggregation and cluster settings."""

    method: str = "boostedprob"
    aggregation: str = "mean"
    cluster: ClusterFinderConfig = field(default_factory=ClusterFinderConfig)
    mc_length_normalize: bool = False

    def __post_init__(self):
        if self.method not in VALID_SCORE_METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if self.aggregation not in VALID_AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "nr-dominant" and self.method != "boostedprob":
            raise ValueError("nr-dominant aggregation needs cluster membership; "
                             "it only applies to boostedprob")


@dataclass(frozen=True)
class QEResult:
    """Scores for one sequence.  token_scores is empty for sequence-only methods."""

    sequence_id: str
    method: str
    token_scores: tuple[float, ...]
    sequence_score: float
    aggregation: str = "mean"

    def __post_init__(self):
        object.__setattr__(
            self, "token_scores", tuple(float(s) for s in self.token_scores)
        )


def step_entropy(step: StepDistribution) -> float:
    """Shannon entropy of a step in nats, treating the tail as uniform.

    The head contributes the usual -sum(p ln p); the truncated tail is
    approximated as ``tail_count`` tokens sharing ``tail_mass`` equally, which
    contributes -tail_mass * ln(tail_mass / tail_count).  Steps with no tail
    get the exact head entropy.
    """
    h = 0.0
    for p in step.head_probs:
        if p > 0.0:
            h -= p * math.log(p)
    if step.tail_mass > 0.0 and step.tail_count > 0:
        h -= step.tail_mass * math.log(step.tail_mass / step.tail_count)
    return h


def is_dominant(step: StepDistribution, cluster: DominantCluster) -> bool:
    """Whether the chosen token sits inside the dominant cluster."""
    return step.chosen_index is not None and step.chosen_index < cluster.cutting_index


def token_boostedprob(step: StepDistribution, cluster: DominantCluster) -> float:
    """Cluster mass for a dominant chosen token, otherwise its own probability."""
    if is_dominant(step, cluster):
        return cluster.mass
    return step.chosen_probability


def token_raw(step: StepDistribution) -> float:
    return step.chosen_probability


def token_entropy_score(step: StepDistribution) -> float:
    """Negated step entropy, so that confident (low-entropy) steps score high."""
    return -step_entropy(step)


def sequence_score(
    token_scores,
    aggregation: str = "mean",
    dominant_flags=None,
) -> float:
    """Aggregate per-token scores into one sequence score.

    nr-dominant ignores the scores themselves and returns the fraction of
    steps whose chosen token was dominant, so it requires ``dominant_flags``.
    """
    scores = list(token_scores)
    if not scores:
        raise ValueError("no token scores to aggregate")
    if aggregation == "mean":
        return sum(scores) / len(scores)
    if aggregation == "median":
        return float(statistics.median(scores))
    if aggregation == "min":
        return min(scores)
    if aggregation == "nr-dominant":
        if dominant_flags is None:
            raise ValueError("nr-dominant aggregation requires dominance flags")
        flags = list(dominant_flags)
        if len(flags) != len(scores):
            raise ValueError("dominance flags do not match token scores")
        return sum(1 for f in flags if f) / len(flags)
    raise ValueError(f"unknown aggregation {aggregation!r}")


def monte_carlo_entropy(record: SequenceRecord, length_normalize: bool = False) -> float:
    """Mean sampled-sequence logprob; the negated Monte-Carlo entropy estimate.

    ``length_normalize`` divides by the record's step count to put corpora
    with very different sequence lengths on one scale.
    """
    if not record.sample_logprobs:
        raise ScoringError(
            f"record {record.sequence_id!r} has no sampled logprobs"
        )
    score = sum(record.sample_logprobs) / len(record.sample_logprobs)
    if length_normalize:
        score /= len(record.steps)
    return score


def score_record(record: SequenceRecord, config: MethodConfig) -> QEResult:
    """Score one sequence.  Raises ScoringError/ValueError on unusable input."""
    if config.method == "monte-carlo-entropy":
        value = monte_carlo_entropy(record, config.mc_length_normalize)
        return QEResult(record.sequence_id, config.method, (), value, config.aggregation)
    if config.method == "boostedprob":
        token_scores = []
        flags = []
        for step in record.steps:
            cluster = find_cluster(step, config.cluster)
            token_scores.append(token_boostedprob(step, cluster))
            flags.append(is_dominant(step, cluster))
        value = sequence_score(token_scores, config.aggregation, flags)
        return QEResult(record.sequence_id, config.method, tuple(token_scores),
                        value, config.aggregation)
    if config.method == "raw-probability":
        token_scores = [token_raw(step) for step in record.steps]
    else:
        token_scores = [token_entropy_score(step) for step in record.steps]
    value = sequence_score(token_scores, config.aggregation)
    return QEResult(record.sequence_id, config.method, tuple(token_scores),
                    value, config.aggregation)


def _score_packed(args):
    record, config = args
    try:
        return True, score_record(record, config)
    except (ValueError, ArithmeticError) as exc:
        return False, (record.sequence_id, str(exc))


def score_corpus(
    corpus: Corpus,
    config: MethodConfig,
    workers: int = 1,
) -> tuple[list[QEResult], list[tuple[str, str]]]:
    """Score every record, collecting per-record failures instead of raising.

    Returns results in corpus order plus a list of (sequence_id, reason)
    failures.  ``workers`` > 1 fans records out over processes; results come
    back in the same order either way.
    """
    jobs = [(record, config) for record in corpus.records]
    if workers > 1 and len(jobs) > 1:
        chunk = max(1, len(jobs) // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_score_packed, jobs, chunksize=chunk))
    else:
        outcomes = [_score_packed(job) for job in jobs]
    results: list[QEResult] = []
    failures: list[tuple[str, str]] = []
    for ok, payload in outcomes:
        if ok:
            results.append(payload)
        else:
            failures.append(payload)
    return results, failures


def result_to_obj(result: QEResult) -> dict:
    return {
        "id": result.sequence_id,
        "method": result.method,
        "token_scores": list(result.token_scores),
        "sequence_score": result.sequence_score,
    }


def write_results(results, path) -> None:
    """Write scores as JSONL, one sequence per line, atomically."""
    lines = [
        json.dumps(result_to_obj(r), separators=(",", ":")) for r in results
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def results_to_csv(results) -> str:
    """Flat CSV view of the sequence scores."""
    rows = ["id,method,sequence_score"]
    rows.extend(
        f"{r.sequence_id},{r.method},{r.sequence_score!r}" for r in results
    )
    return "\n".join(rows) + "\n"
