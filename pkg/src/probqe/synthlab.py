"""Synthetic corpora with known ground truth for exercising the scorers.

The generator plants steps of three kinds:

* competent: k interchangeable correct tokens share mass q (each gets q/k,
  at most 1/k), the residue spread over filler tokens far below epsilon;
* overconfident error: the same mass shape, but the top token is wrong, so
  raw probability cannot tell it apart from a split correct step;
* uncertain error: a gently decaying distribution with no significant drop
  anywhere, so the dominant cluster degenerates to the top token.

The chosen token is sampled from each step's own distribution, labels mark
whether it was one of the planted correct tokens, and the gold sequence
score is the fraction of correct choices.  Everything is driven by one
seeded generator in a fixed draw order, so corpora are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .cluster import jump_cut
from .corpus import Corpus, SequenceRecord, StepDistribution, LABEL_BAD, LABEL_OK
from .scoring import token_boostedprob, token_raw

ERROR_MODES = ("overconfident", "uncertain")

THEORY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic corpus.  Ranges are inclusive."""

    n_sequences: int
    steps_per_seq: tuple[int, int] = (5, 15)
    k_correct: tuple[int, int] = (2, 5)
    correct_mass: tuple[float, float] = (0.85, 0.95)
    competence: float = 0.8
    seed: int = 0
    vocab_size: int = 1000
    error_mode: str = "overconfident"
    epsilon: float = 0.005

    def __post_init__(self):
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be >= 1")
        lo, hi = self.steps_per_seq
        if not (1 <= lo <= hi):
            raise ValueError("steps_per_seq range must satisfy 1 <= lo <= hi")
        k_lo, k_hi = self.k_correct
        if not (1 <= k_lo <= k_hi):
            raise ValueError("k_correct range must satisfy 1 <= lo <= hi")
        q_lo, q_hi = self.correct_mass
        if not (0.0 < q_lo <= q_hi <= 1.0):
            raise ValueError("correct_mass range must sit in (0, 1]")
        if not (0.0 <= self.competence <= 1.0):
            raise ValueError("competence must be in [0, 1]")
        if self.vocab_size <= k_hi:
            raise ValueError("vocab_size must exceed the largest k")
        if self.error_mode not in ERROR_MODES:
            raise ValueError(f"unknown error mode {self.error_mode!r}")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must be in (0, 1)")


def _filler_count(residue: float, epsilon: float) -> int:
    """Fillers needed so each filler probability stays below epsilon / 2."""
    if residue <= 1e-15:
        return 0
    m = int(residue // (epsilon / 2.0)) + 1
    # an evenly dividing residue can land exactly on the boundary
    while residue / m >= epsilon / 2.0:
        m += 1
    return m


def _sorted_head(token_ids, probs) -> tuple[tuple[int, float], ...]:
    entries = sorted(zip(token_ids, probs), key=lambda e: (-e[1], e[0]))
    return tuple((int(t), float(p)) for t, p in entries)


def _draw_ids(rng: np.random.Generator, vocab_size: int, count: int) -> np.ndarray:
    if count > vocab_size:
        raise ValueError(
            f"step needs {count} distinct tokens but vocab_size is {vocab_size}"
        )
    return rng.choice(vocab_size, size=count, replace=False)


def _competent_step(rng, k, q, vocab_size, epsilon):
    per_correct = q / k
    residue = 1.0 - per_correct * k
    m = _filler_count(residue, epsilon)
    ids = _draw_ids(rng, vocab_size, k + m)
    probs = [per_correct] * k
    if m:
        probs += [residue / m] * m
    head = _sorted_head(ids, probs)
    return head, set(int(t) for t in ids[:k])


def _error_step_overconfident(rng, k, q, vocab_size, epsilon):
    wrong_mass = q / k
    residue = 1.0 - wrong_mass
    m = _filler_count(residue, epsilon)
    ids = _draw_ids(rng, vocab_size, 1 + m)
    probs = [wrong_mass] + [residue / m] * m
    return _sorted_head(ids, probs), set()


def _error_step_uncertain(rng, vocab_size, epsilon):
    """Smooth geometric decay: consecutive drops stay far below any sharp cut."""
    ratio = float(rng.uniform(0.90, 0.95))
    n = 2
    while True:
        top = (1.0 - ratio) / (1.0 - ratio**n)
        if top * ratio ** (n - 1) <= 0.9 * epsilon:
            break
        n += 1
    weights = ratio ** np.arange(n)
    probs = weights / weights.sum()
    ids = _draw_ids(rng, vocab_size, n)
    return _sorted_head(ids, probs), set()


def generate(spec: SynthSpec) -> Corpus:
    """Build a corpus from a spec.

    Draw order per step: competence roll, then the branch's own parameters
    (k and q where applicable), token ids, and finally the chosen token.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.steps_per_seq
    k_lo, k_hi = spec.k_correct
    q_lo, q_hi = spec.correct_mass
    records = []
    for i in range(spec.n_sequences):
        n_steps = int(rng.integers(lo, hi + 1))
        steps = []
        labels = []
        for _ in range(n_steps):
            competent = float(rng.random()) < spec.competence
            if competent or spec.error_mode == "overconfident":
                k = int(rng.integers(k_lo, k_hi + 1))
                q = float(rng.uniform(q_lo, q_hi))
                if competent:
                    head, correct = _competent_step(
                        rng, k, q, spec.vocab_size, spec.epsilon
                    )
                else:
                    head, correct = _error_step_overconfident(
                        rng, k, q, spec.vocab_size, spec.epsilon
                    )
            else:
                head, correct = _error_step_uncertain(
                    rng, spec.vocab_size, spec.epsilon
                )
            probs = np.array([p for _, p in head])
            idx = int(rng.choice(len(head), p=probs / probs.sum()))
            steps.append(StepDistribution(head=head, chosen_index=idx))
            labels.append(LABEL_OK if head[idx][0] in correct else LABEL_BAD)
        ok = sum(1 for lab in labels if lab == LABEL_OK)
        records.append(
            SequenceRecord(
                sequence_id=f"synth-{i}",
                steps=tuple(steps),
                gold_score=ok / n_steps,
                token_labels=tuple(labels),
            )
        )
    return Corpus(records=tuple(records), metadata={"generator": asdict(spec)})


@dataclass(frozen=True)
class TheoryRow:
    k: int
    q: float
    raw_score: float
    boosted_score: float
    cutting_index: int
    passed: bool


@dataclass(frozen=True)
class TheoryReport:
    """Mass-splitting check over a (k, q) grid.

    Each row plants k correct tokens sharing mass q and verifies that the raw
    probability of the chosen one is capped at 1/k while the boosted score
    recovers the full shared mass q with the cluster cut exactly at k.
    """

    rows: tuple[TheoryRow, ...]
    x_percent: float
    epsilon: float
    tolerance: float = THEORY_TOLERANCE

    @property
    def all_passed(self) -> bool:
        return all(row.passed for row in self.rows)


def _canonical_split_step(k: int, q: float, epsilon: float) -> StepDistribution:
    per_correct = q / k
    residue = 1.0 - per_correct * k
    m = _filler_count(residue, epsilon)
    probs = [per_correct] * k + ([residue / m] * m if m else [])
    head = tuple((i, p) for i, p in enumerate(probs))
    return StepDistribution(head=head, chosen_index=0)


def theory_check(
    k_max: int = 10,
    q_list=(0.9, 0.95, 0.99),
    x_percent: float = 0.3,
    epsilon: float = 0.005,
) -> TheoryReport:
    """Deterministic sweep of the mass-splitting construction, no sampling."""
    rows = []
    for k in range(2, k_max + 1):
        for q in q_list:
            step = _canonical_split_step(k, float(q), epsilon)
            raw = token_raw(step)
            cluster = jump_cut(step, x_percent, epsilon)
            boosted = token_boostedprob(step, cluster)
            passed = (
                raw <= 1.0 / k + THEORY_TOLERANCE
                and math.isclose(boosted, q, rel_tol=0.0, abs_tol=THEORY_TOLERANCE)
                and cluster.cutting_index == k
            )
            rows.append(TheoryRow(k, float(q), raw, boosted, cluster.cutting_index, passed))
    return TheoryReport(rows=tuple(rows), x_percent=x_percent, epsilon=epsilon)


def format_theory_report(report: TheoryReport) -> str:
    lines = [
        f"{'k':>3} {'q':>6} {'raw':>10} {'boosted':>10} {'cut':>4} {'ok':>4}",
    ]
    for row in report.rows:
        lines.append(
            f"{row.k:>3} {row.q:>6.2f} {row.raw_score:>10.6f} "
            f"{row.boosted_score:>10.6f} {row.cutting_index:>4} "
            f"{'yes' if row.passed else 'NO':>4}"
        )
    verdict = "all rows passed" if report.all_passed else "FAILED rows present"
    lines.append(verdict)
    return "\n".join(lines)
