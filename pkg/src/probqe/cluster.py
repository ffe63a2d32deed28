"""Dominant-cluster finders for truncated step distributions.

The dominant cluster of a step is the group of top-ranked tokens that stand
together above a clear drop in probability.  The main finder looks for
significant jumps between consecutive sorted probabilities; the others are
the usual truncation-style rules (top-k, top-p, epsilon, eta, min-p) recast
as cluster finders so they can be compared head to head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import StepDistribution

VALID_METHODS = ("jump-cut", "top-k", "top-p", "epsilon-cut", "eta-cut", "min-p")

DEFAULT_X_PERCENT = 0.3
DEFAULT_EPSILON = 0.005


class EpsilonCompletenessError(ValueError):
    """The head was truncated too aggressively for the requested epsilon."""


@dataclass(frozen=True)
class DominantCluster:
    """Result of a finder: the 1-based cutting index and the cluster's mass.

    The cluster consists of the first ``cutting_index`` head entries.
    """

    cutting_index: int
    mass: float

    @property
    def size(self) -> int:
        return self.cutting_index


@dataclass(frozen=True)
class ClusterFinderConfig:
    """Which finder to run and its parameters.

    Only the parameters for the selected method matter; the rest keep their
    defaults.  ``first_drop`` switches the jump finder from the last
    significant drop to the first one.
    """

    method: str = "jump-cut"
    x_percent: float = DEFAULT_X_PERCENT
    epsilon: float = DEFAULT_EPSILON
    k: int = 5
    p: float = 0.9
    eta: float = 0.01
    first_drop: bool = False

    def __post_init__(self):
        if self.method not in VALID_METHODS:
            raise ValueError(f"unknown cluster method {self.method!r}")
        if not (0.0 < self.x_percent < 1.0):
            raise ValueError("x_percent must be in (0, 1)")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must be in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p must be in (0, 1]")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must be in (0, 1)")


def _mass_of(probs: tuple[float, ...], c: int) -> float:
    return sum(probs[:c])


def _check_head(step: StepDistribution) -> tuple[float, ...]:
    probs = step.head_probs
    if not probs:
        raise ValueError("cannot cluster an empty head")
    return probs


def jump_cut(
    step: StepDistribution,
    x_percent: float = DEFAULT_X_PERCENT,
    epsilon: float = DEFAULT_EPSILON,
    first_drop: bool = False,
) -> DominantCluster:
    """Cut where the sorted probabilities drop sharply.

    A drop between ranks i and i+1 is significant when it exceeds both the
    relative threshold (x_percent of the higher probability) and the absolute
    floor epsilon.  The cutting index is the last significant position (the
    first one with ``first_drop``); with no significant drop anywhere the
    cluster degenerates to the single top token.

    The scan runs over the head extended by one virtual entry that stands in
    for the tail: the mean tail probability when a tail exists, otherwise 0.
    A head too shallow for the given epsilon (mean tail probability above
    epsilon, or above the last stored head probability) cannot be cut
    reliably and raises EpsilonCompletenessError.
    """
    probs = _check_head(step)
    if step.tail_count > 0:
        virtual = step.tail_mass / step.tail_count
        if virtual > epsilon or virtual > probs[-1]:
            raise EpsilonCompletenessError(
                f"tail tokens average {virtual:.6g}, too large for epsilon "
                f"{epsilon:g}; the head is missing candidate entries"
            )
    else:
        virtual = 0.0
    extended = probs + (virtual,)
    cut = 0
    for i in range(1, len(probs) + 1):
        drop = extended[i - 1] - extended[i]
        if drop > max(extended[i - 1] * x_percent, epsilon):
            cut = i
            if first_drop:
                break
    if cut == 0:
        cut = 1
    return DominantCluster(cut, _mass_of(probs, cut))


def top_k(step: StepDistribution, k: int) -> DominantCluster:
    probs = _check_head(step)
    c = min(k, len(probs))
    return DominantCluster(c, _mass_of(probs, c))


def top_p(step: StepDistribution, p: float) -> DominantCluster:
    """Smallest prefix of the head whose cumulative mass reaches p.

    When even the whole head falls short (mass hiding in the tail), the
    cluster is the whole head.
    """
    probs = _check_head(step)
    total = 0.0
    for i, prob in enumerate(probs, start=1):
        total += prob
        if total >= p:
            return DominantCluster(i, total)
    return DominantCluster(len(probs), total)


def epsilon_cut(step: StepDistribution, epsilon: float) -> DominantCluster:
    probs = _check_head(step)
    c = sum(1 for p in probs if p > epsilon)
    c = max(c, 1)
    return DominantCluster(c, _mass_of(probs, c))


def eta_cut(step: StepDistribution, eta: float) -> DominantCluster:
    """Entropy-adaptive threshold cut.

    The threshold is the smaller of eta and sqrt(eta) * exp(-H) where H is
    the step's entropy in nats; flat distributions therefore keep more
    candidates than eta alone would.
    """
    from .scoring import step_entropy

    probs = _check_head(step)
    threshold = min(eta, math.sqrt(eta) * math.exp(-step_entropy(step)))
    c = sum(1 for p in probs if p > threshold)
    c = max(c, 1)
    return DominantCluster(c, _mass_of(probs, c))


def min_p(step: StepDistribution, p: float) -> DominantCluster:
    """Keep every head token whose probability is at least p times the top one."""
    probs = _check_head(step)
    floor = probs[0] * p
    c = sum(1 for prob in probs if prob >= floor)
    c = max(c, 1)
    return DominantCluster(c, _mass_of(probs, c))


def find_cluster(step: StepDistribution, config: ClusterFinderConfig) -> DominantCluster:
    """Dispatch to the configured finder."""
    if config.method == "jump-cut":
        return jump_cut(step, config.x_percent, config.epsilon, config.first_drop)
    if config.method == "top-k":
        return top_k(step, config.k)
    if config.method == "top-p":
        return top_p(step, config.p)
    if config.method == "epsilon-cut":
        return epsilon_cut(step, config.epsilon)
    if config.method == "eta-cut":
        return eta_cut(step, config.eta)
    if config.method == "min-p":
        return min_p(step, config.p)
    raise ValueError(f"unknown cluster method {config.method!r}")
