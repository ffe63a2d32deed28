"""Probability-based quality estimation for generated text.

Scores generation output from the per-step probability distributions alone,
boosting tokens that agree with the step's dominant cluster so that split
probability mass does not read as low confidence.
"""

from .cluster import (
    ClusterFinderConfig,
    DominantCluster,
    EpsilonCompletenessError,
    epsilon_cut,
    eta_cut,
    find_cluster,
    jump_cut,
    min_p,
    top_k,
    top_p,
)
from .corpus import (
    Corpus,
    CorpusFormatError,
    SequenceRecord,
    StepDistribution,
    load_corpus,
    parse_corpus,
    serialize_corpus,
    validate_step,
    write_corpus,
)
from .evaluation import (
    ConstantInputError,
    EvalReport,
    EvaluationError,
    SweepTable,
    evaluate_sequence,
    evaluate_tokens,
    mcc,
    pearson,
    sweep,
    tune_threshold,
)
from .scoring import (
    MethodConfig,
    QEResult,
    ScoringError,
    monte_carlo_entropy,
    score_corpus,
    score_record,
    sequence_score,
    step_entropy,
    token_boostedprob,
    token_entropy_score,
    token_raw,
)
from .synthlab import SynthSpec, TheoryReport, generate, theory_check

__version__ = "0.1.0"

__all__ = [
    "ClusterFinderConfig",
    "ConstantInputError",
    "Corpus",
    "CorpusFormatError",
    "DominantCluster",
    "EpsilonCompletenessError",
    "EvalReport",
    "EvaluationError",
    "MethodConfig",
    "QEResult",
    "ScoringError",
    "SequenceRecord",
    "StepDistribution",
    "SweepTable",
    "SynthSpec",
    "TheoryReport",
    "epsilon_cut",
    "eta_cut",
    "evaluate_sequence",
    "evaluate_tokens",
    "find_cluster",
    "generate",
    "jump_cut",
    "load_corpus",
    "mcc",
    "min_p",
    "monte_carlo_entropy",
    "parse_corpus",
    "pearson",
    "score_corpus",
    "score_record",
    "sequence_score",
    "serialize_corpus",
    "step_entropy",
    "sweep",
    "theory_check",
    "token_boostedprob",
    "token_entropy_score",
    "token_raw",
    "top_k",
    "top_p",
    "tune_threshold",
    "validate_step",
    "write_corpus",
]
