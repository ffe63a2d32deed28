"""Step-distribution data model, validation, and corpus serialization.

A corpus is newline-delimited JSON, one generated sequence per line.  Each
step stores the high-probability head of the model's output distribution,
sorted by probability descending, plus a two-number summary of whatever was
truncated away (total tail mass and tail token count).  Heads are expected to
be "epsilon-complete": every individual probability above the working epsilon
is present in the head, so downstream cluster heuristics never need the
truncated tail entries individually.

Wire format, one record per line::

    {"id": "seq-0",
     "steps": [{"head": [[token_id, prob], ...],
                "tail_mass": 0.01, "tail_count": 480,
                "chosen": {"index": 0}}, ...],
     "gold_score": 0.8,            # optional
     "labels": ["OK", "BAD"],      # optional, one per step
     "sample_logprobs": [-1.0],    # optional, for sampled-sequence baselines
     "text": "..."}                # optional

A chosen token inside the head is referenced by head index; a chosen token
that fell into the tail carries only its probability.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import IO, Iterable

MASS_TOLERANCE = 1e-4

LABEL_OK = "OK"
LABEL_BAD = "BAD"
_VALID_LABELS = (LABEL_OK, LABEL_BAD)


class CorpusFormatError(ValueError):
    """A corpus stream violated the record format or a distribution invariant."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class StepDistribution:
    """One generation step: distribution head plus tail summary and chosen token.

    ``chosen_index`` is the position of the chosen token within ``head`` when
    the chosen token was kept, or None when it fell into the truncated tail.
    ``chosen_probability`` is always populated; for an in-head chosen token it
    is derived from the head entry when not given explicitly.
    """

    head: tuple[tuple[int, float], ...]
    tail_mass: float = 0.0
    tail_count: int = 0
    chosen_index: int | None = None
    chosen_probability: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "head", tuple((int(t), float(p)) for t, p in self.head)
        )
        if (
            self.chosen_probability is None
            and self.chosen_index is not None
            and 0 <= self.chosen_index < len(self.head)
        ):
            object.__setattr__(
                self, "chosen_probability", self.head[self.chosen_index][1]
            )

    @property
    def head_probs(self) -> tuple[float, ...]:
        return tuple(p for _, p in self.head)

    @property
    def head_mass(self) -> float:
        return sum(p for _, p in self.head)


@dataclass(frozen=True)
class SequenceRecord:
    """A generated sequence: its per-step distributions and optional gold data."""

    sequence_id: str
    steps: tuple[StepDistribution, ...]
    gold_score: float | None = None
    token_labels: tuple[str, ...] | None = None
    sample_logprobs: tuple[float, ...] | None = None
    text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.token_labels is not None:
            object.__setattr__(self, "token_labels", tuple(self.token_labels))
        if self.sample_logprobs is not None:
            object.__setattr__(
                self, "sample_logprobs", tuple(float(x) for x in self.sample_logprobs)
            )


@dataclass(frozen=True)
class Corpus:
    """An ordered collection of sequence records plus free-form metadata.

    Metadata never travels inside the JSONL stream; writers that want to keep
    it persist a sidecar file next to the corpus.
    """

    records: tuple[SequenceRecord, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def validate_step(step: StepDistribution, epsilon: float | None = None) -> list[str]:
    """Check one step against the distribution invariants.

    Returns a list of human-readable violations, empty when the step is
    valid.  When ``epsilon`` is given, epsilon-completeness of the head is
    checked as well: a step with a non-empty tail must have stored every
    probability above epsilon, so its last head entry must be <= epsilon.
    """
    problems: list[str] = []
    probs = step.head_probs
    if not probs:
        problems.append("empty head")
    for p in probs:
        if not (0.0 <= p <= 1.0):
            problems.append(f"head probability {p:.6g} outside [0, 1]")
            break
    for a, b in zip(probs, probs[1:]):
        if b > a:
            problems.append("head not non-increasing")
            break
    if not (0.0 <= step.tail_mass <= 1.0):
        problems.append(f"tail mass {step.tail_mass:.6g} outside [0, 1]")
    if step.tail_count < 0:
        problems.append("negative tail count")
    if step.tail_mass > 0.0 and step.tail_count == 0:
        problems.append("positive tail mass with zero tail count")
    total = sum(probs) + step.tail_mass
    if abs(total - 1.0) > MASS_TOLERANCE:
        problems.append(f"mass {total:.6g} outside tolerance")
    if step.chosen_index is not None:
        if not (0 <= step.chosen_index < len(probs)):
            problems.append(f"chosen index {step.chosen_index} out of range")
        elif step.chosen_probability != probs[step.chosen_index]:
            problems.append("chosen probability disagrees with its head entry")
    elif step.chosen_probability is None:
        problems.append("no chosen token")
    elif not (0.0 <= step.chosen_probability <= 1.0):
        problems.append(
            f"chosen probability {step.chosen_probability:.6g} outside [0, 1]"
        )
    if epsilon is not None and probs and step.tail_count > 0:
        if probs[-1] > epsilon:
            problems.append(
                f"head not complete for epsilon {epsilon:g}: "
                f"last head probability {probs[-1]:.6g} exceeds it"
            )
        bound = math.ceil(1.0 / epsilon) + 1
        if len(probs) > bound:
            problems.append(
                f"head length {len(probs)} exceeds the bound {bound} implied "
                f"by completeness at epsilon {epsilon:g}"
            )
    return problems


def _step_from_obj(obj) -> StepDistribution:
    if not isinstance(obj, dict):
        raise ValueError("step is not an object")
    try:
        head_raw = obj["head"]
        chosen = obj["chosen"]
    except KeyError as exc:
        raise ValueError(f"step missing field {exc.args[0]!r}") from None
    try:
        head = tuple((int(t), float(p)) for t, p in head_raw)
    except (TypeError, ValueError):
        raise ValueError("malformed head; expected [[token_id, prob], ...]") from None
    tail_mass = float(obj.get("tail_mass", 0.0))
    tail_count = int(obj.get("tail_count", 0))
    if not isinstance(chosen, dict) or not ({"index", "prob"} & chosen.keys()):
        raise ValueError('chosen must carry "index" or "prob"')
    if "index" in chosen:
        idx = int(chosen["index"])
        return StepDistribution(head, tail_mass, tail_count, chosen_index=idx)
    return StepDistribution(
        head, tail_mass, tail_count, chosen_probability=float(chosen["prob"])
    )


def _step_to_obj(step: StepDistribution) -> dict:
    obj = {"head": [[t, p] for t, p in step.head]}
    if step.tail_count or step.tail_mass:
        obj["tail_mass"] = step.tail_mass
        obj["tail_count"] = step.tail_count
    if step.chosen_index is not None:
        obj["chosen"] = {"index": step.chosen_index}
    else:
        obj["chosen"] = {"prob": step.chosen_probability}
    return obj


def _record_from_obj(obj) -> SequenceRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    try:
        seq_id = obj["id"]
        steps_raw = obj["steps"]
    except KeyError as exc:
        raise ValueError(f"record missing field {exc.args[0]!r}") from None
    if not isinstance(seq_id, str) or not seq_id:
        raise ValueError("id must be a non-empty string")
    if not isinstance(steps_raw, list) or not steps_raw:
        raise ValueError("steps must be a non-empty array")
    steps = []
    for j, step_obj in enumerate(steps_raw):
        try:
            steps.append(_step_from_obj(step_obj))
        except ValueError as exc:
            raise ValueError(f"step {j}: {exc}") from None
    labels = obj.get("labels")
    if labels is not None:
        if len(labels) != len(steps):
            raise ValueError(
                f"labels length {len(labels)} != step count {len(steps)}"
            )
        for lab in labels:
            if lab not in _VALID_LABELS:
                raise ValueError(f"unknown label {lab!r}")
        labels = tuple(labels)
    gold = obj.get("gold_score")
    if gold is not None:
        gold = float(gold)
    logprobs = obj.get("sample_logprobs")
    if logprobs is not None:
        logprobs = tuple(float(x) for x in logprobs)
    return SequenceRecord(
        sequence_id=seq_id,
        steps=tuple(steps),
        gold_score=gold,
        token_labels=labels,
        sample_logprobs=logprobs,
        text=obj.get("text"),
    )


def record_to_obj(record: SequenceRecord) -> dict:
    """Wire representation of a record, with a fixed key order."""
    obj = {
        "id": record.sequence_id,
        "steps": [_step_to_obj(s) for s in record.steps],
    }
    if record.gold_score is not None:
        obj["gold_score"] = record.gold_score
    if record.token_labels is not None:
        obj["labels"] = list(record.token_labels)
    if record.sample_logprobs is not None:
        obj["sample_logprobs"] = list(record.sample_logprobs)
    if record.text is not None:
        obj["text"] = record.text
    return obj


def parse_corpus(source: IO[bytes] | IO[str] | Iterable[bytes | str],
                 epsilon: float) -> Corpus:
    """Parse a JSONL stream into a Corpus, failing fast with line numbers.

    Every step is validated against the distribution invariants, including
    epsilon-completeness of truncated heads.  Blank lines are skipped.
    """
    records: list[SequenceRecord] = []
    seen_ids: set[str] = set()
    for line_number, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON: {exc}", line_number) from None
        try:
            record = _record_from_obj(obj)
        except ValueError as exc:
            raise CorpusFormatError(str(exc), line_number) from None
        if record.sequence_id in seen_ids:
            raise CorpusFormatError(
                f"duplicate sequence id {record.sequence_id!r}", line_number
            )
        seen_ids.add(record.sequence_id)
        for j, step in enumerate(record.steps):
            problems = validate_step(step, epsilon=epsilon)
            if problems:
                raise CorpusFormatError(
                    f"step {j}: {problems[0]}", line_number
                )
        records.append(record)
    return Corpus(records=tuple(records))


def serialize_corpus(corpus: Corpus, stream: IO[str]) -> None:
    """Write a corpus as JSONL.  Floats round-trip exactly (repr encoding)."""
    for record in corpus.records:
        stream.write(json.dumps(record_to_obj(record), separators=(",", ":")))
        stream.write("\n")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write a file via a temp sibling plus rename, so readers never see partials."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    """Serialize a corpus to ``path`` atomically."""
    import io

    buf = io.StringIO()
    serialize_corpus(corpus, buf)
    atomic_write_text(path, buf.getvalue())


def load_corpus(path: str | os.PathLike, epsilon: float) -> Corpus:
    with open(path, "rb") as fh:
        return parse_corpus(fh, epsilon)
