"""Turns a causal language model's per-step logits into probqe corpora.

Two decode modes. Free mode generates greedily from each prompt and records
the distribution the model held at every emitted token, so the chosen token
is always the head's first entry. Forced mode never generates: it walks a
fixed target sequence token by token and records the distribution the model
assigned at each target position, which is how one model scores another
model's output.

The head of each emitted step keeps every token with probability strictly
above the job's epsilon, plus the single next token below the line so the
truncation provably lost nothing above epsilon. The rest of the vocabulary
is summarized as (tail_mass, tail_count). Heads are capped at 4096 entries;
an epsilon small enough to need more is a hard error rather than a silently
incomplete file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from probqe.corpus import (
    Corpus,
    CorpusFormatError,
    SequenceRecord,
    StepDistribution,
    validate_step,
    write_corpus,
)

HEAD_CAP = 4096

DECODE_MODES = ("free", "forced")


class ExtractionError(Exception):
    """Extraction could not produce a valid corpus."""


class HeadOverflowError(ExtractionError):
    """Completeness at the requested epsilon would need more than HEAD_CAP entries."""


class _SkipRecord(Exception):
    """Internal: this input line cannot be scored, move on with a diagnostic."""


@dataclass(frozen=True)
class ExtractionJob:
    """One batch extraction: a model, input lines, and an output corpus path.

    ``prompt_template`` is applied to every input line via ``{text}``.  In
    forced mode ``target_path`` supplies one target per input line and the
    emitted steps follow the target's tokens instead of generation.
    """

    model: str
    input_path: str | Path
    output_path: str | Path
    mode: str = "free"
    target_path: str | Path | None = None
    prompt_template: str = "{text}"
    epsilon: float = 0.005
    max_new_tokens: int = 32
    device: str = "cpu"

    def __post_init__(self):
        if self.mode not in DECODE_MODES:
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if (self.target_path is not None) != (self.mode == "forced"):
            raise ValueError("target_path must be given exactly when mode is 'forced'")
        if not (0.0 < self.epsilon <= 0.05):
            raise ValueError("epsilon must sit in (0, 0.05]")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        try:
            self.prompt_template.format(text="probe")
        except (KeyError, IndexError) as exc:
            raise ValueError(
                f"prompt_template must format with a 'text' field: {exc}"
            ) from None


@dataclass(frozen=True)
class ExtractionReport:
    """What a run produced: the corpus path, counts, and skipped inputs."""

    output_path: str
    written: int
    skipped: tuple[tuple[str, str], ...] = ()


def build_head(probs: np.ndarray, epsilon: float):
    """Truncate one full distribution into (head, tail_mass, tail_count).

    The head takes every probability strictly above epsilon and one boundary
    entry at or below it, so a reader can verify that nothing above epsilon
    was dropped.  Raises HeadOverflowError past HEAD_CAP entries.
    """
    order = np.argsort(-probs, kind="stable")
    ranked = probs[order]
    above = int((ranked > epsilon).sum())
    needed = above if above == len(ranked) else above + 1
    if needed > HEAD_CAP:
        raise HeadOverflowError(
            f"head would need {needed} entries for epsilon {epsilon:g}, "
            f"cap is {HEAD_CAP}"
        )
    head = tuple(
        (int(order[k]), float(ranked[k])) for k in range(needed)
    )
    tail_count = len(ranked) - needed
    if tail_count == 0:
        return head, 0.0, 0
    tail_mass = max(0.0, 1.0 - float(ranked[:needed].sum()))
    return head, tail_mass, tail_count


def _read_lines(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _load_model(job: ExtractionJob):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(job.model)
    model = AutoModelForCausalLM.from_pretrained(job.model)
    model.to(job.device)
    model.eval()
    return tokenizer, model


def _next_distribution(model, ids: list[int]) -> np.ndarray:
    import torch

    input_ids = torch.tensor([ids], dtype=torch.long, device=next(model.parameters()).device)
    logits = model(input_ids=input_ids).logits[0, -1]
    return torch.softmax(logits.double(), dim=-1).cpu().numpy()


def _prompt_ids(tokenizer, template: str, line: str) -> list[int]:
    prompt = template.format(text=line)
    try:
        ids = tokenizer(prompt).input_ids
    except Exception as exc:
        raise _SkipRecord(f"prompt tokenization failed: {exc}") from None
    if not ids:
        raise _SkipRecord("prompt produced no tokens")
    return list(ids)


def _extract_free(tokenizer, model, job: ExtractionJob, line: str) -> tuple[list[StepDistribution], str]:
    ids = _prompt_ids(tokenizer, job.prompt_template, line)
    eos = tokenizer.eos_token_id
    steps: list[StepDistribution] = []
    generated: list[int] = []
    for _ in range(job.max_new_tokens):
        probs = _next_distribution(model, ids)
        head, tail_mass, tail_count = build_head(probs, job.epsilon)
        steps.append(
            StepDistribution(head, tail_mass, tail_count, chosen_index=0)
        )
        chosen = head[0][0]
        ids.append(chosen)
        generated.append(chosen)
        if eos is not None and chosen == eos:
            break
    text = tokenizer.decode(generated, skip_special_tokens=True)
    return steps, text


def _extract_forced(tokenizer, model, job: ExtractionJob, line: str, target: str) -> tuple[list[StepDistribution], str]:
    ids = _prompt_ids(tokenizer, job.prompt_template, line)
    try:
        target_ids = tokenizer(target, add_special_tokens=False).input_ids
    except Exception as exc:
        raise _SkipRecord(f"target tokenization failed: {exc}") from None
    if not target_ids:
        raise _SkipRecord("target produced no tokens")
    steps: list[StepDistribution] = []
    for token_id in target_ids:
        probs = _next_distribution(model, ids)
        head, tail_mass, tail_count = build_head(probs, job.epsilon)
        position = {tid: k for k, (tid, _) in enumerate(head)}.get(int(token_id))
        if position is not None:
            step = StepDistribution(head, tail_mass, tail_count, chosen_index=position)
        else:
            step = StepDistribution(
                head, tail_mass, tail_count,
                chosen_probability=float(probs[token_id]),
            )
        steps.append(step)
        ids.append(int(token_id))
    return steps, target


def extract(job: ExtractionJob) -> ExtractionReport:
    """Run the job and write its corpus, returning counts and skip diagnostics.

    One record per input line.  Lines whose prompt or target cannot be
    tokenized are skipped with a reason; every written step is re-checked
    against the corpus invariants at the job's epsilon before the file is
    written atomically.
    """
    import torch

    inputs = _read_lines(job.input_path)
    targets: list[str] | None = None
    if job.mode == "forced":
        targets = _read_lines(job.target_path)
        if len(targets) != len(inputs):
            raise ExtractionError(
                f"{len(inputs)} input lines but {len(targets)} target lines"
            )
    tokenizer, model = _load_model(job)
    records: list[SequenceRecord] = []
    skipped: list[tuple[str, str]] = []
    with torch.no_grad():
        for i, line in enumerate(inputs):
            seq_id = f"seq-{i:04d}"
            try:
                if targets is None:
                    steps, text = _extract_free(tokenizer, model, job, line)
                else:
                    steps, text = _extract_forced(tokenizer, model, job, line, targets[i])
            except _SkipRecord as exc:
                skipped.append((seq_id, str(exc)))
                continue
            for n, step in enumerate(steps):
                problems = validate_step(step, job.epsilon)
                if problems:
                    raise ExtractionError(
                        f"{seq_id} step {n} failed self-check: {problems[0]}"
                    )
            records.append(SequenceRecord(sequence_id=seq_id, steps=tuple(steps), text=text))
    write_corpus(Corpus(records=tuple(records)), job.output_path)
    return ExtractionReport(
        output_path=str(job.output_path),
        written=len(records),
        skipped=tuple(skipped),
    )


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="probqe-extract",
                     description="emit a step-distribution corpus from a causal LM")
    parser.add_argument("--model", required=True, help="model name or local path")
    parser.add_argument("--in", dest="in_path", required=True,
                        help="input lines, one prompt text per line")
    parser.add_argument("--out", required=True, help="corpus output path")
    parser.add_argument("--mode", choices=DECODE_MODES, default="free")
    parser.add_argument("--targets", help="forced-mode targets, one per line")
    parser.add_argument("--template", default="{text}",
                        help="prompt template with a {text} placeholder")
    parser.add_argument("--eps", type=float, default=0.005,
                        help="head completeness threshold")
    parser.add_argument("--max-new-tokens", type=int, default=32)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        job = ExtractionJob(
            model=ns.model,
            input_path=ns.in_path,
            output_path=ns.out,
            mode=ns.mode,
            target_path=ns.targets,
            prompt_template=ns.template,
            epsilon=ns.eps,
            max_new_tokens=ns.max_new_tokens,
        )
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        report = extract(job)
    except (ExtractionError, CorpusFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for seq_id, reason in report.skipped:
        print(f"warning: skipped {seq_id}: {reason}", file=sys.stderr)
    print(f"wrote {report.written} records -> {report.output_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
