"""Command-line front end.

Subcommands cover the whole workflow: generate synthetic corpora, score a
corpus, evaluate scores against gold data, tune the token threshold, sweep
the jump finder's hyperparameters, and compare cluster finders end to end.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (malformed
corpora, impossible evaluations, failed checks).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

from .cluster import (
    ClusterFinderConfig,
    EpsilonCompletenessError,
    VALID_METHODS as VALID_CLUSTER_METHODS,
)
from .corpus import CorpusFormatError, atomic_write_text, load_corpus, write_corpus
from .evaluation import (
    EPSILON_GRID,
    EvaluationError,
    VALID_TARGETS,
    X_PERCENT_GRID,
    confusion_counts,
    evaluate_sequence,
    evaluate_tokens,
    format_report,
    mcc,
    report_to_csv,
    sweep,
    sweep_to_csv,
    token_scores_and_labels,
    tune_threshold,
)
from .scoring import (
    MethodConfig,
    ScoringError,
    VALID_AGGREGATIONS,
    VALID_SCORE_METHODS,
    results_to_csv,
    score_corpus,
    write_results,
)
from .synthlab import SynthSpec, format_theory_report, generate, theory_check

WORKERS_ENV = "PROBQE_WORKERS"

FINDER_GRIDS: dict[str, list[dict]] = {
    "jump-cut": [
        {"x_percent": x, "epsilon": e} for x in X_PERCENT_GRID for e in EPSILON_GRID
    ],
    "top-k": [{"k": k} for k in (1, 2, 3, 5, 7, 10)],
    "top-p": [{"p": p} for p in (0.5, 0.7, 0.9, 0.95)],
    "epsilon-cut": [{"epsilon": e} for e in (0.005, 0.01, 0.05, 0.1, 0.2)],
    "eta-cut": [{"eta": e} for e in (0.0009, 0.002, 0.005, 0.01, 0.05)],
    "min-p": [{"p": p} for p in (0.5, 0.7, 0.8, 0.9, 0.95)],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_span(text: str, kind):
    """Parse 'lo:hi' (or a single value) into an inclusive range tuple."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            v = kind(parts[0])
            return (v, v)
        if len(parts) == 2:
            return (kind(parts[0]), kind(parts[1]))
    except ValueError:
        pass
    raise UsageError(f"expected 'lo:hi', got {text!r}")


def _parse_listing(text: str, kind):
    try:
        return tuple(kind(part) for part in text.split(",") if part)
    except ValueError:
        raise UsageError(f"expected comma-separated values, got {text!r}") from None


def _add_method_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--method", choices=VALID_SCORE_METHODS, default="boostedprob")
    sp.add_argument("--aggregation", choices=VALID_AGGREGATIONS, default="mean")
    sp.add_argument(
        "--cluster-method", choices=VALID_CLUSTER_METHODS, default="jump-cut"
    )
    sp.add_argument("--x", type=float, default=0.3,
                    help="jump finder relative drop threshold")
    sp.add_argument("--eps", type=float, default=0.005,
                    help="absolute drop floor; also the ingestion completeness bound")
    sp.add_argument("--k", type=int, default=5, help="top-k cluster size")
    sp.add_argument("--p", type=float, default=0.9, help="top-p / min-p parameter")
    sp.add_argument("--eta", type=float, default=0.01, help="eta-cut parameter")
    sp.add_argument("--first-drop", action="store_true",
                    help="cut at the first significant drop instead of the last")
    sp.add_argument("--mc-length-normalize", action="store_true",
                    help="divide Monte-Carlo sequence scores by step count")
    sp.add_argument("--workers", type=int, default=_default_workers(),
                    help=f"parallel scoring processes (default ${WORKERS_ENV} or 1)")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file with flag defaults; flags win")
    sp.add_argument("--grouping", default="", help="free-form tag for report rows")


def _method_config(ns) -> MethodConfig:
    cluster = ClusterFinderConfig(
        method=ns.cluster_method,
        x_percent=ns.x,
        epsilon=ns.eps,
        k=ns.k,
        p=ns.p,
        eta=ns.eta,
        first_drop=ns.first_drop,
    )
    return MethodConfig(
        method=ns.method,
        aggregation=ns.aggregation,
        cluster=cluster,
        mc_length_normalize=ns.mc_length_normalize,
    )


def _tag_report(report, config: MethodConfig):
    if config.method == "boostedprob" and config.cluster.method == "jump-cut":
        return dataclasses.replace(
            report, x_percent=config.cluster.x_percent, epsilon=config.cluster.epsilon
        )
    return report


def _score_with_warnings(corpus, config, workers):
    results, failures = score_corpus(corpus, config, workers=workers)
    for seq_id, reason in failures:
        print(f"warning: skipped {seq_id}: {reason}", file=sys.stderr)
    return results, failures


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="probqe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    subs: dict[str, argparse.ArgumentParser] = {}

    sp = sub.add_parser("score",
                        help="score a corpus, write per-sequence results")
    sp.add_argument("--in", dest="in_path", required=True, metavar="CORPUS")
    sp.add_argument("--out", required=True, help="output scores (JSONL)")
    sp.add_argument("--csv", help="also write a csv of sequence scores")
    _add_method_args(sp)
    _add_common(sp)
    subs["score"] = sp

    sp = sub.add_parser("eval",
                        help="evaluate scores against gold data")
    sp.add_argument("--in", dest="in_path", metavar="CORPUS",
                    help="corpus for sequence-level evaluation")
    sp.add_argument("--tokens", action="store_true",
                    help="token-level MCC instead of sequence-level Pearson")
    sp.add_argument("--dev", help="dev corpus for threshold tuning (token mode)")
    sp.add_argument("--test", help="test corpus (token mode)")
    sp.add_argument("--threshold", type=float,
                    help="fixed OK/BAD threshold; skips tuning")
    sp.add_argument("--macro", action="store_true",
                    help="average per-sequence MCC instead of pooling tokens")
    sp.add_argument("--out", help="write the report as CSV")
    _add_method_args(sp)
    _add_common(sp)
    subs["eval"] = sp

    sp = sub.add_parser("tune",
                        help="tune the OK/BAD threshold on a dev corpus")
    sp.add_argument("--dev", required=True)
    sp.add_argument("--out", help="write the dev report as CSV")
    _add_method_args(sp)
    _add_common(sp)
    subs["tune"] = sp

    sp = sub.add_parser("sweep",
                        help="grid-sweep the jump finder on a dev corpus")
    sp.add_argument("--dev", required=True)
    sp.add_argument("--target", choices=VALID_TARGETS, default="pearson-vs-gold")
    sp.add_argument("--x-grid", help="comma-separated x values")
    sp.add_argument("--eps-grid", help="comma-separated epsilon values")
    sp.add_argument("--aggregation", choices=VALID_AGGREGATIONS, default="mean")
    sp.add_argument("--eps", type=float, default=0.005,
                    help="ingestion completeness bound")
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--out", help="write the sweep as CSV")
    _add_common(sp)
    subs["sweep"] = sp

    sp = sub.add_parser("synth",
                        help="generate a synthetic corpus with known gold data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, required=True, help="number of sequences")
    sp.add_argument("--steps", default="5:15", help="steps per sequence, lo:hi")
    sp.add_argument("--k", default="2:5", help="correct-token count range, lo:hi")
    sp.add_argument("--q", default="0.85:0.95", help="correct-mass range, lo:hi")
    sp.add_argument("--competence", type=float, default=0.8)
    sp.add_argument("--error-mode", choices=("overconfident", "uncertain"),
                    default="overconfident")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--vocab", type=int, default=1000)
    sp.add_argument("--eps", type=float, default=0.005)
    sp.add_argument("--sidecar", help="write generator metadata to this JSON file")
    _add_common(sp)
    subs["synth"] = sp

    sp = sub.add_parser("theory",
                        help="check the mass-splitting table; exit 2 on failure")
    sp.add_argument("--k-max", type=int, default=10)
    sp.add_argument("--q", default="0.9,0.95,0.99", help="comma-separated q values")
    sp.add_argument("--x", type=float, default=0.3)
    sp.add_argument("--eps", type=float, default=0.005)
    _add_common(sp)
    subs["theory"] = sp

    sp = sub.add_parser("compare-finders",
                        help="tune each cluster finder on dev, rank them on test")
    sp.add_argument("--dev", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--finders", default=",".join(VALID_CLUSTER_METHODS),
                    help="comma-separated finder names")
    sp.add_argument("--target", choices=VALID_TARGETS, default="pearson-vs-gold")
    sp.add_argument("--aggregation", choices=VALID_AGGREGATIONS, default="mean")
    sp.add_argument("--eps", type=float, default=0.005,
                    help="ingestion completeness bound")
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--out", help="write the ranking as CSV")
    _add_common(sp)
    subs["compare-finders"] = sp

    return parser, subs


def _apply_config_file(parser, subs, argv):
    """Fold --config JSON values in as subcommand defaults; explicit flags win."""
    try:
        ns, _ = parser.parse_known_args(argv)
    except UsageError:
        return
    config_path = getattr(ns, "config", None)
    command = getattr(ns, "command", None)
    if not config_path or command not in subs:
        return
    try:
        with open(config_path, encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("config must be a JSON object")
    sp = subs[command]
    known = {action.dest for action in sp._actions}
    mapped = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"config key {key!r} matches no {command} option")
        mapped[dest] = value
    sp.set_defaults(**mapped)


@dataclasses.dataclass(frozen=True)
class FinderResult:
    method: str
    params: dict
    dev_value: float
    test_value: float
    threshold: float | None = None


def _finder_cell(corpus, method, params, target, aggregation, workers):
    """Dev-set value of one finder configuration, or (nan, reason)."""
    config = MethodConfig(
        method="boostedprob",
        aggregation=aggregation,
        cluster=ClusterFinderConfig(method=method, **params),
    )
    results, failures = score_corpus(corpus, config, workers=workers)
    if failures:
        return math.nan, None, f"{len(failures)} records unscorable"
    try:
        if target == "pearson-vs-gold":
            return evaluate_sequence(corpus, results).pearson, None, None
        scores, labels = token_scores_and_labels(corpus, results)
        threshold = tune_threshold(scores, labels)
        return (
            mcc(*confusion_counts(scores, labels, threshold)),
            threshold,
            None,
        )
    except ValueError as exc:
        return math.nan, None, str(exc)


def compare_finders(
    dev_corpus,
    test_corpus,
    finders=VALID_CLUSTER_METHODS,
    target: str = "pearson-vs-gold",
    aggregation: str = "mean",
    workers: int = 1,
    grids: dict[str, list[dict]] | None = None,
) -> list[FinderResult]:
    """Pick each finder's best settings on dev, then rank the finders on test.

    For the token target the threshold is tuned on dev and carried over to
    test unchanged.  Finders whose every dev cell fails are dropped with a
    warning on stderr.
    """
    grids = grids if grids is not None else FINDER_GRIDS
    ranked: list[FinderResult] = []
    for method in finders:
        best = None
        for params in grids[method]:
            value, threshold, failure = _finder_cell(
                dev_corpus, method, params, target, aggregation, workers
            )
            if failure is not None:
                continue
            if best is None or value > best[0]:
                best = (value, params, threshold)
        if best is None:
            print(f"warning: finder {method}: no usable dev cell", file=sys.stderr)
            continue
        dev_value, params, threshold = best
        config = MethodConfig(
            method="boostedprob",
            aggregation=aggregation,
            cluster=ClusterFinderConfig(method=method, **params),
        )
        results, failures = score_corpus(test_corpus, config, workers=workers)
        if failures:
            print(
                f"warning: finder {method}: {len(failures)} test records unscorable",
                file=sys.stderr,
            )
            continue
        if target == "pearson-vs-gold":
            test_value = evaluate_sequence(test_corpus, results).pearson
        else:
            test_value = evaluate_tokens(test_corpus, results, threshold).mcc
        ranked.append(FinderResult(method, params, dev_value, test_value, threshold))
    ranked.sort(key=lambda r: -r.test_value)
    return ranked


def _format_params(params: dict) -> str:
    return " ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in params.items())


def _finders_csv(ranked) -> str:
    lines = ["method,params,dev_value,test_value,threshold"]
    for r in ranked:
        params = ";".join(f"{k}={v!r}" for k, v in r.params.items())
        threshold = "" if r.threshold is None else repr(r.threshold)
        lines.append(f"{r.method},{params},{r.dev_value!r},{r.test_value!r},{threshold}")
    return "\n".join(lines) + "\n"


def _cmd_score(ns) -> int:
    config = _method_config(ns)
    corpus = load_corpus(ns.in_path, ns.eps)
    results, failures = _score_with_warnings(corpus, config, ns.workers)
    if not results:
        print("error: no record could be scored", file=sys.stderr)
        return 2
    write_results(results, ns.out)
    if ns.csv:
        atomic_write_text(ns.csv, results_to_csv(results))
    print(f"scored {len(results)} sequences -> {ns.out}")
    return 0


def _cmd_eval(ns) -> int:
    config = _method_config(ns)
    if ns.tokens:
        test_path = ns.test or ns.in_path
        if not test_path:
            raise UsageError("token evaluation needs --test (or --in)")
        test_corpus = load_corpus(test_path, ns.eps)
        if ns.threshold is not None:
            threshold = ns.threshold
        else:
            if not ns.dev:
                raise UsageError("token evaluation needs --threshold or --dev")
            dev_corpus = load_corpus(ns.dev, ns.eps)
            dev_results, _ = _score_with_warnings(dev_corpus, config, ns.workers)
            scores, labels = token_scores_and_labels(dev_corpus, dev_results)
            threshold = tune_threshold(scores, labels)
        results, _ = _score_with_warnings(test_corpus, config, ns.workers)
        report = evaluate_tokens(
            test_corpus, results, threshold, grouping=ns.grouping, macro=ns.macro
        )
    else:
        path = ns.in_path or ns.test
        if not path:
            raise UsageError("sequence evaluation needs --in")
        corpus = load_corpus(path, ns.eps)
        results, _ = _score_with_warnings(corpus, config, ns.workers)
        report = evaluate_sequence(corpus, results, grouping=ns.grouping)
    report = _tag_report(report, config)
    print(format_report(report))
    if ns.out:
        atomic_write_text(ns.out, report_to_csv([report]))
    return 0


def _cmd_tune(ns) -> int:
    config = _method_config(ns)
    corpus = load_corpus(ns.dev, ns.eps)
    results, _ = _score_with_warnings(corpus, config, ns.workers)
    scores, labels = token_scores_and_labels(corpus, results)
    threshold = tune_threshold(scores, labels)
    report = evaluate_tokens(corpus, results, threshold, grouping=ns.grouping)
    report = _tag_report(report, config)
    print(format_report(report))
    if ns.out:
        atomic_write_text(ns.out, report_to_csv([report]))
    return 0


def _cmd_sweep(ns) -> int:
    corpus = load_corpus(ns.dev, ns.eps)
    x_grid = _parse_listing(ns.x_grid, float) if ns.x_grid else None
    eps_grid = _parse_listing(ns.eps_grid, float) if ns.eps_grid else None
    table = sweep(
        corpus,
        target=ns.target,
        x_grid=x_grid,
        eps_grid=eps_grid,
        aggregation=ns.aggregation,
        workers=ns.workers,
    )
    for entry in table.entries:
        print(f"x={entry.x_percent:g} eps={entry.epsilon:g} "
              f"{table.target}={entry.value:.6f}")
    for x, eps, reason in table.failed:
        print(f"x={x:g} eps={eps:g} failed: {reason}", file=sys.stderr)
    if ns.out:
        atomic_write_text(ns.out, sweep_to_csv(table))
    if not table.entries:
        print("error: every sweep cell failed", file=sys.stderr)
        return 2
    best = table.best
    print(f"best: x={best.x_percent:g} eps={best.epsilon:g} value={best.value:.6f}")
    return 0


def _cmd_synth(ns) -> int:
    spec = SynthSpec(
        n_sequences=ns.n,
        steps_per_seq=_parse_span(ns.steps, int),
        k_correct=_parse_span(ns.k, int),
        correct_mass=_parse_span(ns.q, float),
        competence=ns.competence,
        seed=ns.seed,
        vocab_size=ns.vocab,
        error_mode=ns.error_mode,
        epsilon=ns.eps,
    )
    corpus = generate(spec)
    write_corpus(corpus, ns.out)
    if ns.sidecar:
        atomic_write_text(
            ns.sidecar, json.dumps(corpus.metadata, indent=2, sort_keys=True) + "\n"
        )
    print(f"wrote {len(corpus)} sequences -> {ns.out}")
    return 0


def _cmd_theory(ns) -> int:
    report = theory_check(
        k_max=ns.k_max,
        q_list=_parse_listing(ns.q, float),
        x_percent=ns.x,
        epsilon=ns.eps,
    )
    print(format_theory_report(report))
    return 0 if report.all_passed else 2


def _cmd_compare_finders(ns) -> int:
    finders = tuple(_parse_listing(ns.finders, str))
    if not finders:
        raise UsageError("no finders given")
    for name in finders:
        if name not in FINDER_GRIDS:
            raise UsageError(f"unknown finder {name!r}")
    dev_corpus = load_corpus(ns.dev, ns.eps)
    test_corpus = load_corpus(ns.test, ns.eps)
    ranked = compare_finders(
        dev_corpus,
        test_corpus,
        finders=finders,
        target=ns.target,
        aggregation=ns.aggregation,
        workers=ns.workers,
    )
    if not ranked:
        print("error: no finder produced a usable result", file=sys.stderr)
        return 2
    width = max(len(r.method) for r in ranked)
    for r in ranked:
        print(f"{r.method.ljust(width)}  dev={r.dev_value:.6f}  "
              f"test={r.test_value:.6f}  {_format_params(r.params)}")
    if ns.out:
        atomic_write_text(ns.out, _finders_csv(ranked))
    return 0


_COMMANDS = {
    "score": _cmd_score,
    "eval": _cmd_eval,
    "tune": _cmd_tune,
    "sweep": _cmd_sweep,
    "synth": _cmd_synth,
    "theory": _cmd_theory,
    "compare-finders": _cmd_compare_finders,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        _apply_config_file(parser, subs, argv)
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a subcommand is required (try --help)")
        return _COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (CorpusFormatError, EvaluationError, ScoringError,
            EpsilonCompletenessError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
