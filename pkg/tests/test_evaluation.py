"""Correlation metrics, threshold tuning, and the hyperparameter sweep."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from probqe.cluster import jump_cut
from probqe.corpus import Corpus, SequenceRecord, StepDistribution
from probqe.evaluation import (
    EPSILON_GRID,
    X_PERCENT_GRID,
    ConstantInputError,
    EvalReport,
    EvaluationError,
    confusion_counts,
    evaluate_sequence,
    evaluate_tokens,
    format_report,
    mcc,
    pearson,
    report_to_csv,
    sweep,
    sweep_to_csv,
    tune_threshold,
)
from probqe.scoring import QEResult
from oracles import phi_mcc, tune_threshold_reference


class TestPearson:
    def test_perfect_linear(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_inverse(self):
        assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0, abs=1e-12)

    def test_known_value(self):
        assert pearson([1, 2, 3], [1, 1, 2]) == pytest.approx(
            math.sqrt(3) / 2, abs=1e-12)

    def test_constant_input(self):
        with pytest.raises(ConstantInputError):
            pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(ConstantInputError):
            pearson([1, 2, 3], [5, 5, 5])

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            pearson([1], [2])

    def test_tiny_variance_stays_defined(self):
        # both variances positive but their product underflows float64
        r = pearson([0.0, 2.220446049250313e-16],
                    [0.0, 1.456282403154455e-148])
        assert r == pytest.approx(1.0, abs=1e-12)

    @settings(deadline=None, max_examples=150)
    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
                    min_size=2, max_size=25))
    def test_symmetric_and_bounded(self, pairs):
        xs = [a for a, _ in pairs]
        ys = [b for _, b in pairs]
        # distinctness is not enough: a sub-normal spread underflows to
        # zero variance, which is the documented ConstantInputError case
        assume(max(xs) - min(xs) > 1e-9 and max(ys) - min(ys) > 1e-9)
        r = pearson(xs, ys)
        assert -1.0 <= r <= 1.0
        assert pearson(ys, xs) == r

    @settings(deadline=None, max_examples=150)
    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
                    min_size=2, max_size=25),
           st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance(self, pairs, scale, shift):
        xs = [a for a, _ in pairs]
        ys = [b for _, b in pairs]
        # a spread near one ulp cannot survive the shift numerically, and a
        # sub-normal spread in either input underflows to zero variance
        assume(max(xs) - min(xs) > 0.01 and max(ys) - min(ys) > 1e-9)
        moved = [scale * a + shift for a in xs]
        assert pearson(moved, ys) == pytest.approx(pearson(xs, ys), abs=1e-6)


class TestMcc:
    def test_perfect(self):
        assert mcc(1, 0, 1, 0) == 1.0

    def test_chance(self):
        assert mcc(1, 1, 1, 1) == 0.0

    def test_known_value(self):
        assert mcc(3, 1, 4, 2) == pytest.approx(10 / math.sqrt(600), abs=1e-12)

    def test_zero_margin(self):
        assert mcc(0, 0, 3, 2) == 0.0
        assert mcc(2, 3, 0, 0) == 0.0

    @settings(deadline=None, max_examples=200)
    @given(st.integers(0, 50), st.integers(0, 50),
           st.integers(0, 50), st.integers(0, 50))
    def test_bounded_and_class_swap_symmetric(self, tp, fp, tn, fn):
        value = mcc(tp, fp, tn, fn)
        assert -1.0 <= value <= 1.0
        assert mcc(tn, fn, tp, fp) == value

    @settings(deadline=None, max_examples=150)
    @given(st.integers(0, 10**9))
    def test_equals_phi_coefficient(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 60))
        scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
        labels = ["OK" if v else "BAD" for v in rng.integers(0, 2, size=n)]
        threshold = float(rng.choice([0.2, 0.4, 0.6, 0.8]))
        counts = confusion_counts(scores, labels, threshold)
        expected = phi_mcc([lab == "OK" for lab in labels],
                           [s >= threshold for s in scores])
        assert mcc(*counts) == pytest.approx(expected, abs=1e-12)


class TestConfusionCounts:
    def test_orientation(self):
        scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.6, 0.4, 0.3, 0.2, 0.1]
        labels = ["OK"] * 5 + ["BAD"] * 5
        assert confusion_counts(scores, labels, 0.5) == (3, 1, 4, 2)

    def test_threshold_is_inclusive(self):
        assert confusion_counts([0.5], ["OK"], 0.5) == (1, 0, 0, 0)
        assert confusion_counts([0.5], ["BAD"], 0.5) == (0, 1, 0, 0)


class TestTuneThreshold:
    def test_perfect_separation_midpoint(self):
        t = tune_threshold([0.1, 0.4, 0.6, 0.9], ["BAD", "BAD", "OK", "OK"])
        assert t == 0.5
        assert mcc(*confusion_counts([0.1, 0.4, 0.6, 0.9],
                                     ["BAD", "BAD", "OK", "OK"], t)) == 1.0

    def test_inverted_pair_prefers_smallest(self):
        assert tune_threshold([0.2, 0.8], ["OK", "BAD"]) == 0.2

    def test_identical_scores(self):
        assert tune_threshold([0.7, 0.7, 0.7], ["OK", "BAD", "OK"]) == 0.7

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError):
            tune_threshold([0.2, 0.8], ["OK", "OK"])
        with pytest.raises(EvaluationError):
            tune_threshold([0.2, 0.8], ["BAD", "BAD"])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            tune_threshold([], [])

    @settings(deadline=None, max_examples=200)
    @given(st.integers(0, 10**9))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 50))
        scores = rng.choice([0.05, 0.2, 0.35, 0.5, 0.5, 0.65, 0.8], size=n)
        labels = ["OK" if v else "BAD" for v in rng.integers(0, 2, size=n)]
        labels[0], labels[-1] = "OK", "BAD"
        t = tune_threshold(scores.tolist(), labels)
        ref_t, ref_m = tune_threshold_reference(scores, labels)
        assert t == ref_t
        assert mcc(*confusion_counts(scores, labels, t)) == ref_m


def results_for(corpus, per_record_scores, method="raw-probability"):
    return [
        QEResult(record.sequence_id, method, tuple(scores),
                 sum(scores) / len(scores))
        for record, scores in zip(corpus.records, per_record_scores)
    ]


def labeled_corpus(per_record_labels, gold=None):
    one_hot = StepDistribution(((5, 1.0),), chosen_index=0)
    records = []
    for i, labels in enumerate(per_record_labels):
        records.append(SequenceRecord(
            f"s{i}", (one_hot,) * len(labels), token_labels=tuple(labels),
            gold_score=None if gold is None else gold[i],
        ))
    return Corpus(records=tuple(records))


class TestEvaluateSequence:
    def corpus(self, gold):
        return labeled_corpus([["OK"]] * len(gold), gold=gold)

    def test_perfect(self):
        corpus = self.corpus([0.1, 0.5, 0.9])
        results = results_for(corpus, [[0.1], [0.5], [0.9]])
        report = evaluate_sequence(corpus, results)
        assert report.pearson == pytest.approx(1.0, abs=1e-12)
        assert report.n == 3
        assert report.method == "raw-probability"

    def test_affine_gold_scale(self):
        corpus = self.corpus([10.0, 50.0, 90.0])
        results = results_for(corpus, [[0.1], [0.5], [0.9]])
        assert evaluate_sequence(corpus, results).pearson == pytest.approx(
            1.0, abs=1e-12)

    def test_inverted(self):
        corpus = self.corpus([0.9, 0.5, 0.1])
        results = results_for(corpus, [[0.1], [0.5], [0.9]])
        assert evaluate_sequence(corpus, results).pearson == pytest.approx(
            -1.0, abs=1e-12)

    def test_missing_gold(self):
        corpus = labeled_corpus([["OK"], ["OK"]])
        results = results_for(corpus, [[0.1], [0.9]])
        with pytest.raises(EvaluationError, match="s0"):
            evaluate_sequence(corpus, results)

    def test_missing_result(self):
        corpus = self.corpus([0.1, 0.9])
        results = results_for(corpus, [[0.1], [0.9]])[:1]
        with pytest.raises(EvaluationError, match="no score.*s1"):
            evaluate_sequence(corpus, results)

    def test_single_record_rejected(self):
        corpus = self.corpus([0.5])
        results = results_for(corpus, [[0.5]])
        with pytest.raises(EvaluationError):
            evaluate_sequence(corpus, results)


class TestEvaluateTokens:
    def pooled_case(self):
        corpus = labeled_corpus([["OK"] * 5, ["BAD"] * 5])
        results = results_for(corpus, [[0.9, 0.8, 0.7, 0.3, 0.2],
                                       [0.6, 0.4, 0.3, 0.2, 0.1]])
        return corpus, results

    def test_micro_pools_all_tokens(self):
        corpus, results = self.pooled_case()
        report = evaluate_tokens(corpus, results, 0.5)
        assert report.mcc == pytest.approx(10 / math.sqrt(600), abs=1e-12)
        assert report.n == 10
        assert report.threshold == 0.5

    def test_macro_averages_per_sequence(self):
        corpus, results = self.pooled_case()
        report = evaluate_tokens(corpus, results, 0.5, macro=True)
        # each record is single-class, so both per-sequence MCC terms are 0
        assert report.mcc == 0.0
        assert report.n == 10

    def test_perfect_separation(self):
        corpus = labeled_corpus([["OK", "BAD"], ["BAD", "OK"]])
        results = results_for(corpus, [[0.9, 0.1], [0.2, 0.8]])
        assert evaluate_tokens(corpus, results, 0.5).mcc == pytest.approx(
            1.0, abs=1e-12)

    def test_inverted_scores(self):
        corpus = labeled_corpus([["OK", "BAD"], ["BAD", "OK"]])
        results = results_for(corpus, [[0.1, 0.9], [0.8, 0.2]])
        assert evaluate_tokens(corpus, results, 0.5).mcc == pytest.approx(
            -1.0, abs=1e-12)

    def test_missing_labels(self):
        corpus = Corpus(records=(SequenceRecord(
            "s0", (StepDistribution(((5, 1.0),), chosen_index=0),)),))
        results = results_for(corpus, [[0.5]])
        with pytest.raises(EvaluationError, match="labels"):
            evaluate_tokens(corpus, results, 0.5)

    def test_score_label_mismatch(self):
        corpus = labeled_corpus([["OK", "BAD"]])
        results = results_for(corpus, [[0.5]])
        with pytest.raises(EvaluationError, match="disagree"):
            evaluate_tokens(corpus, results, 0.5)


def safe_glide(start, floor=0.005, shrink=0.19, step=0.0048):
    """Descend fast but below the significance floor at every grid cell."""
    out = []
    p = start
    while p > floor:
        out.append(p)
        p -= max(shrink * p, step)
    out.append(p)
    return out


def engineered_step(pair, g0, chosen_index=None, chosen_probability=None):
    """A leader pair over a trailing glide, with the tail mean tucked close
    under the last head entry so only the pair boundary can ever cut."""
    probs = list(pair) + safe_glide(g0)
    tail_mass = 1.0 - sum(probs)
    v_target = min(0.0045, 0.9 * probs[-1])
    tail_count = max(1, round(tail_mass / v_target))
    head = tuple((10 + i, p) for i, p in enumerate(probs))
    return StepDistribution(head, tail_mass, tail_count,
                            chosen_index=chosen_index,
                            chosen_probability=chosen_probability)


# chosen drop of 36% after the pair: clusters at x <= 0.3, not x >= 0.4
STEP_OK_SPLIT = engineered_step((0.15, 0.15), 0.096, chosen_index=1)
# drop of 25% after the pair: clusters only at x = 0.2, boosting a bad token
# just past the split-OK boost (0.31 vs 0.30)
STEP_BAD_TRAP = engineered_step((0.155, 0.155), 0.11625, chosen_index=1)
STEP_OK_SURE = StepDistribution(((5, 1.0),), chosen_index=0)
STEP_BAD_TAIL = engineered_step((0.15, 0.15), 0.096, chosen_probability=0.002)


def engineered_corpus():
    steps = (STEP_OK_SPLIT, STEP_BAD_TRAP, STEP_OK_SURE, STEP_BAD_TAIL)
    labels = ("OK", "BAD", "OK", "BAD")
    records = tuple(
        SequenceRecord(f"eng-{i}", steps, token_labels=labels)
        for i in range(4)
    )
    return Corpus(records=records)


class TestSweep:
    def test_grid_defaults(self):
        assert X_PERCENT_GRID == (0.2, 0.3, 0.4, 0.5, 0.6)
        assert EPSILON_GRID == (0.005, 0.01, 0.1)

    def test_engineered_construction_behaves_as_designed(self):
        # three regimes: both boosted, only the OK split boosted, neither
        assert jump_cut(STEP_OK_SPLIT, 0.2, 0.005).cutting_index == 2
        assert jump_cut(STEP_BAD_TRAP, 0.2, 0.005).cutting_index == 2
        assert jump_cut(STEP_OK_SPLIT, 0.3, 0.005).cutting_index == 2
        assert jump_cut(STEP_BAD_TRAP, 0.3, 0.005).cutting_index == 1
        assert jump_cut(STEP_OK_SPLIT, 0.4, 0.005).cutting_index == 1
        assert jump_cut(STEP_OK_SPLIT, 0.2, 0.1).cutting_index == 1

    def test_default_grid_crowns_standard_settings(self):
        table = sweep(engineered_corpus(), target="mcc-vs-labels")
        assert len(table.entries) == 15
        assert table.failed == ()
        assert (table.best.x_percent, table.best.epsilon) == (0.3, 0.005)
        assert table.best.value == pytest.approx(1.0, abs=1e-12)
        # every smaller-x cell is strictly worse, so the win is not a tie
        for entry in table.entries:
            if entry.x_percent < 0.3:
                assert entry.value < table.best.value

    def test_entries_sorted_by_value_then_grid(self):
        table = sweep(engineered_corpus(), target="mcc-vs-labels")
        keys = [(-e.value, e.x_percent, e.epsilon) for e in table.entries]
        assert keys == sorted(keys)

    def test_single_cell_grid(self):
        table = sweep(engineered_corpus(), target="mcc-vs-labels",
                      x_grid=[0.3], eps_grid=[0.005])
        assert len(table.entries) == 1
        assert table.entries[0].x_percent == 0.3

    def test_pearson_target(self):
        # two-step records with different OK mixes give gold variance
        records = (
            SequenceRecord("hi", (STEP_OK_SURE, STEP_OK_SPLIT),
                           gold_score=1.0),
            SequenceRecord("mid", (STEP_OK_SPLIT, STEP_BAD_TAIL),
                           gold_score=0.5),
            SequenceRecord("lo", (STEP_BAD_TAIL, STEP_BAD_TRAP),
                           gold_score=0.0),
        )
        table = sweep(Corpus(records=records), target="pearson-vs-gold")
        assert len(table.entries) == 15
        assert table.best.value > 0.9

    def test_unknown_target(self):
        with pytest.raises(ValueError):
            sweep(engineered_corpus(), target="accuracy")

    def test_unscorable_cells_reported_not_raised(self):
        # the tail's mean of 0.007 breaks completeness at eps=0.005 only
        coarse = StepDistribution(((1, 0.9), (2, 0.03)), 0.07, 10,
                                  chosen_index=0)
        records = (
            SequenceRecord("coarse", (coarse,), token_labels=("OK",)),
            SequenceRecord("fine", (STEP_OK_SURE, STEP_BAD_TAIL),
                           token_labels=("OK", "BAD")),
        )
        table = sweep(Corpus(records=records), target="mcc-vs-labels")
        assert len(table.entries) == 10
        assert len(table.failed) == 5
        assert sorted(x for x, _, _ in table.failed) == list(X_PERCENT_GRID)
        assert all(eps == 0.005 for _, eps, _ in table.failed)
        assert all("coarse" in reason for _, _, reason in table.failed)

    def test_csv_is_deterministic(self):
        first = sweep_to_csv(sweep(engineered_corpus(), target="mcc-vs-labels"))
        second = sweep_to_csv(sweep(engineered_corpus(), target="mcc-vs-labels"))
        assert first == second
        header, *rows = first.strip().splitlines()
        assert header == "x_percent,epsilon,metric,value"
        assert len(rows) == 15
        assert rows[0].startswith("0.3,0.005,mcc-vs-labels,")


class TestReportOutput:
    def test_csv_columns(self):
        reports = [
            EvalReport(method="boostedprob", grouping="dev", pearson=0.75, n=40),
            EvalReport(method="boostedprob", grouping="test", mcc=0.5,
                       threshold=0.35, n=200, x_percent=0.3, epsilon=0.005),
        ]
        lines = report_to_csv(reports).strip().splitlines()
        assert lines[0] == "method,grouping,metric,value,n,threshold,x_percent,epsilon"
        assert lines[1] == "boostedprob,dev,pearson,0.75,40,,,"
        assert lines[2] == "boostedprob,test,mcc,0.5,200,0.35,0.3,0.005"

    def test_format_report(self):
        text = format_report(EvalReport(method="entropy", pearson=0.8662, n=12))
        assert "entropy" in text
        assert "pearson" in text
        assert "0.866200" in text
        assert "12" in text

    def test_report_defaults(self):
        report = EvalReport(method="m")
        assert report.pearson is None and report.mcc is None
        assert report.threshold is None and report.n == 0
