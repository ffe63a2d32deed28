"""Synthetic corpus generator and the mass-splitting theory harness."""

import io
import math

import pytest

from probqe.cluster import jump_cut
from probqe.corpus import parse_corpus, serialize_corpus
from probqe.evaluation import evaluate_sequence, pearson
from probqe.scoring import MethodConfig, score_corpus
from probqe.synthlab import (
    SynthSpec,
    TheoryReport,
    format_theory_report,
    generate,
    theory_check,
)


def small_spec(**overrides):
    base = dict(n_sequences=20, steps_per_seq=(3, 8), seed=11)
    base.update(overrides)
    return SynthSpec(**base)


def serialized(corpus):
    buf = io.StringIO()
    serialize_corpus(corpus, buf)
    return buf.getvalue()


class TestSpecValidation:
    @pytest.mark.parametrize("kwargs", [
        {"n_sequences": 0},
        {"steps_per_seq": (0, 5)},
        {"steps_per_seq": (6, 5)},
        {"k_correct": (0, 3)},
        {"k_correct": (4, 3)},
        {"correct_mass": (0.0, 0.9)},
        {"correct_mass": (0.9, 1.1)},
        {"correct_mass": (0.9, 0.8)},
        {"competence": -0.1},
        {"competence": 1.1},
        {"vocab_size": 5, "k_correct": (2, 5)},
        {"error_mode": "sleepy"},
        {"epsilon": 0.0},
    ])
    def test_rejected(self, kwargs):
        with pytest.raises(ValueError):
            small_spec(**kwargs)


class TestGenerate:
    def test_deterministic_and_byte_identical(self):
        spec = small_spec()
        first, second = generate(spec), generate(spec)
        assert first.records == second.records
        assert serialized(first) == serialized(second)

    def test_different_seeds_differ(self):
        assert generate(small_spec(seed=1)).records != \
            generate(small_spec(seed=2)).records

    def test_one_hot_regime(self):
        spec = small_spec(k_correct=(1, 1), correct_mass=(1.0, 1.0),
                          competence=1.0)
        corpus = generate(spec)
        for record in corpus.records:
            assert record.gold_score == 1.0
            assert set(record.token_labels) == {"OK"}
            for step in record.steps:
                assert step.head == ((step.head[0][0], 1.0),)

    def test_three_way_split_regime(self):
        spec = small_spec(k_correct=(3, 3), correct_mass=(0.9, 0.9),
                          competence=1.0)
        for record in generate(spec).records:
            for step in record.steps:
                top = [p for _, p in step.head[:3]]
                assert top == [pytest.approx(0.3, abs=1e-12)] * 3
                assert max(step.head_probs) <= 1 / 3 + 1e-12
                cluster = jump_cut(step)
                assert cluster.cutting_index == 3
                assert cluster.mass == pytest.approx(0.9, abs=1e-12)

    def test_labels_and_gold_agree(self):
        corpus = generate(small_spec())
        for record in corpus.records:
            assert len(record.token_labels) == len(record.steps)
            ok = sum(1 for lab in record.token_labels if lab == "OK")
            assert record.gold_score == ok / len(record.steps)
            assert 0.0 <= record.gold_score <= 1.0

    def test_split_mass_bound_on_competent_steps(self):
        # with full competence every step shares its mass over k equal tops,
        # so the top probability can never exceed 1/k
        corpus = generate(small_spec(competence=1.0, k_correct=(2, 5)))
        for record in corpus.records:
            for step in record.steps:
                top = step.head_probs[0]
                k = sum(1 for p in step.head_probs if p == top)
                assert k >= 2
                assert top <= 1.0 / k + 1e-12

    def test_round_trips_through_the_wire_format(self):
        spec = small_spec()
        corpus = generate(spec)
        reparsed = parse_corpus(io.StringIO(serialized(corpus)), spec.epsilon)
        assert reparsed.records == corpus.records

    def test_metadata_carries_the_generator_settings(self):
        spec = small_spec(seed=99)
        meta = generate(spec).metadata["generator"]
        assert meta["seed"] == 99
        assert meta["n_sequences"] == spec.n_sequences
        assert meta["error_mode"] == "overconfident"

    def test_fillers_stay_below_half_epsilon(self):
        corpus = generate(small_spec(competence=1.0))
        for record in corpus.records:
            for step in record.steps:
                top = step.head_probs[0]
                for p in step.head_probs:
                    assert p == top or p < 0.005 / 2

    def test_overconfident_errors_mimic_split_tops(self):
        spec = small_spec(competence=0.0, error_mode="overconfident",
                          k_correct=(3, 3), correct_mass=(0.9, 0.9))
        corpus = generate(spec)
        for record in corpus.records:
            assert record.gold_score == 0.0
            assert set(record.token_labels) == {"BAD"}
            for step in record.steps:
                # the lone wrong token carries exactly a split-top's worth
                assert step.head_probs[0] == pytest.approx(0.3, abs=1e-12)
                assert step.head_probs[1] < 0.005 / 2

    def test_uncertain_errors_never_cluster(self):
        spec = small_spec(competence=0.0, error_mode="uncertain")
        corpus = generate(spec)
        config_raw = MethodConfig(method="raw-probability")
        boosted, _ = score_corpus(corpus, MethodConfig())
        raw, _ = score_corpus(corpus, config_raw)
        for record, b, r in zip(corpus.records, boosted, raw):
            assert record.gold_score == 0.0
            for step in record.steps:
                assert jump_cut(step).cutting_index == 1
                assert step.head_probs[-1] <= 0.9 * 0.005
            # a size-1 cluster can never boost anything
            assert b.token_scores == r.token_scores


class TestDegenerateEquivalence:
    def test_boosted_equals_raw_when_k_is_one(self):
        spec = small_spec(n_sequences=50, k_correct=(1, 1), competence=1.0)
        corpus = generate(spec)
        boosted, fail_b = score_corpus(corpus, MethodConfig())
        raw, fail_r = score_corpus(corpus, MethodConfig(method="raw-probability"))
        assert fail_b == fail_r == []
        for b, r in zip(boosted, raw):
            assert b.token_scores == r.token_scores
            assert b.sequence_score == r.sequence_score


class TestSeparation:
    def test_boosting_helps_on_mixed_corpus(self):
        corpus = generate(SynthSpec(n_sequences=120, seed=7))
        gold = [r.gold_score for r in corpus.records]
        boosted, _ = score_corpus(corpus, MethodConfig())
        raw, _ = score_corpus(corpus, MethodConfig(method="raw-probability"))
        r_boosted = pearson([x.sequence_score for x in boosted], gold)
        r_raw = pearson([x.sequence_score for x in raw], gold)
        assert r_boosted > r_raw
        report = evaluate_sequence(corpus, boosted)
        assert report.pearson == pytest.approx(r_boosted, abs=1e-12)


class TestTheoryCheck:
    def test_default_grid_all_pass(self):
        report = theory_check()
        assert isinstance(report, TheoryReport)
        assert len(report.rows) == 27
        assert report.all_passed
        assert report.x_percent == 0.3 and report.epsilon == 0.005

    def test_known_rows(self):
        rows = {(row.k, row.q): row for row in theory_check().rows}
        pair = rows[(2, 0.95)]
        assert pair.raw_score == pytest.approx(0.475, abs=1e-12)
        assert pair.boosted_score == pytest.approx(0.95, abs=1e-12)
        assert pair.cutting_index == 2 and pair.passed

        wide = rows[(10, 0.9)]
        assert wide.raw_score == pytest.approx(0.09, abs=1e-12)
        assert wide.raw_score <= 0.1 + 1e-12
        assert wide.boosted_score == pytest.approx(0.9, abs=1e-12)
        assert wide.cutting_index == 10 and wide.passed

    def test_bound_is_tight_in_k(self):
        for row in theory_check().rows:
            assert row.raw_score == pytest.approx(row.q / row.k, abs=1e-15)
            assert row.raw_score <= 1.0 / row.k + 1e-12

    def test_smaller_grid(self):
        report = theory_check(k_max=3, q_list=(0.9,))
        assert [(r.k, r.q) for r in report.rows] == [(2, 0.9), (3, 0.9)]

    def test_report_formatting(self):
        text = format_theory_report(theory_check(k_max=4))
        assert "all rows passed" in text
        assert "0.475000" in text  # k=2, q=0.95 raw column
        lines = text.splitlines()
        assert len(lines) == 1 + 9 + 1  # header, rows, verdict

    def test_failed_rows_are_reported(self):
        # a coarse epsilon breaks the filler layout for high k, and the
        # report must say so rather than hide it
        report = theory_check(k_max=10, q_list=(0.99,), epsilon=0.15)
        if not report.all_passed:
            assert "FAILED rows present" in format_theory_report(report)
