"""Span-to-sentence composition rules and explanation extraction."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from conftest import GOLDEN_HYPOTHESIS
from spanlogic.corpus import Label
from spanlogic.errors import LogicError
from spanlogic.segmenter import Segmenter
from spanlogic.logic import (
    DETECTION_THRESHOLD,
    SupervisionTarget,
    aggregate_prediction,
    compose_span_labels,
    explain,
    extract_explanation_spans,
    span_prediction,
    training_targets,
)

SEVERITY = {Label.ENTAILMENT: 0, Label.NEUTRAL: 1, Label.CONTRADICTION: 2}

scores = st.lists(
    st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=9
)


class TestTrainingTargets:
    def test_contradiction_leaves_neutral_unsupervised(self):
        t = training_targets(Label.CONTRADICTION)
        assert t.neutral is None
        assert t.contradiction == 1.0

    def test_neutral(self):
        assert training_targets(Label.NEUTRAL) == SupervisionTarget(1.0, 0.0)

    def test_entailment(self):
        assert training_targets(Label.ENTAILMENT) == SupervisionTarget(0.0, 0.0)

    def test_fractional_target_rejected(self):
        with pytest.raises(LogicError):
            SupervisionTarget(neutral=0.5, contradiction=0.0)


class TestSpanPrediction:
    def test_contradiction_wins_when_both_fire(self):
        assert span_prediction(0.9, 0.8) == Label.CONTRADICTION

    def test_threshold_is_strict(self):
        assert span_prediction(0.5, 0.5) == Label.ENTAILMENT
        assert span_prediction(0.5 + 1e-12, 0.5) == Label.NEUTRAL

    def test_quiet_span_is_entailed(self):
        assert span_prediction(0.1, 0.2) == Label.ENTAILMENT


class TestAggregatePrediction:
    def test_single_contradiction_dominates(self):
        assert (
            aggregate_prediction([0.1, 0.9, 0.1], [0.2, 0.1, 0.6])
            == Label.CONTRADICTION
        )

    def test_neutral_without_contradiction(self):
        assert aggregate_prediction([0.1, 0.7], [0.2, 0.3]) == Label.NEUTRAL

    def test_all_quiet_entails(self):
        assert aggregate_prediction([0.4, 0.5], [0.5, 0.1]) == Label.ENTAILMENT

    def test_empty_rejected(self):
        with pytest.raises(LogicError):
            aggregate_prediction([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(LogicError):
            aggregate_prediction([0.1], [0.1, 0.2])

    @given(scores, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, ns, rng):
        cs = [1.0 - s for s in ns]
        before = aggregate_prediction(ns, cs)
        order = list(range(len(ns)))
        rng.shuffle(order)
        after = aggregate_prediction([ns[i] for i in order], [cs[i] for i in order])
        assert after == before

    @given(scores, st.integers(min_value=0, max_value=8), st.floats(0.0, 1.0))
    def test_raising_a_contradiction_score_never_softens(self, ns, pos, bump):
        cs = [0.5 * s for s in ns]
        before = aggregate_prediction(ns, cs)
        i = pos % len(cs)
        cs[i] = min(1.0, cs[i] + bump)
        after = aggregate_prediction(ns, cs)
        assert SEVERITY[after] >= SEVERITY[before]

    @given(scores)
    def test_matches_composition_of_span_labels(self, ns):
        cs = list(reversed(ns))
        labels = [span_prediction(n, c) for n, c in zip(ns, cs)]
        assert aggregate_prediction(ns, cs) == compose_span_labels(labels)


class TestComposeSpanLabels:
    def test_precedence(self):
        assert (
            compose_span_labels([Label.NEUTRAL, Label.CONTRADICTION])
            == Label.CONTRADICTION
        )
        assert (
            compose_span_labels([Label.ENTAILMENT, Label.NEUTRAL]) == Label.NEUTRAL
        )
        assert compose_span_labels([Label.ENTAILMENT]) == Label.ENTAILMENT

    def test_empty_rejected(self):
        with pytest.raises(LogicError):
            compose_span_labels([])


@pytest.fixture
def golden_spanset(segmenter):
    return segmenter.segment(GOLDEN_HYPOTHESIS)


def _score_vector(spanset, hot, value=0.9):
    out = [0.1] * spanset.m
    for i in hot:
        out[i] = value
    return out


class TestExplanations:
    """Spans 0..3 are granular; 4..8 are composites (pairs then triples)."""

    def test_granular_shadows_its_composite(self, golden_spanset):
        # composite 4 covers granulars 0 and 1; only the granular survives
        ns = _score_vector(golden_spanset, {1, 4})
        report = explain(golden_spanset, ns, [0.0] * golden_spanset.m)
        assert report.prediction == Label.NEUTRAL
        texts = [golden_spanset.span_text(s) for s, _ in report.explanation_spans]
        assert texts == ["in a wetsuit"]

    def test_composite_alone_survives(self, golden_spanset):
        ns = _score_vector(golden_spanset, {4})
        report = explain(golden_spanset, ns, [0.0] * golden_spanset.m)
        texts = [golden_spanset.span_text(s) for s, _ in report.explanation_spans]
        assert texts == ["a man in a wetsuit"]

    def test_contradiction_hides_neutral_spans(self, golden_spanset):
        ns = _score_vector(golden_spanset, {0})
        cs = _score_vector(golden_spanset, {2})
        report = explain(golden_spanset, ns, cs)
        assert report.prediction == Label.CONTRADICTION
        assert [cls for _, cls in report.explanation_spans] == [Label.CONTRADICTION]
        assert report.explanation_spans[0][0].start == 5

    def test_entailment_explains_nothing(self, golden_spanset):
        m = golden_spanset.m
        report = explain(golden_spanset, [0.2] * m, [0.3] * m)
        assert report.prediction == Label.ENTAILMENT
        assert report.explanation_spans == ()

    def test_inconsistent_labels_rejected(self, golden_spanset):
        labels = [Label.ENTAILMENT] * golden_spanset.m
        with pytest.raises(LogicError, match="imply entailment"):
            extract_explanation_spans(golden_spanset, labels, Label.NEUTRAL)

    def test_wrong_label_count_rejected(self, golden_spanset):
        with pytest.raises(LogicError):
            extract_explanation_spans(golden_spanset, [Label.NEUTRAL], Label.NEUTRAL)

    @given(st.lists(st.floats(0.0, 1.0), min_size=9, max_size=9))
    def test_every_firing_span_covers_a_reported_one(self, ns):
        spanset = Segmenter(max_run_length=3).segment(GOLDEN_HYPOTHESIS)
        report = explain(spanset, ns, [0.0] * 9)
        if report.prediction == Label.ENTAILMENT:
            assert report.explanation_spans == ()
            return
        reported = [s for s, _ in report.explanation_spans]
        for span, score in zip(spanset.all_spans(), ns):
            if score > DETECTION_THRESHOLD:
                assert any(span.contains(r) for r in reported)

    def test_to_dict_carries_scores_and_offsets(self, golden_spanset):
        ns = _score_vector(golden_spanset, {1})
        report = explain(
            golden_spanset, ns, [0.0] * golden_spanset.m, example_id="ex9"
        )
        payload = report.to_dict()
        assert payload["id"] == "ex9"
        assert payload["prediction"] == "neutral"
        (entry,) = payload["spans"]
        assert entry["text"] == "in a wetsuit"
        assert entry["start"] == 2 and entry["end"] == 5
        assert entry["class"] == "neutral"
        assert entry["a_n"] == pytest.approx(0.9)

    def test_render_underlines_the_span(self, golden_spanset):
        ns = _score_vector(golden_spanset, {1})
        text = explain(golden_spanset, ns, [0.0] * golden_spanset.m).render()
        lines = text.splitlines()
        assert lines[0] == GOLDEN_HYPOTHESIS
        assert lines[1] == "prediction: neutral"
        start = GOLDEN_HYPOTHESIS.index("in a wetsuit")
        assert lines[2] == " " * start + "-" * len("in a wetsuit") + "  [neutral]"
