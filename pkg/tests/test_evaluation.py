"""Segmentation metrics, inconsistency checks, and vote tallying."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fixtures import RouterBackend
from premind.errors import MalformedBallot
from premind.evaluation import (
    MatchResult,
    TimeSpan,
    f1_score,
    inconsistency_check,
    iou,
    match_segments,
    seg_metrics,
    tally_votes,
)
from premind.gateway import Gateway


def span(a, b):
    return TimeSpan(a, b)


class TestIoU:
    def test_identical(self):
        assert iou(span(0, 10), span(0, 10)) == 1.0

    def test_half_overlap(self):
        assert iou(span(0, 10), span(5, 15)) == pytest.approx(1 / 3, abs=1e-6)

    def test_disjoint(self):
        assert iou(span(0, 5), span(6, 9)) == 0.0

    def test_touching_is_zero(self):
        assert iou(span(0, 5), span(5, 9)) == 0.0

    def test_symmetric_and_bounded(self):
        a, b = span(1, 7), span(4, 22)
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0

    @given(st.floats(0, 100), st.floats(0.1, 50), st.floats(0, 100),
           st.floats(0.1, 50))
    def test_properties_random(self, s1, d1, s2, d2):
        a, b = span(s1, s1 + d1), span(s2, s2 + d2)
        assert iou(a, a) == 1.0
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0

    def test_invalid_span(self):
        with pytest.raises(ValueError):
            span(5, 5)


class TestMatchSegments:
    def test_identical_lists(self):
        spans = [span(0, 10), span(10, 20), span(20, 30)]
        match = match_segments(spans, spans)
        assert len(match.pairs) == 3
        assert all(v == 1.0 for _, _, v in match.pairs)
        assert match.unmatched_pred == [] and match.unmatched_truth == []

    def test_split_prediction_one_to_one(self):
        pred = [span(0, 5), span(5, 10)]
        truth = [span(0, 10)]
        match = match_segments(pred, truth)
        assert len(match.pairs) == 1
        assert len(match.unmatched_pred) == 1

    def test_empty_pred(self):
        match = match_segments([], [span(0, 10)])
        assert match.pairs == [] and match.unmatched_truth == [0]

    def test_iou_min_rejects(self):
        match = match_segments([span(0, 10)], [span(9, 19)], iou_min=0.5)
        assert match.pairs == []

    def test_injective(self):
        pred = [span(0, 10), span(0.5, 10.5), span(1, 11)]
        truth = [span(0, 10), span(20, 30)]
        match = match_segments(pred, truth)
        truth_used = [j for _, j, _ in match.pairs]
        pred_used = [i for i, _, _ in match.pairs]
        assert len(set(truth_used)) == len(truth_used)
        assert len(set(pred_used)) == len(pred_used)

    @given(st.lists(st.tuples(st.floats(0, 50), st.floats(0.5, 10)),
                    max_size=8),
           st.lists(st.tuples(st.floats(0, 50), st.floats(0.5, 10)),
                    max_size=8))
    def test_injectivity_random(self, raw_pred, raw_truth):
        pred = [span(s, s + d) for s, d in raw_pred]
        truth = [span(s, s + d) for s, d in raw_truth]
        match = match_segments(pred, truth)
        pred_used = [i for i, _, _ in match.pairs]
        truth_used = [j for _, j, _ in match.pairs]
        assert len(set(pred_used)) == len(pred_used)
        assert len(set(truth_used)) == len(truth_used)
        assert all(v >= 0.5 for _, _, v in match.pairs)


class TestSegMetrics:
    def test_table_arithmetic_lpm(self):
        # Published precision/recall pairs must reproduce their F1 to 0.01.
        assert f1_score(77.50, 88.33) == pytest.approx(82.56, abs=0.01)

    def test_table_arithmetic_ei(self):
        assert f1_score(94.59, 80.00) == pytest.approx(86.69, abs=0.01)

    def test_perfect_match(self):
        spans = [span(0, 10), span(10, 20)]
        metrics = seg_metrics(match_segments(spans, spans))
        assert metrics.precision == metrics.recall == metrics.f1 == 100.0
        assert metrics.mean_iou == 1.0
        assert not metrics.degenerate

    def test_counts(self):
        pred = [span(0, 10), span(10, 20), span(40, 45)]
        truth = [span(0, 10), span(10, 20), span(20, 30), span(30, 40)]
        metrics = seg_metrics(match_segments(pred, truth))
        assert metrics.precision == pytest.approx(100 * 2 / 3)
        assert metrics.recall == pytest.approx(100 * 2 / 4)

    def test_degenerate_zero(self):
        metrics = seg_metrics(match_segments([], [span(0, 1)]))
        assert metrics.precision == 0.0 and metrics.f1 == 0.0
        assert metrics.degenerate


class TestInconsistency:
    def gw(self, reply):
        return Gateway(RouterBackend({"inconsistency": reply}))

    def test_no_means_consistent(self):
        out = inconsistency_check("a", "b", self.gw("No"))
        assert out["consistent"] is True

    def test_yes_carries_explanation(self):
        out = inconsistency_check("a", "b", self.gw("Yes. The counts differ."))
        assert out["consistent"] is False
        assert out["explanation"] == "The counts differ."

    def test_unparseable_treated_as_conflict(self):
        out = inconsistency_check("a", "b", self.gw("Perhaps."))
        assert out["consistent"] is False and out.get("flagged")

    def test_identical_texts_with_echo_consistent(self):
        def echo(prompt, images):
            return "No"

        out = inconsistency_check("same", "same", self.gw(echo))
        assert out["consistent"] is True


class TestTally:
    def test_majority_win(self):
        tally = tally_votes([["win_a", "win_a", "win_b"]])
        assert (tally.win, tally.tie, tally.lose) == (1, 0, 0)

    def test_no_majority_is_tie(self):
        tally = tally_votes([["win_a", "win_b", "tie"]])
        assert tally.tie == 1

    def test_published_comparison_row(self):
        # 76 wins, 49 ties, 30 losses of 155 cases.
        cases = ([["win_a"] * 3] * 76 + [["tie"] * 3] * 49
                 + [["win_b"] * 3] * 30)
        tally = tally_votes(cases)
        assert tally.total == 155
        assert tally.win_pct == 49.03
        assert tally.win_tie_pct == 80.65

    def test_percentages_sum(self):
        cases = [["win_a"] * 3] * 7 + [["tie"] * 3] * 5 + [["win_b"] * 3] * 11
        tally = tally_votes(cases)
        lose_pct = round(100.0 * tally.lose / tally.total, 2)
        assert tally.win_pct + (tally.win_tie_pct - tally.win_pct) + lose_pct \
            == pytest.approx(100.0, abs=0.02)

    def test_malformed_ballots(self):
        with pytest.raises(MalformedBallot):
            tally_votes([["win_a", "win_a"]])
        with pytest.raises(MalformedBallot):
            tally_votes([["yes", "no", "maybe"]])
        with pytest.raises(MalformedBallot):
            tally_votes([])
