"""Segmentation metrics (precision/recall/F1 and interval IoU), the
pairwise description-comparison harness (inconsistency detection plus
majority-vote tallying), and case-file export for human questionnaires.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import prompts
from .errors import MalformedBallot
from .gateway import Gateway

logger = logging.getLogger(__name__)

DEFAULT_IOU_MIN = 0.5

VOTE_VALUES = ("win_a", "tie", "win_b")


@dataclass(frozen=True)
class TimeSpan:
    start: float
    end: float

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"invalid span [{self.start}, {self.end}]")


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)
    unmatched_truth: list[int] = field(default_factory=list)
    pred_count: int = 0
    truth_count: int = 0


@dataclass
class SegMetrics:
    """Precision/recall/F1 as percentages, mean IoU over matched pairs."""

    precision: float
    recall: float
    f1: float
    mean_iou: float
    degenerate: bool = False  # a denominator was zero somewhere


def iou(a: TimeSpan, b: TimeSpan) -> float:
    """Interval intersection over union; 0 for disjoint spans."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def match_segments(pred: list[TimeSpan], truth: list[TimeSpan],
                   iou_min: float = DEFAULT_IOU_MIN) -> MatchResult:
    """Greedy one-to-one matching in descending IoU order; candidate pairs
    with IoU below `iou_min` are rejected."""
    candidates = []
    for i, p in enumerate(pred):
        for j, t in enumerate(truth):
            value = iou(p, t)
            if value >= iou_min:
                candidates.append((value, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_pred: set[int] = set()
    used_truth: set[int] = set()
    pairs = []
    for value, i, j in candidates:
        if i in used_pred or j in used_truth:
            continue
        used_pred.add(i)
        used_truth.add(j)
        pairs.append((i, j, value))
    return MatchResult(
        pairs=pairs,
        unmatched_pred=[i for i in range(len(pred)) if i not in used_pred],
        unmatched_truth=[j for j in range(len(truth)) if j not in used_truth],
        pred_count=len(pred),
        truth_count=len(truth),
    )


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; accepts either fractions or percentages."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def seg_metrics(match: MatchResult) -> SegMetrics:
    matched = len(match.pairs)
    degenerate = match.pred_count == 0 or match.truth_count == 0 or matched == 0
    precision = 100.0 * matched / match.pred_count if match.pred_count else 0.0
    recall = 100.0 * matched / match.truth_count if match.truth_count else 0.0
    mean_iou = (sum(v for _, _, v in match.pairs) / matched) if matched else 0.0
    return SegMetrics(precision, recall, f1_score(precision, recall),
                      mean_iou, degenerate)


def inconsistency_check(desc_a: str, desc_b: str, gateway: Gateway) -> dict:
    """Ask the model whether two descriptions conflict in meaning.

    Returns {"consistent": bool, "explanation": str}. An unparseable reply
    is treated as a conflict, so the pair still reaches human comparison.
    """
    if not desc_a or not desc_b:
        raise ValueError("both descriptions must be non-empty")
    prompt = prompts.render("inconsistency", {"vision understanding 1": desc_a,
                                              "vision understanding 2": desc_b})
    reply = gateway.llm_complete(prompt)
    text = reply.strip()
    if text == "No" or text.startswith(("No.", "No,", "No ")):
        return {"consistent": True, "explanation": ""}
    if text == "Yes" or text.startswith(("Yes.", "Yes,", "Yes ")):
        explanation = text[3:].lstrip("., ").strip()
        return {"consistent": False, "explanation": explanation}
    logger.warning("unparseable consistency verdict: %.80r", reply)
    # Conservative: UnparseableVerdict-class replies route to human review.
    return {"consistent": False, "explanation": f"unparseable reply: {text}",
            "flagged": True}


@dataclass
class VoteTally:
    total: int
    win: int
    tie: int
    lose: int
    win_pct: float
    win_tie_pct: float


def tally_votes(case_votes: list[list[str]]) -> VoteTally:
    """Majority vote per case (exactly 3 votes each; no majority is a tie),
    aggregated with the percentages used in the comparison tables."""
    win = tie = lose = 0
    for i, votes in enumerate(case_votes):
        if len(votes) != 3 or any(v not in VOTE_VALUES for v in votes):
            raise MalformedBallot(f"case {i}: {votes!r}")
        wins_a = votes.count("win_a")
        wins_b = votes.count("win_b")
        if wins_a >= 2:
            win += 1
        elif wins_b >= 2:
            lose += 1
        else:
            tie += 1
    total = len(case_votes)
    if total == 0:
        raise MalformedBallot("no cases")
    return VoteTally(total, win, tie, lose,
                     round(100.0 * win / total, 2),
                     round(100.0 * (win + tie) / total, 2))


def build_comparison_cases(store_a, store_b, gateway: Gateway) -> list[dict]:
    """Pair the vision descriptions of segments present in both stores, run
    the inconsistency check, and emit questionnaire-ready case records for
    the pairs that conflict."""
    ids_b = {}
    for meta in store_b.videos():
        for record in store_b.indexes(meta["video_id"]):
            ids_b[record["segment_id"]] = record
    cases = []
    for meta in store_a.videos():
        for record in store_a.indexes(meta["video_id"]):
            other = ids_b.get(record["segment_id"])
            if other is None:
                continue
            desc_a = record["vision_text"]
            desc_b = other["vision_text"]
            if not desc_a or not desc_b:
                continue
            verdict = inconsistency_check(desc_a, desc_b, gateway)
            if verdict["consistent"]:
                continue
            seg = store_a.segment_record(record["segment_id"]) or {}
            cases.append({
                "segment_id": record["segment_id"],
                "video_id": record["video_id"],
                "start": seg.get("start"),
                "end": seg.get("end"),
                "frame_time": seg.get("representative_frame_time"),
                "description_a": desc_a,
                "description_b": desc_b,
                "difference": verdict["explanation"],
            })
    return cases
