"""Refines first-round shots into slide-presentation segments.

The pipeline: detect raw shots from content scores, merge sub-threshold
transitions into their predecessor, then walk the shots in order. Short
shots are checked against the previous segment with SSIM (obvious cases)
or a same-slide VLM prompt (the band in between); long shots get slide
re-detection over sampled frames (step A) and span assignment driven by
transcript-sentence midpoints (step B).

Every merge / re-detection decision is recorded with its evidence, and VLM
verdicts are checkpointed so an interrupted run can resume without paying
for the same calls again.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import media, prompts
from .config import SegmenterConfig
from .errors import EmptyInput, GatewayError
from .gateway import Gateway, TranscriptSentence
from .media import Frame, RawShot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VideoSegment:
    """A time span of one video deemed to present a single slide."""

    segment_id: str
    video_id: str
    start: float
    end: float
    representative_frame_time: float

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"segment with start {self.start} >= end {self.end}")


@dataclass
class DetectedSlide:
    """Sampled-frame times deemed to show one slide, plus its assigned span."""

    extraction_times: list[float]
    span: tuple[float, float] | None = None


@dataclass(frozen=True)
class SlideDecision:
    merge: bool
    ssim: float
    via: str  # "ssim-high" | "ssim-low" | "vlm" | "vlm-default"
    reply: str | None = None
    flagged: bool = False


@dataclass
class SegmentationResult:
    segments: list[VideoSegment]
    decisions: list[dict] = field(default_factory=list)


class DecisionCheckpoint:
    """Persists VLM verdicts keyed by the compared frame times, so a resumed
    run replays them instead of re-calling the gateway."""

    def __init__(self, path: str | None):
        self.path = path
        self._replies: dict[str, str] = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                self._replies = json.load(fh)

    def get(self, key: str) -> str | None:
        return self._replies.get(key)

    def put(self, key: str, reply: str) -> None:
        self._replies[key] = reply
        self.flush()

    def flush(self) -> None:
        if not self.path:
            return
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self._replies, fh, sort_keys=True)
        os.replace(tmp, self.path)

    def discard(self) -> None:
        if self.path and os.path.exists(self.path):
            os.remove(self.path)


def merge_short(shots: list[RawShot], threshold_1: float) -> list[RawShot]:
    """Merge every shot shorter than `threshold_1` into its predecessor
    (a short first shot merges into its successor). Output stays a partition."""
    if not shots:
        raise EmptyInput("no shots")
    merged = [shots[0]]
    for shot in shots[1:]:
        if shot.duration < threshold_1:
            merged[-1] = RawShot(merged[-1].start, shot.end)
        else:
            merged.append(shot)
    if len(merged) > 1 and merged[0].duration < threshold_1:
        merged[1] = RawShot(merged[0].start, merged[1].end)
        merged.pop(0)
    return merged


def _parse_same_slide_reply(reply: str) -> bool | None:
    """True = same slide, False = different, None = unparseable."""
    text = reply.strip()
    if text == "Yes" or text.startswith(("Yes.", "Yes ", "Yes,")):
        return True
    if text == "No" or text.startswith(("No.", "No ", "No,")):
        return False
    return None


def same_slide_decision(prev: Frame, cur: Frame, cfg: SegmenterConfig,
                        gateway: Gateway,
                        checkpoint: DecisionCheckpoint | None = None) -> SlideDecision:
    """Decide whether two frames show the same slide.

    SSIM at or above threshold_3 merges and at or below threshold_4 keeps,
    both without a VLM call; the band in between asks the VLM. An
    unparseable VLM verdict is retried once, then defaults to Keep
    (splitting is recoverable downstream, wrong merging is not).
    """
    value = media.ssim(prev, cur)
    if value >= cfg.threshold_3:
        return SlideDecision(True, value, "ssim-high")
    if value <= cfg.threshold_4:
        return SlideDecision(False, value, "ssim-low")

    prompt = prompts.render("same_slide")
    key = f"same-slide|{prev.source_time:.4f}|{cur.source_time:.4f}"
    reply = checkpoint.get(key) if checkpoint else None
    if reply is None:
        reply = gateway.vlm_complete(prompt, [prev, cur])
        if checkpoint:
            checkpoint.put(key, reply)
    verdict = _parse_same_slide_reply(reply)
    if verdict is None:
        logger.warning("unparseable same-slide verdict, retrying: %.60r", reply)
        reply = gateway.vlm_complete(prompt, [prev, cur])
        if checkpoint:
            checkpoint.put(key, reply)
        verdict = _parse_same_slide_reply(reply)
        if verdict is None:
            return SlideDecision(False, value, "vlm-default", reply, flagged=True)
    corrupted = verdict and "corrupted" in reply.lower()
    if corrupted:
        logger.warning("same-slide check flagged corrupted images at t=%.2f/%.2f",
                       prev.source_time, cur.source_time)
    return SlideDecision(bool(verdict), value, "vlm", reply, flagged=corrupted)


def step_a_redetect(video_path: str, segment: RawShot, cfg: SegmenterConfig,
                    gateway: Gateway, decoder=None,
                    checkpoint: DecisionCheckpoint | None = None,
                    decisions: list[dict] | None = None) -> list[DetectedSlide]:
    """Re-detect slides inside a long shot by comparing frames sampled every
    n_sample seconds; each Keep verdict opens a new slide."""
    if segment.duration <= cfg.threshold_2:
        raise ValueError("step A requires a shot longer than threshold_2")
    frames = media.frames_in_span(video_path, segment.start, segment.end,
                                  cfg.n_sample, decoder)
    slides = [DetectedSlide([frames[0].source_time])]
    prev = frames[0]
    for cur in frames[1:]:
        decision = same_slide_decision(prev, cur, cfg, gateway, checkpoint)
        if decisions is not None:
            decisions.append(_decision_record("step_a", prev, cur, decision))
        if decision.merge:
            slides[-1].extraction_times.append(cur.source_time)
        else:
            slides.append(DetectedSlide([cur.source_time]))
        prev = cur
    return slides


def _representative_time(slide: DetectedSlide) -> float:
    times = slide.extraction_times
    return times[len(times) // 2]


def step_b_assign_spans(slides: list[DetectedSlide],
                        sentences: list[TranscriptSentence],
                        video_path: str, segment_span: tuple[float, float],
                        decoder=None,
                        decisions: list[dict] | None = None) -> list[DetectedSlide]:
    """Assign a presentation span to each detected slide.

    Each sentence's midpoint frame is compared by SSIM against the
    representative frames of its two neighboring slides and assigned to the
    more similar one (assignments never move backwards). The boundary
    between consecutive slides is the midpoint of the sentence-cluster gap,
    falling back to the midpoint of the adjacent extraction times when a
    side has no sentences (always, when there are no sentences at all).
    """
    decoder = decoder or media.get_decoder()
    seg_start, seg_end = segment_span
    if len(slides) == 1:
        slides[0].span = (seg_start, seg_end)
        return slides

    sentences = [s for s in sentences if seg_start <= s.midpoint < seg_end]
    reps = [media.extract_frame(video_path, _representative_time(s), decoder)
            for s in slides]
    assignments: list[int] = []
    if not sentences:
        if decisions is not None:
            decisions.append({"kind": "step_b-fallback",
                              "span": [seg_start, seg_end],
                              "note": "no sentences; extraction-time midpoints used",
                              "flagged": True})
        logger.warning("step B fallback: no sentences in [%.2f, %.2f]",
                       seg_start, seg_end)
    else:
        firsts = [s.extraction_times[0] for s in slides]
        last = 0
        for sentence in sentences:
            mid = min(max(sentence.midpoint, seg_start), seg_end)
            k = 0
            for idx, t in enumerate(firsts):
                if t <= mid:
                    k = idx
            candidates = [k] + ([k + 1] if k + 1 < len(slides) else [])
            frame = media.extract_frame(video_path, mid, decoder)
            best = max(candidates,
                       key=lambda c: (media.ssim(frame, reps[c]), -c))
            best = max(best, last)
            assignments.append(best)
            last = best

    boundaries: list[float] = []
    for k in range(len(slides) - 1):
        left = [s for s, a in zip(sentences, assignments) if a == k]
        right = [s for s, a in zip(sentences, assignments) if a == k + 1]
        if left and right:
            boundary = (left[-1].end + right[0].start) / 2.0
        else:
            boundary = (slides[k].extraction_times[-1]
                        + slides[k + 1].extraction_times[0]) / 2.0
        boundaries.append(boundary)

    cursor = seg_start
    cleaned = []
    for boundary in boundaries:
        boundary = min(max(boundary, cursor), seg_end)
        cleaned.append(boundary)
        cursor = boundary
    points = [seg_start] + cleaned + [seg_end]
    for slide, (lo, hi) in zip(slides, zip(points, points[1:])):
        slide.span = (lo, hi) if hi > lo else None
        if slide.span is None:
            logger.warning("step B collapsed a slide at %.2f", lo)
    return slides


def _decision_record(kind: str, prev: Frame, cur: Frame,
                     decision: SlideDecision) -> dict:
    return {
        "kind": kind,
        "at": [round(prev.source_time, 4), round(cur.source_time, 4)],
        "ssim": round(decision.ssim, 6),
        "via": decision.via,
        "verdict": "Merge" if decision.merge else "Keep",
        "reply": decision.reply,
        "flagged": decision.flagged,
    }


def _absorb_short(spans: list[tuple[float, float]],
                  threshold_1: float) -> list[tuple[float, float]]:
    if len(spans) <= 1:
        return spans
    out = [spans[0]]
    for lo, hi in spans[1:]:
        if hi - lo < threshold_1:
            out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    if len(out) > 1 and out[0][1] - out[0][0] < threshold_1:
        out[1] = (out[0][0], out[1][1])
        out.pop(0)
    return out


def segment_video(video_path: str, sentences: list[TranscriptSentence],
                  cfg: SegmenterConfig, gateway: Gateway, *,
                  video_id: str | None = None, decoder=None,
                  checkpoint_path: str | None = None) -> SegmentationResult:
    """Run the full segmentation algorithm over one video."""
    decoder = decoder or media.get_decoder()
    video_id = video_id or Path(video_path).stem
    checkpoint = DecisionCheckpoint(checkpoint_path)
    duration = decoder.duration(video_path)

    scores = media.content_scores(video_path, cfg.sample_fps, decoder)
    raw = media.detect_shots(scores, cfg.adaptive_threshold,
                             cfg.min_content_val, cfg.detector_window)
    # Stretch the detected partition to the full [0, duration] timeline.
    raw[0] = RawShot(0.0, raw[0].end)
    if duration > raw[-1].start:
        raw[-1] = RawShot(raw[-1].start, max(raw[-1].end, duration))
    shots = merge_short(raw, cfg.threshold_1)

    decisions: list[dict] = []
    spans: list[tuple[float, float]] = []
    try:
        for shot in shots:
            if shot.duration > cfg.threshold_2:
                slides = step_a_redetect(video_path, shot, cfg, gateway,
                                         decoder, checkpoint, decisions)
                slides = step_b_assign_spans(slides, sentences, video_path,
                                             (shot.start, shot.end), decoder,
                                             decisions)
                spans.extend(s.span for s in slides if s.span)
            elif not spans:
                spans.append((shot.start, shot.end))
            else:
                prev_lo, prev_hi = spans[-1]
                prev_frame = media.extract_frame(
                    video_path, (prev_lo + prev_hi) / 2.0, decoder)
                cur_frame = media.extract_frame(
                    video_path, (shot.start + shot.end) / 2.0, decoder)
                decision = same_slide_decision(prev_frame, cur_frame, cfg,
                                               gateway, checkpoint)
                decisions.append(
                    _decision_record("merge-check", prev_frame, cur_frame, decision))
                if decision.merge:
                    spans[-1] = (prev_lo, shot.end)
                else:
                    spans.append((shot.start, shot.end))
    except GatewayError:
        # Partial progress stays in the checkpoint for a later resume.
        checkpoint.flush()
        logger.exception("gateway failure during segmentation of %s", video_id)
        raise

    spans = _absorb_short(spans, cfg.threshold_1)
    segments = [
        VideoSegment(f"{video_id}:{i:04d}", video_id, lo, hi, (lo + hi) / 2.0)
        for i, (lo, hi) in enumerate(spans)
    ]
    checkpoint.discard()
    return SegmentationResult(segments, decisions)


def segmentation_records(result: SegmentationResult) -> list[dict]:
    """Per-segment output records, each with the decisions that fall inside
    its span attached."""
    records = []
    for seg in result.segments:
        seg_decisions = []
        for d in result.decisions:
            times = d.get("at") or d.get("span") or []
            if any(seg.start <= t <= seg.end for t in times):
                seg_decisions.append(d)
        records.append({
            "segment_id": seg.segment_id,
            "video_id": seg.video_id,
            "start": seg.start,
            "end": seg.end,
            "representative_frame_time": seg.representative_frame_time,
            "decision_log": seg_decisions,
        })
    return records
