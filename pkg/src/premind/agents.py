"""The per-segment understanding pipeline: transcript slicing, combined
keyword extraction + ASR-correction suggestions, knowledge retrieval,
vision understanding (plain or critic-refined), consolidation, and
knowledge extraction, run in dependency order.

Segments of one lecture are processed strictly in temporal order by a
single worker, because each segment may read knowledge contributed by the
segments before it.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field

from . import media, prompts
from .config import CriticConfig, FeatureFlags
from .errors import GatewayError, ParseFailure
from .gateway import Embedding, Gateway, TranscriptSentence
from .knowledge import Concept, KnowledgeEntry, KnowledgeMemory
from .knowledge import retrieve_by_keywords, upsert_concept
from .phonetics import CorrectionSuggestion, apply_corrections
from .segmenter import VideoSegment

logger = logging.getLogger(__name__)

DEFAULT_CORRECTION_THRESHOLD = 5


@dataclass
class SegmentIndex:
    """The three understanding texts for one segment, plus their metadata."""

    segment_id: str
    video_id: str
    vision_text: str
    speech_text: str
    consolidated_text: str
    keywords: list[str] = field(default_factory=list)
    applied_corrections: list[CorrectionSuggestion] = field(default_factory=list)
    embeddings: dict[str, Embedding | None] = field(default_factory=dict)
    feature_flags: dict[str, bool] = field(default_factory=dict)


def slice_transcript(sentences: list[TranscriptSentence], start: float,
                     end: float) -> str:
    """Space-joined text of the sentences whose midpoint lies in [start, end)."""
    if start >= end:
        raise ValueError(f"empty span [{start}, {end})")
    return " ".join(s.text for s in sentences if start <= s.midpoint < end)


_TERM_LINE = re.compile(
    r"^\s*The term\s+(.+?)\s+(should|might)\s+be\s+(.+?)\.?\s*$", re.IGNORECASE)
_ANSWER_LINE = re.compile(r"^\s*Answer\b.*?:\s*(Yes|No)\b", re.IGNORECASE)


def _strip_term(term: str) -> str:
    return term.strip().strip("\"'*").strip()


def _parse_keyword_reply(reply: str) -> tuple[list[str], list[CorrectionSuggestion]]:
    lines = reply.split("\n")
    header = None
    for i, line in enumerate(lines):
        if line.strip().lower().startswith("list of keywords:"):
            header = i
            break
    if header is None:
        raise ParseFailure("keyword list header missing")

    keywords: list[str] = []
    for line in lines[header + 1:]:
        stripped = line.strip()
        if not stripped.startswith("-"):
            if stripped and not stripped.startswith("..."):
                break
            continue
        item = stripped.lstrip("-").strip()
        for part in re.split(r"[,;]", item):
            part = part.strip()
            if part:
                keywords.append(part)

    answered_no = False
    for line in lines:
        match = _ANSWER_LINE.match(line)
        if match:
            answered_no = match.group(1).lower() == "no"
            break

    suggestions: list[CorrectionSuggestion] = []
    if not answered_no:
        for line in lines:
            match = _TERM_LINE.match(line)
            if not match:
                continue
            from_term = _strip_term(match.group(1))
            to_term = _strip_term(match.group(3))
            if not from_term or not to_term or from_term == to_term:
                continue
            suggestions.append(CorrectionSuggestion(match.group(2).lower(),
                                                    from_term, to_term))
    return keywords, suggestions


def extract_keywords_and_corrections(
    frame: media.Frame, transcript_text: str, gateway: Gateway,
) -> tuple[list[str], list[CorrectionSuggestion]]:
    """One VLM call that both lists the slide's keywords and flags
    likely ASR misrecognitions of them."""
    prompt = prompts.render("keyword_asr_correction",
                            {"speech transcript": transcript_text})
    reply = gateway.vlm_complete(prompt, [frame])
    try:
        return _parse_keyword_reply(reply)
    except ParseFailure:
        logger.warning("keyword reply unparseable, retrying")
        reply = gateway.vlm_complete(prompt, [frame])
        try:
            return _parse_keyword_reply(reply)
        except ParseFailure:
            logger.warning("keyword reply unparseable after retry; "
                           "continuing with no keywords")
            return [], []


def _render_knowledge(entries: list[KnowledgeEntry]) -> str:
    return "\n".join(f"{e.name}: {e.explanation}" for e in entries)


def vision_understand(frame: media.Frame,
                      knowledge_context: list[KnowledgeEntry],
                      gateway: Gateway) -> str:
    """Describe the slide in `frame`, optionally grounded in retrieved
    knowledge entries."""
    if knowledge_context:
        prompt = prompts.render(
            "vision_knowledge",
            {"retrieved knowledge": _render_knowledge(knowledge_context)})
    else:
        prompt = prompts.render("vision_baseline")
    return gateway.vlm_complete(prompt, [frame])


_VISION_PREFIX = "Vision Understanding Result:"


def _strip_vision_prefix(text: str) -> str:
    stripped = text.strip()
    if stripped.startswith(_VISION_PREFIX):
        return stripped[len(_VISION_PREFIX):].strip()
    return stripped


def critic_loop(frame: media.Frame, knowledge_context: list[KnowledgeEntry],
                cfg: CriticConfig, gateway: Gateway) -> str:
    """Iterative refinement: the vision agent describes, the critic reviews.

    Stops when a reply carries the terminate token or when the combined
    number of vision + critic model calls reaches n_max; returns the latest
    description."""
    critic_role, vision_role, user_proxy = prompts.critic_blocks()
    knowledge_text = _render_knowledge(knowledge_context) or "(none)"
    task = user_proxy.replace("{retrieved knowledge}", knowledge_text)
    task = "\n".join(line.replace("{image} ", "").replace("{image}", "")
                     for line in task.split("\n"))
    task = task.replace("User Proxy: ", "", 1)

    vision_prompt = vision_role + "\n\n" + task
    calls = 0

    reply = gateway.vlm_complete(vision_prompt, [frame])
    calls += 1
    description = reply
    if cfg.terminate_token in reply:
        return _strip_vision_prefix(description)

    while calls < cfg.n_max:
        critic_prompt = (critic_role + "\n\nDescription:\n"
                         + _strip_vision_prefix(description))
        critique = gateway.vlm_complete(critic_prompt, [frame])
        calls += 1
        if cfg.terminate_token in critique or calls >= cfg.n_max:
            break
        revision_prompt = (vision_prompt + "\n\nReviewer feedback:\n" + critique)
        description = gateway.vlm_complete(revision_prompt, [frame])
        calls += 1
        if cfg.terminate_token in description:
            break
    return _strip_vision_prefix(description)


def consolidate(vision_text: str, speech_text: str, gateway: Gateway) -> str:
    """Merge the vision description and the (corrected) transcript into one
    overall description."""
    if not vision_text:
        raise ValueError("vision text must be non-empty")
    prompt = prompts.render("consolidation",
                            {"vision understanding result": vision_text,
                             "speech transcript": speech_text})
    return gateway.llm_complete(prompt)


_SEPARATOR = re.compile(r"^\s*-{3,}\s*$")
_NO_CONCEPT = "no concept extracted"


def _parse_concepts(reply: str) -> list[Concept]:
    text = reply.strip()
    if _NO_CONCEPT in text.lower():
        return []
    blocks: list[list[str]] = [[]]
    for line in text.split("\n"):
        if _SEPARATOR.match(line):
            blocks.append([])
        else:
            blocks[-1].append(line)
    concepts = []
    for block in blocks:
        content = "\n".join(block).strip()
        if not content:
            continue
        name_match = re.search(r"^\s*Concept:\s*(.+)$", content, re.MULTILINE)
        expl_match = re.search(r"^\s*Knowledge of Concept:\s*(.+)$",
                               content, re.MULTILINE | re.DOTALL)
        if not name_match or not expl_match:
            raise ParseFailure(f"malformed concept block: {content[:80]!r}")
        name = name_match.group(1).strip()
        explanation = expl_match.group(1).strip()
        if not name or not explanation:
            raise ParseFailure("empty concept name or explanation")
        concepts.append(Concept(name, explanation))
    return concepts


def extract_knowledge(consolidated_text: str, gateway: Gateway) -> list[Concept]:
    """Pull named concepts out of a consolidated description."""
    if not consolidated_text:
        raise ValueError("consolidated text must be non-empty")
    prompt = prompts.render(
        "knowledge_extraction",
        {"consolidated understanding result": consolidated_text})
    reply = gateway.llm_complete(prompt)
    try:
        return _parse_concepts(reply)
    except ParseFailure:
        logger.warning("concept reply unparseable, retrying")
        reply = gateway.llm_complete(prompt)
        try:
            return _parse_concepts(reply)
        except ParseFailure:
            logger.warning("concept reply unparseable after retry; skipping")
            return []


def _dedup_keywords(keywords: list[str]) -> list[str]:
    seen = set()
    out = []
    for kw in keywords:
        key = kw.lower()
        if key not in seen:
            seen.add(key)
            out.append(kw)
    return out


def understand_segment(segment: VideoSegment,
                       sentences: list[TranscriptSentence],
                       km: KnowledgeMemory,
                       features: FeatureFlags,
                       gateway: Gateway, *,
                       critic_cfg: CriticConfig | None = None,
                       correction_threshold: int = DEFAULT_CORRECTION_THRESHOLD,
                       frame: media.Frame | None = None,
                       video_path: str | None = None,
                       decoder=None) -> SegmentIndex:
    """Produce the three-index understanding of one segment.

    Knowledge retrieval for this segment sees only concepts contributed by
    earlier segments; this segment's own concepts are upserted after
    consolidation.
    """
    if frame is None:
        if video_path is None:
            raise ValueError("need either a frame or a video path")
        frame = media.extract_frame(video_path,
                                    segment.representative_frame_time, decoder)

    speech_raw = slice_transcript(sentences, segment.start, segment.end)

    keywords: list[str] = []
    suggestions: list[CorrectionSuggestion] = []
    if features.knowledge or features.asr_correction:
        keywords, suggestions = extract_keywords_and_corrections(
            frame, speech_raw, gateway)

    speech_text = speech_raw
    applied: list[CorrectionSuggestion] = []
    if features.asr_correction:
        speech_text, applied = apply_corrections(speech_raw, suggestions,
                                                 correction_threshold)

    context: list[KnowledgeEntry] = []
    if features.knowledge:
        context = retrieve_by_keywords(km, _dedup_keywords(keywords),
                                       gateway.embed)

    if features.critic:
        vision_text = critic_loop(frame, context, critic_cfg or CriticConfig(),
                                  gateway)
    else:
        vision_text = vision_understand(frame, context, gateway)

    consolidated_text = consolidate(vision_text, speech_text, gateway)

    if features.knowledge:
        for concept in extract_knowledge(consolidated_text, gateway):
            upsert_concept(km, concept, gateway.embed)

    embeddings: dict[str, Embedding | None] = {
        "vision": gateway.embed(vision_text),
        "speech": gateway.embed(speech_text) if speech_text else None,
        "consolidated": gateway.embed(consolidated_text),
    }
    return SegmentIndex(
        segment_id=segment.segment_id,
        video_id=segment.video_id,
        vision_text=vision_text,
        speech_text=speech_text,
        consolidated_text=consolidated_text,
        keywords=keywords,
        applied_corrections=applied,
        embeddings=embeddings,
        feature_flags=features.as_dict(),
    )


class LectureCheckpoint:
    """Tracks which segments of a lecture already have indexes, so a failed
    run resumes where it stopped."""

    def __init__(self, path: str | None):
        self.path = path
        self.done: dict[str, bool] = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                self.done = json.load(fh)

    def mark(self, segment_id: str) -> None:
        self.done[segment_id] = True
        self.flush()

    def flush(self) -> None:
        if not self.path:
            return
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.done, fh, sort_keys=True)
        os.replace(tmp, self.path)

    def discard(self) -> None:
        if self.path and os.path.exists(self.path):
            os.remove(self.path)


def process_lecture(video_path: str, segments: list[VideoSegment],
                    sentences: list[TranscriptSentence],
                    km: KnowledgeMemory, features: FeatureFlags,
                    gateway: Gateway, *, sink,
                    critic_cfg: CriticConfig | None = None,
                    correction_threshold: int = DEFAULT_CORRECTION_THRESHOLD,
                    checkpoint_path: str | None = None,
                    decoder=None) -> list[SegmentIndex]:
    """Understand every segment of one lecture in temporal order.

    `sink(index, km)` persists each finished SegmentIndex together with the
    memory state, so earlier segments survive a mid-lecture failure.
    """
    checkpoint = LectureCheckpoint(checkpoint_path)
    indexes = []
    for segment in sorted(segments, key=lambda s: s.start):
        if checkpoint.done.get(segment.segment_id):
            continue
        try:
            idx = understand_segment(
                segment, sentences, km, features, gateway,
                critic_cfg=critic_cfg,
                correction_threshold=correction_threshold,
                video_path=video_path, decoder=decoder)
        except GatewayError:
            checkpoint.flush()
            logger.exception("gateway failure at %s; progress checkpointed",
                             segment.segment_id)
            raise
        sink(idx, km)
        checkpoint.mark(segment.segment_id)
        indexes.append(idx)
    checkpoint.discard()
    return indexes
