"""Per-segment understanding pipeline: parsing, prompt construction, the
critic loop's call budget, and the per-feature call schedule."""

import pytest

from fixtures import RouterBackend
from conftest import solid_frame
from premind.agents import (
    SegmentIndex,
    consolidate,
    critic_loop,
    extract_keywords_and_corrections,
    extract_knowledge,
    process_lecture,
    slice_transcript,
    understand_segment,
    vision_understand,
)
from premind.config import CriticConfig, FeatureFlags
from premind.gateway import Gateway, TranscriptSentence
from premind.knowledge import Concept, KnowledgeEntry, KnowledgeMemory
from premind.knowledge import upsert_concept
from premind.segmenter import VideoSegment


def sent(text, start, end):
    return TranscriptSentence(text, start, end)


class TestSliceTranscript:
    def test_empty(self):
        assert slice_transcript([], 0, 10) == ""

    def test_midpoint_inside(self):
        assert slice_transcript([sent("inside", 5, 9)], 0, 10) == "inside"

    def test_midpoint_outside(self):
        assert slice_transcript([sent("outside", 9, 13)], 0, 10) == ""

    def test_joins_in_order(self):
        sentences = [sent("a", 0, 2), sent("b", 3, 5), sent("c", 11, 12)]
        assert slice_transcript(sentences, 0, 10) == "a b"


KEYWORD_REPLY = """List of keywords:
- PLM
- ERP

Answer for whether certain keyword(s) is misrecognized: No"""

KEYWORD_REPLY_WITH_CORRECTIONS = """List of keywords:
- Nexeed
- design, build

Answer for whether certain keyword(s) is misrecognized: Yes
The term NextSeat should be Nexeed.
The term cloud might be crowd."""


class TestKeywordExtraction:
    def gw(self, reply):
        return Gateway(RouterBackend({"keywords": reply}))

    def test_bullets_parsed(self):
        keywords, suggestions = extract_keywords_and_corrections(
            solid_frame((1, 1, 1)), "text", self.gw(KEYWORD_REPLY))
        assert keywords == ["PLM", "ERP"]
        assert suggestions == []

    def test_corrections_parsed(self):
        keywords, suggestions = extract_keywords_and_corrections(
            solid_frame((1, 1, 1)), "text",
            self.gw(KEYWORD_REPLY_WITH_CORRECTIONS))
        assert keywords == ["Nexeed", "design", "build"]
        assert [(s.kind, s.from_term, s.to_term) for s in suggestions] == [
            ("should", "NextSeat", "Nexeed"), ("might", "cloud", "crowd")]

    def test_comma_bullet_split(self):
        reply = "List of keywords:\n- design, build; deploy\n\nAnswer: No"
        keywords, _ = extract_keywords_and_corrections(
            solid_frame((1, 1, 1)), "t", self.gw(reply))
        assert keywords == ["design", "build", "deploy"]

    def test_unparseable_retries_then_empty(self):
        backend = RouterBackend({"keywords": "I cannot help with that."})
        keywords, suggestions = extract_keywords_and_corrections(
            solid_frame((1, 1, 1)), "t", Gateway(backend))
        assert keywords == [] and suggestions == []
        assert len(backend.prompts_for("keywords")) == 2  # one retry

    def test_prompt_carries_transcript(self):
        backend = RouterBackend({"keywords": KEYWORD_REPLY})
        extract_keywords_and_corrections(
            solid_frame((1, 1, 1)), "the spoken words", Gateway(backend))
        assert "the spoken words" in backend.prompts_for("keywords")[0]


class TestVisionUnderstand:
    def test_baseline_prompt(self):
        backend = RouterBackend({"vision_baseline": "A nice slide."})
        reply = vision_understand(solid_frame((2, 2, 2)), [], Gateway(backend))
        assert reply == "A nice slide."
        assert backend.requests[0]["n_images"] == 1

    def test_knowledge_prompt_renders_entries(self):
        backend = RouterBackend({"vision_knowledge": "Grounded description."})
        entries = [
            KnowledgeEntry("PLM", "product lifecycle management",
                           __import__("premind.gateway",
                                      fromlist=["hashed_embedding"])
                           .hashed_embedding("PLM")),
            KnowledgeEntry("ERP", "enterprise resource planning",
                           __import__("premind.gateway",
                                      fromlist=["hashed_embedding"])
                           .hashed_embedding("ERP")),
        ]
        vision_understand(solid_frame((2, 2, 2)), entries, Gateway(backend))
        prompt = backend.prompts_for("vision_knowledge")[0]
        assert "PLM: product lifecycle management" in prompt
        assert "ERP: enterprise resource planning" in prompt

    def test_no_slide_reply_accepted_verbatim(self):
        backend = RouterBackend(
            {"vision_baseline": "The image shows an empty room."})
        assert vision_understand(solid_frame((0, 0, 0)), [],
                                 Gateway(backend)).startswith("The image")


class TestCriticLoop:
    def test_immediate_terminate_two_calls(self):
        backend = RouterBackend({
            "critic_vision": "Vision Understanding Result: First pass.",
            "critic": "TERMINATE!!!",
        })
        gw = Gateway(backend)
        out = critic_loop(solid_frame((3, 3, 3)), [], CriticConfig(), gw)
        assert out == "First pass."
        assert gw.model_call_count() == 2

    def test_never_satisfied_stops_at_n_max(self):
        backend = RouterBackend({
            "critic_vision": [f"Vision Understanding Result: draft"],
            "critic": "Please improve the counts.",
        })
        gw = Gateway(backend)
        critic_loop(solid_frame((3, 3, 3)), [], CriticConfig(n_max=10), gw)
        assert gw.model_call_count() == 10

    def test_one_round_of_critique_four_calls(self):
        backend = RouterBackend({
            "critic_vision": ["Vision Understanding Result: draft",
                              "Vision Understanding Result: revised"],
            "critic": ["Add the Venn diagram.", "TERMINATE!!!"],
        })
        gw = Gateway(backend)
        out = critic_loop(solid_frame((3, 3, 3)), [], CriticConfig(), gw)
        assert out == "revised"
        assert gw.model_call_count() == 4

    def test_feedback_threaded_into_revision(self):
        backend = RouterBackend({
            "critic_vision": ["Vision Understanding Result: draft",
                              "Vision Understanding Result: revised"],
            "critic": ["Add the missing axis label.", "TERMINATE!!!"],
        })
        critic_loop(solid_frame((3, 3, 3)), [], CriticConfig(),
                    Gateway(backend))
        revision = backend.prompts_for("critic_vision")[1]
        assert "Reviewer feedback:" in revision
        assert "Add the missing axis label." in revision

    def test_n_max_floor(self):
        with pytest.raises(ValueError):
            CriticConfig(n_max=1)


class TestConsolidate:
    def test_both_parts_in_prompt(self):
        backend = RouterBackend({"consolidate": "Merged."})
        out = consolidate("what we saw", "what we heard", Gateway(backend))
        assert out == "Merged."
        prompt = backend.prompts_for("consolidate")[0]
        assert "what we saw" in prompt and "what we heard" in prompt

    def test_empty_speech_ok(self):
        backend = RouterBackend({"consolidate": "Merged."})
        assert consolidate("seen", "", Gateway(backend)) == "Merged."

    def test_empty_vision_rejected(self):
        with pytest.raises(ValueError):
            consolidate("", "speech", Gateway(RouterBackend({})))


CONCEPT_REPLY = """Concept: PLM
Knowledge of Concept: Product lifecycle management covers a product's life.
-------------
Concept: ERP
Knowledge of Concept: Enterprise resource planning integrates processes.
-------------"""


class TestExtractKnowledge:
    def test_sentinel_empty(self):
        backend = RouterBackend({"knowledge_extraction": "No concept extracted"})
        assert extract_knowledge("text", Gateway(backend)) == []

    def test_two_blocks(self):
        backend = RouterBackend({"knowledge_extraction": CONCEPT_REPLY})
        concepts = extract_knowledge("text", Gateway(backend))
        assert [c.name for c in concepts] == ["PLM", "ERP"]
        assert concepts[0].explanation.startswith("Product lifecycle")

    def test_malformed_block_retries_then_empty(self):
        backend = RouterBackend({"knowledge_extraction": "Concept: PLM\n(no expl)"})
        assert extract_knowledge("text", Gateway(backend)) == []
        assert len(backend.prompts_for("knowledge_extraction")) == 2


def make_segment(seg_id="vid:0000", start=0.0, end=20.0):
    return VideoSegment(seg_id, "vid", start, end, (start + end) / 2)


def full_scripts(**overrides):
    scripts = {
        "keywords": KEYWORD_REPLY_WITH_CORRECTIONS,
        "vision_baseline": "Baseline description.",
        "vision_knowledge": "Knowledge-grounded description.",
        "critic_vision": "Vision Understanding Result: Critic description.",
        "critic": "TERMINATE!!!",
        "consolidate": "Consolidated story.",
        "knowledge_extraction": CONCEPT_REPLY,
    }
    scripts.update(overrides)
    return scripts


class TestUnderstandSegment:
    def run(self, features, sentences=None, scripts=None, km=None):
        backend = RouterBackend(scripts or full_scripts())
        gw = Gateway(backend)
        km = km or KnowledgeMemory("vid")
        if sentences is None:
            sentences = [sent("we use NextSeat daily", 2, 6)]
        idx = understand_segment(make_segment(), sentences, km, features, gw,
                                 frame=solid_frame((9, 9, 9)))
        return idx, gw, backend, km

    def test_baseline_two_calls(self):
        idx, gw, backend, _ = self.run(FeatureFlags())
        assert gw.model_call_count() == 2
        assert {r["route"] for r in backend.requests} == {"vision_baseline",
                                                          "consolidate"}
        assert idx.vision_text == "Baseline description."
        assert idx.speech_text == "we use NextSeat daily"  # untouched
        assert idx.consolidated_text == "Consolidated story."

    def test_knowledge_four_calls(self):
        idx, gw, backend, km = self.run(
            FeatureFlags(knowledge=True))
        assert gw.model_call_count() == 4
        routes = [r["route"] for r in backend.requests]
        assert routes == ["keywords", "vision_baseline", "consolidate",
                          "knowledge_extraction"]
        assert [e.name for e in km.entries] == ["PLM", "ERP"]

    def test_knowledge_plus_asr_four_calls(self):
        idx, gw, backend, _ = self.run(
            FeatureFlags(knowledge=True, asr_correction=True))
        assert gw.model_call_count() == 4
        assert idx.speech_text == "we use Nexeed daily"
        assert [c.to_term for c in idx.applied_corrections] == ["Nexeed"]
        assert all(c.applied for c in idx.applied_corrections)

    def test_might_suggestion_never_applied(self):
        idx, _, _, _ = self.run(FeatureFlags(asr_correction=True),
                                sentences=[sent("a cloud of ideas", 2, 6)])
        assert idx.speech_text == "a cloud of ideas"

    def test_critic_uses_bounded_calls(self):
        idx, gw, _, _ = self.run(
            FeatureFlags(knowledge=True, asr_correction=True, critic=True))
        # keywords + (vision, critic-terminate) + consolidate + extraction
        assert gw.model_call_count() == 5
        assert idx.vision_text == "Critic description."

    def test_retrieved_knowledge_reaches_vision_prompt(self):
        km = KnowledgeMemory("vid")
        embedder = lambda text: __import__(  # noqa: E731
            "premind.gateway", fromlist=["hashed_embedding"]
        ).hashed_embedding(text, 16)
        upsert_concept(km, Concept("PLM", "lifecycle knowledge"), embedder)
        backend = RouterBackend(full_scripts(keywords=KEYWORD_REPLY))
        gw = Gateway(backend)
        understand_segment(
            make_segment(), [], km,
            FeatureFlags(knowledge=True), gw, frame=solid_frame((9, 9, 9)))
        prompt = backend.prompts_for("vision_knowledge")[0]
        assert "PLM: lifecycle knowledge" in prompt

    def test_embeddings_cover_texts(self):
        idx, _, _, _ = self.run(FeatureFlags())
        assert idx.embeddings["vision"] is not None
        assert idx.embeddings["consolidated"] is not None
        assert idx.embeddings["speech"] is not None

    def test_silent_segment_has_no_speech_embedding(self):
        idx, _, _, _ = self.run(FeatureFlags(), sentences=[])
        assert idx.speech_text == ""
        assert idx.embeddings["speech"] is None

    def test_feature_flags_recorded(self):
        idx, _, _, _ = self.run(FeatureFlags(knowledge=True))
        assert idx.feature_flags == {"knowledge": True,
                                     "asr_correction": False,
                                     "critic": False}


class TestProcessLecture:
    def segments(self):
        return [make_segment("vid:0000", 0, 20), make_segment("vid:0001", 20, 40)]

    def test_temporal_order_and_sink(self, tmp_path):
        backend = RouterBackend(full_scripts())
        gw = Gateway(backend)
        km = KnowledgeMemory("vid")
        stored = []
        indexes = process_lecture(
            "unused.avi", list(reversed(self.segments())), [], km,
            FeatureFlags(), gw,
            sink=lambda idx, memory: stored.append(idx.segment_id),
            checkpoint_path=str(tmp_path / "lec.json"),
            decoder=_StubDecoder())
        assert stored == ["vid:0000", "vid:0001"]
        assert [i.segment_id for i in indexes] == stored

    def test_prefix_determinism(self, tmp_path):
        # Memory state observed right after segment i must not depend on
        # whether later segments get processed.
        def run(n_segments):
            backend = RouterBackend(full_scripts())
            km = KnowledgeMemory("vid")
            snapshots = []
            process_lecture(
                "unused.avi", self.segments()[:n_segments], [], km,
                FeatureFlags(knowledge=True), Gateway(backend),
                sink=lambda idx, memory: snapshots.append(
                    [(e.name, e.explanation, e.update_count)
                     for e in memory.entries]),
                decoder=_StubDecoder())
            return snapshots

        short, long = run(1), run(2)
        assert short == long[: len(short)]

    def test_resume_skips_done_segments(self, tmp_path):
        ckpt = str(tmp_path / "lec.json")
        backend = RouterBackend(full_scripts())
        gw = Gateway(backend)
        km = KnowledgeMemory("vid")
        process_lecture("unused.avi", self.segments()[:1], [], km,
                        FeatureFlags(), gw, sink=lambda i, m: None,
                        checkpoint_path=ckpt, decoder=_StubDecoder())
        # Checkpoint removed after clean completion; simulate a partial one.
        from premind.agents import LectureCheckpoint
        partial = LectureCheckpoint(ckpt)
        partial.mark("vid:0000")
        gw2 = Gateway(RouterBackend(full_scripts()))
        indexes = process_lecture("unused.avi", self.segments(), [],
                                  KnowledgeMemory("vid"), FeatureFlags(), gw2,
                                  sink=lambda i, m: None,
                                  checkpoint_path=ckpt,
                                  decoder=_StubDecoder())
        assert [i.segment_id for i in indexes] == ["vid:0001"]


class _StubDecoder:
    """Media decoder stand-in: every frame is a flat gray image."""

    def duration(self, path):
        return 40.0

    def frame_at(self, path, time):
        return solid_frame((50, 50, 50), t=time)

    def iter_sampled(self, path, fps):
        yield solid_frame((50, 50, 50), t=0.0)

    def probe(self, path):
        return 40.0, 10.0, 400
