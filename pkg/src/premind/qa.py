"""Retrieval-augmented QA over the index store, plus the extrinsic
evaluation machinery: question/ground-truth generation per index type, the
answer-correctness judge, and accuracy aggregation across retrieval
configurations.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .errors import EmptyStoreError, ParseFailure
from .gateway import Gateway
from .store import INDEX_TYPES, IndexStore, SearchHit

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 5

QUESTION_TYPES = ("vision", "speech", "consolidation")

# Retrieval configurations evaluated side by side, as in the results tables.
DEFAULT_TYPES_MATRIX: dict[str, tuple[str, ...]] = {
    "all": INDEX_TYPES,
    "vision": ("vision",),
    "speech": ("speech",),
    "consolidated": ("consolidated",),
}


@dataclass(frozen=True)
class QAItem:
    question: str
    ground_truth: str
    question_type: str  # vision | speech | consolidation
    source_segment_id: str

    def __post_init__(self):
        if not self.question or not self.ground_truth:
            raise ValueError("question and ground truth must be non-empty")
        if self.question_type not in QUESTION_TYPES:
            raise ValueError(f"unknown question type: {self.question_type}")


@dataclass(frozen=True)
class Verdict:
    label: str  # correct | wrong | correct_with_additional
    raw_reply: str
    flagged: bool = False


@dataclass
class QAAnswer:
    answer_text: str
    citations: list[SearchHit] = field(default_factory=list)


def answer(question: str, store: IndexStore, types=INDEX_TYPES,
           k: int = DEFAULT_TOP_K, gateway: Gateway | None = None) -> QAAnswer:
    """Embed the question, retrieve the top-k texts of the selected index
    types, and have the reader answer from that context."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not types:
        raise ValueError("at least one index type required")
    if gateway is None:
        raise ValueError("gateway required")
    query = gateway.embed(question)
    hits = store.search(query, types=types, k=k)
    if not hits:
        raise EmptyStoreError("no documents to retrieve from")
    contexts = []
    for i, hit in enumerate(hits, start=1):
        doc = store.get_document(hit.doc_id)
        contexts.append(f"{i}. {doc.text if doc else ''}")
    prompt = prompts.render("reader", {"context": "\n".join(contexts),
                                       "question": question})
    reply = gateway.llm_complete(prompt)
    return QAAnswer(reply, hits)


_QG_LABELS = [
    ("Question_1_vision", "Answer_1_vision", "vision"),
    ("Question_2_vision", "Answer_2_vision", "vision"),
    ("Question_3_speech", "Answer_3_speech", "speech"),
    ("Question_4_speech", "Answer_4_speech", "speech"),
    ("Question_5_consolidated", "Answer_5_consolidated", "consolidation"),
    ("Question_6_consolidated", "Answer_6_consolidated", "consolidation"),
]


def _parse_labeled(reply: str, labels: list[str]) -> dict[str, str]:
    """Parse 'Label: content' lines where content may continue until the
    next known label."""
    pattern = re.compile(
        r"^\s*(" + "|".join(re.escape(label) for label in labels) + r")\s*:",
        re.MULTILINE)
    matches = list(pattern.finditer(reply))
    found: dict[str, str] = {}
    for i, match in enumerate(matches):
        label = match.group(1)
        end = matches[i + 1].start() if i + 1 < len(matches) else len(reply)
        found[label] = reply[match.end():end].strip()
    missing = [label for label in labels if not found.get(label)]
    if missing:
        raise ParseFailure(f"missing or empty: {', '.join(missing)}")
    return found


def _qa_items_from(found: dict[str, str], labels, segment_id: str) -> list[QAItem]:
    return [QAItem(found[q], found[a], question_type, segment_id)
            for q, a, question_type in labels]


def generate_questions(idx, gateway: Gateway) -> list[QAItem]:
    """Six QA pairs for one segment index: 2 vision, 2 speech, 2 consolidation."""
    if not (idx.vision_text and idx.consolidated_text):
        raise ValueError("segment index must have all three texts")
    prompt = prompts.render("question_gen_qa", {
        "vision understanding result": idx.vision_text,
        "speech transcript": idx.speech_text,
        "consolidated information": idx.consolidated_text,
    })
    labels = [lab for pair in _QG_LABELS for lab in pair[:2]]
    reply = gateway.llm_complete(prompt)
    try:
        found = _parse_labeled(reply, labels)
    except ParseFailure:
        logger.warning("question generation reply unparseable, retrying")
        reply = gateway.llm_complete(prompt)
        found = _parse_labeled(reply, labels)
    return _qa_items_from(found, _QG_LABELS, idx.segment_id)


def generate_ablation_questions(kind: str, inputs: dict,
                                gateway: Gateway,
                                segment_id: str = "") -> list[QAItem]:
    """Two QA pairs for an ablation study.

    kind="asr" takes {"transcript", "corrections"}; kind="vision" takes
    {"description_1", "description_2", "difference"}."""
    if kind == "asr":
        prompt = prompts.render("question_gen_asr_ablation", {
            "original speech transcript": inputs["transcript"],
            "corrections": inputs["corrections"],
        })
        labels = [("Question_3_speech", "Answer_3_speech", "speech"),
                  ("Question_4_speech", "Answer_4_speech", "speech")]
    elif kind == "vision":
        prompt = prompts.render("question_gen_vision_ablation", {
            "vision understanding result 1": inputs["description_1"],
            "vision understanding result 2": inputs["description_2"],
            "difference": inputs["difference"],
        })
        labels = [("Question_1_vision", "Answer_1_vision", "vision"),
                  ("Question_2_vision", "Answer_2_vision", "vision")]
    else:
        raise ValueError(f"unknown ablation kind: {kind}")
    flat = [lab for pair in labels for lab in pair[:2]]
    reply = gateway.llm_complete(prompt)
    try:
        found = _parse_labeled(reply, flat)
    except ParseFailure:
        logger.warning("ablation question reply unparseable, retrying")
        reply = gateway.llm_complete(prompt)
        found = _parse_labeled(reply, flat)
    return _qa_items_from(found, labels, segment_id)


# Longest phrase first, so the qualified verdict wins over the bare one.
_JUDGE_PATTERNS = [
    (re.compile(r"\bcorrect but with additional information\b", re.IGNORECASE),
     "correct_with_additional"),
    (re.compile(r"\bwrong\b", re.IGNORECASE), "wrong"),
    (re.compile(r"\bcorrect\b", re.IGNORECASE), "correct"),
]


def judge(item: QAItem, predicted_answer: str, gateway: Gateway) -> Verdict:
    """Label a predicted answer against the ground truth via the judging
    prompt. An unmappable reply is recorded as wrong, flagged."""
    if not predicted_answer:
        raise ValueError("predicted answer must be non-empty")
    prompt = prompts.render("answer_judge", {
        "question": item.question,
        "ground truth answer": item.ground_truth,
        "predicted answer": predicted_answer,
    })
    reply = gateway.llm_complete(prompt)
    for pattern, label in _JUDGE_PATTERNS:
        if pattern.search(reply):
            return Verdict(label, reply)
    logger.warning("unmappable judge reply: %.80r", reply)
    return Verdict("wrong", reply, flagged=True)


def _accuracy(correct: int, total: int) -> float | None:
    return round(100.0 * correct / total, 2) if total else None


def run_eval(store: IndexStore, items: list[QAItem], gateway: Gateway,
             types_matrix: dict[str, tuple[str, ...]] | None = None,
             k: int = DEFAULT_TOP_K) -> dict:
    """Answer and judge every item under each retrieval configuration.

    Accuracy counts 'correct' and 'correct but with additional information'
    as correct. Items that fail to answer or judge are excluded from the
    denominator and reported as failures.
    """
    if not items:
        raise ValueError("no items to evaluate")
    matrix = types_matrix or DEFAULT_TYPES_MATRIX
    if any(not types for types in matrix.values()):
        raise ValueError("every configuration needs at least one index type")
    report: dict = {"counting_rule": "correct_with_additional counts as correct",
                    "configs": {}}
    for config_name, types in matrix.items():
        per_type = {qt: {"correct": 0, "total": 0} for qt in QUESTION_TYPES}
        failures = 0
        verdicts = []
        for item in items:
            try:
                result = answer(item.question, store, types=types, k=k,
                                gateway=gateway)
                verdict = judge(item, result.answer_text, gateway)
            except Exception:
                logger.exception("eval failure for %r under %s",
                                 item.question[:60], config_name)
                failures += 1
                continue
            bucket = per_type[item.question_type]
            bucket["total"] += 1
            if verdict.label in ("correct", "correct_with_additional"):
                bucket["correct"] += 1
            verdicts.append({"question": item.question,
                             "question_type": item.question_type,
                             "label": verdict.label})
        total = sum(b["total"] for b in per_type.values())
        correct = sum(b["correct"] for b in per_type.values())
        report["configs"][config_name] = {
            "types": list(types),
            "per_type": {qt: {**bucket,
                              "accuracy": _accuracy(bucket["correct"],
                                                    bucket["total"])}
                         for qt, bucket in per_type.items()},
            "overall": {"correct": correct, "total": total,
                        "accuracy": _accuracy(correct, total)},
            "failures": failures,
            "verdicts": verdicts,
        }
    return report
