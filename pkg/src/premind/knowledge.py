"""Per-lecture knowledge memory: concept entries with embedding-based
upsert (running-mean merge below/above a similarity threshold) and
keyword-based retrieval.

A memory starts empty for every lecture and never shares entries across
lectures. One pipeline worker writes a given lecture's memory; readers may
run between writes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, StorageError, ZeroVector
from .gateway import Embedding

DEFAULT_SIMILARITY_THRESHOLD = 0.7
DEFAULT_TOP_K = 10


@dataclass(frozen=True)
class Concept:
    """A named concept with its explanation, as extracted from one segment."""

    name: str
    explanation: str

    def __post_init__(self):
        if not self.name or not self.explanation:
            raise ValueError("concept name and explanation must be non-empty")


@dataclass
class KnowledgeEntry:
    name: str
    explanation: str
    embedding: Embedding
    update_count: int = 1


@dataclass
class KnowledgeMemory:
    lecture_id: str
    entries: list[KnowledgeEntry] = field(default_factory=list)
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD


@dataclass(frozen=True)
class UpsertResult:
    action: str  # "inserted" | "merged"
    index: int


def cosine(a: Embedding, b: Embedding) -> float:
    """Standard cosine similarity, in [-1, 1]."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} vs {b.dim}")
    va, vb = a.as_array(), b.as_array()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    value = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, value))


def _top_entry(km: KnowledgeMemory, query: Embedding) -> tuple[int, float]:
    """Index and similarity of the best entry; ties break to the lowest index."""
    best_idx, best_sim = -1, -2.0
    for idx, entry in enumerate(km.entries):
        sim = cosine(query, entry.embedding)
        if sim > best_sim:
            best_idx, best_sim = idx, sim
    return best_idx, best_sim


def upsert_concept(km: KnowledgeMemory, concept: Concept, embedder) -> UpsertResult:
    """Insert `concept` as a new entry, or merge it into the most similar one.

    Inserts when the memory is empty or the top similarity is strictly below
    the threshold. Merging appends the explanation (newline-separated) and
    updates the stored embedding to the running mean over all contributing
    embeddings.
    """
    if not concept.name:
        raise ValueError("concept name must be non-empty")
    emb = embedder(concept.name)
    if not km.entries:
        km.entries.append(KnowledgeEntry(concept.name, concept.explanation, emb))
        return UpsertResult("inserted", len(km.entries) - 1)
    idx, sim = _top_entry(km, emb)
    if sim < km.similarity_threshold:
        km.entries.append(KnowledgeEntry(concept.name, concept.explanation, emb))
        return UpsertResult("inserted", len(km.entries) - 1)
    entry = km.entries[idx]
    count = entry.update_count
    mean = (entry.embedding.as_array() * count + emb.as_array()) / (count + 1)
    entry.embedding = Embedding(tuple(float(v) for v in mean))
    entry.explanation = entry.explanation + "\n" + concept.explanation
    entry.update_count = count + 1
    return UpsertResult("merged", idx)


def retrieve_by_keywords(km: KnowledgeMemory, keywords: list[str], embedder,
                         top_k: int = DEFAULT_TOP_K) -> list[KnowledgeEntry]:
    """Entries relevant to any keyword.

    Per keyword: rank all entries by cosine similarity to the keyword
    embedding, keep the top `top_k`, and of those only entries strictly above
    the similarity threshold. The union over keywords is returned
    deduplicated, in insertion order.
    """
    if not keywords or not km.entries:
        return []
    selected: set[int] = set()
    for keyword in keywords:
        emb = embedder(keyword)
        ranked = sorted(
            ((cosine(emb, entry.embedding), idx)
             for idx, entry in enumerate(km.entries)),
            key=lambda pair: (-pair[0], pair[1]),
        )
        for sim, idx in ranked[:top_k]:
            if sim > km.similarity_threshold:
                selected.add(idx)
    return [km.entries[idx] for idx in sorted(selected)]


# --- persistence -----------------------------------------------------------


def memory_to_dict(km: KnowledgeMemory) -> dict:
    return {
        "lecture_id": km.lecture_id,
        "similarity_threshold": km.similarity_threshold,
        "entries": [
            {"name": e.name, "explanation": e.explanation,
             "embedding": list(e.embedding.values),
             "update_count": e.update_count}
            for e in km.entries
        ],
    }


def memory_from_dict(data: dict) -> KnowledgeMemory:
    try:
        entries = [
            KnowledgeEntry(e["name"], e["explanation"],
                           Embedding(tuple(float(v) for v in e["embedding"])),
                           int(e["update_count"]))
            for e in data["entries"]
        ]
        return KnowledgeMemory(data["lecture_id"], entries,
                               float(data.get("similarity_threshold",
                                              DEFAULT_SIMILARITY_THRESHOLD)))
    except (KeyError, TypeError, ValueError) as exc:
        raise StorageError(f"corrupt knowledge memory: {exc}") from exc


def snapshot(km: KnowledgeMemory, path: str) -> None:
    """Persist the memory as one JSON file."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(memory_to_dict(km), fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def restore(path: str, lecture_id: str) -> KnowledgeMemory:
    """Load a persisted memory; an absent file yields an empty memory."""
    if not os.path.exists(path):
        return KnowledgeMemory(lecture_id)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    km = memory_from_dict(data)
    if km.lecture_id != lecture_id:
        raise StorageError(
            f"memory at {path} belongs to {km.lecture_id!r}, not {lecture_id!r}")
    return km
