"""Durable storage for videos, segments, segment indexes, and knowledge
memories, with exact cosine top-k search over the per-(segment, index-type)
documents.

Layout: one directory per video under the store root, holding
newline-delimited JSON record files (segments.jsonl, indexes.jsonl,
documents.jsonl), a knowledge.json memory snapshot, and a meta.json. All
writes are deterministic byte-for-byte for identical inputs: records are
serialized with sorted keys and no volatile fields. See
docs/store-format.md for the full schema.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path

import numpy as np

from .agents import SegmentIndex
from .errors import DimensionMismatch, EmptyStoreError, FormatError, StorageError
from .gateway import Embedding
from .knowledge import KnowledgeMemory, memory_from_dict, memory_to_dict
from .segmenter import VideoSegment

SCHEMA_VERSION = 1
INDEX_TYPES = ("vision", "speech", "consolidated")


@dataclass(frozen=True)
class IndexedDocument:
    doc_id: str
    segment_id: str
    video_id: str
    index_type: str
    text: str
    embedding: Embedding


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    rank: int


def _text_hash(text: str) -> str:
    return sha256(text.encode("utf-8")).hexdigest()


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False,
                      separators=(",", ": "))


def _write_jsonl(path: Path, records: list[dict]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_dump(record))
            fh.write("\n")
    os.replace(tmp, path)


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records


class IndexStore:
    """File-backed store; one instance assumes single-writer semantics per
    video directory and serves reads from an in-memory view."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        marker = self.root / "premind_store.json"
        if marker.exists():
            data = json.loads(marker.read_text())
            if data.get("schema_version") != SCHEMA_VERSION:
                raise FormatError(
                    f"store schema {data.get('schema_version')} unsupported")
        else:
            marker.write_text(_dump({"schema_version": SCHEMA_VERSION}) + "\n")
        self._docs: dict[str, list[IndexedDocument]] | None = None

    # -- video registry -----------------------------------------------------

    def _video_dir(self, video_id: str, create: bool = False) -> Path:
        safe = video_id.replace("/", "_").replace(":", "_")
        path = self.root / safe
        if create:
            path.mkdir(parents=True, exist_ok=True)
        return path

    def add_video(self, video_id: str, source_path: str | None = None,
                  duration: float | None = None) -> None:
        meta = {"schema_version": SCHEMA_VERSION, "video_id": video_id,
                "source_path": source_path, "duration": duration}
        path = self._video_dir(video_id, create=True) / "meta.json"
        path.write_text(_dump(meta) + "\n", encoding="utf-8")

    def videos(self) -> list[dict]:
        out = []
        for meta_path in sorted(self.root.glob("*/meta.json")):
            out.append(json.loads(meta_path.read_text(encoding="utf-8")))
        return out

    def video_meta(self, video_id: str) -> dict | None:
        path = self._video_dir(video_id) / "meta.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    # -- segments ------------------------------------------------------------

    def put_segments(self, video_id: str, records: list[dict]) -> None:
        if not (self._video_dir(video_id) / "meta.json").exists():
            self.add_video(video_id)
        _write_jsonl(self._video_dir(video_id, create=True) / "segments.jsonl",
                     records)

    def segments(self, video_id: str) -> list[dict]:
        return _read_jsonl(self._video_dir(video_id) / "segments.jsonl")

    def segment_record(self, segment_id: str) -> dict | None:
        for meta in self.videos():
            for record in self.segments(meta["video_id"]):
                if record["segment_id"] == segment_id:
                    return record
        return None

    def load_segments(self, video_id: str) -> list[VideoSegment]:
        return [VideoSegment(r["segment_id"], r["video_id"], r["start"],
                             r["end"], r["representative_frame_time"])
                for r in self.segments(video_id)]

    # -- segment indexes -------------------------------------------------------

    def put_index(self, idx: SegmentIndex) -> None:
        """Upsert one SegmentIndex: its record plus one searchable document
        per non-empty index text."""
        for index_type in ("vision", "consolidated"):
            if idx.embeddings.get(index_type) is None:
                raise StorageError(
                    f"{idx.segment_id}: missing {index_type} embedding")
        if idx.speech_text and idx.embeddings.get("speech") is None:
            raise StorageError(f"{idx.segment_id}: missing speech embedding")

        video_dir = self._video_dir(idx.video_id, create=True)
        if not (video_dir / "meta.json").exists():
            self.add_video(idx.video_id)

        index_records = [r for r in _read_jsonl(video_dir / "indexes.jsonl")
                         if r["segment_id"] != idx.segment_id]
        index_records.append({
            "segment_id": idx.segment_id,
            "video_id": idx.video_id,
            "vision_text": idx.vision_text,
            "speech_text": idx.speech_text,
            "consolidated_text": idx.consolidated_text,
            "keywords": idx.keywords,
            "applied_corrections": [
                {"kind": c.kind, "from_term": c.from_term,
                 "to_term": c.to_term, "applied": c.applied}
                for c in idx.applied_corrections],
            "feature_flags": idx.feature_flags,
        })
        index_records.sort(key=lambda r: r["segment_id"])
        _write_jsonl(video_dir / "indexes.jsonl", index_records)

        doc_records = [r for r in _read_jsonl(video_dir / "documents.jsonl")
                       if r["segment_id"] != idx.segment_id]
        texts = {"vision": idx.vision_text, "speech": idx.speech_text,
                 "consolidated": idx.consolidated_text}
        for index_type in INDEX_TYPES:
            text = texts[index_type]
            embedding = idx.embeddings.get(index_type)
            if embedding is None:
                continue
            doc_records.append({
                "doc_id": f"{idx.segment_id}:{index_type}",
                "segment_id": idx.segment_id,
                "video_id": idx.video_id,
                "index_type": index_type,
                "text": text,
                "text_sha256": _text_hash(text),
                "embedding": list(embedding.values),
            })
        doc_records.sort(key=lambda r: r["doc_id"])
        _write_jsonl(video_dir / "documents.jsonl", doc_records)
        self._docs = None

    def get_index(self, segment_id: str) -> dict | None:
        for meta in self.videos():
            video_dir = self._video_dir(meta["video_id"])
            for record in _read_jsonl(video_dir / "indexes.jsonl"):
                if record["segment_id"] == segment_id:
                    return record
        return None

    def indexes(self, video_id: str) -> list[dict]:
        return _read_jsonl(self._video_dir(video_id) / "indexes.jsonl")

    # -- documents & search -----------------------------------------------------

    def _load_documents(self) -> dict[str, list[IndexedDocument]]:
        if self._docs is None:
            docs: dict[str, list[IndexedDocument]] = {t: [] for t in INDEX_TYPES}
            for meta in self.videos():
                video_dir = self._video_dir(meta["video_id"])
                for record in _read_jsonl(video_dir / "documents.jsonl"):
                    if record["text_sha256"] != _text_hash(record["text"]):
                        raise FormatError(
                            f"document {record['doc_id']}: text hash mismatch")
                    docs[record["index_type"]].append(IndexedDocument(
                        record["doc_id"], record["segment_id"],
                        record["video_id"], record["index_type"],
                        record["text"],
                        Embedding(tuple(float(v)
                                        for v in record["embedding"]))))
            self._docs = docs
        return self._docs

    def documents(self, types=INDEX_TYPES) -> list[IndexedDocument]:
        loaded = self._load_documents()
        out: list[IndexedDocument] = []
        for index_type in INDEX_TYPES:
            if index_type in types:
                out.extend(loaded[index_type])
        return out

    def get_document(self, doc_id: str) -> IndexedDocument | None:
        for doc in self.documents():
            if doc.doc_id == doc_id:
                return doc
        return None

    def search(self, query: Embedding, types=INDEX_TYPES,
               k: int = 5) -> list[SearchHit]:
        """Exact top-k by cosine similarity over the selected index types.

        Returns [] for an empty store; ties break by doc_id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        docs = self.documents(types)
        if not docs:
            return []
        q = query.as_array()
        qn = np.linalg.norm(q)
        if qn == 0:
            raise EmptyStoreError("zero query embedding")
        scored = []
        for doc in docs:
            v = doc.embedding.as_array()
            if v.shape != q.shape:
                raise DimensionMismatch(
                    f"document {doc.doc_id} has dimension {v.size}, query {q.size}")
            norm = np.linalg.norm(v)
            score = float(np.dot(q, v) / (qn * norm)) if norm else -1.0
            scored.append((score, doc.doc_id))
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        return [SearchHit(doc_id, score, rank)
                for rank, (score, doc_id) in enumerate(scored[:k], start=1)]

    # -- knowledge memories ------------------------------------------------------

    def save_memory(self, km: KnowledgeMemory) -> None:
        video_dir = self._video_dir(km.lecture_id, create=True)
        path = video_dir / "knowledge.json"
        path.write_text(_dump(memory_to_dict(km)) + "\n", encoding="utf-8")

    def load_memory(self, lecture_id: str) -> KnowledgeMemory:
        path = self._video_dir(lecture_id) / "knowledge.json"
        if not path.exists():
            return KnowledgeMemory(lecture_id)
        try:
            return memory_from_dict(json.loads(path.read_text(encoding="utf-8")))
        except ValueError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc


def export_store(store: IndexStore, path: str | Path) -> None:
    """Copy the whole store directory to `path` (which must not exist)."""
    shutil.copytree(store.root, path)


def import_store(path: str | Path) -> IndexStore:
    """Open and validate a store directory: schema version and document
    text hashes are checked."""
    path = Path(path)
    marker = path / "premind_store.json"
    if not marker.exists():
        raise FormatError(f"{path} is not a premind store")
    store = IndexStore(path)
    store.documents()  # forces hash validation
    return store
