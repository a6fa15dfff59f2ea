"""HTTP API over an index store, consumed by the web UI.

Endpoints: GET /videos, GET /videos/{id}/segments, GET /segments/{id},
POST /qa. Media and thumbnails are additionally served when the store
knows the source file, so the browser player has something to play.
"""

from __future__ import annotations

import os

import cv2
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel

from . import media
from .errors import EmptyStoreError, PremindError
from .qa import DEFAULT_TOP_K, answer
from .store import INDEX_TYPES, IndexStore


class QARequest(BaseModel):
    question: str
    types: list[str] = list(INDEX_TYPES)
    k: int = DEFAULT_TOP_K


def create_app(store: IndexStore, gateway) -> FastAPI:
    app = FastAPI(title="premind", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def segment_payload(record: dict, index: dict | None) -> dict:
        payload = {
            "segment_id": record["segment_id"],
            "video_id": record["video_id"],
            "start": record["start"],
            "end": record["end"],
            "representative_frame_time": record["representative_frame_time"],
            "thumbnail_url": f"/segments/{record['segment_id']}/thumbnail",
        }
        if index:
            payload.update({
                "vision_text": index["vision_text"],
                "speech_text": index["speech_text"],
                "consolidated_text": index["consolidated_text"],
                "keywords": index["keywords"],
                "applied_corrections": index["applied_corrections"],
                "feature_flags": index["feature_flags"],
            })
        return payload

    @app.get("/videos")
    def videos():
        out = []
        for meta in store.videos():
            out.append({
                "video_id": meta["video_id"],
                "duration": meta.get("duration"),
                "segment_count": len(store.segments(meta["video_id"])),
                "media_url": (f"/videos/{meta['video_id']}/media"
                              if meta.get("source_path") else None),
            })
        return out

    @app.get("/videos/{video_id}/segments")
    def video_segments(video_id: str):
        if store.video_meta(video_id) is None:
            raise HTTPException(404, f"unknown video: {video_id}")
        indexes = {r["segment_id"]: r for r in store.indexes(video_id)}
        return [segment_payload(record, indexes.get(record["segment_id"]))
                for record in store.segments(video_id)]

    @app.get("/videos/{video_id}/media")
    def video_media(video_id: str):
        meta = store.video_meta(video_id)
        if meta is None or not meta.get("source_path"):
            raise HTTPException(404, "no media for this video")
        path = meta["source_path"]
        if not os.path.exists(path):
            raise HTTPException(404, f"media file missing: {path}")
        return FileResponse(path)

    @app.get("/segments/{segment_id}")
    def segment(segment_id: str):
        record = store.segment_record(segment_id)
        if record is None:
            raise HTTPException(404, f"unknown segment: {segment_id}")
        return segment_payload(record, store.get_index(segment_id))

    @app.get("/segments/{segment_id}/thumbnail")
    def thumbnail(segment_id: str):
        record = store.segment_record(segment_id)
        if record is None:
            raise HTTPException(404, f"unknown segment: {segment_id}")
        meta = store.video_meta(record["video_id"]) or {}
        source = meta.get("source_path")
        if not source or not os.path.exists(source):
            raise HTTPException(404, "no media to render a thumbnail from")
        frame = media.extract_frame(source, record["representative_frame_time"])
        ok, png = cv2.imencode(".png", frame.pixels[:, :, ::-1])
        if not ok:
            raise HTTPException(500, "thumbnail encoding failed")
        return Response(png.tobytes(), media_type="image/png")

    @app.post("/qa")
    def qa(request: QARequest):
        unknown = [t for t in request.types if t not in INDEX_TYPES]
        if unknown:
            raise HTTPException(422, f"unknown index types: {unknown}")
        try:
            result = answer(request.question, store, types=tuple(request.types),
                            k=request.k, gateway=gateway)
        except (EmptyStoreError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from exc
        except PremindError as exc:
            raise HTTPException(502, str(exc)) from exc
        citations = []
        for hit in result.citations:
            doc = store.get_document(hit.doc_id)
            record = store.segment_record(doc.segment_id) if doc else None
            citations.append({
                "doc_id": hit.doc_id,
                "rank": hit.rank,
                "score": hit.score,
                "segment_id": doc.segment_id if doc else None,
                "video_id": doc.video_id if doc else None,
                "index_type": doc.index_type if doc else None,
                "start": record["start"] if record else None,
                "end": record["end"] if record else None,
            })
        return {"answer": result.answer_text, "citations": citations}

    return app
