"""Command-line entry point wiring all modules together.

Every subcommand accepts --mock <manifest> so full runs never need network
access, and every run writes a manifest recording the resolved config hash,
model identifiers, call counts, and wall time.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from . import evaluation as ev
from . import media
from . import qa as qa_mod
from .agents import SegmentIndex, process_lecture
from .config import FeatureFlags, config_dict, config_fingerprint, load_config
from .errors import PremindError
from .gateway import Gateway, HttpBackend, TranscriptSentence, mock_load
from .knowledge import KnowledgeMemory
from .qa import QAItem, generate_questions, run_eval
from .segmenter import segment_video, segmentation_records
from .store import IndexStore, export_store, import_store

logger = logging.getLogger(__name__)


def _build_gateway(cfg, mock_path: str | None) -> Gateway:
    backend = mock_load(mock_path) if mock_path else HttpBackend(cfg.model)
    return Gateway(backend, cfg.model)


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _write_manifest(path: str, cfg, gateway: Gateway, started: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "config_hash": config_fingerprint(cfg),
        "models": {
            "vlm": cfg.model.vlm_model, "llm": cfg.model.llm_model,
            "asr": cfg.model.asr_model, "embed": cfg.model.embed_model,
        },
        "call_counts": {cap: gateway.call_count(cap)
                        for cap in ("vlm", "llm", "asr", "embed")},
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    manifest.update(extra or {})
    _write_json(path, manifest)


def _load_transcript(path: str | None) -> list[TranscriptSentence]:
    if not path:
        return []
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return sorted((TranscriptSentence(s["text"], float(s["start"]),
                                      float(s["end"])) for s in data),
                  key=lambda s: (s.start, s.end))


common_options = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 default=None, help="TOML config file."),
    click.option("--mock", "mock_path", type=click.Path(exists=True),
                 default=None, help="Mock-gateway manifest (offline mode)."),
    click.option("--manifest", "manifest_path", default="premind-manifest.json",
                 show_default=True, help="Where to write the run manifest."),
]


def _with_common(fn):
    for option in reversed(common_options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Slide-level video segmentation, indexing, and retrieval QA."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("video", type=click.Path(exists=True))
@click.option("--transcript", "transcript_path", type=click.Path(exists=True),
              default=None, help="Sentence-timestamped transcript JSON.")
@click.option("--out", "out_path", required=True, help="Output segments JSON.")
@click.option("--video-id", default=None, help="Defaults to the file stem.")
@_with_common
def segment(video, transcript_path, out_path, video_id, config_path,
            mock_path, manifest_path):
    """Segment VIDEO into slide-presentation segments."""
    started = time.monotonic()
    cfg = load_config(config_path)
    click.echo(json.dumps(config_dict(cfg)), err=True)
    gateway = _build_gateway(cfg, mock_path)
    vid = video_id or Path(video).stem
    ckpt = str(Path(out_path).with_suffix(".ckpt.json"))
    result = segment_video(video, _load_transcript(transcript_path),
                           cfg.segmenter, gateway, video_id=vid,
                           checkpoint_path=ckpt)
    _write_json(out_path, segmentation_records(result))
    _write_manifest(manifest_path, cfg, gateway, started,
                    {"videos": 1, "segments": len(result.segments)})
    click.echo(f"{len(result.segments)} segments -> {out_path}")


@main.command()
@click.argument("videos", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--features", "features_spec", default="",
              help="Comma list: knowledge,asr,critic (empty = baseline).")
@click.option("--store", "store_path", required=True, help="Store directory.")
@click.option("--transcript", "transcript_path", type=click.Path(exists=True),
              default=None,
              help="Transcript JSON (otherwise the ASR capability is called).")
@click.option("--jobs", default=1, show_default=True,
              help="Videos processed concurrently (lectures stay sequential).")
@_with_common
def index(videos, features_spec, store_path, transcript_path, jobs,
          config_path, mock_path, manifest_path):
    """Segment and index one or more lecture VIDEOS into a store."""
    started = time.monotonic()
    cfg = load_config(config_path)
    features = FeatureFlags.parse(features_spec)
    click.echo(json.dumps(config_dict(cfg)), err=True)
    gateway = _build_gateway(cfg, mock_path)
    store = IndexStore(store_path)
    ckpt_root = Path(store_path + ".ckpt")
    segment_counts = []
    calls_before_all = gateway.model_call_count()

    def one_video(video: str) -> int:
        vid = Path(video).stem
        sentences = (_load_transcript(transcript_path) if transcript_path
                     else gateway.transcribe(video))
        result = segment_video(
            video, sentences, cfg.segmenter, gateway, video_id=vid,
            checkpoint_path=str(ckpt_root / f"{vid}.segmentation.json"))
        store.add_video(vid, source_path=str(Path(video).resolve()),
                        duration=media.get_decoder().duration(video))
        store.put_segments(vid, segmentation_records(result))
        km = KnowledgeMemory(vid, similarity_threshold=cfg.similarity_threshold)

        def sink(idx, memory):
            store.put_index(idx)
            store.save_memory(memory)

        process_lecture(
            video, result.segments, sentences, km, features, gateway,
            sink=sink, critic_cfg=cfg.critic,
            correction_threshold=cfg.correction_threshold,
            checkpoint_path=str(ckpt_root / f"{vid}.lecture.json"))
        return len(result.segments)

    if jobs > 1 and len(videos) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            segment_counts = list(pool.map(one_video, videos))
    else:
        segment_counts = [one_video(v) for v in videos]

    total_segments = sum(segment_counts)
    model_calls = gateway.model_call_count() - calls_before_all
    if ckpt_root.exists() and not any(ckpt_root.iterdir()):
        ckpt_root.rmdir()
    _write_manifest(manifest_path, cfg, gateway, started, {
        "videos": len(videos),
        "segments": total_segments,
        "features": features.as_dict(),
        "model_calls": model_calls,
        "model_calls_per_segment": (round(model_calls / total_segments, 2)
                                    if total_segments else None),
    })
    click.echo(f"indexed {len(videos)} video(s), "
               f"{total_segments} segments -> {store_path}")


@main.group()
def qa():
    """Ask questions, generate evaluation items, or run the QA evaluation."""


@qa.command("ask")
@click.argument("question")
@click.option("--store", "store_path", required=True)
@click.option("--types", "types_spec", default="all", show_default=True,
              help="all or comma list of vision,speech,consolidated.")
@click.option("--k", default=qa_mod.DEFAULT_TOP_K, show_default=True)
@_with_common
def qa_ask(question, store_path, types_spec, k, config_path, mock_path,
           manifest_path):
    """Answer QUESTION from the index store."""
    started = time.monotonic()
    cfg = load_config(config_path)
    gateway = _build_gateway(cfg, mock_path)
    store = IndexStore(store_path)
    types = (qa_mod.DEFAULT_TYPES_MATRIX["all"] if types_spec == "all"
             else tuple(t.strip() for t in types_spec.split(",") if t.strip()))
    result = qa_mod.answer(question, store, types=types, k=k, gateway=gateway)
    payload = {
        "answer": result.answer_text,
        "citations": [{"doc_id": h.doc_id, "score": h.score, "rank": h.rank}
                      for h in result.citations],
    }
    click.echo(json.dumps(payload, indent=2, ensure_ascii=False))
    _write_manifest(manifest_path, cfg, gateway, started, {"questions": 1})


@qa.command("gen")
@click.option("--store", "store_path", required=True)
@click.option("--out", "out_path", required=True)
@_with_common
def qa_gen(store_path, out_path, config_path, mock_path, manifest_path):
    """Generate six QA items per indexed segment."""
    started = time.monotonic()
    cfg = load_config(config_path)
    gateway = _build_gateway(cfg, mock_path)
    store = IndexStore(store_path)
    items = []
    skipped = 0
    for meta in store.videos():
        for record in store.indexes(meta["video_id"]):
            idx = SegmentIndex(
                segment_id=record["segment_id"], video_id=record["video_id"],
                vision_text=record["vision_text"],
                speech_text=record["speech_text"],
                consolidated_text=record["consolidated_text"])
            try:
                items.extend(generate_questions(idx, gateway))
            except PremindError:
                logger.exception("skipping segment %s", record["segment_id"])
                skipped += 1
    _write_json(out_path, [{"question": i.question,
                            "ground_truth": i.ground_truth,
                            "question_type": i.question_type,
                            "source_segment_id": i.source_segment_id}
                           for i in items])
    _write_manifest(manifest_path, cfg, gateway, started,
                    {"items": len(items), "skipped_segments": skipped})
    click.echo(f"{len(items)} items -> {out_path}")


@qa.command("eval")
@click.option("--store", "store_path", required=True)
@click.option("--items", "items_path", required=True,
              type=click.Path(exists=True))
@click.option("--report", "report_path", required=True)
@click.option("--k", default=qa_mod.DEFAULT_TOP_K, show_default=True)
@_with_common
def qa_eval(store_path, items_path, report_path, k, config_path, mock_path,
            manifest_path):
    """Answer and judge every item under each retrieval configuration."""
    started = time.monotonic()
    cfg = load_config(config_path)
    gateway = _build_gateway(cfg, mock_path)
    store = IndexStore(store_path)
    with open(items_path, encoding="utf-8") as fh:
        items = [QAItem(i["question"], i["ground_truth"], i["question_type"],
                        i.get("source_segment_id", ""))
                 for i in json.load(fh)]
    report = run_eval(store, items, gateway, k=k)
    _write_json(report_path, report)
    _write_manifest(manifest_path, cfg, gateway, started,
                    {"items": len(items)})
    overall = {name: c["overall"]["accuracy"]
               for name, c in report["configs"].items()}
    click.echo(json.dumps(overall))


@main.group("eval")
def eval_group():
    """Segmentation metrics, description comparison, and vote tallying."""


@eval_group.command("seg")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True))
@click.option("--iou-min", default=ev.DEFAULT_IOU_MIN, show_default=True)
def eval_seg(pred_path, truth_path, iou_min):
    """Compare predicted segment spans against ground truth."""
    def load_spans(path):
        with open(path, encoding="utf-8") as fh:
            return [ev.TimeSpan(r["start"], r["end"]) for r in json.load(fh)]

    match = ev.match_segments(load_spans(pred_path), load_spans(truth_path),
                              iou_min)
    metrics = ev.seg_metrics(match)
    click.echo(json.dumps({
        "precision": round(metrics.precision, 2),
        "recall": round(metrics.recall, 2),
        "f1": round(metrics.f1, 2),
        "mean_iou": round(metrics.mean_iou, 4),
        "matched": len(match.pairs),
        "pred": match.pred_count,
        "truth": match.truth_count,
        "iou_min": iou_min,
    }))


@eval_group.command("compare")
@click.option("--a", "store_a", required=True, type=click.Path(exists=True))
@click.option("--b", "store_b", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True)
@_with_common
def eval_compare(store_a, store_b, out_path, config_path, mock_path,
                 manifest_path):
    """Export questionnaire-ready cases where two stores' vision
    descriptions conflict."""
    started = time.monotonic()
    cfg = load_config(config_path)
    gateway = _build_gateway(cfg, mock_path)
    cases = ev.build_comparison_cases(IndexStore(store_a), IndexStore(store_b),
                                      gateway)
    _write_json(out_path, cases)
    _write_manifest(manifest_path, cfg, gateway, started,
                    {"cases": len(cases)})
    click.echo(f"{len(cases)} cases -> {out_path}")


@eval_group.command("tally")
@click.option("--votes", "votes_path", required=True,
              type=click.Path(exists=True))
def eval_tally(votes_path):
    """Tally 3-vote majority ballots from a CSV: case_id,vote1,vote2,vote3."""
    import csv

    cases = []
    with open(votes_path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("case_id", "case", "id"):
                continue
            cases.append([v.strip() for v in row[1:4]])
    tally = ev.tally_votes(cases)
    click.echo(json.dumps({
        "total": tally.total, "win": tally.win, "tie": tally.tie,
        "lose": tally.lose, "win_pct": tally.win_pct,
        "win_tie_pct": tally.win_tie_pct,
    }))


@main.command()
@click.option("--store", "store_path", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@_with_common
def serve(store_path, host, port, config_path, mock_path, manifest_path):
    """Serve the HTTP API for the web UI."""
    import uvicorn

    from .server import create_app

    cfg = load_config(config_path)
    gateway = _build_gateway(cfg, mock_path)
    app = create_app(IndexStore(store_path), gateway)
    uvicorn.run(app, host=host, port=port)


@main.command("export")
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True)
def export_cmd(store_path, out_path):
    """Copy a store directory (validating it on the way out)."""
    export_store(import_store(store_path), out_path)
    click.echo(f"{store_path} -> {out_path}")


def run(argv: list[str] | None = None) -> int:
    """Programmatic entry point with the documented exit codes."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.UsageError as exc:
        click.echo(f"Usage error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except PremindError as exc:
        click.echo(json.dumps({"error": type(exc).__name__,
                               "message": str(exc)}), err=True)
        return 1


def entry() -> None:
    """Console-script shim mapping errors onto the documented exit codes."""
    sys.exit(run())


if __name__ == "__main__":
    entry()
