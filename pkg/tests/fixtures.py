"""Deterministic rendered-video fixtures with recorded ground truth.

Each fixture is an MJPG/AVI clip built from synthetic "slides". A slide's
identity is encoded in a row of black/white tag blocks along the bottom
edge, so truth-keyed mock backends can recognize which slide a decoded
frame shows without relying on lossless pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from premind.media import Frame

SIZE = (320, 180)  # (width, height)
FPS = 10
TAG_BITS = 6
TAG_BLOCK = 14  # px per tag block, along the bottom-right edge

PALETTE = [
    (200, 200, 205),  # light gray
    (40, 60, 160),    # dark blue
    (30, 140, 60),    # green
    (150, 40, 40),    # dark red
    (230, 200, 60),   # yellow
    (90, 40, 130),    # purple
]

FLASH = "flash"


def _draw_tag(img: np.ndarray, slide_id: int) -> None:
    h, w = img.shape[:2]
    y0 = h - TAG_BLOCK
    for bit in range(TAG_BITS):
        x1 = w - (bit + 1) * TAG_BLOCK
        value = 255 if (slide_id >> bit) & 1 else 0
        img[y0:h, x1:x1 + TAG_BLOCK] = value


def read_tag(pixels: np.ndarray) -> int:
    """Recover the slide id from a decoded frame."""
    h, w = pixels.shape[:2]
    y0 = h - TAG_BLOCK
    slide_id = 0
    for bit in range(TAG_BITS):
        x1 = w - (bit + 1) * TAG_BLOCK
        block = pixels[y0 + 2:h - 2, x1 + 2:x1 + TAG_BLOCK - 2]
        if block.mean() > 127:
            slide_id |= 1 << bit
    return slide_id


def render_slide(slide_id: int, *, background: tuple | None = None,
                 text_seed: int | None = None,
                 texture_phase: int | None = None,
                 bold_layout: bool = True) -> np.ndarray:
    """One synthetic slide image (RGB uint8).

    With `bold_layout`, seeded high-contrast blocks make slides structurally
    very different from each other (grayscale SSIM well below the merge
    band). With a `texture_phase` instead, only a mid-area stripe texture
    varies: visually subtle (small HSV delta) but structurally distinct
    enough to land SSIM inside the VLM verification band.
    """
    w, h = SIZE
    img = np.empty((h, w, 3), np.uint8)
    img[:] = background if background is not None else PALETTE[slide_id % len(PALETTE)]
    dark = np.clip(np.asarray(img[0, 0], int) - 90, 0, 255)
    mid = np.clip(np.asarray(img[0, 0], int) - 60, 0, 255)

    rng = np.random.default_rng(text_seed if text_seed is not None else slide_id)
    # Title bar and "text" lines in the upper half.
    img[10:26, 12:w - 12] = dark
    y = 38
    for _ in range(4):
        length = int(rng.integers(w // 3, w - 40))
        img[y:y + 6, 16:16 + length] = mid
        y += 14

    if bold_layout:
        # Seeded checker-contrast blocks: structure unique per slide.
        block_rng = np.random.default_rng(1000 + slide_id)
        for _ in range(6):
            x = int(block_rng.integers(12, w - 72))
            yb = int(block_rng.integers(96, h - TAG_BLOCK - 34))
            bw, bh = int(block_rng.integers(36, 64)), int(block_rng.integers(18, 30))
            shade = 255 if block_rng.integers(2) else 0
            img[yb:yb + bh, x:x + bw] = shade

    if texture_phase is not None:
        # Stripe band whose width/offset vary with the phase.
        band = img[96:140, 16:w - 16]
        xx = np.mgrid[0:band.shape[0], 0:band.shape[1]][1]
        width = 3 + (texture_phase % 3)
        stripes = (((xx + texture_phase * 2) // width) % 2).astype(np.uint8)
        base = band.astype(np.int16)
        band[:] = np.clip(base + (stripes[..., None] * 2 - 1) * 30, 0, 255)

    _draw_tag(img, slide_id)
    return img


@dataclass
class RenderedVideo:
    path: str
    fps: float
    duration: float
    # Ground-truth presentation spans: list of (slide_id, start, end), with
    # transition flashes folded into the preceding slide's span.
    truth: list[tuple[int, float, float]] = field(default_factory=list)
    slides: dict[int, np.ndarray] = field(default_factory=dict)

    def truth_spans(self) -> list[tuple[float, float]]:
        return [(start, end) for _, start, end in self.truth]

    def slide_frame(self, slide_id: int) -> Frame:
        return Frame(self.slides[slide_id], 0.0)


def render_video(path: str | Path,
                 schedule: list[tuple[object, float]],
                 slide_images: dict[int, np.ndarray],
                 fps: int = FPS) -> RenderedVideo:
    """Write an MJPG clip from (slide_id | "flash", duration) entries and
    record the ground-truth spans (flashes merge into the preceding slide)."""
    path = str(path)
    w, h = SIZE
    writer = cv2.VideoWriter(path, cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    if not writer.isOpened():
        raise RuntimeError("cv2.VideoWriter failed to open")
    flash_img = np.full((h, w, 3), 255, np.uint8)

    truth: list[tuple[int, float, float]] = []
    t = 0.0
    for entry, duration in schedule:
        frames = int(round(duration * fps))
        if entry == FLASH:
            img = flash_img
            if truth:
                slide_id, start, _ = truth[-1]
                truth[-1] = (slide_id, start, t + duration)
        else:
            img = slide_images[entry]
            if truth and truth[-1][0] == entry:
                slide_id, start, _ = truth[-1]
                truth[-1] = (slide_id, start, t + duration)
            else:
                truth.append((int(entry), t, t + duration))
        bgr = img[:, :, ::-1]
        for _ in range(frames):
            writer.write(bgr)
        t += duration
    writer.release()
    return RenderedVideo(path, float(fps), t, truth, dict(slide_images))


def five_slide_deck(path: str | Path) -> RenderedVideo:
    """Five distinct slides, 20 s each, separated by 2 s white flashes."""
    slides = {i: render_slide(i) for i in range(5)}
    schedule: list[tuple[object, float]] = []
    for i in range(5):
        schedule.append((i, 20.0))
        if i < 4:
            schedule.append((FLASH, 2.0))
    return render_video(path, schedule, slides)


def long_shot_three_slides(path: str | Path) -> RenderedVideo:
    """One 3-minute shot hiding three near-identical slides (60 s each).

    Consecutive slides differ only in texture phase and tag bits: the HSV
    content delta stays below the detector threshold while SSIM lands in
    the VLM verification band.
    """
    background = PALETTE[0]
    slides = {i: render_slide(i, background=background, text_seed=42,
                              texture_phase=i, bold_layout=False)
              for i in (1, 2, 3)}
    schedule = [(1, 60.0), (2, 60.0), (3, 60.0)]
    return render_video(path, schedule, slides)


def two_slide_video(path: str | Path) -> RenderedVideo:
    """Red slide then green slide, 4 s each (frame-extraction fixture)."""
    red = np.zeros((SIZE[1], SIZE[0], 3), np.uint8)
    red[:, :, 0] = 200
    green = np.zeros((SIZE[1], SIZE[0], 3), np.uint8)
    green[:, :, 1] = 200
    _draw_tag(red, 1)
    _draw_tag(green, 2)
    return render_video(path, [(1, 4.0), (2, 4.0)], {1: red, 2: green})


def black_video(path: str | Path, duration: float = 3.0) -> RenderedVideo:
    black = np.zeros((SIZE[1], SIZE[0], 3), np.uint8)
    return render_video(path, [(0, duration)], {0: black})


def black_white_cut(path: str | Path) -> RenderedVideo:
    black = np.zeros((SIZE[1], SIZE[0], 3), np.uint8)
    white = np.full((SIZE[1], SIZE[0], 3), 255, np.uint8)
    return render_video(path, [(0, 4.0), (1, 4.0)], {0: black, 1: white})


def three_slide_video(path: str | Path) -> RenderedVideo:
    """Three clearly distinct slides with hard cuts (detector fixture)."""
    slides = {i: render_slide(i) for i in (0, 1, 2)}
    return render_video(path, [(0, 8.0), (1, 8.0), (2, 8.0)], slides)


def narration(truth: list[tuple[int, float, float]],
              sentence_len: float = 4.0, gap: float = 2.0,
              edge: float = 2.0) -> list[dict]:
    """Scripted sentences clustered inside each truth span, with silent gaps
    at the boundaries. Returns transcript-JSON-shaped dicts."""
    sentences = []
    n = 0
    for slide_id, start, end in truth:
        t = start + edge
        while t + sentence_len <= end - edge:
            n += 1
            sentences.append({"text": f"Sentence {n} about slide {slide_id}.",
                              "start": round(t, 3),
                              "end": round(t + sentence_len, 3)})
            t += sentence_len + gap
    return sentences


ROUTE_MARKERS = {
    "same_slide": "Is the slide shown in the first image",
    "vision_knowledge": "background knowledge that are likely",
    "vision_baseline": "Given the image provided, please follow",
    "critic": "Critic Agent:",
    "critic_vision": "Vision Understanding Agent:",
    "keywords": "extract the keywords",
    "consolidate": "Please consolidate the two parts",
    "knowledge_extraction": "summarize the concepts presented",
    "question_gen": "generate six questions",
    "ablation_gen": "generate two questions",
    "judge": "check whether a automatically generated answer",
    "inconsistency": "any conflict in meaning",
    "reader": "Answer the question using only the context",
}


class RouterBackend:
    """Scripted backend routed by prompt content.

    `scripts` maps a route name (see ROUTE_MARKERS) to a reply string, a
    list of replies consumed in order (the last one repeats), or a callable
    (prompt, images) -> str. Every request is captured in `requests`.
    """

    def __init__(self, scripts: dict, embed_dim: int = 16):
        self.scripts = dict(scripts)
        self.embed_dim = embed_dim
        self.requests: list[dict] = []

    def _route(self, prompt: str) -> str:
        for name, marker in ROUTE_MARKERS.items():
            if marker in prompt:
                return name
        raise AssertionError(f"unroutable prompt: {prompt[:80]!r}")

    def _reply(self, prompt: str, images) -> str:
        route = self._route(prompt)
        self.requests.append({"route": route, "prompt": prompt,
                              "n_images": len(images)})
        if route not in self.scripts:
            raise AssertionError(f"no script for route {route!r}")
        script = self.scripts[route]
        if callable(script):
            return script(prompt, images)
        if isinstance(script, list):
            return script.pop(0) if len(script) > 1 else script[0]
        return script

    def vlm(self, prompt: str, images: list[Frame]) -> str:
        return self._reply(prompt, images)

    def llm(self, prompt: str) -> str:
        return self._reply(prompt, [])

    def transcribe(self, media_path: str):
        return []

    def embed(self, text: str):
        from premind.gateway import hashed_embedding

        return hashed_embedding(text, self.embed_dim)

    def prompts_for(self, route: str) -> list[str]:
        return [r["prompt"] for r in self.requests if r["route"] == route]


class TruthVLM:
    """Mock VLM that answers the same-slide prompt from fixture truth by
    reading the tag blocks of both frames. Other prompts get a canned
    scripted reply keyed by prompt head."""

    def __init__(self, default_reply: str = "A slide."):
        self.default_reply = default_reply
        self.calls: list[dict] = []

    def vlm(self, prompt: str, images: list[Frame]) -> str:
        record = {"prompt": prompt, "n_images": len(images)}
        self.calls.append(record)
        if len(images) == 2:
            a, b = (read_tag(f.pixels) for f in images)
            record["tags"] = (a, b)
            if a == b:
                return "Yes. Both frames show the same slide."
            return "No. The slides differ."
        return self.default_reply

    def llm(self, prompt: str) -> str:
        self.calls.append({"prompt": prompt, "n_images": 0})
        return self.default_reply

    def transcribe(self, media_path: str):
        return []

    def embed(self, text: str):
        from premind.gateway import hashed_embedding

        return hashed_embedding(text)
