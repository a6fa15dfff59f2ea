"""Video frame access plus the two low-level vision primitives used by
slide segmentation: HSV content-delta scoring and SSIM.

Decoding goes through a pluggable decoder. The default decodes in-process
with OpenCV; setting PREMIND_DECODER to the path of an ffmpeg binary (with
ffprobe next to it) switches to subprocess decoding instead. All functions
here are pure with respect to their inputs and safe to call concurrently.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import threading
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import kernels
from .errors import DecodeFailure, EmptyFrame, EmptyInput, MediaNotFound, TimeOutOfRange

DEFAULT_SAMPLE_FPS = 4.0
SSIM_MAX_WIDTH = 640

_SSIM_KERNEL = kernels.gaussian_kernel(radius=5, sigma=1.5)
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass(frozen=True)
class Frame:
    """One decoded video frame: 8-bit RGB raster plus its source timestamp."""

    pixels: np.ndarray
    source_time: float

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise EmptyFrame(f"expected uint8 RGB raster, got {p.dtype} {p.shape}")
        if p.shape[0] == 0 or p.shape[1] == 0:
            raise EmptyFrame("zero-sized frame")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ContentScore:
    """Mean HSV delta of a sampled frame against the previous sampled frame."""

    frame_time: float
    value: float


@dataclass(frozen=True)
class RawShot:
    """A first-round shot: a half-open-by-convention [start, end] span in seconds."""

    start: float
    end: float

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid shot span [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start


class OpenCVDecoder:
    """In-process decoder backed by cv2.VideoCapture."""

    def _open(self, path: str) -> cv2.VideoCapture:
        if not os.path.exists(path):
            raise MediaNotFound(path)
        cap = cv2.VideoCapture(path)
        if not cap.isOpened():
            raise DecodeFailure(f"cannot open {path}")
        return cap

    def probe(self, path: str) -> tuple[float, float, int]:
        """Return (duration_seconds, fps, frame_count)."""
        cap = self._open(path)
        try:
            fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
            count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
            if fps <= 0 or count <= 0:
                raise DecodeFailure(f"cannot probe {path}")
            return count / fps, fps, count
        finally:
            cap.release()

    def duration(self, path: str) -> float:
        return self.probe(path)[0]

    def frame_at(self, path: str, time: float) -> Frame:
        _, fps, count = self.probe(path)
        idx = min(max(int(round(time * fps)), 0), count - 1)
        cap = self._open(path)
        try:
            cap.set(cv2.CAP_PROP_POS_FRAMES, idx)
            ok, bgr = cap.read()
            if not ok:
                raise DecodeFailure(f"cannot decode frame {idx} of {path}")
            return Frame(np.ascontiguousarray(bgr[:, :, ::-1]), idx / fps)
        finally:
            cap.release()

    def iter_sampled(self, path: str, fps_sample: float):
        """Yield Frames at ~fps_sample, decoding sequentially."""
        _, fps, count = self.probe(path)
        wanted = set()
        k = 0
        while True:
            idx = int(round(k / fps_sample * fps))
            if idx > count - 1:
                break
            wanted.add(idx)
            k += 1
        wanted.add(count - 1)
        cap = self._open(path)
        try:
            for idx in range(count):
                ok, bgr = cap.read()
                if not ok:
                    break
                if idx in wanted:
                    yield Frame(np.ascontiguousarray(bgr[:, :, ::-1]), idx / fps)
        finally:
            cap.release()


class FFmpegDecoder:
    """Subprocess decoder for environments where codec breadth matters.

    Concurrent subprocesses are capped (PREMIND_DECODER_JOBS, default 2).
    """

    def __init__(self, binary: str):
        self.binary = binary
        probe = os.path.join(os.path.dirname(binary) or ".", "ffprobe")
        self.probe_binary = probe if os.path.exists(probe) else "ffprobe"
        cap = int(os.environ.get("PREMIND_DECODER_JOBS", "2"))
        self._slots = threading.BoundedSemaphore(max(1, cap))

    def _run(self, cmd: list[str]) -> bytes:
        with self._slots:
            proc = subprocess.run(cmd, capture_output=True)
        if proc.returncode != 0:
            raise DecodeFailure(proc.stderr.decode(errors="replace")[-500:])
        return proc.stdout

    def _probe_value(self, path: str, entries: str) -> str:
        out = self._run(
            [self.probe_binary, "-v", "error", "-select_streams", "v:0",
             "-show_entries", entries, "-of", "csv=p=0", path]
        )
        return out.decode().strip()

    def probe(self, path: str) -> tuple[float, float, int]:
        if not os.path.exists(path):
            raise MediaNotFound(path)
        dur = float(self._run(
            [self.probe_binary, "-v", "error", "-show_entries",
             "format=duration", "-of", "csv=p=0", path]
        ).decode().strip())
        num, den = self._probe_value(path, "stream=r_frame_rate").split("/")
        fps = float(num) / float(den)
        return dur, fps, int(round(dur * fps))

    def duration(self, path: str) -> float:
        return self.probe(path)[0]

    def _dims(self, path: str) -> tuple[int, int]:
        w, h = self._probe_value(path, "stream=width,height").split(",")
        return int(w), int(h)

    def frame_at(self, path: str, time: float) -> Frame:
        if not os.path.exists(path):
            raise MediaNotFound(path)
        w, h = self._dims(path)
        raw = self._run(
            [self.binary, "-v", "error", "-ss", f"{max(time, 0.0):.6f}", "-i", path,
             "-frames:v", "1", "-f", "rawvideo", "-pix_fmt", "rgb24", "-"]
        )
        if len(raw) < w * h * 3:
            raise DecodeFailure(f"short read at t={time} of {path}")
        pixels = np.frombuffer(raw[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
        return Frame(pixels.copy(), time)

    def iter_sampled(self, path: str, fps_sample: float):
        if not os.path.exists(path):
            raise MediaNotFound(path)
        w, h = self._dims(path)
        frame_bytes = w * h * 3
        with self._slots:
            proc = subprocess.Popen(
                [self.binary, "-v", "error", "-i", path, "-vf", f"fps={fps_sample}",
                 "-f", "rawvideo", "-pix_fmt", "rgb24", "-"],
                stdout=subprocess.PIPE,
            )
            assert proc.stdout is not None
            k = 0
            while True:
                raw = proc.stdout.read(frame_bytes)
                if len(raw) < frame_bytes:
                    break
                pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
                yield Frame(pixels.copy(), k / fps_sample)
                k += 1
            proc.wait()


def get_decoder():
    """Decoder selected by PREMIND_DECODER ('opencv' or an ffmpeg path)."""
    choice = os.environ.get("PREMIND_DECODER", "opencv")
    if choice in ("", "opencv"):
        return OpenCVDecoder()
    binary = shutil.which(choice) or choice
    if not os.path.exists(binary):
        raise DecodeFailure(f"decoder binary not found: {choice}")
    return FFmpegDecoder(binary)


def extract_frame(video_path: str, time: float, decoder=None) -> Frame:
    """Decode the frame nearest to `time` (seconds)."""
    decoder = decoder or get_decoder()
    duration = decoder.duration(video_path)
    if not 0 <= time <= duration:
        raise TimeOutOfRange(f"t={time} outside [0, {duration}]")
    return decoder.frame_at(video_path, time)


def frames_in_span(video_path: str, start: float, end: float,
                   interval: float, decoder=None) -> list[Frame]:
    """Frames at start, start+interval, ..., plus one at `end` if not covered."""
    if start >= end:
        raise ValueError(f"empty span [{start}, {end}]")
    if interval <= 0:
        raise ValueError("interval must be positive")
    decoder = decoder or get_decoder()
    times = []
    t = start
    while t < end:
        times.append(t)
        t += interval
    if not times or times[-1] < end:
        times.append(end)
    return [extract_frame(video_path, t, decoder) for t in times]


def _to_hsv(frame: Frame) -> np.ndarray:
    return cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2HSV)


def content_scores(video_path: str, fps_sample: float = DEFAULT_SAMPLE_FPS,
                   decoder=None) -> list[ContentScore]:
    """Per-sampled-frame mean HSV delta against the previous sampled frame.

    The first sampled frame always scores 0.
    """
    if fps_sample <= 0:
        raise ValueError("fps_sample must be positive")
    decoder = decoder or get_decoder()
    scores: list[ContentScore] = []
    prev_hsv = None
    for frame in decoder.iter_sampled(video_path, fps_sample):
        hsv = _to_hsv(frame)
        if prev_hsv is None:
            scores.append(ContentScore(frame.source_time, 0.0))
        else:
            scores.append(ContentScore(frame.source_time,
                                       kernels.mean_absdiff(prev_hsv, hsv)))
        prev_hsv = hsv
    if not scores:
        raise DecodeFailure(f"no frames decoded from {video_path}")
    return scores


def detect_shots(scores: list[ContentScore], adaptive_threshold: float = 1.0,
                 min_content_val: float = 10.0, window: int = 2) -> list[RawShot]:
    """Adaptive ratio test over content scores.

    A boundary is declared at a sampled frame when its score clears
    `min_content_val` and exceeds `adaptive_threshold` times the mean score
    of its +/- `window` neighbors (the frame itself excluded; a zero-mean
    neighborhood counts as an infinite ratio for a positive score).
    """
    if not scores:
        raise EmptyInput("no content scores")
    if window < 1:
        raise ValueError("window must be >= 1")
    values = [s.value for s in scores]
    boundaries: list[float] = []
    for i in range(1, len(values)):
        v = values[i]
        if v < min_content_val:
            continue
        lo, hi = max(0, i - window), min(len(values), i + window + 1)
        neigh = values[lo:i] + values[i + 1:hi]
        mean = sum(neigh) / len(neigh) if neigh else 0.0
        if mean == 0.0:
            hit = v > 0
        else:
            hit = v / mean >= adaptive_threshold
        if hit:
            boundaries.append(scores[i].frame_time)
    cuts = [scores[0].frame_time] + boundaries + [scores[-1].frame_time]
    shots = [RawShot(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]
    if not shots:
        # Degenerate single-sample input: represent it as one minimal shot.
        t = scores[0].frame_time
        shots = [RawShot(t, t + 1.0 / max(len(scores), 1))]
    return shots


def _to_gray(pixels: np.ndarray) -> np.ndarray:
    # BT.601 luma, rounded to 8 bits: the documented grayscale normalization.
    p = pixels.astype(np.float64)
    luma = 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]
    return np.rint(luma)


def _shrink(pixels: np.ndarray, max_width: int = SSIM_MAX_WIDTH) -> np.ndarray:
    h, w = pixels.shape[:2]
    if w <= max_width:
        return pixels
    new_h = max(1, int(round(h * max_width / w)))
    return cv2.resize(pixels, (max_width, new_h), interpolation=cv2.INTER_AREA)


def ssim(a: Frame, b: Frame) -> float:
    """Structural similarity of two frames, clamped to [0, 1].

    Computed as the mean local SSIM over an 11x11 Gaussian window
    (sigma 1.5, K1=0.01, K2=0.03, dynamic range 255) on the 8-bit
    grayscale conversions; inputs wider than 640 px are downscaled first,
    and `b` is resized to `a`'s dimensions when they disagree.
    """
    pa = _shrink(a.pixels)
    pb = _shrink(b.pixels)
    if pb.shape != pa.shape:
        pb = cv2.resize(pb, (pa.shape[1], pa.shape[0]), interpolation=cv2.INTER_AREA)
    ga = _to_gray(pa)
    gb = _to_gray(pb)
    if min(ga.shape) < _SSIM_KERNEL.size:
        raise EmptyFrame("frame smaller than the SSIM window")
    value = kernels.ssim_mean(np.ascontiguousarray(ga), np.ascontiguousarray(gb),
                              _SSIM_KERNEL, _SSIM_C1, _SSIM_C2)
    return min(1.0, max(0.0, value))
