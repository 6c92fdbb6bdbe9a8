"""Execution monitoring: frame sampling, image-grid packing, detection
queries to a vision-language provider, and parsing of its failure reports."""

from __future__ import annotations

import hashlib
import io
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .kg import FAILURE_TYPES, FunctionalUnit
from .providers import CompletionProvider, PromptText, ProviderError


class DetectionParseError(ValueError):
    def __init__(self, missing: str, message: str = ""):
        self.missing = missing
        super().__init__(message or f"detection response is missing {missing}")


class DetectionError(RuntimeError):
    pass


@dataclass
class Frame:
    pixels: np.ndarray  # (height, width, 3) uint8
    timestamp: float

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError(f"frame must be a non-empty HxWx3 raster, got shape {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class SamplingPolicy:
    base_frames: int = 10
    base_window: float = 300.0
    extra_per_minute: int = 2

    def count(self, duration: float) -> int:
        extra = max(0, math.ceil((duration - self.base_window) / 60.0))
        return self.base_frames + self.extra_per_minute * extra


def sample_frames(frames: Sequence[Frame], duration: float, policy: SamplingPolicy = SamplingPolicy(),
                  limit: int | None = None) -> list[Frame]:
    """Pick frames evenly spaced in time over the episode window.

    The first and last frames are always kept and timestamps strictly
    increase. ``limit`` caps the policy count (used to fit a grid).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not frames:
        raise ValueError("no frames to sample")
    unique: list[Frame] = []
    for f in sorted(frames, key=lambda f: f.timestamp):
        if not unique or f.timestamp > unique[-1].timestamp:
            unique.append(f)
    n = policy.count(duration)
    if limit is not None:
        n = min(n, limit)
    if len(unique) <= n:
        return unique
    if n == 1:
        return [unique[-1]]
    t0, t1 = unique[0].timestamp, unique[-1].timestamp
    times = np.array([f.timestamp for f in unique])
    picked: list[int] = []
    for k in range(n):
        target = t0 + (t1 - t0) * k / (n - 1)
        lo = picked[-1] + 1 if picked else 0
        hi = len(unique) - (n - k)  # leave room for the remaining picks
        window = times[lo:hi + 1]
        picked.append(lo + int(np.argmin(np.abs(window - target))))
    return [unique[i] for i in picked]


# ---------------------------------------------------------------------------
# Image grid


@dataclass
class ImageGrid:
    rows: int
    cols: int
    cell_w: int
    cell_h: int
    cells: list[Frame]
    canvas: np.ndarray

    def checksum(self) -> str:
        return hashlib.sha256(self.canvas.tobytes()).hexdigest()

    def to_png(self) -> bytes:
        return encode_png(self.canvas)


def _fit(img: np.ndarray, cell_w: int, cell_h: int) -> np.ndarray:
    """Nearest-neighbour resize into a cell, keeping aspect ratio, black letterbox."""
    h, w = img.shape[:2]
    if w * cell_h >= h * cell_w:
        new_w, new_h = cell_w, max(1, (h * cell_w) // w)
    else:
        new_w, new_h = max(1, (w * cell_h) // h), cell_h
    ys = (np.arange(new_h) * h) // new_h
    xs = (np.arange(new_w) * w) // new_w
    scaled = img[ys[:, None], xs[None, :]]
    cell = np.zeros((cell_h, cell_w, 3), dtype=np.uint8)
    oy, ox = (cell_h - new_h) // 2, (cell_w - new_w) // 2
    cell[oy:oy + new_h, ox:ox + new_w] = scaled
    return cell


def compose_grid(frames: Sequence[Frame], rows: int = 3, cols: int = 3,
                 cell_w: int | None = None, cell_h: int | None = None) -> ImageGrid:
    """Tile frames row-major in time order; unused cells stay black."""
    if not frames:
        raise ValueError("no frames to compose")
    if len(frames) > rows * cols:
        raise ValueError(f"{len(frames)} frames exceed grid capacity {rows}x{cols}")
    ordered = sorted(frames, key=lambda f: f.timestamp)
    cell_w = cell_w or ordered[0].width
    cell_h = cell_h or ordered[0].height
    canvas = np.zeros((rows * cell_h, cols * cell_w, 3), dtype=np.uint8)
    for i, f in enumerate(ordered):
        r, c = divmod(i, cols)
        canvas[r * cell_h:(r + 1) * cell_h, c * cell_w:(c + 1) * cell_w] = _fit(f.pixels, cell_w, cell_h)
    return ImageGrid(rows, cols, cell_w, cell_h, list(ordered), canvas)


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


_T_RE = re.compile(r"^t(\d+(?:\.\d+)?)\.png$", re.IGNORECASE)


def load_frames(source) -> list[Frame]:
    """Frames from a directory of ``t<seconds>.png`` files or a manifest text
    file of ``<path> <timestamp>`` lines (paths relative to the manifest)."""
    src = Path(source)
    frames: list[Frame] = []
    if src.is_dir():
        for p in sorted(src.iterdir()):
            m = _T_RE.match(p.name)
            if m:
                frames.append(Frame(decode_png(p.read_bytes()), float(m.group(1))))
    else:
        for line in src.read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            path, ts = line.rsplit(None, 1)
            frames.append(Frame(decode_png((src.parent / path).read_bytes()), float(ts)))
    frames.sort(key=lambda f: f.timestamp)
    return frames


def save_frames(frames: Sequence[Frame], directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for f in frames:
        Path(directory, f"t{f.timestamp:g}.png").write_bytes(encode_png(f.pixels))


# ---------------------------------------------------------------------------
# Detection queries


@dataclass
class FailureReport:
    failed: bool
    failure_type: str | None = None
    explanation: str = ""
    affected_objects: frozenset[str] = field(default_factory=frozenset)
    unit_id: str = ""

    def __post_init__(self) -> None:
        if not self.failed and self.failure_type is not None:
            raise ValueError("failure_type must be absent when failed is false")
        if self.failed and self.failure_type not in FAILURE_TYPES:
            raise ValueError(f"unknown failure type {self.failure_type!r}")
        self.affected_objects = frozenset(self.affected_objects)

    def to_dict(self) -> dict:
        return {
            "failed": self.failed,
            "failure_type": self.failure_type,
            "explanation": self.explanation,
            "affected_objects": sorted(self.affected_objects),
            "unit_id": self.unit_id,
        }


DETECTION_SYSTEM = (
    "You monitor a robot executing one cooking action. The images show frames "
    "sampled in time order{grid_note}. Decide whether the action failed, including "
    "unsafe actions and collateral events that disturb objects unrelated to the task.\n"
    "Answer with exactly these labeled lines:\n"
    "FAILED: yes|no\n"
    "TYPE: " + "|".join(FAILURE_TYPES) + "\n"
    "EXPLANATION: <one sentence>\n"
    "OBJECTS: <comma-separated affected object names>"
)


@dataclass
class DetectionQuery:
    prompt: PromptText
    images: list[bytes]
    mode: str


def build_detection_query(frames_or_grid, unit: FunctionalUnit, mode: str = "grid") -> DetectionQuery:
    """Prompt with the serialized unit plus either one grid image or one image per frame."""
    if mode == "grid":
        grid = frames_or_grid if isinstance(frames_or_grid, ImageGrid) else compose_grid(frames_or_grid)
        images = [grid.to_png()]
        note = f", packed row by row into one {grid.rows}x{grid.cols} grid image ({len(grid.cells)} frames)"
    elif mode == "frames":
        frames = frames_or_grid.cells if isinstance(frames_or_grid, ImageGrid) else list(frames_or_grid)
        images = [encode_png(f.pixels) for f in sorted(frames, key=lambda f: f.timestamp)]
        note = f", one image per frame ({len(images)} frames)"
    else:
        raise ValueError(f"unknown detection mode {mode!r}")
    user = f"Action being executed (FOON-text):\n{unit.canonicalize().to_text()}"
    return DetectionQuery(PromptText(DETECTION_SYSTEM.format(grid_note=note), user), images, mode)


_LABEL_RE = re.compile(r"^\s*(FAILED|TYPE|EXPLANATION|OBJECTS)\s*:\s*(.*)$", re.IGNORECASE)
_NO_FAILURE_RE = re.compile(r"\bno\s+(?:failures?|issues?|problems?|errors?)\b", re.IGNORECASE)


def parse_detection_response(text: str, unit_id: str = "") -> FailureReport:
    """Read the FAILED/TYPE/EXPLANATION/OBJECTS block (newline- or ' / '-separated)."""
    lines = text.splitlines()
    if len(lines) == 1 and " / " in text:
        lines = text.split(" / ")
    fields: dict[str, str] = {}
    for ln in lines:
        m = _LABEL_RE.match(ln)
        if m and m.group(1).upper() not in fields:
            fields[m.group(1).upper()] = m.group(2).strip()
    if "FAILED" not in fields:
        if _NO_FAILURE_RE.search(text):
            return FailureReport(False, unit_id=unit_id)
        raise DetectionParseError("FAILED")
    verdict = fields["FAILED"].lower().strip(" .")
    if verdict in ("no", "false", "n", "none"):
        return FailureReport(False, unit_id=unit_id)
    if verdict not in ("yes", "true", "y"):
        raise DetectionParseError("FAILED", f"unreadable FAILED value {fields['FAILED']!r}")
    if not fields.get("TYPE"):
        raise DetectionParseError("TYPE")
    ftype = fields["TYPE"].lower().strip(" .").replace("-", "_").replace(" ", "_")
    if ftype not in FAILURE_TYPES:
        ftype = "other"
    objects = frozenset(
        " ".join(o.lower().split()) for o in fields.get("OBJECTS", "").split(",")
        if o.strip() and o.strip().lower() not in ("none", "-")
    )
    return FailureReport(True, ftype, fields.get("EXPLANATION", ""), objects, unit_id)


def detect(
    provider: CompletionProvider,
    frames: Sequence[Frame],
    unit: FunctionalUnit,
    duration: float,
    policy: SamplingPolicy = SamplingPolicy(),
    mode: str = "grid",
    rows: int = 3,
    cols: int = 3,
    cell_size: tuple[int, int] | None = None,
) -> FailureReport | None:
    """Sample, pack, query and parse; None when the model sees no failure.

    Provider and parse errors get one retry before surfacing as DetectionError.
    """
    if mode == "grid":
        picked = sample_frames(frames, duration, policy, limit=rows * cols)
        cw, ch = cell_size or (None, None)
        payload = compose_grid(picked, rows, cols, cw, ch)
    else:
        payload = sample_frames(frames, duration, policy)
    query = build_detection_query(payload, unit, mode)
    prompt = query.prompt
    last: Exception | None = None
    for _ in range(2):
        try:
            text = provider.complete(prompt, max_tokens=256, images=query.images)
            report = parse_detection_response(text, unit.unit_id)
            return report if report.failed else None
        except DetectionParseError as exc:
            last = exc
            prompt = query.prompt.with_feedback(
                f"Your previous answer was missing {exc.missing}. Reply with the labeled lines only."
            )
        except ProviderError as exc:
            last = exc
    raise DetectionError(f"detection failed after retry: {last}") from last
