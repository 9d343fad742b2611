"""Frame acquisition: MJPEG stream and replay directories, ROI crop, reference diff."""
from __future__ import annotations

import io
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import GeometryError, SourceConnectionError, SourceError
from .pnm import read_pnm

log = logging.getLogger(__name__)

STREAM_WIDTH = 640
STREAM_HEIGHT = 480


@dataclass(frozen=True)
class TactileFrame:
    pixels: np.ndarray  # (H, W, 3) uint8
    timestamp: float = 0.0
    frame_index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise GeometryError(f"expected an (H, W, 3) raster, got {px.shape}")
        if px.dtype != np.uint8:
            px = np.clip(px, 0, 255).astype(np.uint8)
        if px is self.pixels:
            px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class SensorGeometry:
    """ROI size in pixels and the physical pad it images.

    ``roi_offset`` is the (col, row) of the ROI's top-left corner inside the
    camera frame; ``None`` centres it. ``front_row`` names the image edge that
    faces the toe: ``"bottom"`` means larger row indices are further forward.
    """

    roi_width: int = 114
    roi_height: int = 143
    pad_length_mm: float = 90.0
    pad_width_mm: float = 58.0
    front_row: str = "bottom"
    roi_offset: tuple[int, int] | None = None

    def __post_init__(self):
        if self.roi_width < 1 or self.roi_height < 1:
            raise GeometryError("ROI dimensions must be positive")
        if self.pad_length_mm <= 0 or self.pad_width_mm <= 0:
            raise GeometryError("pad dimensions must be positive")
        if self.front_row not in ("top", "bottom"):
            raise GeometryError("front_row must be 'top' or 'bottom'")

    @property
    def mm_per_px_row(self) -> float:
        return self.pad_length_mm / self.roi_height

    @property
    def mm_per_px_col(self) -> float:
        return self.pad_width_mm / self.roi_width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.roi_height, self.roi_width)

    def offset_in(self, frame_w: int, frame_h: int) -> tuple[int, int]:
        if self.roi_offset is not None:
            return self.roi_offset
        return ((frame_w - self.roi_width) // 2, (frame_h - self.roi_height) // 2)


@dataclass(frozen=True)
class DiffImage:
    """Absolute grayscale difference ``|Y(frame) - Y(reference)|`` as uint8."""

    values: np.ndarray
    frame_index: int = 0

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def to_gray(pixels: np.ndarray) -> np.ndarray:
    """Luminance Y = 0.299R + 0.587G + 0.114B, rounded half up to uint8."""
    px = np.asarray(pixels, dtype=np.float64)
    y = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    return np.floor(y + 0.5).astype(np.uint8)


def crop_roi(frame: TactileFrame, geom: SensorGeometry) -> TactileFrame:
    x0, y0 = geom.offset_in(frame.width, frame.height)
    x1, y1 = x0 + geom.roi_width, y0 + geom.roi_height
    if x0 < 0 or y0 < 0 or x1 > frame.width or y1 > frame.height:
        raise GeometryError(
            f"ROI [{x0}:{x1}, {y0}:{y1}] exceeds {frame.width}x{frame.height} frame"
        )
    return TactileFrame(frame.pixels[y0:y1, x0:x1], frame.timestamp, frame.frame_index)


def diff_reference(frame: TactileFrame, reference: TactileFrame) -> DiffImage:
    if frame.pixels.shape != reference.pixels.shape:
        raise GeometryError(
            f"frame {frame.width}x{frame.height} vs reference "
            f"{reference.width}x{reference.height}"
        )
    a = to_gray(frame.pixels).astype(np.int16)
    b = to_gray(reference.pixels).astype(np.int16)
    return DiffImage(np.abs(a - b).astype(np.uint8), frame.frame_index)


def load_image(path: str | Path) -> np.ndarray:
    """Read a raster file into an (H, W, 3) uint8 array (PNM natively, else Pillow)."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        img = read_pnm(path)
        if img.dtype != np.uint8:
            img = (img >> 8).astype(np.uint8)
    else:
        from PIL import Image

        with Image.open(path) as im:
            img = np.asarray(im.convert("RGB"))
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img


def load_frame(path: str | Path, frame_index: int = 0) -> TactileFrame:
    return TactileFrame(load_image(path), 0.0, frame_index)


_FRAME_NAME = re.compile(r"^frame_(\d+)\.[A-Za-z0-9]+$")


class DirectorySource:
    """Replays ``frame_%06d.<ext>`` files in numeric order.

    Timestamps are virtual (``k / fps``) so replays are reproducible; with
    ``realtime=True`` iteration is also paced to ``fps``. Unreadable files are
    skipped with a warning.
    """

    def __init__(self, directory: str | Path, fps: float = 30.0, realtime: bool = False):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise SourceError(f"{self.directory} is not a directory")
        entries = []
        for p in self.directory.iterdir():
            m = _FRAME_NAME.match(p.name)
            if m:
                entries.append((int(m.group(1)), p))
        if not entries:
            raise SourceError(f"{self.directory} contains no frame_%06d files")
        entries.sort()
        self.paths = [p for _, p in entries]
        if fps <= 0:
            raise SourceError("fps must be positive")
        self.fps = fps
        self.realtime = realtime
        self.skipped = 0

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self) -> Iterator[TactileFrame]:
        k = 0
        start = time.monotonic()
        for path in self.paths:
            try:
                pixels = load_image(path)
            except Exception as exc:  # corrupt or truncated file
                log.warning("skipping unreadable frame %s: %s", path.name, exc)
                self.skipped += 1
                continue
            if self.realtime:
                delay = start + k / self.fps - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            yield TactileFrame(pixels, k / self.fps, k)
            k += 1


class MJPEGSource:
    """Client for a ``multipart/x-mixed-replace`` MJPEG stream over HTTP."""

    def __init__(self, url: str, timeout: float = 5.0, max_frames: int | None = None):
        self.url = url
        self.timeout = timeout
        self.max_frames = max_frames
        self.skipped = 0

    def _open(self):
        try:
            resp = urllib.request.urlopen(self.url, timeout=self.timeout)
        except (urllib.error.URLError, OSError) as exc:
            raise SourceConnectionError(f"cannot reach {self.url}: {exc}") from exc
        ctype = resp.headers.get("Content-Type", "")
        m = re.search(r'boundary="?([^";]+)"?', ctype)
        if "multipart" not in ctype or not m:
            resp.close()
            raise SourceError(f"{self.url} is not a multipart stream ({ctype!r})")
        boundary = m.group(1)
        if boundary.startswith("--"):
            boundary = boundary[2:]
        return resp, b"--" + boundary.encode()

    def parts(self) -> Iterator[bytes]:
        """Yield raw part bodies as they arrive."""
        resp, marker = self._open()
        buf = b""
        try:
            while True:
                chunk = resp.read1(65536) if hasattr(resp, "read1") else resp.read(4096)
                if not chunk:
                    break
                buf += chunk
                while True:
                    first = buf.find(marker)
                    if first < 0:
                        break
                    nxt = buf.find(marker, first + len(marker))
                    if nxt < 0:
                        break
                    part = buf[first + len(marker) : nxt]
                    buf = buf[nxt:]
                    head_end = part.find(b"\r\n\r\n")
                    if head_end < 0:
                        continue
                    yield part[head_end + 4 :].rstrip(b"\r\n")
            # trailing part terminated by the closing boundary or EOF
            first = buf.find(marker)
            if first >= 0:
                part = buf[first + len(marker) :]
                head_end = part.find(b"\r\n\r\n")
                if head_end >= 0:
                    body = part[head_end + 4 :]
                    end = body.find(marker)
                    body = body[:end] if end >= 0 else body
                    body = body.rstrip(b"\r\n")
                    if body:
                        yield body
        finally:
            resp.close()

    def __iter__(self) -> Iterator[TactileFrame]:
        from PIL import Image

        k = 0
        last_t = -np.inf
        for body in self.parts():
            try:
                with Image.open(io.BytesIO(body)) as im:
                    pixels = np.asarray(im.convert("RGB"))
            except Exception as exc:
                log.warning("skipping malformed JPEG part: %s", exc)
                self.skipped += 1
                continue
            t = time.monotonic()
            if t <= last_t:
                t = np.nextafter(last_t, np.inf)
            last_t = t
            yield TactileFrame(pixels, t, k)
            k += 1
            if self.max_frames is not None and k >= self.max_frames:
                return


def open_source(spec: str | Path, fps: float = 30.0, realtime: bool = False, **kwargs):
    """Return a frame iterator for a URL (MJPEG) or a replay directory."""
    s = str(spec)
    if s.startswith(("http://", "https://")):
        return MJPEGSource(s, **kwargs)
    return DirectorySource(s, fps=fps, realtime=realtime)


@dataclass
class LatestFrameBuffer:
    """Depth-1, latest-wins hand-off between an acquisition thread and a consumer."""

    _frame: TactileFrame | None = None
    _lock: threading.Condition = field(default_factory=threading.Condition)
    dropped: int = 0
    closed: bool = False

    def put(self, frame: TactileFrame) -> None:
        with self._lock:
            if self._frame is not None:
                self.dropped += 1
            self._frame = frame
            self._lock.notify()

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._lock.notify_all()

    def get(self, timeout: float | None = None) -> TactileFrame | None:
        """Block until a frame is available; ``None`` once closed and drained."""
        with self._lock:
            if not self._lock.wait_for(lambda: self._frame is not None or self.closed, timeout):
                return None
            frame, self._frame = self._frame, None
            return frame


def pump(source, buffer: LatestFrameBuffer) -> threading.Thread:
    """Start a daemon thread feeding ``source`` frames into ``buffer``."""

    def _run():
        try:
            for frame in source:
                buffer.put(frame)
        finally:
            buffer.close()

    th = threading.Thread(target=_run, daemon=True)
    th.start()
    return th
