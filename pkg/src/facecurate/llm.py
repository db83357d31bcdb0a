"""Multimodal LLM validation of an identity's faces.

All faces of an identity are tiled into one labeled grid image, sent with a
fixed instruction prompt, and the reply is accepted only if it is a comma
separated list of 3-digit grid indices.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import InputError, ParseError, RangeError, TransportError
from .types import GridSpec

logger = logging.getLogger(__name__)

PROMPT = (
    "You will receive an image consisting of several face photos arranged in a grid, "
    "where each face has a numeric ID label below it. Please identify all the face images "
    "that do not belong to the same person as the majority. Your answer should only include "
    "the numeric IDs of the outlier faces, separated by commas (e.g., 001,005,012). "
    "Do not include any additional text, punctuation, or whitespace. "
    "Do not return an empty response."
)

RESPONSE_RE = re.compile(r"[0-9]{3}(?:,[0-9]{3})*")

# 5x7 bitmap digits, one string per row, '#' = ink
_GLYPHS = {
    "0": (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    "1": ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    "2": (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    "3": ("#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "),
    "4": ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    "5": ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    "6": ("  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "),
    "7": ("#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "),
    "8": (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    "9": (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
}
_GLYPH_BITMAPS = {
    ch: np.array([[c == "#" for c in row] for row in rows], dtype=bool) for ch, rows in _GLYPHS.items()
}


def build_prompt() -> str:
    return PROMPT


def format_indices(indices: Iterable[int]) -> str:
    return ",".join(f"{i:03d}" for i in sorted(set(indices)))


def parse_response(text: str, n: int) -> frozenset:
    """Parse ``"001,005,012"`` into ``{1, 5, 12}``.

    Raises :class:`ParseError` on any deviation from the grammar and
    :class:`RangeError` when an index is not below ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(text, str) or RESPONSE_RE.fullmatch(text) is None:
        raise ParseError(f"response does not match the outlier-list grammar: {text!r:.80}")
    indices = frozenset(int(tok) for tok in text.split(","))
    bad = sorted(i for i in indices if i >= n)
    if bad:
        raise RangeError(f"indices {bad} out of range for {n} faces")
    return indices


def _render_label(text: str, width: int, height: int) -> np.ndarray:
    """White strip with ``text`` centred in black glyphs; returns HxWx3 uint8."""
    strip = np.full((height, width, 3), 255, dtype=np.uint8)
    glyph_h, glyph_w = 7, 5
    scale = max(1, min((height - 2) // glyph_h, (width - 2) // ((glyph_w + 1) * len(text))))
    gw, gh, gap = glyph_w * scale, glyph_h * scale, scale
    total = len(text) * gw + (len(text) - 1) * gap
    x0 = max(0, (width - total) // 2)
    y0 = max(0, (height - gh) // 2)
    for k, ch in enumerate(text):
        bitmap = np.kron(_GLYPH_BITMAPS[ch], np.ones((scale, scale), dtype=bool))
        x = x0 + k * (gw + gap)
        region = strip[y0 : y0 + gh, x : x + gw]
        h, w = region.shape[:2]
        region[bitmap[:h, :w]] = 0
    return strip


def load_image(path) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert("RGB")
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc


def compose_grid(images: Sequence, spec: GridSpec = GridSpec()) -> Tuple[Image.Image, List[int]]:
    """Tile images row-major into labeled cells.

    ``images`` may be PIL images or paths. Returns the composite and the grid
    index -> input index mapping.
    """
    n = len(images)
    if not 1 <= n <= 1000:
        raise InputError(f"grid needs between 1 and 1000 images, got {n}")
    cols = min(spec.columns, n)
    rows = -(-n // cols)
    cell, lab = spec.cell_size, spec.label_height
    canvas = np.zeros((rows * (cell + lab), cols * cell, 3), dtype=np.uint8)
    for k, img in enumerate(images):
        if not isinstance(img, Image.Image):
            img = load_image(img)
        face = np.asarray(img.convert("RGB").resize((cell, cell), Image.Resampling.BILINEAR))
        r, c = divmod(k, cols)
        y, x = r * (cell + lab), c * cell
        canvas[y : y + cell, x : x + cell] = face
        canvas[y + cell : y + cell + lab, x : x + cell] = _render_label(f"{k:03d}", cell, lab)
    return Image.fromarray(canvas, "RGB"), list(range(n))


def encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    image_png: bytes
    # identity id or other caller tag; adapters may ignore it
    tag: Optional[str] = None


@dataclass
class LlmTranscript:
    prompt: str
    image_digest: str
    responses: List[str] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    outliers: Optional[List[int]] = None
    failed: bool = False
    attempts: int = 0
    tag: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "prompt": self.prompt,
            "image_digest": self.image_digest,
            "responses": list(self.responses),
            "errors": list(self.errors),
            "outliers": self.outliers,
            "failed": self.failed,
            "attempts": self.attempts,
        }


@dataclass(frozen=True)
class ExpertVerdict:
    source: str
    outliers: frozenset


class ScriptedLLMClient:
    """Mock client replaying canned responses.

    ``script`` maps a request tag to the list of responses returned on
    successive calls for that tag; ``default`` is used for untagged or
    unknown tags. A response that is an Exception instance is raised instead.
    """

    def __init__(self, script: Optional[Mapping[str, Sequence]] = None, default: Sequence = ()):
        self.script = {k: list(v) for k, v in (script or {}).items()}
        self.default = list(default)
        self.calls: List[LlmRequest] = []
        self._cursor: Dict[Optional[str], int] = {}
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> str:
        with self._lock:
            self.calls.append(request)
            seq = self.script.get(request.tag, self.default)
            k = self._cursor.get(request.tag, 0)
            self._cursor[request.tag] = k + 1
        if not seq:
            raise TransportError(f"no scripted response for tag {request.tag!r}")
        resp = seq[min(k, len(seq) - 1)]
        if isinstance(resp, BaseException):
            raise resp
        return resp

    @classmethod
    def from_file(cls, path) -> "ScriptedLLMClient":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("responses", {}), data.get("default", ()))


class ReplayLLMClient(ScriptedLLMClient):
    """Replays the raw responses stored in a transcript log."""

    def __init__(self, transcripts: Iterable[Mapping]):
        script: Dict[str, List] = {}
        for t in transcripts:
            seq = script.setdefault(t["tag"], [])
            responses = list(t["responses"])
            errors = list(t.get("errors", []))
            # interleave transport failures back in attempt order
            for kind, payload in _attempt_log(responses, errors, t["attempts"]):
                seq.append(TransportError(payload) if kind == "error" else payload)
        super().__init__(script)

    @classmethod
    def from_file(cls, path) -> "ReplayLLMClient":
        with open(path, encoding="utf-8") as fh:
            return cls(json.loads(line) for line in fh if line.strip())


def _attempt_log(responses, errors, attempts):
    # errors are stored as "attempt N: message"
    by_attempt = {}
    for e in errors:
        head, _, msg = e.partition(": ")
        by_attempt[int(head.split()[1])] = msg
    out, r = [], iter(responses)
    for k in range(1, attempts + 1):
        if k in by_attempt:
            out.append(("error", by_attempt[k]))
        else:
            out.append(("response", next(r)))
    return out


class HttpLLMClient:
    """Reference HTTP adapter: one POST per attempt.

    Request JSON: ``{"model", "prompt", "image_png_base64"}``. The response
    JSON's ``text`` field is returned unmodified.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "FACECURATE_LLM_API_KEY",
                 timeout: float = 60.0, transport=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        headers = {}
        key = os.environ.get(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, request: LlmRequest) -> str:
        import httpx

        body = {
            "model": self.model,
            "prompt": request.prompt,
            "image_png_base64": base64.b64encode(request.image_png).decode("ascii"),
        }
        try:
            resp = self._client.post(self.endpoint, json=body)
            resp.raise_for_status()
            text = resp.json()["text"]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"LLM request failed: {exc}") from exc
        if not isinstance(text, str):
            raise TransportError("LLM response field 'text' is not a string")
        return text


class RateLimitedClient:
    """Serializes calls to ``client`` (max_in_flight) behind a token bucket."""

    def __init__(self, client, rate: float = 0.0, burst: int = 1, max_in_flight: int = 1):
        self.client = client
        self.rate = rate
        self.burst = max(1, burst)
        self._tokens = float(self.burst)
        self._last = time.monotonic()
        self._bucket_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _acquire_token(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._bucket_lock:
                now = time.monotonic()
                self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)

    def complete(self, request: LlmRequest) -> str:
        with self._slots:
            self._acquire_token()
            return self.client.complete(request)


class TranscriptLog:
    """Append-only JSON-lines transcript sink."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, transcript: LlmTranscript) -> None:
        line = json.dumps(transcript.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def consult(images: Sequence, client, budget: int, *, tag: Optional[str] = None,
            spec: GridSpec = GridSpec()) -> Tuple[ExpertVerdict, LlmTranscript]:
    """Ask the LLM for outlier faces. Never raises: failures end up as an
    empty verdict with ``transcript.failed`` set."""
    prompt = build_prompt()
    try:
        grid, mapping = compose_grid(images, spec)
        png = encode_png(grid)
    except Exception as exc:  # boundary: undecodable inputs become a soft failure
        logger.warning("LLM consult for %s: cannot build grid: %s", tag, exc)
        t = LlmTranscript(prompt, "", errors=[f"attempt 0: {exc}"], failed=True, tag=tag)
        return ExpertVerdict("llm", frozenset()), t
    transcript = LlmTranscript(prompt, hashlib.sha256(png).hexdigest(), tag=tag)
    request = LlmRequest(prompt, png, tag)
    for attempt in range(1, max(1, budget) + 1):
        transcript.attempts = attempt
        try:
            raw = client.complete(request)
        except Exception as exc:
            transcript.errors.append(f"attempt {attempt}: {exc}")
            continue
        transcript.responses.append(raw)
        try:
            grid_idx = parse_response(raw, len(mapping))
        except ParseError:
            continue
        outliers = frozenset(mapping[i] for i in grid_idx)
        transcript.outliers = sorted(outliers)
        return ExpertVerdict("llm", outliers), transcript
    transcript.failed = True
    logger.warning("LLM consult for %s failed after %d attempts", tag, transcript.attempts)
    return ExpertVerdict("llm", frozenset()), transcript
