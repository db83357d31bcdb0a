"""Synthetic identity intake.

A prompt (base description plus sampled pose/expression/lighting/... phrases)
goes to an image generator; the largest detected face of the result becomes
the identity's reference image; an expander turns that reference into the
remaining variants. All three models sit behind small client interfaces with
in-repo mocks and HTTP adapters.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import CapacityError, ConfigError, ContractError, InputError, ProtocolError, TransportError
from .llm import encode_png
from .types import GeneratorConfig

logger = logging.getLogger(__name__)

ATTRIBUTES = ("head_pose", "expression", "lighting", "camera_angle", "background", "accessory")
ID_SPACE = 10**6
_DATA = resources.files("facecurate").joinpath("data")


def _read_lines(text: str) -> List[str]:
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_attribute_lists(directory=None) -> Dict[str, List[str]]:
    """Read ``<attribute>.txt`` files (one option per line)."""
    out = {}
    for name in ATTRIBUTES:
        if directory is None:
            text = _DATA.joinpath("attributes").joinpath(f"{name}.txt").read_text("utf-8")
        else:
            path = Path(directory) / f"{name}.txt"
            if not path.is_file():
                raise ConfigError(f"attribute list missing: {path}")
            text = path.read_text("utf-8")
        out[name] = _read_lines(text)
    return out


def load_base_descriptions(path=None) -> List[str]:
    if path is None:
        text = _DATA.joinpath("base_descriptions.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    bases = _read_lines(text)
    if not bases:
        raise ConfigError("no base descriptions configured")
    return bases


@dataclass(frozen=True)
class PromptSpec:
    base_description: str
    attributes: Tuple[Tuple[str, str], ...]

    @property
    def text(self) -> str:
        return ", ".join([self.base_description] + [opt for _, opt in self.attributes])

    def key(self) -> Tuple[str, Tuple[str, ...]]:
        return self.base_description, tuple(opt for _, opt in self.attributes)


def compose_prompt(base: str, attribute_lists: Mapping[str, Sequence[str]],
                   rng: np.random.Generator) -> PromptSpec:
    """Append one uniformly drawn option per attribute to ``base``."""
    picks = []
    for name, options in attribute_lists.items():
        if not options:
            raise ConfigError(f"attribute list {name!r} is empty")
        picks.append((name, options[int(rng.integers(len(options)))]))
    spec = PromptSpec(base, tuple(picks))
    if not spec.text.strip():
        raise ConfigError("composed prompt is empty")
    return spec


class PromptSampler:
    """Draws prompts without repeating a (base, attribute tuple) pair while
    the combinatorial space still has unused combinations."""

    def __init__(self, bases: Sequence[str], attribute_lists: Mapping[str, Sequence[str]],
                 rng: np.random.Generator, max_retries: int = 100):
        if not bases:
            raise ConfigError("no base descriptions configured")
        self.bases = list(bases)
        self.attribute_lists = {k: list(v) for k, v in attribute_lists.items()}
        self.rng = rng
        self.max_retries = max_retries
        self.seen = set()
        self.space = len(self.bases) * int(np.prod([len(v) for v in self.attribute_lists.values()]))

    def sample(self) -> PromptSpec:
        spec = None
        for _ in range(self.max_retries + 1):
            base = self.bases[int(self.rng.integers(len(self.bases)))]
            spec = compose_prompt(base, self.attribute_lists, self.rng)
            if spec.key() not in self.seen or len(self.seen) >= self.space:
                break
        else:
            logger.warning("prompt sampler: no unseen combination after %d retries", self.max_retries)
        self.seen.add(spec.key())
        return spec


@dataclass(frozen=True)
class FaceBox:
    x: int
    y: int
    width: int
    height: int
    confidence: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError(f"face box must have positive size, got {self.width}x{self.height}")
        if not 0 <= self.confidence <= 1:
            raise ContractError(f"face box confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> int:
        return self.width * self.height

    def check_within(self, width: int, height: int) -> None:
        if self.x < 0 or self.y < 0 or self.x + self.width > width or self.y + self.height > height:
            raise ContractError(f"face box {self} exceeds image bounds {width}x{height}")

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height,
                "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d) -> "FaceBox":
        return cls(int(d["x"]), int(d["y"]), int(d["width"]), int(d["height"]), float(d.get("confidence", 1.0)))


def select_face(boxes: Sequence[FaceBox]) -> FaceBox:
    # largest area, then highest confidence, then leftmost
    return min(boxes, key=lambda b: (-b.area, -b.confidence, b.x))


def _decode(data) -> Image.Image:
    if isinstance(data, Image.Image):
        return data.convert("RGB")
    try:
        with Image.open(io.BytesIO(data)) as im:
            return im.convert("RGB")
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot decode image bytes: {exc}") from exc


def _with_retries(fn: Callable, budget: int, what: str):
    last = None
    for _ in range(max(1, budget)):
        try:
            return fn()
        except TransportError as exc:
            last = exc
            logger.warning("%s failed: %s", what, exc)
    raise TransportError(f"{what} failed after {max(1, budget)} attempts: {last}")


def gate_face(image, detector, budget: int = GeneratorConfig.detector_budget) -> Optional[Image.Image]:
    """Crop the largest detected face, or return None if there is none.

    Detector transport failures are retried ``budget`` times and then raised.
    """
    image = _decode(image)
    boxes = _with_retries(lambda: detector.detect(encode_png(image)), budget, "face detection")
    if not boxes:
        return None
    for b in boxes:
        b.check_within(*image.size)
    box = select_face(boxes)
    return image.crop((box.x, box.y, box.x + box.width, box.y + box.height))


def expand_identity(reference, expander, n: int = GeneratorConfig.n_variants,
                    budget: int = GeneratorConfig.expander_budget) -> List[Image.Image]:
    if n == 0:
        return []
    png = encode_png(_decode(reference))
    raw = _with_retries(lambda: expander.expand(png, n), budget, "identity expansion")
    if len(raw) != n:
        raise ProtocolError(f"expander returned {len(raw)} images, expected {n}")
    return [_decode(r) for r in raw]


def mint_identity_ids(existing: Iterable[str], count: int) -> List[str]:
    """Fresh 6-digit ids, ascending.

    Gaps are filled upward from the lowest existing id, so a dataset that
    starts at 000001 keeps growing from there; values below the lowest
    existing id are used only once everything above it is taken.
    """
    taken = {int(e) for e in existing}
    out: List[str] = []
    if count <= 0:
        return out
    start = min(taken) if taken else 0
    for v in list(range(start, ID_SPACE)) + list(range(start)):
        if v not in taken:
            out.append(v)
            if len(out) == count:
                return [f"{x:06d}" for x in sorted(out)]
    raise CapacityError(f"identity id space exhausted: requested {count}, only {len(out)} free")


# -- clients ---------------------------------------------------------------

class MockImageGenerator:
    """Deterministic stand-in for a text-to-image model: a smooth colour
    pattern derived from the prompt hash."""

    def __init__(self, size: int = GeneratorConfig.image_size):
        self.size = size

    def generate(self, prompt: str) -> bytes:
        seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        base = rng.integers(40, 216, size=3)
        yy, xx = np.mgrid[0 : self.size, 0 : self.size]
        grad = ((xx + yy) * 60 // max(1, 2 * self.size - 2))[..., None]
        arr = np.clip(base[None, None, :] + grad - 30, 0, 255).astype(np.uint8)
        return encode_png(Image.fromarray(arr, "RGB"))


class MockFaceDetector:
    """``mode="full"`` reports the whole frame as one face (idempotent on
    crops), ``"none"`` never finds a face; ``boxes`` overrides both."""

    def __init__(self, mode: str = "full", boxes: Optional[Sequence[FaceBox]] = None):
        if mode not in ("full", "none"):
            raise ConfigError(f"unknown mock detector mode {mode!r}")
        self.mode = mode
        self.boxes = list(boxes) if boxes is not None else None

    def detect(self, image_png: bytes) -> List[FaceBox]:
        if self.boxes is not None:
            return list(self.boxes)
        if self.mode == "none":
            return []
        w, h = _decode(image_png).size
        return [FaceBox(0, 0, w, h, 1.0)]


class EchoExpander:
    """Returns ``n`` copies of the reference."""

    def expand(self, image_png: bytes, n: int) -> List[bytes]:
        return [image_png] * n


class _Http:
    def __init__(self, endpoint: str, timeout: float = 120.0, transport=None, headers=None):
        import httpx

        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers or {})

    def _post(self, body: dict):
        import httpx

        try:
            resp = self._client.post(self.endpoint, json=body)
            resp.raise_for_status()
            return resp
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {self.endpoint} failed: {exc}") from exc


class HttpImageGenerator(_Http):
    """POST ``{"prompt"}``; the response body is the image bytes."""

    def generate(self, prompt: str) -> bytes:
        return self._post({"prompt": prompt}).content


class HttpExpander(_Http):
    """POST ``{"image_png_base64", "count"}`` -> ``{"images": [base64, ...]}``."""

    def expand(self, image_png: bytes, n: int) -> List[bytes]:
        resp = self._post({"image_png_base64": base64.b64encode(image_png).decode("ascii"), "count": n})
        try:
            return [base64.b64decode(s) for s in resp.json()["images"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed expander response: {exc}") from exc


class HttpFaceDetector(_Http):
    """POST ``{"image_png_base64"}`` -> ``{"faces": [{x, y, width, height, confidence}]}``."""

    def detect(self, image_png: bytes) -> List[FaceBox]:
        resp = self._post({"image_png_base64": base64.b64encode(image_png).decode("ascii")})
        try:
            return [FaceBox.from_dict(f) for f in resp.json()["faces"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed detector response: {exc}") from exc


@dataclass
class GenerationClients:
    generator: object
    detector: object
    expander: object


# -- pipeline ----------------------------------------------------------------

@dataclass
class GeneratedIdentity:
    identity_id: str
    prompt: Optional[str]
    attempts: int
    reference: Optional[Image.Image] = None
    variants: Optional[List[Image.Image]] = None
    skip_reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.skip_reason is None

    def log_entry(self) -> dict:
        return {"identity_id": self.identity_id, "prompt": self.prompt, "attempts": self.attempts,
                "status": "ok" if self.ok else "skipped", "reason": self.skip_reason}


def generate_identity(identity_id: str, prompts: Sequence[PromptSpec], clients: GenerationClients,
                      config: GeneratorConfig = GeneratorConfig()) -> GeneratedIdentity:
    """Generate, gate and expand one identity. Returns a skipped result
    instead of raising when the external clients cannot deliver."""
    attempts = 0
    for spec in prompts[: config.max_reference_attempts]:
        attempts += 1
        try:
            raw = _with_retries(lambda: clients.generator.generate(spec.text), config.generator_budget,
                                "reference generation")
            face = gate_face(raw, clients.detector, config.detector_budget)
        except (TransportError, InputError, ContractError) as exc:
            return GeneratedIdentity(identity_id, spec.text, attempts, skip_reason=f"reference: {exc}")
        if face is None:
            logger.info("identity %s: no face in attempt %d, regenerating", identity_id, attempts)
            continue
        try:
            variants = expand_identity(face, clients.expander, config.n_variants, config.expander_budget)
        except (TransportError, ProtocolError, InputError) as exc:
            return GeneratedIdentity(identity_id, spec.text, attempts, skip_reason=f"expansion: {exc}")
        return GeneratedIdentity(identity_id, spec.text, attempts, face, variants)
    last = prompts[attempts - 1].text if attempts else None
    return GeneratedIdentity(identity_id, last, attempts, skip_reason="no face detected")


def write_identity(out_root, gen: GeneratedIdentity) -> List[str]:
    """Write ``000.png`` (reference) and ``001.png``... (variants)."""
    if not gen.ok:
        raise ContractError(f"identity {gen.identity_id} was skipped; nothing to write")
    d = Path(out_root) / gen.identity_id
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for k, img in enumerate([gen.reference] + list(gen.variants)):
        name = f"{gen.identity_id}/{k:03d}.png"
        (Path(out_root) / name).write_bytes(encode_png(img))
        names.append(name)
    return names


@dataclass
class GenerationSummary:
    requested: int = 0
    written: int = 0
    skipped: int = 0


def generate_identities(count: int, out_root, clients: GenerationClients, *, seed: int,
                        config: GeneratorConfig = GeneratorConfig(), bases: Optional[Sequence[str]] = None,
                        attribute_lists: Optional[Mapping[str, Sequence[str]]] = None,
                        existing_ids: Iterable[str] = (), n_jobs: int = 1
                        ) -> Tuple[List[dict], GenerationSummary]:
    """Generate ``count`` identities into ``out_root``.

    Prompts are drawn up front in id order so results do not depend on
    scheduling. Only complete identities are written. ``existing_ids`` are
    never minted (pass the real corpus ids to avoid collisions).
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    # ids depend only on the explicit exclusions, so a re-run rewrites the same identities
    ids = mint_identity_ids(set(existing_ids), count)
    sampler = PromptSampler(bases if bases is not None else load_base_descriptions(),
                            attribute_lists if attribute_lists is not None else load_attribute_lists(),
                            np.random.default_rng(seed), config.prompt_retries)
    plans = [(i, [sampler.sample() for _ in range(config.max_reference_attempts)]) for i in ids]

    def work(plan):
        identity_id, prompts = plan
        gen = generate_identity(identity_id, prompts, clients, config)
        if gen.ok:
            write_identity(out_root, gen)
        else:
            logger.warning("identity %s skipped: %s", identity_id, gen.skip_reason)
        return gen.log_entry()

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            log = list(ex.map(work, plans))
    else:
        log = [work(p) for p in plans]
    written = sum(e["status"] == "ok" for e in log)
    return log, GenerationSummary(count, written, len(log) - written)
