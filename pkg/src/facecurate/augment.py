"""Offline, seed-deterministic augmentation that tops identities up to a fixed size.

Every generated image is described by an :class:`AugmentRecipe` (source,
sampled parameters, applied flags). Recipes are logged to a JSON-lines
ledger so any output can be regenerated byte-for-byte.
"""

from __future__ import annotations

import hashlib
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Mapping, Sequence, Tuple

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from .errors import ContractError, InputError
from .llm import encode_png, load_image
from .types import AugmentConfig, CleanReport, IdentityRecord, Tier, Verdict

logger = logging.getLogger(__name__)

OP_ORDER = ("hflip", "color_jitter", "grayscale", "affine", "rotate", "gaussian_blur", "low_resolution")
AUG_PREFIX = "aug_"
QUARANTINE_DIR = "_removed"


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    applied: bool
    params: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "applied": self.applied, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d) -> "AugmentOp":
        return cls(d["kind"], bool(d["applied"]), dict(d["params"]))


@dataclass(frozen=True)
class AugmentRecipe:
    source_index: int
    ops: Tuple[AugmentOp, ...]
    output: str = ""

    @property
    def is_identity(self) -> bool:
        return not any(op.applied for op in self.ops)

    def to_dict(self) -> dict:
        return {"source_index": self.source_index, "ops": [op.to_dict() for op in self.ops], "output": self.output}

    @classmethod
    def from_dict(cls, d) -> "AugmentRecipe":
        return cls(d["source_index"], tuple(AugmentOp.from_dict(o) for o in d["ops"]), d.get("output", ""))


def _u(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def sample_recipe(rng: np.random.Generator, config: AugmentConfig, source_index: int,
                  output: str = "") -> AugmentRecipe:
    """Draw one recipe. Every op consumes the same number of draws whether
    or not it is applied, so the stream stays aligned across configs."""
    ops = []
    ops.append(AugmentOp("hflip", bool(rng.random() < config.p_hflip)))
    applied = bool(rng.random() < config.p_jitter)
    ops.append(AugmentOp("color_jitter", applied, {
        "brightness": _u(rng, config.brightness),
        "contrast": _u(rng, config.contrast),
        "saturation": _u(rng, config.saturation),
        "hue": _u(rng, config.hue),
    }))
    ops.append(AugmentOp("grayscale", bool(rng.random() < config.p_gray)))
    applied = bool(rng.random() < config.p_affine)
    ops.append(AugmentOp("affine", applied, {
        "angle": _u(rng, (-config.max_rot, config.max_rot)),
        "translate_x": _u(rng, (-config.max_translate, config.max_translate)),
        "translate_y": _u(rng, (-config.max_translate, config.max_translate)),
        "scale": _u(rng, config.scale),
        "shear": _u(rng, (-config.max_shear, config.max_shear)),
    }))
    applied = bool(rng.random() < config.p_rot)
    ops.append(AugmentOp("rotate", applied, {"angle": _u(rng, (-config.max_inplane_rot, config.max_inplane_rot))}))
    applied = bool(rng.random() < config.p_blur)
    ops.append(AugmentOp("gaussian_blur", applied, {"sigma": _u(rng, config.blur_sigma),
                                                    "kernel": config.blur_kernel}))
    applied = bool(rng.random() < config.p_lowres)
    ops.append(AugmentOp("low_resolution", applied, {"factor": config.lowres_factor}))
    return AugmentRecipe(source_index, tuple(ops), output)


# -- pixel operations -------------------------------------------------------

def hflip(image: Image.Image) -> Image.Image:
    return ImageOps.mirror(image)


def color_jitter(image: Image.Image, brightness: float, contrast: float, saturation: float,
                 hue: float) -> Image.Image:
    image = ImageEnhance.Brightness(image).enhance(brightness)
    image = ImageEnhance.Contrast(image).enhance(contrast)
    image = ImageEnhance.Color(image).enhance(saturation)
    shift = int(round(hue * 255))
    if shift:
        hsv = np.array(image.convert("HSV"))
        hsv[..., 0] = (hsv[..., 0].astype(np.int16) + shift) % 256
        image = Image.fromarray(hsv, "HSV").convert("RGB")
    return image


def grayscale(image: Image.Image) -> Image.Image:
    return image.convert("L").convert("RGB")


def affine(image: Image.Image, angle: float, translate_x: float, translate_y: float,
           scale: float, shear: float) -> Image.Image:
    """Rotate/scale/shear about the centre then translate (fractions of size)."""
    w, h = image.size
    cx, cy = w * 0.5, h * 0.5
    a, s = math.radians(angle), math.radians(shear)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shr = np.array([[1.0, math.tan(s)], [0.0, 1.0]])
    lin = scale * rot @ shr
    fwd = np.eye(3)
    fwd[:2, :2] = lin
    fwd[:2, 2] = np.array([cx + translate_x * w, cy + translate_y * h]) - lin @ np.array([cx, cy])
    inv = np.linalg.inv(fwd)
    coeffs = tuple(float(v) for v in inv[:2].ravel())
    return image.transform((w, h), Image.Transform.AFFINE, coeffs,
                           resample=Image.Resampling.BILINEAR, fillcolor=(0, 0, 0))


def rotate(image: Image.Image, angle: float) -> Image.Image:
    return image.rotate(angle, resample=Image.Resampling.BILINEAR, expand=False, fillcolor=(0, 0, 0))


def gaussian_blur(image: Image.Image, sigma: float, kernel: int = 3) -> Image.Image:
    radius = kernel // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    k /= k.sum()
    arr = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        # reflect padding needs more than `radius` pixels along the axis
        mode = "reflect" if arr.shape[axis] > radius else "edge"
        widths = [(0, 0)] * 3
        widths[axis] = (radius, radius)
        pad = np.pad(arr, widths, mode=mode)
        size = arr.shape[axis]
        arr = sum(k[i] * np.take(pad, np.arange(i, i + size), axis=axis) for i in range(kernel))
    return Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8), "RGB")


def downscale(image: Image.Image, factor: float) -> Image.Image:
    w, h = image.size
    size = (max(1, int(round(w * factor))), max(1, int(round(h * factor))))
    return image.resize(size, Image.Resampling.BILINEAR)


def low_resolution(image: Image.Image, factor: float) -> Image.Image:
    """Downscale by ``factor`` and back up, keeping the original size."""
    return downscale(image, factor).resize(image.size, Image.Resampling.BILINEAR)


_APPLY = {
    "hflip": lambda im, p: hflip(im),
    "color_jitter": lambda im, p: color_jitter(im, p["brightness"], p["contrast"], p["saturation"], p["hue"]),
    "grayscale": lambda im, p: grayscale(im),
    "affine": lambda im, p: affine(im, p["angle"], p["translate_x"], p["translate_y"], p["scale"], p["shear"]),
    "rotate": lambda im, p: rotate(im, p["angle"]),
    "gaussian_blur": lambda im, p: gaussian_blur(im, p["sigma"], int(p.get("kernel", 3))),
    "low_resolution": lambda im, p: low_resolution(im, p["factor"]),
}


def apply_recipe(image, recipe: AugmentRecipe) -> Image.Image:
    """Run the applied ops of ``recipe`` on ``image`` (PIL image or path).
    The input is never modified; the result has the same size."""
    if not isinstance(image, Image.Image):
        image = load_image(image)
    out = image.convert("RGB").copy()
    for op in recipe.ops:
        if op.applied:
            out = _APPLY[op.kind](out, op.params)
    return out


# -- replenishment ----------------------------------------------------------

def round_robin_sources(n_kept: int, n_new: int) -> List[int]:
    if n_kept < 1 and n_new > 0:
        raise ContractError("cannot replenish an identity with no kept images")
    return [k % n_kept for k in range(n_new)]


def identity_rng(seed: int, identity_id: str) -> np.random.Generator:
    if identity_id.isdigit():
        key = int(identity_id)
    else:
        key = int.from_bytes(hashlib.sha256(identity_id.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def aug_name(identity_id: str, k: int) -> str:
    return f"{identity_id}/{AUG_PREFIX}{k:03d}.png"


def plan_replenishment(record: IdentityRecord, config: AugmentConfig, seed: int) -> List[AugmentRecipe]:
    """Recipes that bring ``record`` (kept images only) up to ``target_count``."""
    n = len(record)
    if n < 1:
        raise ContractError(f"identity {record.identity_id}: no kept images to replenish from")
    if n > config.target_count:
        raise ContractError(f"identity {record.identity_id}: {n} kept images exceed {config.target_count}")
    rng = identity_rng(seed, record.identity_id)
    recipes = []
    for k, src in enumerate(round_robin_sources(n, config.target_count - n)):
        out = aug_name(record.identity_id, k)
        if out in record.images:
            raise ContractError(f"identity {record.identity_id}: output {out} collides with a kept image")
        recipes.append(sample_recipe(rng, config, src, out))
    return recipes


def ledger_entry(record: IdentityRecord, recipe: AugmentRecipe) -> dict:
    return {
        "identity_id": record.identity_id,
        "source": record.images[recipe.source_index],
        "output": recipe.output,
        "recipe": recipe.to_dict(),
    }


def _render(src_path: Path, recipe: AugmentRecipe) -> bytes:
    return encode_png(apply_recipe(load_image(src_path), recipe))


def replenish_identity(record: IdentityRecord, config: AugmentConfig, seed: int, *,
                       out_root=None, write: bool = True) -> List[dict]:
    """Generate ``target_count - len(record)`` augmented images.

    Sources are read from ``record.root`` and outputs written under
    ``out_root`` (default: the same root). Returns the ledger entries, whose
    ``output`` fields are the new image references.
    """
    recipes = plan_replenishment(record, config, seed)
    entries = [ledger_entry(record, r) for r in recipes]
    if write and recipes:
        if record.root is None:
            raise ContractError(f"identity {record.identity_id}: no dataset root to read images from")
        dst = Path(out_root if out_root is not None else record.root)
        (dst / record.identity_id).mkdir(parents=True, exist_ok=True)
        for r in recipes:
            (dst / r.output).write_bytes(_render(record.image_path(r.source_index), r))
    return entries


def replay_ledger(entries: Sequence[Mapping], src_root, dst_root=None) -> None:
    """Regenerate every ledger output from its source image."""
    src_root = Path(src_root)
    dst_root = Path(dst_root) if dst_root is not None else src_root
    for e in entries:
        recipe = AugmentRecipe.from_dict(e["recipe"])
        out = dst_root / e["output"]
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(_render(src_root / e["source"], recipe))


@dataclass
class AugmentSummary:
    identities: int = 0
    generated: int = 0
    quarantined: int = 0


def augment_corpus(root, reports: Sequence[CleanReport], config: AugmentConfig, seed: int, *,
                   out_root=None, n_jobs: int = 1) -> Tuple[List[dict], AugmentSummary]:
    """Replenish every kept identity of a cleaned corpus.

    In place (``out_root`` None) removed images are moved to
    ``<root>/_removed/<id>/`` so each kept directory ends with exactly
    ``target_count`` files. With ``out_root`` the kept originals are copied
    there and the source tree is left untouched.
    """
    root = Path(root)
    kept = sorted((r for r in reports if r.verdict is Verdict.KEPT), key=lambda r: r.identity_id)
    summary = AugmentSummary(identities=len(kept))
    records = []
    for rep in kept:
        for name in rep.kept_images:
            if not (root / name).is_file():
                raise InputError(f"kept image missing: {root / name}")
        if out_root is None:
            for name in rep.removed_images:
                src = root / name
                if src.is_file():
                    dst = root / QUARANTINE_DIR / name
                    dst.parent.mkdir(parents=True, exist_ok=True)
                    src.replace(dst)
                    summary.quarantined += 1
        else:
            for name in rep.kept_images:
                dst = Path(out_root) / name
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(root / name, dst)
        records.append(IdentityRecord(rep.identity_id, Tier.CLEANED, rep.kept_images, None, root))

    def work(rec):
        return replenish_identity(rec, config, seed, out_root=out_root)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(work, records))
    else:
        parts = [work(rec) for rec in records]
    ledger = [e for part in parts for e in part]
    summary.generated = len(ledger)
    return ledger, summary


def final_image_list(report: CleanReport, config: AugmentConfig) -> Tuple[str, ...]:
    """Kept originals followed by the augmented names, as laid out on disk."""
    n = len(report.kept)
    return report.kept_images + tuple(aug_name(report.identity_id, k) for k in range(config.target_count - n))
