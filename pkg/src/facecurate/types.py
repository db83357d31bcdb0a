"""Shared domain types and pipeline configuration.

All numeric pipeline parameters live on the config dataclasses below; the
operation modules read them from there and never hard-code them.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Tuple

from .errors import ConfigError, ValidationError


class Tier(str, enum.Enum):
    SYNTHETIC = "synthetic"
    CLEANED = "cleaned"


class Verdict(str, enum.Enum):
    KEPT = "kept"
    DISCARDED = "discarded"


class Reason(str, enum.Enum):
    OK = "ok"
    BELOW_FRACTION = "below_fraction"
    BELOW_COUNT = "below_count"
    CALIBRATION_FAILED = "calibration_failed"


def is_identity_id(name: str) -> bool:
    return len(name) == 6 and name.isascii() and name.isdigit()


@dataclass(frozen=True)
class DatasetConfig:
    images_per_identity: int = 50


@dataclass(frozen=True)
class CleanConfig:
    sim_lo: float = 0.3
    sim_hi: float = 0.9
    band_lo: float = 0.50
    band_hi: float = 0.80
    min_keep_fraction: float = 0.20
    min_keep_count: int = 10
    min_pts: int = 3
    tau_step: float = 0.05
    # second-largest / largest cluster size at which the LLM expert is consulted
    ambiguity_ratio: float = 0.5
    llm_budget: int = 3

    def validate(self) -> list:
        return validate_config(self)


def validate_config(config: CleanConfig) -> list:
    """Return every invariant violation of ``config`` (empty list means ok)."""
    violations = []
    if not 0 < config.sim_lo:
        violations.append("0 < sim_lo")
    if not config.sim_lo < config.sim_hi:
        violations.append("sim_lo < sim_hi")
    if not config.sim_hi < 1:
        violations.append("sim_hi < 1")
    if not 0 < config.band_lo:
        violations.append("0 < band_lo")
    if not config.band_lo < config.band_hi:
        violations.append("band_lo < band_hi")
    if not config.band_hi <= 1:
        violations.append("band_hi ≤ 1")
    if not 0 <= config.min_keep_fraction <= 1:
        violations.append("0 ≤ min_keep_fraction ≤ 1")
    if not config.min_keep_count >= 1:
        violations.append("min_keep_count ≥ 1")
    if not config.min_pts >= 1:
        violations.append("min_pts ≥ 1")
    if not config.tau_step > 0:
        violations.append("tau_step > 0")
    if not 0 < config.ambiguity_ratio <= 1:
        violations.append("0 < ambiguity_ratio ≤ 1")
    if not config.llm_budget >= 1:
        violations.append("llm_budget ≥ 1")
    return violations


@dataclass(frozen=True)
class AugmentConfig:
    p_hflip: float = 0.5
    p_jitter: float = 0.8
    brightness: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)
    saturation: Tuple[float, float] = (0.8, 1.2)
    hue: Tuple[float, float] = (-0.05, 0.05)
    p_gray: float = 0.2
    p_affine: float = 0.5
    max_rot: float = 10.0
    max_translate: float = 0.05
    scale: Tuple[float, float] = (0.95, 1.05)
    max_shear: float = 5.0
    p_rot: float = 0.5
    max_inplane_rot: float = 5.0
    p_blur: float = 1.0
    blur_kernel: int = 3
    blur_sigma: Tuple[float, float] = (0.1, 2.0)
    p_lowres: float = 0.5
    lowres_factor: float = 0.5
    target_count: int = 50

    def validate(self) -> list:
        violations = []
        for f in fields(self):
            if f.name.startswith("p_"):
                p = getattr(self, f.name)
                if not 0 <= p <= 1:
                    violations.append(f"{f.name} in [0, 1]")
        for name in ("brightness", "contrast", "saturation", "hue", "scale", "blur_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                violations.append(f"{name} range ordered")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            violations.append("blur_kernel odd and ≥ 1")
        if not 0 < self.lowres_factor <= 1:
            violations.append("0 < lowres_factor ≤ 1")
        if self.target_count != DatasetConfig.images_per_identity:
            violations.append(f"target_count = {DatasetConfig.images_per_identity}")
        return violations


@dataclass(frozen=True)
class GeneratorConfig:
    n_variants: int = 49
    max_reference_attempts: int = 5
    detector_budget: int = 3
    expander_budget: int = 3
    generator_budget: int = 3
    prompt_retries: int = 100
    image_size: int = 112


@dataclass(frozen=True)
class LeakConfig:
    tau_leak: float = 0.7


@dataclass(frozen=True)
class GridSpec:
    cell_size: int = 112
    columns: int = 10
    label_height: int = 20


@dataclass(frozen=True)
class IdentityRecord:
    """One identity directory.

    ``images`` are paths relative to ``root`` using forward slashes, which is
    also the key format of the embedding row index.
    """

    identity_id: str
    tier: Tier
    images: Tuple[str, ...]
    embedding_rows: Optional[Tuple[int, ...]] = None
    root: Optional[Path] = None

    def __post_init__(self):
        if self.embedding_rows is not None and len(self.embedding_rows) != len(self.images):
            raise ValidationError(
                f"identity {self.identity_id}: {len(self.images)} images but "
                f"{len(self.embedding_rows)} embedding rows"
            )

    def __len__(self) -> int:
        return len(self.images)

    def image_path(self, i: int) -> Path:
        if self.root is None:
            return Path(self.images[i])
        return Path(self.root) / self.images[i]


@dataclass(frozen=True)
class CleanReport:
    identity_id: str
    images: Tuple[str, ...]
    tau_chosen: Optional[float]
    calibration_feasible: bool
    fraction: float
    labels: Tuple[int, ...]
    kept: Tuple[int, ...]
    removed: Tuple[int, ...]
    cluster_flagged: Tuple[int, ...]
    llm_consulted: bool
    llm_flagged: Tuple[int, ...]
    verdict: Verdict
    reason: Reason

    def __post_init__(self):
        n = len(self.images)
        kept, removed = set(self.kept), set(self.removed)
        if kept & removed or (kept | removed) != set(range(n)):
            raise ValidationError(f"identity {self.identity_id}: kept/removed do not partition images")
        if (self.verdict is Verdict.DISCARDED) == (self.reason is Reason.OK):
            raise ValidationError(f"identity {self.identity_id}: verdict {self.verdict.value} with reason {self.reason.value}")

    @property
    def kept_images(self) -> Tuple[str, ...]:
        return tuple(self.images[i] for i in self.kept)

    @property
    def removed_images(self) -> Tuple[str, ...]:
        return tuple(self.images[i] for i in self.removed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["images"] = list(self.images)
        for key in ("labels", "kept", "removed", "cluster_flagged", "llm_flagged"):
            d[key] = list(d[key])
        d["verdict"] = self.verdict.value
        d["reason"] = self.reason.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CleanReport":
        return cls(
            identity_id=d["identity_id"],
            images=tuple(d["images"]),
            tau_chosen=d["tau_chosen"],
            calibration_feasible=d["calibration_feasible"],
            fraction=d["fraction"],
            labels=tuple(d["labels"]),
            kept=tuple(d["kept"]),
            removed=tuple(d["removed"]),
            cluster_flagged=tuple(d["cluster_flagged"]),
            llm_consulted=d["llm_consulted"],
            llm_flagged=tuple(d["llm_flagged"]),
            verdict=Verdict(d["verdict"]),
            reason=Reason(d["reason"]),
        )


@dataclass(frozen=True)
class ManifestEntry:
    identity_id: str
    tier: Tier
    difficulty: float
    image_paths: Tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "tier": self.tier.value,
            "difficulty": self.difficulty,
            "image_paths": list(self.image_paths),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ManifestEntry":
        return cls(d["identity_id"], Tier(d["tier"]), d["difficulty"], tuple(d["image_paths"]))


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...] = ()
    images_per_identity: int = field(default=DatasetConfig.images_per_identity, compare=False)

    def violations(self) -> list:
        out = []
        seen_cleaned = False
        ids = set()
        for pos, e in enumerate(self.entries):
            if not is_identity_id(e.identity_id):
                out.append(f"entry {pos}: identity_id {e.identity_id!r} is not 6 digits")
            if e.identity_id in ids:
                out.append(f"entry {pos}: duplicate identity_id {e.identity_id}")
            ids.add(e.identity_id)
            if e.tier is Tier.CLEANED:
                seen_cleaned = True
            elif seen_cleaned:
                out.append(f"entry {pos}: synthetic identity {e.identity_id} after a cleaned identity")
            if not (e.difficulty >= 0):
                out.append(f"entry {pos}: difficulty {e.difficulty} < 0")
            if len(e.image_paths) != self.images_per_identity:
                out.append(
                    f"entry {pos}: {len(e.image_paths)} image paths, expected {self.images_per_identity}"
                )
            if len(set(e.image_paths)) != len(e.image_paths):
                out.append(f"entry {pos}: duplicate image paths")
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ValidationError("invalid manifest: " + "; ".join(problems))


def config_from_mapping(cls, data: Optional[Mapping[str, Any]]):
    """Build a frozen config dataclass from a plain mapping, rejecting unknown keys."""
    if not data:
        return cls()
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls, key, None)
        if isinstance(default, tuple) and isinstance(value, Sequence):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)
