"""Curriculum ordering of the final training set.

Discarded real identities are replaced one-for-one by synthetic identities
drawn at random from a pool. The manifest lists every synthetic identity
before every cleaned one; within each tier, identities go from low to high
embedding dispersion. Images of an identity stay contiguous, and nothing is
shuffled.
"""

from __future__ import annotations

from typing import Dict, Mapping, Sequence

import numpy as np

from .augment import round_robin_sources
from .cluster import dispersion
from .errors import CapacityError, ContractError, ValidationError
from .types import DatasetConfig, DatasetManifest, IdentityRecord, ManifestEntry, Tier


def select_replacements(discarded: Sequence[str], pool: Sequence[IdentityRecord], rng: np.random.Generator,
                        *, config: DatasetConfig = DatasetConfig()) -> Dict[str, str]:
    """Map each discarded id to a distinct pool identity, uniformly without replacement."""
    if len(pool) < len(discarded):
        raise CapacityError(
            f"synthetic pool too small: {len(discarded)} replacements needed, "
            f"{len(pool)} available (short by {len(discarded) - len(pool)})"
        )
    for rec in pool:
        if len(rec) != config.images_per_identity:
            raise ContractError(
                f"pool identity {rec.identity_id} has {len(rec)} images, expected {config.images_per_identity}"
            )
    if not discarded:
        return {}
    picks = rng.choice(len(pool), size=len(discarded), replace=False)
    return {d: pool[int(p)].identity_id for d, p in zip(discarded, picks)}


def replenished_rows(kept_rows: Sequence[int], target: int) -> list:
    """Embedding rows of a replenished identity: kept rows, then the source
    row of each augmented image (augmented images inherit their source's)."""
    kept_rows = list(kept_rows)
    return kept_rows + [kept_rows[s] for s in round_robin_sources(len(kept_rows), target - len(kept_rows))]


def score_difficulty(record: IdentityRecord, embeddings: np.ndarray) -> float:
    if record.embedding_rows is None or len(record.embedding_rows) != len(record.images):
        raise ContractError(f"identity {record.identity_id}: embedding rows missing")
    if not record.embedding_rows:
        raise ContractError(f"identity {record.identity_id}: no images to score")
    return dispersion(np.asarray(embeddings[list(record.embedding_rows)], dtype=np.float64))


def build_manifest(synthetic: Sequence[IdentityRecord], cleaned: Sequence[IdentityRecord],
                   scores: Mapping[str, float], *, config: DatasetConfig = DatasetConfig(),
                   path_of=None) -> DatasetManifest:
    """Assemble the tiered manifest.

    ``path_of(record, image)`` maps an image reference to the string stored
    in the manifest; by default the record's image reference is used as is.
    """
    entries = []
    for tier, records in ((Tier.SYNTHETIC, synthetic), (Tier.CLEANED, cleaned)):
        for rec in records:
            if len(rec) != config.images_per_identity:
                raise ValidationError(
                    f"identity {rec.identity_id} has {len(rec)} images, expected {config.images_per_identity}"
                )
            if rec.identity_id not in scores:
                raise ValidationError(f"no difficulty score for identity {rec.identity_id}")
        ordered = sorted(records, key=lambda r: (scores[r.identity_id], r.identity_id))
        for rec in ordered:
            paths = tuple(path_of(rec, im) if path_of else im for im in rec.images)
            entries.append(ManifestEntry(rec.identity_id, tier, float(scores[rec.identity_id]), paths))
    manifest = DatasetManifest(tuple(entries), config.images_per_identity)
    manifest.validate()
    return manifest
