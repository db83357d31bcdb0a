"""Synthetic corpora with planted ground truth.

Each identity gets a random unit centroid; each image embedding is the
centroid rotated by a half-normal angle (scale ``noise`` radians) towards a
random orthogonal direction. Contamination replaces a share of each
identity's rows with uniform random directions (``noise``) or with samples
around another identity's centroid (``cross``).
"""

from __future__ import annotations

import hashlib
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image

from .embed_io import write_canonical, write_embeddings
from .errors import ConfigError

EMBEDDINGS_NAME = "embeddings.emb"
GROUND_TRUTH_NAME = "ground_truth.json"
CONTAMINATION_KINDS = ("noise", "cross")
_SPEC_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)%@(noise|cross)\s*$")


@dataclass(frozen=True)
class Contamination:
    fraction: float
    kind: str

    def count(self, n: int) -> int:
        return int(math.floor(self.fraction * n + 0.5))


def parse_contamination(spec: str) -> Tuple[Contamination, ...]:
    """``"30%@noise"`` or ``"20%@noise,10%@cross"``; empty means none."""
    if not spec or not spec.strip():
        return ()
    out = []
    for part in spec.split(","):
        m = _SPEC_RE.match(part)
        if not m:
            raise ConfigError(f"bad contamination spec {part!r}; expected e.g. 30%@noise")
        pct = float(m.group(1))
        if pct > 100:
            raise ConfigError(f"contamination above 100%: {part!r}")
        out.append(Contamination(pct / 100.0, m.group(2)))
    return tuple(out)


def random_unit(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    X = rng.standard_normal((n, dim))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def angular_samples(rng: np.random.Generator, centroid: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """Unit vectors at half-normal angle ``|N(0, sigma)|`` from ``centroid``."""
    c = centroid / np.linalg.norm(centroid)
    theta = np.abs(rng.normal(0.0, sigma, size=n)) if sigma > 0 else np.zeros(n)
    u = rng.standard_normal((n, c.size))
    u -= np.outer(u @ c, c)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    X = np.cos(theta)[:, None] * c[None, :] + np.sin(theta)[:, None] * u
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@dataclass
class SynthCorpus:
    identity_ids: List[str]
    images_per: int
    embeddings: np.ndarray  # float32, identity-major rows
    centroids: np.ndarray
    ground_truth: Dict[str, dict] = field(default_factory=dict)

    def image_names(self, identity_id: str) -> List[str]:
        return [f"{identity_id}/img_{k:03d}.png" for k in range(self.images_per)]

    def index(self) -> Dict[str, int]:
        out = {}
        for i, ident in enumerate(self.identity_ids):
            for k, name in enumerate(self.image_names(ident)):
                out[name] = i * self.images_per + k
        return out

    def rows(self, identity_id: str) -> np.ndarray:
        i = self.identity_ids.index(identity_id)
        return self.embeddings[i * self.images_per : (i + 1) * self.images_per]


def make_corpus(identities: int, images_per: int, dim: int, noise: float,
                contamination: Sequence[Contamination] = (), seed: int = 0,
                start_id: int = 0) -> SynthCorpus:
    if identities < 0 or images_per < 1 or dim < 2:
        raise ConfigError("need identities >= 0, images_per >= 1, dim >= 2")
    counts = [(c.kind, c.count(images_per)) for c in contamination]
    if sum(k for _, k in counts) > images_per:
        raise ConfigError("contamination exceeds 100% of each identity")
    if any(kind == "cross" and k for kind, k in counts) and identities < 2:
        raise ConfigError("cross contamination needs at least two identities")
    rng = np.random.default_rng(seed)
    ids = [f"{start_id + i:06d}" for i in range(identities)]
    centroids = random_unit(rng, identities, dim)
    E = np.empty((identities * images_per, dim), dtype=np.float32)
    truth = {}
    for i, ident in enumerate(ids):
        block = angular_samples(rng, centroids[i], images_per, noise)
        order = rng.permutation(images_per)
        pos = 0
        planted = {}
        for kind, k in counts:
            idx = np.sort(order[pos : pos + k])
            pos += k
            if k == 0:
                continue
            if kind == "noise":
                block[idx] = random_unit(rng, k, dim)
            else:
                other = int(rng.integers(identities - 1))
                other += other >= i
                block[idx] = angular_samples(rng, centroids[other], k, noise)
            planted[kind] = idx.tolist()
        E[i * images_per : (i + 1) * images_per] = block
        outliers = sorted(j for v in planted.values() for j in v)
        truth[ident] = {"outliers": outliers, "planted": planted}
    return SynthCorpus(ids, images_per, E, centroids, truth)


def placeholder_png(identity_id: str, size: int = 8) -> bytes:
    """Solid-colour square whose colour is a hash of the identity id."""
    rgb = tuple(hashlib.sha256(identity_id.encode()).digest()[:3])
    buf = io.BytesIO()
    Image.new("RGB", (size, size), rgb).save(buf, format="PNG")
    return buf.getvalue()


def write_corpus(corpus: SynthCorpus, out_root, *, params: dict = None) -> Path:
    """Write the image tree, ``embeddings.emb`` (+ index) and ground truth."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    for ident in corpus.identity_ids:
        (out_root / ident).mkdir(exist_ok=True)
        png = placeholder_png(ident)
        for name in corpus.image_names(ident):
            with open(out_root / name, "wb") as fh:
                fh.write(png)
    write_embeddings(out_root / EMBEDDINGS_NAME, corpus.embeddings, corpus.index())
    write_canonical({"params": params or {}, "identities": corpus.ground_truth}, out_root / GROUND_TRUTH_NAME)
    return out_root
