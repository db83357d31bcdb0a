"""Shared builders for test inputs."""

import numpy as np
from PIL import Image

from facecurate.synth import angular_samples, random_unit


def unit_rows(rng, n, dim):
    return random_unit(rng, n, dim)


def planted_identity(rng, n_inliers, n_noise, dim=256, sigma=0.05):
    """Tight bundle of inliers followed by uniform random outliers."""
    c = random_unit(rng, 1, dim)[0]
    inl = angular_samples(rng, c, n_inliers, sigma)
    out = random_unit(rng, n_noise, dim)
    return np.vstack([inl, out])


def pattern_image(seed=0, size=32):
    """Small image with structure in every channel (no symmetry)."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size]
    arr = np.stack([x * 255 // size, y * 255 // size, (x * y) % 256], axis=-1).astype(np.uint8)
    arr[: size // 4, : size // 3] = rng.integers(0, 256, size=(size // 4, size // 3, 3), dtype=np.uint8)
    return Image.fromarray(arr, "RGB")


def write_tree(root, layout, image=None):
    """``layout`` maps identity id -> number of images (png)."""
    image = image or pattern_image()
    for ident, count in layout.items():
        d = root / ident
        d.mkdir(parents=True, exist_ok=True)
        for k in range(count):
            image.save(d / f"img_{k:03d}.png")
    return root


def at_similarity(rng, v, s):
    """Unit vector whose cosine similarity to unit vector ``v`` is exactly ``s``."""
    u = rng.standard_normal(v.size)
    u -= (u @ v) * v
    u /= np.linalg.norm(u)
    return s * v + np.sqrt(1.0 - s * s) * u


def make_record(ident, tier, per=50, first_row=0, root=None):
    from facecurate.types import IdentityRecord

    images = tuple(f"{ident}/{k:03d}.png" for k in range(per))
    return IdentityRecord(ident, tier, images, tuple(range(first_row, first_row + per)), root)


def replacement_scenario(seed, dim=16):
    """Random corpus + synthetic pool; returns (manifest, n_original, discarded, mapping, embeddings)."""
    from facecurate.curriculum import build_manifest, score_difficulty, select_replacements
    from facecurate.synth import angular_samples
    from facecurate.types import Tier

    rng = np.random.default_rng(seed)
    n_real = int(rng.integers(1, 30))
    n_pool = int(rng.integers(0, 40))
    n_disc = int(rng.integers(0, min(n_real, n_pool) + 1))
    ids = sorted(rng.choice(1000, size=n_real + n_pool, replace=False).tolist())
    rng.shuffle(ids)
    blocks, real, pool = [], [], []
    for k, v in enumerate(ids):
        tier = Tier.CLEANED if k < n_real else Tier.SYNTHETIC
        sigma = float(rng.uniform(0.0, 0.6))
        # half of the identities share a spread so difficulty ties occur
        if rng.random() < 0.5:
            sigma = 0.0
        blocks.append(angular_samples(rng, random_unit(rng, 1, dim)[0], 50, sigma))
        rec = make_record(f"{v:06d}", tier, first_row=50 * k)
        (real if tier is Tier.CLEANED else pool).append(rec)
    E = np.vstack(blocks)
    discarded = sorted(r.identity_id for r in rng.choice(np.array(real, dtype=object), n_disc, replace=False))
    mapping = select_replacements(discarded, pool, rng)
    chosen = set(mapping.values())
    synthetic = [r for r in pool if r.identity_id in chosen]
    cleaned = [r for r in real if r.identity_id not in set(discarded)]
    scores = {r.identity_id: score_difficulty(r, E) for r in synthetic + cleaned}
    return build_manifest(synthetic, cleaned, scores), n_real, discarded, mapping, E


def write_planted_corpus(root, n_ids, bad=(), dim=64, noise=0.05, contaminate="", seed=0, start_id=0, split=()):
    """synth corpus on disk; identities at positions ``bad`` get 90% noise rows,
    those at ``split`` get a second 20-image mode (an ambiguous identity)."""
    from facecurate.synth import make_corpus, parse_contamination, write_corpus

    corpus = make_corpus(n_ids, 50, dim, noise, parse_contamination(contaminate), seed=seed, start_id=start_id)
    rng = np.random.default_rng(seed + 1)
    for i in bad:
        rows = corpus.embeddings[i * 50 : (i + 1) * 50]
        rows[5:] = random_unit(rng, 45, dim)
        corpus.ground_truth[corpus.identity_ids[i]]["outliers"] = list(range(5, 50))
    for i in split:
        rows = corpus.embeddings[i * 50 : (i + 1) * 50]
        rows[30:] = angular_samples(rng, random_unit(rng, 1, dim)[0], 20, noise)
        corpus.ground_truth[corpus.identity_ids[i]]["outliers"] = list(range(30, 50))
    write_corpus(corpus, root)
    return corpus


def write_gallery(path, matrix, labels):
    import json

    from facecurate.embed_io import write_embeddings
    from facecurate.leakscreen import labels_path

    write_embeddings(path, np.asarray(matrix, dtype=np.float32), {f"g/{k:05d}.png": k for k in range(len(labels))})
    labels_path(path).write_text(json.dumps(list(labels)))
    return path
