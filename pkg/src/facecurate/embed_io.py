"""On-disk formats: EMB1 embedding files, the dataset tree, canonical JSON.

EMB1 layout (little-endian, packed)::

    magic   4 bytes   b"EMB1"
    version uint16    1
    dim     uint32
    count   uint64
    payload count * dim float32, row-major

The companion ``<file>.idx.json`` maps relative image paths to row numbers.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, IngestionError, InputError, RowIndexError, TruncationError
from .types import (
    DatasetConfig,
    DatasetManifest,
    IdentityRecord,
    ManifestEntry,
    Tier,
    is_identity_id,
)
from .validation import normalize_rows

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sHIQ")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
MANIFEST_VERSION = 1


def index_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".idx.json")


def write_embeddings(path, matrix, index: Mapping[str, int]) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[1] < 1:
        raise FormatError(f"embedding matrix must be 2-d with dim >= 1, got shape {matrix.shape}")
    count, dim = matrix.shape
    index = {str(k): int(v) for k, v in index.items()}
    _check_index(index, count)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, dim, count))
        matrix.tofile(fh)
    index_path(path).write_text(dumps_canonical(index), encoding="utf-8")


def read_header(path) -> Tuple[int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, dim, count = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1")
    return dim, count


def read_embeddings(path, *, normalize: bool = True) -> Tuple[np.ndarray, dict]:
    """Read an EMB1 file and its row index.

    Returns a float32 ``(count, dim)`` matrix (rows L2-normalized unless
    ``normalize=False``) and the path -> row mapping.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"embedding file not found: {path}")
    dim, count = read_header(path)
    expected = HEADER.size + 4 * dim * count
    actual = path.stat().st_size
    if actual != expected:
        raise TruncationError(
            f"{path}: header says {count} x {dim} floats ({expected} bytes) but file has {actual} bytes"
        )
    matrix = np.fromfile(path, dtype="<f4", offset=HEADER.size).reshape(count, dim)
    matrix = matrix.astype(np.float32, copy=False)
    idx_file = index_path(path)
    if not idx_file.is_file():
        raise InputError(f"row index not found: {idx_file}")
    try:
        index = json.loads(idx_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{idx_file}: {exc}") from exc
    if not isinstance(index, dict):
        raise FormatError(f"{idx_file}: expected a JSON object")
    _check_index(index, count)
    if normalize:
        matrix = normalize_rows(matrix, copy=False)
    return matrix, index


def _check_index(index: Mapping[str, int], count: int) -> None:
    if len(index) != count:
        raise RowIndexError(f"row index has {len(index)} entries for {count} rows")
    seen = np.zeros(count, dtype=bool)
    for key, row in index.items():
        if not isinstance(row, int) or isinstance(row, bool) or not 0 <= row < count:
            raise RowIndexError(f"row index entry {key!r} -> {row!r} out of range [0, {count})")
        if seen[row]:
            raise RowIndexError(f"row {row} appears more than once in the index")
        seen[row] = True


def scan_dataset(
    root,
    *,
    index: Optional[Mapping[str, int]] = None,
    tier: Tier = Tier.CLEANED,
    config: DatasetConfig = DatasetConfig(),
) -> Tuple[List[IdentityRecord], List[str]]:
    """Enumerate ``<root>/<6-digit id>/<image>`` directories.

    Returns ``(records, skipped)``: records sorted by identity id with images
    in lexicographic filename order, and the names of non-conforming
    directories. When ``index`` is given, each record gets its embedding rows.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root is not a directory: {root}")
    records, skipped = [], []
    try:
        entries = sorted(os.scandir(root), key=lambda e: e.name)
    except OSError as exc:
        raise InputError(f"cannot read {root}: {exc}") from exc
    for entry in entries:
        if not entry.is_dir():
            continue
        if not is_identity_id(entry.name):
            skipped.append(entry.name)
            continue
        try:
            names = sorted(
                e.name
                for e in os.scandir(entry.path)
                if e.is_file() and e.name.lower().endswith(IMAGE_SUFFIXES)
            )
        except OSError as exc:
            raise InputError(f"cannot read {entry.path}: {exc}") from exc
        if len(names) > config.images_per_identity:
            raise IngestionError(
                f"identity {entry.name}: per-identity cap exceeded "
                f"({len(names)} > {config.images_per_identity} images)"
            )
        images = tuple(f"{entry.name}/{n}" for n in names)
        rows = None
        if index is not None:
            try:
                rows = tuple(index[p] for p in images)
            except KeyError as exc:
                raise RowIndexError(f"image {exc.args[0]} has no embedding row") from None
        records.append(IdentityRecord(entry.name, tier, images, rows, root))
    if skipped:
        logger.warning("skipped %d non-identity directories under %s: %s", len(skipped), root, skipped[:10])
    return records, skipped


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False) + "\n"


def write_canonical(obj, path) -> None:
    Path(path).write_text(dumps_canonical(obj), encoding="utf-8")


def manifest_to_text(manifest: DatasetManifest) -> str:
    entries = json.dumps(
        [e.to_dict() for e in manifest.entries],
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
        allow_nan=False,
    )
    return '{"version":%d,"entries":%s}\n' % (MANIFEST_VERSION, entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    Path(path).write_text(manifest_to_text(manifest), encoding="utf-8")


def read_manifest(path, *, config: DatasetConfig = DatasetConfig()) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    if data.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {data.get('version')!r}")
    entries = tuple(ManifestEntry.from_dict(e) for e in data["entries"])
    return DatasetManifest(entries, config.images_per_identity)


def read_jsonl(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(records: Iterable[Mapping], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n")


def gather_rows(records: Sequence[IdentityRecord]) -> List[int]:
    rows = []
    for r in records:
        if r.embedding_rows is None:
            raise RowIndexError(f"identity {r.identity_id} has no embedding rows attached")
        rows.extend(r.embedding_rows)
    return rows
