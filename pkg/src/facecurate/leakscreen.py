"""Screen synthetic identities against a gallery of real-identity embeddings.

An identity fails when any of its images is at least ``tau_leak`` cosine
similar to any gallery row. Comparison is exhaustive.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .embed_io import read_embeddings
from .errors import ContractError, FacecurateError, FormatError, InputError
from .types import IdentityRecord, LeakConfig
from .validation import check_embeddings, check_same_dim

logger = logging.getLogger(__name__)


def labels_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".labels.json")


@dataclass(frozen=True)
class GalleryIndex:
    embeddings: np.ndarray
    labels: Tuple[str, ...]

    def __post_init__(self):
        if self.embeddings.shape[0] == 0:
            raise ContractError("gallery is empty")
        if len(self.labels) != self.embeddings.shape[0]:
            raise ContractError(f"{len(self.labels)} gallery labels for {self.embeddings.shape[0]} rows")


def load_gallery(path) -> GalleryIndex:
    """EMB1 gallery plus a ``<file>.labels.json`` list with one label per row."""
    matrix, _ = read_embeddings(path)
    lp = labels_path(path)
    if not lp.is_file():
        raise InputError(f"gallery labels not found: {lp}")
    try:
        labels = json.loads(lp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{lp}: {exc}") from exc
    if not isinstance(labels, list):
        raise FormatError(f"{lp}: expected a JSON list")
    return GalleryIndex(check_embeddings(matrix), tuple(str(x) for x in labels))


@dataclass(frozen=True)
class LeakVerdict:
    identity_id: str
    max_similarity: float
    matched_gallery_label: Optional[str]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "max_similarity": self.max_similarity,
            "matched_gallery_label": self.matched_gallery_label,
            "passed": self.passed,
        }


def _max_similarity(X: np.ndarray, gallery: GalleryIndex) -> Tuple[float, int]:
    check_same_dim(X, gallery.embeddings)
    S = X @ gallery.embeddings.T
    flat = int(np.argmax(S))
    return float(S.flat[flat]), flat % S.shape[1]


def screen_identity(X, gallery: GalleryIndex, tau_leak: float = LeakConfig.tau_leak,
                    identity_id: str = "") -> LeakVerdict:
    X = check_embeddings(X)
    best, col = _max_similarity(X, gallery)
    passed = best < tau_leak
    return LeakVerdict(identity_id, best, None if passed else gallery.labels[col], passed)


@dataclass
class ScreenSummary:
    screened: int = 0
    failed: List[str] = field(default_factory=list)
    errors: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed and not self.errors

    def to_dict(self) -> dict:
        return {"screened": self.screened, "failed": list(self.failed), "errors": list(self.errors)}


def screen_corpus(records: Sequence[IdentityRecord], embeddings: np.ndarray, gallery: GalleryIndex,
                  tau_leak: float = LeakConfig.tau_leak) -> Tuple[List[LeakVerdict], ScreenSummary]:
    verdicts, errors = [], []
    for rec in sorted(records, key=lambda r: r.identity_id):
        try:
            if rec.embedding_rows is None or not rec.embedding_rows:
                raise ContractError(f"identity {rec.identity_id}: no embedding rows")
            X = np.asarray(embeddings[list(rec.embedding_rows)], dtype=np.float64)
            verdicts.append(screen_identity(X, gallery, tau_leak, rec.identity_id))
        except FacecurateError as exc:
            errors.append({"identity_id": rec.identity_id, "error": str(exc)})
            logger.error("identity %s: %s", rec.identity_id, exc)
    failed = [v.identity_id for v in verdicts if not v.passed]
    return verdicts, ScreenSummary(len(verdicts), failed, errors)


class LeakScreen(BaseEstimator):
    """Estimator wrapper: ``fit`` on the gallery, ``predict`` per identity.

    Parameters
    ----------
    tau_leak : float
        Similarity at or above which an identity counts as leaked.
    """

    def __init__(self, tau_leak=LeakConfig.tau_leak):
        self.tau_leak = tau_leak

    def fit(self, X, y):
        X = check_embeddings(X)
        self.gallery_ = GalleryIndex(X, tuple(str(v) for v in y))
        return self

    def decision_function(self, X) -> float:
        """Maximum similarity between the identity rows ``X`` and the gallery."""
        check_is_fitted(self, "gallery_")
        return _max_similarity(check_embeddings(X), self.gallery_)[0]

    def predict(self, X) -> bool:
        """True when the identity passes (no leak)."""
        return self.decision_function(X) < self.tau_leak

    def screen(self, X, identity_id: str = "") -> LeakVerdict:
        check_is_fitted(self, "gallery_")
        return screen_identity(X, self.gallery_, self.tau_leak, identity_id)
