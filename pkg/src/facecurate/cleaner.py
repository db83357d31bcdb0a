"""Per-identity cleaning by a mixture of experts.

The clustering expert flags every image outside the largest cluster found at
the calibrated threshold. When that clustering looks contested and an LLM
client is available, the LLM expert reviews the full grid of faces. The
removed set is the union of both experts' outliers.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cluster import calibrate_from_similarity, cluster_sizes, largest_cluster
from .errors import ContractError, FacecurateError
from .llm import ExpertVerdict, LlmTranscript, consult
from .types import CleanConfig, CleanReport, GridSpec, IdentityRecord, Reason, Verdict
from .validation import check_embeddings

logger = logging.getLogger(__name__)


def fuse(verdicts: Iterable[ExpertVerdict], n: int) -> frozenset:
    removed = set()
    for v in verdicts:
        bad = [i for i in v.outliers if not 0 <= i < n]
        if bad:
            raise ContractError(f"{v.source} expert flagged out-of-range indices {sorted(bad)}")
        removed |= set(v.outliers)
    return frozenset(removed)


def retention_floor(n_original: int, config: CleanConfig) -> int:
    """Smallest kept count that survives both discard rules."""
    frac = Fraction(config.min_keep_fraction).limit_denominator(10**6)
    return max(config.min_keep_count, math.ceil(frac * n_original))


def retention_verdict(n_kept: int, n_original: int, config: CleanConfig) -> Tuple[Verdict, Reason]:
    if n_kept < config.min_keep_count:
        return Verdict.DISCARDED, Reason.BELOW_COUNT
    frac = Fraction(config.min_keep_fraction).limit_denominator(10**6)
    if Fraction(n_kept, n_original) < frac:
        return Verdict.DISCARDED, Reason.BELOW_FRACTION
    return Verdict.KEPT, Reason.OK


def is_ambiguous(labels, feasible: bool, config: CleanConfig) -> bool:
    if not feasible:
        return True
    sizes = np.sort(cluster_sizes(labels))[::-1]
    return sizes.size >= 2 and sizes[1] >= config.ambiguity_ratio * sizes[0]


def clean_embeddings(
    X: np.ndarray,
    config: CleanConfig = CleanConfig(),
    *,
    identity_id: str = "",
    images: Optional[Sequence] = None,
    names: Optional[Sequence[str]] = None,
    llm=None,
    on_transcript: Optional[Callable[[LlmTranscript], None]] = None,
    grid: GridSpec = GridSpec(),
) -> CleanReport:
    """Clean one identity given its embedding rows.

    ``images`` (paths or PIL images) are only needed for the LLM expert;
    ``names`` label the images in the report and default to ``images``.
    """
    n = X.shape[0]
    if n < 1:
        raise ContractError(f"identity {identity_id}: no images to clean")
    S = X @ X.T
    cal = calibrate_from_similarity(S, config)
    cid, members, _ = largest_cluster(cal.labels)
    cluster_out = frozenset(range(n)) - frozenset(members.tolist())
    verdicts = [ExpertVerdict("cluster", cluster_out)]

    llm_consulted = False
    llm_flagged = frozenset()
    if llm is not None and cid is not None and is_ambiguous(cal.labels, cal.feasible, config):
        llm_consulted = True
        llm_verdict, transcript = consult(
            images if images is not None else [], llm, config.llm_budget, tag=identity_id, spec=grid
        )
        if on_transcript is not None:
            on_transcript(transcript)
        llm_flagged = llm_verdict.outliers
        verdicts.append(llm_verdict)

    removed = fuse(verdicts, n)
    kept = sorted(frozenset(range(n)) - removed)
    if cid is None:
        verdict, reason = Verdict.DISCARDED, Reason.CALIBRATION_FAILED
    else:
        verdict, reason = retention_verdict(len(kept), n, config)
    if names is None:
        names = [str(i) for i in range(n)] if images is None else [str(p) for p in images]
    return CleanReport(
        identity_id=identity_id,
        images=tuple(names),
        tau_chosen=cal.tau,
        calibration_feasible=cal.feasible,
        fraction=cal.fraction,
        labels=tuple(int(v) for v in cal.labels.labels),
        kept=tuple(kept),
        removed=tuple(sorted(removed)),
        cluster_flagged=tuple(sorted(cluster_out)),
        llm_consulted=llm_consulted,
        llm_flagged=tuple(sorted(llm_flagged)),
        verdict=verdict,
        reason=reason,
    )


def clean_identity(
    record: IdentityRecord,
    embeddings: np.ndarray,
    config: CleanConfig = CleanConfig(),
    llm=None,
    *,
    on_transcript: Optional[Callable[[LlmTranscript], None]] = None,
    grid: GridSpec = GridSpec(),
) -> CleanReport:
    if record.embedding_rows is None:
        raise ContractError(f"identity {record.identity_id}: embedding rows missing")
    if len(record) < 1:
        raise ContractError(f"identity {record.identity_id}: no images")
    rows = np.asarray(record.embedding_rows, dtype=np.int64)
    if rows.min() < 0 or rows.max() >= embeddings.shape[0]:
        raise ContractError(f"identity {record.identity_id}: embedding row out of range")
    X = np.asarray(embeddings[rows], dtype=np.float64)
    images = None
    if llm is not None:
        images = [record.image_path(i) for i in range(len(record))]
    return clean_embeddings(
        X, config, identity_id=record.identity_id, images=images, names=record.images,
        llm=llm, on_transcript=on_transcript, grid=grid,
    )


@dataclass
class CleanSummary:
    identities: int = 0
    kept: int = 0
    discarded: int = 0
    images_removed: int = 0
    mean_tau: Optional[float] = None
    llm_consulted: int = 0
    errors: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "identities": self.identities,
            "kept": self.kept,
            "discarded": self.discarded,
            "images_removed": self.images_removed,
            "mean_tau": self.mean_tau,
            "llm_consulted": self.llm_consulted,
            "errors": list(self.errors),
        }


def summarize(reports: Sequence[CleanReport], errors: Sequence[dict] = ()) -> CleanSummary:
    taus = [r.tau_chosen for r in reports if r.tau_chosen is not None]
    return CleanSummary(
        identities=len(reports),
        kept=sum(r.verdict is Verdict.KEPT for r in reports),
        discarded=sum(r.verdict is Verdict.DISCARDED for r in reports),
        images_removed=sum(len(r.removed) for r in reports),
        mean_tau=math.fsum(taus) / len(taus) if taus else None,
        llm_consulted=sum(r.llm_consulted for r in reports),
        errors=list(errors),
    )


# worker state for process pools; set by the initializer (fork shares pages)
_WORKER = {}


def _init_worker(embeddings, config, grid):
    _WORKER["embeddings"] = embeddings
    _WORKER["config"] = config
    _WORKER["grid"] = grid


def _clean_chunk(records: List[IdentityRecord]):
    out = []
    for rec in records:
        try:
            out.append(("ok", clean_identity(rec, _WORKER["embeddings"], _WORKER["config"], grid=_WORKER["grid"])))
        except FacecurateError as exc:
            out.append(("error", {"identity_id": rec.identity_id, "error": str(exc)}))
    return out


def clean_corpus(
    records: Sequence[IdentityRecord],
    embeddings: np.ndarray,
    config: CleanConfig = CleanConfig(),
    llm=None,
    *,
    n_jobs: int = 1,
    on_transcript: Optional[Callable[[LlmTranscript], None]] = None,
    grid: GridSpec = GridSpec(),
) -> Tuple[List[CleanReport], CleanSummary]:
    """Clean every identity. Per-identity contract errors are collected in
    ``summary.errors`` and the remaining identities are still reported.

    Reports are returned sorted by identity id whatever the scheduling.
    LLM-assisted runs stay in-process so calls share one rate-limited client.
    """
    results = []
    if n_jobs > 1 and llm is None and len(records) > 1:
        chunk = max(1, -(-len(records) // (n_jobs * 8)))
        chunks = [list(records[i : i + chunk]) for i in range(0, len(records), chunk)]
        # fork lets workers share the embedding matrix instead of pickling it
        methods = multiprocessing.get_all_start_methods()
        ctx = multiprocessing.get_context("fork" if "fork" in methods else None)
        with ProcessPoolExecutor(
            n_jobs, mp_context=ctx, initializer=_init_worker, initargs=(embeddings, config, grid)
        ) as ex:
            for part in ex.map(_clean_chunk, chunks):
                results.extend(part)
    else:
        for rec in records:
            try:
                rep = clean_identity(rec, embeddings, config, llm, on_transcript=on_transcript, grid=grid)
                results.append(("ok", rep))
            except FacecurateError as exc:
                results.append(("error", {"identity_id": rec.identity_id, "error": str(exc)}))
    reports = sorted((r for kind, r in results if kind == "ok"), key=lambda r: r.identity_id)
    errors = sorted((r for kind, r in results if kind == "error"), key=lambda e: e["identity_id"])
    for e in errors:
        logger.error("identity %s: %s", e["identity_id"], e["error"])
    return reports, summarize(reports, errors)


class IdentityCleaner(TransformerMixin, BaseEstimator):
    """Estimator view of single-identity cleaning.

    ``fit`` takes one identity's embeddings (rows = images) and stores the
    report; ``transform`` returns the retained rows.

    Parameters
    ----------
    config : CleanConfig, optional
    llm : client with ``complete(LlmRequest) -> str``, optional
    """

    def __init__(self, config=None, llm=None):
        self.config = config
        self.llm = llm

    def fit(self, X, y=None, *, images=None, identity_id=""):
        X = check_embeddings(X)
        config = self.config or CleanConfig()
        self.report_ = clean_embeddings(X, config, identity_id=identity_id, images=images, llm=self.llm)
        mask = np.zeros(X.shape[0], dtype=bool)
        mask[list(self.report_.kept)] = True
        self.kept_mask_ = mask
        self.tau_ = self.report_.tau_chosen
        return self

    def transform(self, X):
        check_is_fitted(self, "kept_mask_")
        X = check_embeddings(X)
        if X.shape[0] != self.kept_mask_.size:
            raise ContractError("transform expects the rows the cleaner was fitted on")
        return X[self.kept_mask_]
