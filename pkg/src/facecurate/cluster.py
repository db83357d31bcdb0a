"""Cosine-distance DBSCAN, largest-cluster extraction, threshold calibration.

Thresholds are cosine *similarities*: a point's neighbourhood is every point
with similarity >= tau (distance <= 1 - tau), itself included.

Labels follow sequential DBSCAN run in input order: clusters are numbered by
their lowest-index core point, and a border point reachable from several
clusters belongs to the one discovered first. The implementation below
reaches the same labels with array operations instead of a visit queue.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ContractError, DegenerateInputError
from .types import CleanConfig
from .validation import check_embeddings

NOISE = -1
_DEFAULTS = CleanConfig()


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        if self.labels.size and (self.labels.min() < NOISE or self.labels.max() >= self.n_clusters):
            raise ContractError("cluster label out of range")


@dataclass(frozen=True)
class CalibrationResult:
    tau: Optional[float]
    fraction: float
    feasible: bool
    labels: Optional[ClusterLabels] = None


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return 1.0 - float(np.dot(a, b))


def similarity_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X @ X.T


def _connected_min_labels(adj: np.ndarray) -> np.ndarray:
    """For a symmetric boolean adjacency with a true diagonal, label every
    node with the smallest node index in its connected component."""
    k = adj.shape[0]
    comp = np.arange(k)
    sentinel = k
    while True:
        new = np.where(adj, comp[None, :], sentinel).min(axis=1)
        new = new[new]  # pointer jumping; new[i] <= i so this only shortens chains
        if np.array_equal(new, comp):
            return comp
        comp = new


def dbscan_from_similarity(S: np.ndarray, tau: float, min_pts: int) -> ClusterLabels:
    n = S.shape[0]
    adj = S >= tau
    np.fill_diagonal(adj, True)
    core = adj.sum(axis=1) >= min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return ClusterLabels(labels, 0)
    roots = _connected_min_labels(adj[np.ix_(core_idx, core_idx)])
    # roots are positions in core_idx; ascending root == discovery order
    uniq, cluster_of_core = np.unique(roots, return_inverse=True)
    labels[core_idx] = cluster_of_core
    border = ~core
    if border.any():
        reach = adj[np.ix_(border, core_idx)]
        cand = np.where(reach, cluster_of_core[None, :], uniq.size).min(axis=1)
        b_labels = np.where(cand < uniq.size, cand, NOISE)
        labels[border] = b_labels
    return ClusterLabels(labels, int(uniq.size))


def dbscan(points, tau: float, min_pts: int) -> ClusterLabels:
    X = check_embeddings(points)
    if not 0 < tau < 1:
        raise ContractError(f"tau must lie in (0, 1), got {tau}")
    if min_pts < 1:
        raise ContractError(f"min_pts must be >= 1, got {min_pts}")
    return dbscan_from_similarity(similarity_matrix(X), tau, min_pts)


def cluster_sizes(labels: ClusterLabels) -> np.ndarray:
    lab = labels.labels
    return np.bincount(lab[lab >= 0], minlength=labels.n_clusters)


def largest_cluster(labels: ClusterLabels) -> Tuple[Optional[int], np.ndarray, float]:
    lab = np.asarray(labels.labels)
    n = lab.size
    if labels.n_clusters == 0 or n == 0:
        return None, np.empty(0, dtype=np.int64), 0.0
    sizes = cluster_sizes(labels)
    cid = int(np.argmax(sizes))  # argmax returns the first maximum: smallest id on ties
    members = np.flatnonzero(lab == cid)
    return cid, members, members.size / n


def tau_grid(config: CleanConfig) -> np.ndarray:
    """Candidate thresholds from sim_hi down to sim_lo in tau_step decrements."""
    steps = int(np.floor((config.sim_hi - config.sim_lo) / config.tau_step + 1e-9))
    return np.round(config.sim_hi - config.tau_step * np.arange(steps + 1), 10)


def calibrate_from_similarity(S: np.ndarray, config: CleanConfig) -> CalibrationResult:
    mid = (config.band_lo + config.band_hi) / 2
    # an identity smaller than min_pts can still be one cluster if its points agree
    min_pts = min(config.min_pts, S.shape[0])
    best = None
    for tau in tau_grid(config):
        labels = dbscan_from_similarity(S, float(tau), min_pts)
        _, _, fraction = largest_cluster(labels)
        if config.band_lo <= fraction <= config.band_hi:
            return CalibrationResult(float(tau), fraction, True, labels)
        gap = abs(fraction - mid)
        # strict comparison keeps the earlier (larger) tau on ties
        if best is None or gap < best[0]:
            best = (gap, float(tau), fraction, labels)
    _, tau, fraction, labels = best
    return CalibrationResult(tau, fraction, False, labels)


def calibrate_tau(points, config: CleanConfig = _DEFAULTS) -> CalibrationResult:
    """Pick the largest grid threshold whose largest cluster lands in the
    retention band; report the closest-to-band threshold if none does."""
    X = check_embeddings(points)
    return calibrate_from_similarity(similarity_matrix(X), config)


def _order_free_sum(values: np.ndarray, axis=0) -> np.ndarray:
    # summing sorted values makes the result independent of row order
    return np.sort(values, axis=axis).sum(axis=axis)


def dispersion(points) -> float:
    """Mean of (1 - cosine similarity to the normalized centroid)."""
    X = check_embeddings(points)
    if np.all(X == X[0]):
        return 0.0
    centroid = _order_free_sum(X, axis=0)
    norm = np.linalg.norm(centroid)
    if norm <= 1e-12 * X.shape[0]:
        raise DegenerateInputError("centroid is the zero vector; dispersion undefined")
    # per-row sums of sorted products: exact regardless of row position
    sims = _order_free_sum(X * (centroid / norm)[None, :], axis=1)
    return max(0.0, float(_order_free_sum(1.0 - sims) / X.shape[0]))


class CosineDBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN on unit vectors with a cosine-similarity neighbourhood threshold.

    Parameters
    ----------
    tau : float
        Similarity threshold; neighbours satisfy ``x . y >= tau``.
    min_pts : int
        Neighbours (self included) required for a core point.
    """

    def __init__(self, tau=0.5, min_pts=_DEFAULTS.min_pts):
        self.tau = tau
        self.min_pts = min_pts

    def fit(self, X, y=None):
        if not 0 < self.tau < 1:
            raise ContractError(f"tau must lie in (0, 1), got {self.tau}")
        S = similarity_matrix(check_embeddings(X))
        result = dbscan_from_similarity(S, self.tau, self.min_pts)
        adj = S >= self.tau
        np.fill_diagonal(adj, True)
        self.labels_ = result.labels
        self.n_clusters_ = result.n_clusters
        self.core_sample_indices_ = np.flatnonzero(adj.sum(axis=1) >= self.min_pts)
        return self


class CalibratedCosineDBSCAN(ClusterMixin, BaseEstimator):
    """Cosine DBSCAN whose threshold is searched so the largest cluster holds
    a fraction of points inside ``[band_lo, band_hi]``."""

    def __init__(
        self,
        sim_lo=_DEFAULTS.sim_lo,
        sim_hi=_DEFAULTS.sim_hi,
        band_lo=_DEFAULTS.band_lo,
        band_hi=_DEFAULTS.band_hi,
        tau_step=_DEFAULTS.tau_step,
        min_pts=_DEFAULTS.min_pts,
    ):
        self.sim_lo = sim_lo
        self.sim_hi = sim_hi
        self.band_lo = band_lo
        self.band_hi = band_hi
        self.tau_step = tau_step
        self.min_pts = min_pts

    def _config(self) -> CleanConfig:
        return CleanConfig(
            sim_lo=self.sim_lo,
            sim_hi=self.sim_hi,
            band_lo=self.band_lo,
            band_hi=self.band_hi,
            tau_step=self.tau_step,
            min_pts=self.min_pts,
        )

    def fit(self, X, y=None):
        config = self._config()
        problems = config.validate()
        if problems:
            raise ContractError("invalid parameters: " + ", ".join(problems))
        result = calibrate_tau(X, config)
        self.tau_ = result.tau
        self.fraction_ = result.fraction
        self.feasible_ = result.feasible
        self.labels_ = result.labels.labels
        self.n_clusters_ = result.labels.n_clusters
        return self

    def largest_cluster_mask(self):
        check_is_fitted(self, "labels_")
        cid, members, _ = largest_cluster(ClusterLabels(self.labels_, self.n_clusters_))
        mask = np.zeros(self.labels_.size, dtype=bool)
        mask[members] = True
        return mask


__all__ = [
    "NOISE",
    "CalibratedCosineDBSCAN",
    "CalibrationResult",
    "ClusterLabels",
    "CosineDBSCAN",
    "calibrate_from_similarity",
    "calibrate_tau",
    "cluster_sizes",
    "cosine_distance",
    "dbscan",
    "dbscan_from_similarity",
    "dispersion",
    "largest_cluster",
    "similarity_matrix",
    "tau_grid",
]
