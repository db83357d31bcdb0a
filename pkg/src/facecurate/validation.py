"""Input validation helpers shared by the estimators and free functions."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ContractError, DegenerateInputError

#: tolerance on ||x|| - 1 for rows treated as unit vectors
UNIT_NORM_TOL = 1e-6


def normalize_rows(X, *, copy: bool = True) -> np.ndarray:
    """L2-normalize each row, keeping the floating dtype of ``X``.

    Norms are accumulated in float64 regardless of the input dtype. Zero rows
    cannot be normalized and raise :class:`DegenerateInputError`.
    """
    X = np.array(X, copy=copy) if copy else np.asarray(X)
    if X.dtype.kind != "f":
        X = X.astype(np.float64)
    if X.ndim != 2:
        raise ContractError(f"expected a 2-d matrix, got shape {X.shape}")
    if X.shape[0] == 0:
        return X
    norms = np.sqrt(np.einsum("ij,ij->i", X, X, dtype=np.float64))
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        bad = np.flatnonzero((norms == 0) | ~np.isfinite(norms))
        raise DegenerateInputError(f"cannot normalize rows {bad[:10].tolist()} (zero or non-finite)")
    X /= norms[:, None].astype(X.dtype)
    return X


def check_embeddings(X, *, min_samples: int = 1, unit: bool = True) -> np.ndarray:
    """Validate an embedding matrix and return it as float64.

    With ``unit=True`` every row must already be L2-normalized.
    """
    try:
        X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    except ValueError as exc:
        raise ContractError(str(exc)) from exc
    if unit and X.shape[0]:
        norms = np.linalg.norm(X, axis=1)
        off = np.abs(norms - 1.0) > UNIT_NORM_TOL
        if np.any(off):
            raise ContractError(
                f"rows {np.flatnonzero(off)[:10].tolist()} are not unit-norm "
                f"(max deviation {np.abs(norms - 1.0).max():.2e})"
            )
    return X


def check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ContractError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
