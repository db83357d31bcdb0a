"""Curation pipeline for identity-labelled face datasets."""

__version__ = "0.1.0"

from .cleaner import IdentityCleaner, clean_corpus, clean_embeddings, clean_identity
from .cluster import CalibratedCosineDBSCAN, CosineDBSCAN, calibrate_tau, dbscan, dispersion
from .errors import (
    ContractError,
    FacecurateError,
    FormatError,
    InputError,
    ParseError,
    ScreeningFailure,
)
from .leakscreen import LeakScreen, screen_identity
from .types import (
    AugmentConfig,
    CleanConfig,
    CleanReport,
    DatasetConfig,
    DatasetManifest,
    GeneratorConfig,
    GridSpec,
    IdentityRecord,
    LeakConfig,
    ManifestEntry,
    Tier,
)

__all__ = [
    "AugmentConfig",
    "CalibratedCosineDBSCAN",
    "CleanConfig",
    "CleanReport",
    "ContractError",
    "CosineDBSCAN",
    "DatasetConfig",
    "DatasetManifest",
    "FacecurateError",
    "FormatError",
    "GeneratorConfig",
    "GridSpec",
    "IdentityCleaner",
    "IdentityRecord",
    "InputError",
    "LeakConfig",
    "LeakScreen",
    "ManifestEntry",
    "ParseError",
    "ScreeningFailure",
    "Tier",
    "calibrate_tau",
    "clean_corpus",
    "clean_embeddings",
    "clean_identity",
    "dbscan",
    "dispersion",
    "screen_identity",
]
