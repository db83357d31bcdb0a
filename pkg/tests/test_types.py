import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facecurate.errors import ConfigError, ContractError, DegenerateInputError, ValidationError
from facecurate.types import (
    AugmentConfig,
    CleanConfig,
    CleanReport,
    DatasetManifest,
    IdentityRecord,
    ManifestEntry,
    Reason,
    Tier,
    Verdict,
    config_from_mapping,
    is_identity_id,
    validate_config,
)
from facecurate.validation import check_embeddings, normalize_rows


def test_default_config_is_valid():
    assert validate_config(CleanConfig()) == []
    assert AugmentConfig().validate() == []


def test_default_parameters():
    c = CleanConfig()
    assert (c.sim_lo, c.sim_hi, c.band_lo, c.band_hi) == (0.3, 0.9, 0.5, 0.8)
    assert (c.min_keep_fraction, c.min_keep_count, c.min_pts, c.tau_step) == (0.2, 10, 3, 0.05)
    a = AugmentConfig()
    assert (a.p_hflip, a.p_jitter, a.p_gray, a.p_affine, a.p_rot) == (0.5, 0.8, 0.2, 0.5, 0.5)
    assert (a.max_rot, a.max_translate, a.scale, a.max_shear, a.max_inplane_rot) == (10.0, 0.05, (0.95, 1.05), 5.0, 5.0)
    assert (a.blur_kernel, a.blur_sigma, a.lowres_factor, a.target_count) == (3, (0.1, 2.0), 0.5, 50)


def test_inverted_bounds():
    assert "sim_lo < sim_hi" in validate_config(CleanConfig(sim_lo=0.9, sim_hi=0.3))


def test_band_out_of_range():
    assert validate_config(CleanConfig(band_hi=1.2)) == ["band_hi ≤ 1"]


def test_several_violations_reported_together():
    v = validate_config(CleanConfig(min_keep_count=0, min_pts=0, sim_lo=0.0))
    assert {"0 < sim_lo", "min_keep_count ≥ 1", "min_pts ≥ 1"} <= set(v)


def test_augment_config_violations():
    v = AugmentConfig(p_gray=1.5, blur_kernel=4, target_count=40, scale=(1.1, 0.9)).validate()
    assert {"p_gray in [0, 1]", "blur_kernel odd and ≥ 1", "target_count = 50", "scale range ordered"} <= set(v)


def test_configs_are_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        CleanConfig().sim_lo = 0.1


def test_config_from_mapping():
    c = config_from_mapping(AugmentConfig, {"p_hflip": 0.25, "scale": [0.9, 1.1]})
    assert c.p_hflip == 0.25 and c.scale == (0.9, 1.1)
    assert config_from_mapping(CleanConfig, None) == CleanConfig()
    with pytest.raises(ConfigError):
        config_from_mapping(CleanConfig, {"sim_low": 0.2})


@pytest.mark.parametrize("name, ok", [("000029", True), ("12345", False), ("abcdef", False),
                                      ("1234567", False), ("٠١٢٣٤٥", False)])
def test_identity_id(name, ok):
    assert is_identity_id(name) is ok


def test_identity_record_lengths():
    with pytest.raises(ValidationError):
        IdentityRecord("000001", Tier.CLEANED, ("000001/a.png",), (0, 1))


def _report(**kw):
    base = dict(identity_id="000001", images=("a", "b", "c"), tau_chosen=0.5, calibration_feasible=True,
                fraction=2 / 3, labels=(0, 0, -1), kept=(0, 1), removed=(2,), cluster_flagged=(2,),
                llm_consulted=False, llm_flagged=(), verdict=Verdict.KEPT, reason=Reason.OK)
    base.update(kw)
    return CleanReport(**base)


def test_clean_report_round_trip():
    r = _report()
    assert CleanReport.from_dict(r.to_dict()) == r
    assert r.kept_images == ("a", "b") and r.removed_images == ("c",)


def test_clean_report_partition_invariant():
    with pytest.raises(ValidationError):
        _report(kept=(0, 1), removed=(1, 2))
    with pytest.raises(ValidationError):
        _report(kept=(0,), removed=(2,))


def test_clean_report_verdict_reason_invariant():
    with pytest.raises(ValidationError):
        _report(verdict=Verdict.DISCARDED, reason=Reason.OK)
    with pytest.raises(ValidationError):
        _report(verdict=Verdict.KEPT, reason=Reason.BELOW_COUNT)


def _entry(ident, tier, n=50, difficulty=0.0):
    return ManifestEntry(ident, tier, difficulty, tuple(f"{ident}/{k:03d}.png" for k in range(n)))


def test_manifest_invariants():
    ok = DatasetManifest((_entry("000001", Tier.SYNTHETIC), _entry("000002", Tier.CLEANED)))
    assert ok.violations() == []
    bad_order = DatasetManifest((_entry("000002", Tier.CLEANED), _entry("000001", Tier.SYNTHETIC)))
    assert any("after a cleaned" in v for v in bad_order.violations())
    short = DatasetManifest((_entry("000001", Tier.CLEANED, n=49),))
    assert any("49 image paths" in v for v in short.violations())
    neg = DatasetManifest((_entry("000001", Tier.CLEANED, difficulty=-0.1),))
    with pytest.raises(ValidationError):
        neg.validate()


# -- validation helpers ---------------------------------------------------------

def test_normalize_rows_unit_norm():
    X = np.random.default_rng(0).normal(size=(20, 7)) * 5
    Y = normalize_rows(X)
    assert np.allclose(np.linalg.norm(Y, axis=1), 1.0, atol=1e-12)
    assert not np.shares_memory(X, Y)


def test_normalize_rows_zero_row():
    with pytest.raises(DegenerateInputError):
        normalize_rows(np.zeros((2, 3)))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 16)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)).filter(
    lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)))
def test_normalization_idempotent(X):
    once = normalize_rows(X)
    twice = normalize_rows(once)
    assert np.max(np.abs(once - twice)) <= 1e-9
    assert np.all(np.abs(np.linalg.norm(once, axis=1) - 1) <= 1e-6)


def test_check_embeddings():
    X = normalize_rows(np.random.default_rng(1).normal(size=(4, 3)))
    out = check_embeddings(X.astype(np.float32))
    assert out.dtype == np.float64
    with pytest.raises(ContractError):
        check_embeddings(X * 2)
    with pytest.raises(ContractError):
        check_embeddings(np.zeros((0, 3)))
    with pytest.raises(ContractError):
        check_embeddings([[np.nan, 0, 1]])
