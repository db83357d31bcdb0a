import json

import numpy as np
import pytest

from facecurate.embed_io import read_embeddings
from facecurate.errors import ConfigError
from facecurate.synth import (
    GROUND_TRUTH_NAME,
    Contamination,
    angular_samples,
    make_corpus,
    parse_contamination,
    write_corpus,
)


def test_parse_contamination():
    assert parse_contamination("") == ()
    assert parse_contamination("30%@noise") == (Contamination(0.3, "noise"),)
    assert parse_contamination("20%@noise, 12.5%@cross") == (Contamination(0.2, "noise"), Contamination(0.125, "cross"))
    for bad in ("30@noise", "30%@junk", "130%@noise", "%@noise"):
        with pytest.raises(ConfigError):
            parse_contamination(bad)


def test_contamination_count():
    assert Contamination(0.3, "noise").count(50) == 15
    assert Contamination(0.25, "noise").count(10) == 3  # half rounds up
    assert Contamination(1.0, "noise").count(50) == 50


def test_angular_samples_angle(rng):
    c = np.zeros(64)
    c[0] = 1.0
    X = angular_samples(rng, c, 4000, 0.2)
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0)
    theta = np.arccos(np.clip(X @ c, -1, 1))
    # mean of a half-normal is sigma * sqrt(2 / pi)
    assert theta.mean() == pytest.approx(0.2 * np.sqrt(2 / np.pi), rel=0.05)


def test_zero_noise_shares_embedding():
    corpus = make_corpus(3, 10, 16, 0.0, seed=1)
    for ident in corpus.identity_ids:
        rows = corpus.rows(ident)
        assert np.all(rows == rows[0])


def test_noise_contamination_recorded():
    corpus = make_corpus(4, 50, 32, 0.05, parse_contamination("20%@noise"), seed=2)
    for ident in corpus.identity_ids:
        truth = corpus.ground_truth[ident]
        assert len(truth["planted"]["noise"]) == 10 == len(truth["outliers"])
        rows = corpus.rows(ident)
        inl = np.setdiff1d(np.arange(50), truth["outliers"])
        c = corpus.centroids[corpus.identity_ids.index(ident)]
        assert np.all(rows[inl] @ c > 0.9)
        assert np.all(np.abs(rows[truth["outliers"]] @ c) < 0.8)


def test_cross_contamination_points_at_other_identity():
    corpus = make_corpus(5, 20, 64, 0.02, parse_contamination("10%@cross"), seed=3)
    sims = corpus.embeddings @ corpus.centroids.T
    for i, ident in enumerate(corpus.identity_ids):
        for j in corpus.ground_truth[ident]["planted"]["cross"]:
            best = int(np.argmax(sims[i * 20 + j]))
            assert best != i


def test_bad_parameters():
    with pytest.raises(ConfigError):
        make_corpus(2, 10, 8, 0.1, parse_contamination("60%@noise,50%@cross"))
    with pytest.raises(ConfigError):
        make_corpus(1, 10, 8, 0.1, parse_contamination("10%@cross"))
    with pytest.raises(ConfigError):
        make_corpus(1, 0, 8, 0.1)


def test_write_corpus_is_deterministic(tmp_path):
    trees = []
    for name in ("a", "b"):
        root = write_corpus(make_corpus(3, 5, 8, 0.1, parse_contamination("20%@noise"), seed=9, start_id=7),
                            tmp_path / name, params={"seed": 9})
        trees.append({p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    assert trees[0] == trees[1]
    assert "000007/img_000.png" in trees[0] and "000009/img_004.png" in trees[0]
    E, index = read_embeddings(tmp_path / "a" / "embeddings.emb")
    assert E.shape == (15, 8) and index["000008/img_002.png"] == 7
    truth = json.loads((tmp_path / "a" / GROUND_TRUTH_NAME).read_text())
    assert truth["params"] == {"seed": 9} and set(truth["identities"]) == {"000007", "000008", "000009"}
