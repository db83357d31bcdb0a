import json
import subprocess
import sys

import numpy as np
import pytest

from facecurate.cli import main, read_reports
from facecurate.embed_io import read_jsonl, read_manifest
from facecurate.errors import FormatError, InputError
from helpers import at_similarity, unit_rows, write_gallery, write_planted_corpus


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def summary(text):
    return dict(line.split(": ", 1) for line in text.strip().splitlines())


@pytest.fixture
def corpus(tmp_path):
    root = tmp_path / "real"
    write_planted_corpus(root, 6, bad=(1, 4), dim=128, contaminate="10%@noise")
    return root


def test_clean_counts_discards(capsys, corpus, tmp_path):
    code, out, _ = run(capsys, "clean", corpus, "--out", tmp_path / "r.json", "--threads", 1)
    s = summary(out)
    assert code == 0 and s["identities"] == "6" and s["discarded"] == "2" and s["kept"] == "4"
    reports = read_reports(tmp_path / "r.json")
    assert sorted(r.identity_id for r in reports if r.verdict.value == "discarded") == ["000001", "000004"]


def test_clean_planted_clean_corpus(capsys, tmp_path):
    write_planted_corpus(tmp_path / "c", 4, dim=32)
    code, out, _ = run(capsys, "clean", tmp_path / "c", "--out", tmp_path / "r.json")
    assert code == 0 and summary(out)["discarded"] == "0"


def test_clean_malformed_embeddings(capsys, corpus, tmp_path):
    (corpus / "embeddings.emb").write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    code, _, err = run(capsys, "clean", corpus, "--out", tmp_path / "r.json")
    assert code == 1 and "error:" in err


def test_clean_missing_root(capsys, tmp_path):
    code, _, err = run(capsys, "clean", tmp_path / "nowhere", "--out", tmp_path / "r.json")
    assert code == 1 and err


def test_bad_config_is_input_error(capsys, corpus, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("clean: {min_pts: 0}\n")
    code, _, err = run(capsys, "clean", corpus, "--config", cfg, "--out", tmp_path / "r.json")
    assert code == 1 and "min_pts" in err


def test_threads_must_be_positive(capsys, corpus, tmp_path):
    assert run(capsys, "clean", corpus, "--out", tmp_path / "r.json", "--threads", 0)[0] == 1


def test_read_reports_errors(tmp_path):
    with pytest.raises(InputError):
        read_reports(tmp_path / "absent.json")
    (tmp_path / "r.json").write_text('{"version": 9}')
    with pytest.raises(FormatError):
        read_reports(tmp_path / "r.json")


def test_clean_with_mock_llm_and_transcripts(capsys, tmp_path):
    root = tmp_path / "c"
    write_planted_corpus(root, 4, dim=128, seed=3, split=(0, 2))
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"default": ["001,002"]}))
    code, out, _ = run(capsys, "clean", root, "--llm", "mock", "--llm-script", script,
                       "--transcripts", tmp_path / "t.jsonl", "--out", tmp_path / "r.json")
    assert code == 0
    consulted = int(summary(out)["llm consulted"])
    # split identities are ambiguous, tight ones never reach the band: all consult
    assert consulted == 4
    assert len(read_jsonl(tmp_path / "t.jsonl")) == consulted
    # replaying the transcripts reproduces the reports exactly
    code, _, _ = run(capsys, "clean", root, "--llm", "replay", "--llm-replay", tmp_path / "t.jsonl",
                     "--out", tmp_path / "r2.json")
    assert code == 0 and (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_augment_replenishes_and_is_deterministic(capsys, corpus, tmp_path):
    run(capsys, "clean", corpus, "--out", tmp_path / "r.json")
    code, out, _ = run(capsys, "augment", corpus, tmp_path / "r.json", "--out", tmp_path / "a1", "--seed", 5)
    assert code == 0 and int(summary(out)["generated"]) > 0
    run(capsys, "augment", corpus, tmp_path / "r.json", "--out", tmp_path / "a2", "--seed", 5,
        "--ledger", tmp_path / "ledger2.jsonl")
    assert (tmp_path / "augment_ledger.jsonl").read_bytes() == (tmp_path / "ledger2.jsonl").read_bytes()
    for rep in read_reports(tmp_path / "r.json"):
        if rep.verdict.value == "kept":
            assert len(list((tmp_path / "a1" / rep.identity_id).glob("*.png"))) == 50


def test_augment_noop_on_full_identities(capsys, tmp_path):
    root = tmp_path / "c"
    write_planted_corpus(root, 3, dim=32, noise=0.0)
    run(capsys, "clean", root, "--out", tmp_path / "r.json")
    code, out, _ = run(capsys, "augment", root, tmp_path / "r.json")
    assert code == 0 and summary(out)["generated"] == "0"


def test_generate(capsys, tmp_path):
    code, out, _ = run(capsys, "generate", "--count", 5, "--out", tmp_path / "g", "--threads", 2)
    assert code == 0 and summary(out)["generated"] == "5"
    dirs = sorted(p for p in (tmp_path / "g").iterdir() if p.is_dir())
    assert len(dirs) == 5 and all(len(list(d.glob("*.png"))) == 50 for d in dirs)
    assert len(read_jsonl(tmp_path / "g" / "generation_log.jsonl")) == 5


def test_generate_zero_and_rejecting(capsys, tmp_path):
    code, out, _ = run(capsys, "generate", "--count", 0, "--out", tmp_path / "z")
    assert code == 0 and summary(out)["generated"] == "0"
    code, out, _ = run(capsys, "generate", "--count", 2, "--detector", "mock-none", "--out", tmp_path / "n")
    s = summary(out)
    assert code == 0 and s["generated"] == "0" and s["skipped"] == "2"


def test_generate_excludes_ids(capsys, corpus, tmp_path):
    run(capsys, "generate", "--count", 2, "--exclude-ids-from", corpus, "--out", tmp_path / "g")
    names = sorted(p.name for p in (tmp_path / "g").iterdir() if p.is_dir())
    assert names == ["000006", "000007"]


def _screen_setup(tmp_path, leak):
    root = tmp_path / "synth"
    corpus = write_planted_corpus(root, 5, dim=512, start_id=100)
    rng = np.random.default_rng(11)
    G = unit_rows(rng, 50, 512)
    if leak:
        G[12] = at_similarity(rng, corpus.embeddings[2 * 50 + 7].astype(np.float64) /
                              np.linalg.norm(corpus.embeddings[2 * 50 + 7]), 0.95)
    return root, write_gallery(tmp_path / "gallery.emb", G, [f"person_{k}" for k in range(50)])


def test_screen_disjoint(capsys, tmp_path):
    root, gallery = _screen_setup(tmp_path, leak=False)
    code, out, _ = run(capsys, "screen", root, gallery)
    assert code == 0 and summary(out)["failed"] == "0"
    assert json.loads((root / "screen_verdicts.json").read_text())["summary"]["screened"] == 5


def test_screen_planted_leak(capsys, tmp_path):
    root, gallery = _screen_setup(tmp_path, leak=True)
    code, _, err = run(capsys, "screen", root, gallery, "--tau", 0.7)
    assert code == 3 and "000102" in err
    verdicts = json.loads((root / "screen_verdicts.json").read_text())["verdicts"]
    assert [v["matched_gallery_label"] for v in verdicts if not v["passed"]] == ["person_12"]


def test_screen_empty(capsys, tmp_path):
    (tmp_path / "empty").mkdir()
    gallery = write_gallery(tmp_path / "gallery.emb", unit_rows(np.random.default_rng(0), 3, 8), "abc")
    assert run(capsys, "screen", tmp_path / "empty", gallery)[0] == 0


def test_order_without_discards(capsys, tmp_path):
    root = tmp_path / "c"
    write_planted_corpus(root, 4, dim=32)
    run(capsys, "clean", root, "--out", tmp_path / "r.json")
    code, out, _ = run(capsys, "order", root, tmp_path / "r.json", "--out", tmp_path / "m.json")
    assert code == 0 and summary(out) == {"synthetic": "0", "cleaned": "4", "identities": "4"}
    m = read_manifest(tmp_path / "m.json")
    assert m.entries[0].image_paths[0].startswith("c/")


def test_order_with_discards(capsys, corpus, tmp_path):
    run(capsys, "clean", corpus, "--out", tmp_path / "r.json")
    run(capsys, "augment", corpus, tmp_path / "r.json")
    pool = tmp_path / "pool"
    write_planted_corpus(pool, 5, dim=32, noise=0.01, start_id=500, seed=8)
    assert run(capsys, "order", corpus, tmp_path / "r.json", "--out", tmp_path / "m.json")[0] == 1
    outs = []
    for k in range(2):
        code, out, _ = run(capsys, "order", corpus, tmp_path / "r.json", "--pool", pool, "--seed", 4,
                           "--out", tmp_path / f"m{k}.json")
        assert code == 0
        outs.append((tmp_path / f"m{k}.json").read_bytes())
    assert outs[0] == outs[1]
    assert summary(out) == {"synthetic": "2", "cleaned": "4", "identities": "6"}
    tiers = [e.tier.value for e in read_manifest(tmp_path / "m0.json").entries]
    assert tiers == ["synthetic"] * 2 + ["cleaned"] * 4


def test_order_before_augment_fails(capsys, corpus, tmp_path):
    run(capsys, "clean", corpus, "--out", tmp_path / "r.json")
    pool = tmp_path / "pool"
    write_planted_corpus(pool, 3, dim=32, start_id=500)
    code, _, err = run(capsys, "order", corpus, tmp_path / "r.json", "--pool", pool, "--out", tmp_path / "m.json")
    assert code == 1 and "augment" in err


def test_synth_corpus(capsys, tmp_path):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "synth-corpus", "--identities", 3, "--images-per", 10, "--dim", 8,
                           "--contaminate", "20%@noise", "--seed", 2, "--out", tmp_path / name)
        assert code == 0 and summary(out) == {"identities": "3", "images": "30"}
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    truth = json.loads((tmp_path / "a" / "ground_truth.json").read_text())
    assert all(len(v["outliers"]) == 2 for v in truth["identities"].values())


def test_synth_corpus_bad_spec(capsys, tmp_path):
    code, _, _ = run(capsys, "synth-corpus", "--identities", 1, "--contaminate", "lots", "--out", tmp_path / "x")
    assert code == 1


def test_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "facecurate.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "facecurate" in proc.stdout
