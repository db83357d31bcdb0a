"""``facecurate`` command line.

Exit codes: 0 success, 1 input/IO error, 2 contract violation, 3 screening
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .augment import augment_corpus, final_image_list
from .cleaner import clean_corpus
from .config import PipelineConfig, load_config, make_generation_clients, make_llm_client
from .curriculum import build_manifest, replenished_rows, score_difficulty, select_replacements
from .embed_io import (
    IMAGE_SUFFIXES,
    read_embeddings,
    scan_dataset,
    write_canonical,
    write_jsonl,
    write_manifest,
)
from .errors import ContractError, FacecurateError, FormatError, InputError, ScreeningFailure
from .generator import generate_identities, load_attribute_lists, load_base_descriptions
from .leakscreen import load_gallery, screen_corpus
from .llm import TranscriptLog
from .synth import EMBEDDINGS_NAME, make_corpus, parse_contamination, write_corpus
from .types import CleanReport, IdentityRecord, Tier, Verdict

logger = logging.getLogger("facecurate")

REPORTS_VERSION = 1


def _default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _load(args) -> PipelineConfig:
    return load_config(args.config)


def _embeddings_path(root, given) -> Path:
    return Path(given) if given else Path(root) / EMBEDDINGS_NAME


def read_reports(path) -> List[CleanReport]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read reports {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("version") != REPORTS_VERSION:
        raise FormatError(f"{path}: not a cleaning report file")
    try:
        return [CleanReport.from_dict(r) for r in data["reports"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed report: {exc}") from exc


# -- commands ------------------------------------------------------------------

def cmd_clean(args) -> int:
    cfg = _load(args)
    llm_spec = dict(cfg.adapters.get("llm") or {})
    if args.llm:
        llm_spec["kind"] = args.llm
    if args.llm_script:
        llm_spec["script"] = args.llm_script
    if args.llm_replay:
        llm_spec["transcript"] = args.llm_replay
    llm = make_llm_client(llm_spec)

    matrix, index = read_embeddings(_embeddings_path(args.root, args.embeddings))
    records, _ = scan_dataset(args.root, index=index, config=cfg.dataset)
    log = None
    if llm is not None and args.transcripts:
        Path(args.transcripts).write_text("", encoding="utf-8")
        log = TranscriptLog(args.transcripts)
    reports, summary = clean_corpus(records, matrix, cfg.clean, llm, n_jobs=args.threads,
                                    on_transcript=log.append if log else None, grid=cfg.grid)
    out = Path(args.out)
    write_canonical({"version": REPORTS_VERSION, "reports": [r.to_dict() for r in reports],
                     "summary": summary.to_dict()}, out)
    mean_tau = "n/a" if summary.mean_tau is None else f"{summary.mean_tau:.4f}"
    print(f"identities: {summary.identities}")
    print(f"kept: {summary.kept}")
    print(f"discarded: {summary.discarded}")
    print(f"images removed: {summary.images_removed}")
    print(f"mean tau: {mean_tau}")
    print(f"llm consulted: {summary.llm_consulted}")
    if summary.errors:
        for e in summary.errors:
            print(f"error: identity {e['identity_id']}: {e['error']}", file=sys.stderr)
        return ContractError.exit_code
    return 0


def _count_images(directory: Path) -> int:
    return sum(1 for p in directory.iterdir() if p.is_file() and p.name.lower().endswith(IMAGE_SUFFIXES))


def cmd_augment(args) -> int:
    cfg = _load(args)
    reports = read_reports(args.reports)
    ledger, summary = augment_corpus(args.root, reports, cfg.augment, args.seed,
                                     out_root=args.out, n_jobs=args.threads)
    ledger_path = Path(args.ledger) if args.ledger else Path(args.reports).with_name("augment_ledger.jsonl")
    write_jsonl(ledger, ledger_path)
    target = Path(args.out) if args.out else Path(args.root)
    short = [r.identity_id for r in reports if r.verdict is Verdict.KEPT
             and _count_images(target / r.identity_id) != cfg.augment.target_count]
    print(f"identities: {summary.identities}")
    print(f"generated: {summary.generated}")
    print(f"quarantined: {summary.quarantined}")
    if short:
        raise ContractError(f"identities without exactly {cfg.augment.target_count} images: {short[:20]}")
    return 0


def _existing_ids(root) -> List[str]:
    if not root:
        return []
    records, _ = scan_dataset(root)
    return [r.identity_id for r in records]


def cmd_generate(args) -> int:
    cfg = _load(args)
    adapters = {k: dict(v or {}) for k, v in cfg.adapters.items()}
    for key, flag in (("generator", args.generator), ("detector", args.detector), ("expander", args.expander)):
        if flag:
            adapters.setdefault(key, {})["kind"] = flag
    clients = make_generation_clients(adapters, cfg.generator)
    exclude = []
    for root in args.exclude_ids_from or ():
        exclude.extend(_existing_ids(root))
    out = Path(args.out)
    log, summary = generate_identities(
        args.count, out, clients, seed=args.seed, config=cfg.generator,
        bases=load_base_descriptions(cfg.base_descriptions),
        attribute_lists=load_attribute_lists(cfg.attributes_dir),
        existing_ids=exclude, n_jobs=args.threads,
    )
    write_jsonl(log, Path(args.log) if args.log else out / "generation_log.jsonl")
    print(f"requested: {summary.requested}")
    print(f"generated: {summary.written}")
    print(f"skipped: {summary.skipped}")
    return 0


def cmd_screen(args) -> int:
    cfg = _load(args)
    tau = cfg.leak.tau_leak if args.tau is None else args.tau
    if not 0 < tau <= 1:
        raise ContractError(f"tau_leak must be in (0, 1], got {tau}")
    gallery = load_gallery(args.gallery)
    emb_path = _embeddings_path(args.root, args.embeddings)
    if emb_path.is_file():
        matrix, index = read_embeddings(emb_path)
        records, _ = scan_dataset(args.root, index=index, tier=Tier.SYNTHETIC, config=cfg.dataset)
    else:
        records, _ = scan_dataset(args.root, tier=Tier.SYNTHETIC, config=cfg.dataset)
        if records:
            raise InputError(f"embeddings not found: {emb_path}")
        matrix = np.zeros((0, gallery.embeddings.shape[1]), dtype=np.float32)
    verdicts, summary = screen_corpus(records, matrix, gallery, tau)
    out = Path(args.out) if args.out else Path(args.root) / "screen_verdicts.json"
    write_canonical({"version": 1, "tau_leak": tau, "verdicts": [v.to_dict() for v in verdicts],
                     "summary": summary.to_dict()}, out)
    print(f"screened: {summary.screened}")
    print(f"failed: {len(summary.failed)}")
    if summary.errors:
        for e in summary.errors:
            print(f"error: identity {e['identity_id']}: {e['error']}", file=sys.stderr)
        return ContractError.exit_code
    if summary.failed:
        raise ScreeningFailure("leaked identities: " + ", ".join(summary.failed))
    return 0


def _posix_relpath(path: Path, start: Path) -> str:
    return Path(os.path.relpath(path, start)).as_posix()


def cmd_order(args) -> int:
    cfg = _load(args)
    target = cfg.dataset.images_per_identity
    if cfg.augment.target_count != target:
        raise ContractError("augment.target_count must equal dataset.images_per_identity")
    root = Path(args.root)
    reports = read_reports(args.reports)
    matrix, index = read_embeddings(_embeddings_path(root, args.embeddings))

    cleaned, scores = [], {}
    for rep in sorted(reports, key=lambda r: r.identity_id):
        if rep.verdict is not Verdict.KEPT:
            continue
        try:
            kept_rows = [index[name] for name in rep.kept_images]
        except KeyError as exc:
            raise ContractError(f"image {exc.args[0]} has no embedding row") from None
        images = final_image_list(rep, cfg.augment)
        missing = [im for im in images if not (root / im).is_file()]
        if missing:
            raise InputError(f"identity {rep.identity_id}: missing images {missing[:5]} (run augment first)")
        rec = IdentityRecord(rep.identity_id, Tier.CLEANED, images,
                             tuple(replenished_rows(kept_rows, target)), root)
        cleaned.append(rec)
        scores[rec.identity_id] = score_difficulty(rec, matrix)

    discarded = sorted(r.identity_id for r in reports if r.verdict is Verdict.DISCARDED)
    synthetic = []
    pool_matrix = None
    if discarded:
        if not args.pool:
            raise InputError(f"{len(discarded)} identities discarded but no synthetic pool given (--pool)")
        pool_root = Path(args.pool)
        pool_matrix, pool_index = read_embeddings(_embeddings_path(pool_root, args.pool_embeddings))
        pool, _ = scan_dataset(pool_root, index=pool_index, tier=Tier.SYNTHETIC, config=cfg.dataset)
        mapping = select_replacements(discarded, pool, np.random.default_rng(args.seed), config=cfg.dataset)
        chosen = set(mapping.values())
        synthetic = [r for r in pool if r.identity_id in chosen]
        clash = sorted(chosen & {r.identity_id for r in cleaned})
        if clash:
            raise ContractError(f"synthetic identity ids collide with cleaned ids: {clash[:10]}")
        for rec in synthetic:
            scores[rec.identity_id] = score_difficulty(rec, pool_matrix)

    out = Path(args.out)
    base = out.resolve().parent

    def path_of(rec, image):
        return _posix_relpath(Path(rec.root).resolve() / image, base)

    manifest = build_manifest(synthetic, cleaned, scores, config=cfg.dataset, path_of=path_of)
    write_manifest(manifest, out)
    print(f"synthetic: {len(synthetic)}")
    print(f"cleaned: {len(cleaned)}")
    print(f"identities: {len(manifest.entries)}")
    return 0


def cmd_synth_corpus(args) -> int:
    contamination = parse_contamination(args.contaminate)
    corpus = make_corpus(args.identities, args.images_per, args.dim, args.noise, contamination,
                         seed=args.seed, start_id=args.start_id)
    params = {"identities": args.identities, "images_per": args.images_per, "dim": args.dim,
              "noise": args.noise, "contaminate": args.contaminate, "seed": args.seed,
              "start_id": args.start_id}
    write_corpus(corpus, args.out, params=params)
    print(f"identities: {args.identities}")
    print(f"images: {args.identities * args.images_per}")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facecurate", description="Face-dataset curation pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="pipeline config file (YAML or JSON)")
        p.add_argument("--threads", type=int, default=_default_threads(), help="worker pool size")
        p.set_defaults(func=func)
        return p

    p = add("clean", cmd_clean, "cluster and LLM-validate every identity")
    p.add_argument("root")
    p.add_argument("--embeddings", help=f"EMB1 file (default <root>/{EMBEDDINGS_NAME})")
    p.add_argument("--llm", choices=("none", "mock", "replay", "http"))
    p.add_argument("--llm-script", help="JSON script for the mock LLM")
    p.add_argument("--llm-replay", help="transcript log to replay")
    p.add_argument("--transcripts", help="write LLM transcripts (JSON lines) here")
    p.add_argument("--out", required=True, help="cleaning report file")

    p = add("augment", cmd_augment, "replenish kept identities by augmentation")
    p.add_argument("root")
    p.add_argument("reports")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ledger", help="recipe ledger (default: next to the reports)")
    p.add_argument("--out", help="write to this tree instead of modifying root in place")

    p = add("generate", cmd_generate, "generate synthetic identities")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generator", choices=("mock", "http"))
    p.add_argument("--detector", choices=("mock", "mock-none", "http"))
    p.add_argument("--expander", choices=("echo", "http"))
    p.add_argument("--exclude-ids-from", action="append", metavar="ROOT",
                   help="never mint identity ids present under ROOT (repeatable)")
    p.add_argument("--log", help="generation log (default <out>/generation_log.jsonl)")

    p = add("screen", cmd_screen, "screen synthetic identities against a gallery")
    p.add_argument("root")
    p.add_argument("gallery")
    p.add_argument("--embeddings", help=f"EMB1 file (default <root>/{EMBEDDINGS_NAME})")
    p.add_argument("--tau", type=float)
    p.add_argument("--out", help="verdict file (default <root>/screen_verdicts.json)")

    p = add("order", cmd_order, "build the curriculum-ordered manifest")
    p.add_argument("root")
    p.add_argument("reports")
    p.add_argument("--embeddings", help=f"EMB1 file of the cleaned corpus (default <root>/{EMBEDDINGS_NAME})")
    p.add_argument("--pool", help="synthetic identity pool root")
    p.add_argument("--pool-embeddings", help=f"EMB1 file of the pool (default <pool>/{EMBEDDINGS_NAME})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="manifest file")

    p = add("synth-corpus", cmd_synth_corpus, "write a synthetic corpus with planted ground truth")
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--images-per", type=int, default=50)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.1, help="angular noise (radians)")
    p.add_argument("--contaminate", default="", help='e.g. "30%%@noise,10%%@cross"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except FacecurateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
