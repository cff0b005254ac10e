"""Command-line pipeline: ingest, cooccur, train, predict, ensemble-search, refine, evaluate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.  Any
failure prints one ``postergenre: error: <kind>: <message>`` line on stderr and
removes the outputs written so far.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig, load_config
from .container import ContainerError
from .data import (ManifestError, MultiHotLabel, PosterManifest, PosterRecord, compute_cooccurrence,
                   load_manifest, split_dataset, write_manifest, write_stats_csv)
from .ensemble import EnsembleWeights, ensemble_scores, grid_search_weights
from .image import ImageFormatError, load_poster_image
from .model import KINDS, GenreModel
from .refine import RefineConfig, build_conditional_tables, hit_ratio, load_tables, refine_prediction, save_tables
from .synthetic import write_synthetic_dataset
from .train import DomainError, TrainingDiverged, top3_ids, train_model, write_history

logger = logging.getLogger("postergenre")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Outputs:
    """Tracks files written by a subcommand so a failure can remove them."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def cleanup(self) -> None:
        for p in reversed(self.paths):
            try:
                if p.is_file():
                    p.unlink()
            except OSError:
                pass


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


# -- score CSV interchange -----------------------------------------------------------


def write_scores_csv(path, paths: Sequence[str], scores: np.ndarray, genres: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", *genres])
        for p, row in zip(paths, scores):
            w.writerow([p, *(repr(float(v)) for v in row)])


def read_scores_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "path":
        raise ManifestError(f"{path}: score CSV must start with a 'path' header column")
    genres = rows[0][1:]
    paths, vals = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(genres) + 1:
            raise ManifestError(f"{path}:{lineno}: expected {len(genres) + 1} columns")
        paths.append(r[0])
        vals.append([float(v) for v in r[1:]])
    return paths, np.array(vals, dtype=np.float64).reshape(len(paths), len(genres)), genres


def _read_checked_scores(path, genres: Sequence[str]) -> tuple[list[str], np.ndarray]:
    keys, vals, cols = read_scores_csv(_need(path, "score CSV"))
    if tuple(cols) != tuple(genres):
        raise ManifestError(f"{path}: genre columns differ from the configured vocabulary")
    return keys, vals


def _align(keys: Sequence[str], scores: np.ndarray, wanted: Sequence[str], source) -> np.ndarray:
    index = {k: i for i, k in enumerate(keys)}
    missing = [w for w in wanted if w not in index]
    if missing:
        raise ManifestError(f"{source}: no scores for {len(missing)} poster(s), e.g. {missing[0]!r}")
    return scores[[index[w] for w in wanted]]


def _write_predictions(path, records: Sequence[PosterRecord], id_lists: Sequence[Sequence[int]], delta: int) -> None:
    out = [PosterRecord(r.path, r.movie_id, MultiHotLabel.from_ids(ids, delta), tuple(ids))
           for r, ids in zip(records, id_lists)]
    write_manifest(path, out)


def _load_images(manifest: PosterManifest, w_z: int) -> np.ndarray:
    return np.stack([load_poster_image(manifest.resolve(r), w_z) for r in manifest.records])


# -- subcommands -------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig, out: _Outputs) -> None:
    target = Path(args.out_dir)
    out.add(target / "manifest.tsv")
    for i in range(args.n):
        out.add(target / "posters" / f"p{i:05d}.ppm")
    write_synthetic_dataset(target, args.n, cfg.vocab().size, cfg.w_z, cfg.w_p, cfg.seed)


def cmd_ingest(args, cfg: RunConfig, out: _Outputs) -> None:
    m = load_manifest(_need(args.manifest, "manifest"), cfg.vocab())
    sizes = tuple(int(x) for x in args.sizes.split(",")) if args.sizes else None
    split = split_dataset(m, cfg.split_ratios, cfg.seed, sizes=sizes)
    out_dir = Path(args.out_dir)
    src_root = Path(args.manifest).parent
    for name, idx in split.as_dict().items():
        recs = []
        for i in idx:
            r = m.records[i]
            p = Path(r.path)
            rel = p if p.is_absolute() else Path(os.path.relpath(src_root / p, out_dir))
            recs.append(PosterRecord(rel.as_posix(), r.movie_id, r.label, r.order))
        write_manifest(out.add(out_dir / f"{name}.tsv"), recs)
    with open(out.add(out_dir / "split.tsv"), "w", encoding="utf-8") as fh:
        for name, idx in split.as_dict().items():
            for i in idx:
                fh.write(f"{m.records[i].path}\t{name}\n")


def cmd_cooccur(args, cfg: RunConfig, out: _Outputs) -> None:
    vocab = cfg.vocab()
    m = load_manifest(_need(args.manifest, "manifest"), vocab)
    stats = compute_cooccurrence(m)
    out_dir = Path(args.out_dir)
    for name in ("pair.csv", "singles.csv", "triple.csv", "p2.csv", "p2_norm.csv", "p3.csv", "p3_norm.csv"):
        out.add(out_dir / name)
    write_stats_csv(out_dir, stats, vocab)
    save_tables(out_dir, build_conditional_tables(stats), vocab.labels)


def cmd_train(args, cfg: RunConfig, out: _Outputs) -> None:
    vocab = cfg.vocab()
    tr = load_manifest(_need(args.train, "training manifest"), vocab)
    va = load_manifest(_need(args.val, "validation manifest"), vocab)
    model = GenreModel(cfg.model_config(args.kind), seed=cfg.init_seed)
    result = train_model(model, _load_images(tr, cfg.w_z), tr.labels_matrix(), _load_images(va, cfg.w_z),
                         va.labels_matrix(), cfg.asl_config(), cfg.optimizer_config(), cfg.train_config())
    model.save(out.add(args.out), {"best_epoch": str(result.best_epoch), "stopped_epoch": str(result.stopped_epoch)})
    if args.history:
        write_history(out.add(args.history), result.history)
    logger.info("trained %s: best epoch %d, val loss %.6f", args.kind, result.best_epoch, result.best_val_loss)


def _ensemble_predict(args, cfg: RunConfig, m: PosterManifest) -> np.ndarray:
    ckpts = [_need(c, "checkpoint") for c in args.checkpoint]
    if len(ckpts) not in (1, 3):
        raise UsageError("predict takes one checkpoint, or three (R, RT, RDT) with --weights")
    models = [GenreModel.load(c) for c in ckpts]
    for mdl in models:
        if mdl.cfg.genres != m.vocab.labels:
            raise ManifestError(f"checkpoint genres {mdl.cfg.genres} differ from the configured vocabulary")
    w_z = models[0].cfg.w_z
    if any(mdl.cfg.w_z != w_z for mdl in models):
        raise UsageError("ensembled checkpoints must share the input size")
    images = _load_images(m, w_z)
    scores = [mdl.predict_scores(images, cfg.batch_size) for mdl in models]
    if len(scores) == 1:
        if args.weights:
            raise UsageError("--weights needs three checkpoints")
        return scores[0]
    if not args.weights:
        raise UsageError("three checkpoints need --weights")
    return ensemble_scores(*scores, EnsembleWeights.load(_need(args.weights, "weights file")))


def _refined_ids(scores: np.ndarray, tables, rcfg: RefineConfig) -> list[tuple[int, ...]]:
    return [refine_prediction(s, tables, rcfg).genres for s in scores]


def cmd_predict(args, cfg: RunConfig, out: _Outputs) -> None:
    vocab = cfg.vocab()
    m = load_manifest(_need(args.manifest, "manifest"), vocab)
    if args.mode == "refined" and not args.tables:
        raise UsageError("--mode refined needs --tables")
    tables = load_tables(_need(args.tables, "tables directory")) if args.mode == "refined" else None
    scores = _ensemble_predict(args, cfg, m)
    if args.mode == "top3":
        ids = [top3_ids(s) for s in scores]
    else:
        ids = _refined_ids(scores, tables, cfg.refine_config())
    _write_predictions(out.add(args.out), m.records, ids, vocab.size)
    paths = [r.path for r in m.records]
    if args.scores_out:
        write_scores_csv(out.add(args.scores_out), paths, scores, vocab.labels)
    if args.emit_heatmap:
        lines = metrics.heatmap_lines(paths, m.labels_matrix(), scores, vocab.labels)
        out.add(args.emit_heatmap).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_ensemble_search(args, cfg: RunConfig, out: _Outputs) -> None:
    vocab = cfg.vocab()
    m = load_manifest(_need(args.manifest, "validation manifest"), vocab)
    wanted = [r.path for r in m.records]
    base = []
    for path in args.scores:
        keys, vals = _read_checked_scores(path, vocab.labels)
        base.append(_align(keys, vals, wanted, path))
    step = args.step if args.step is not None else cfg.grid_step
    metric = args.metric or cfg.grid_metric
    weights = grid_search_weights(base, m.labels_matrix(), step, metric)
    weights.save(out.add(args.out))
    if args.apply:
        fused_in = [_read_checked_scores(p, vocab.labels) for p in args.apply]
        keys = fused_in[0][0]
        mats = [_align(k, v, keys, p) for (k, v), p in zip(fused_in, args.apply)]
        write_scores_csv(out.add(args.fused_out), keys, ensemble_scores(*mats, weights), vocab.labels)


def cmd_refine(args, cfg: RunConfig, out: _Outputs) -> None:
    vocab = cfg.vocab()
    keys, scores = _read_checked_scores(args.scores, vocab.labels)
    tables = load_tables(_need(args.tables, "tables directory"))
    if tables.n_genres != vocab.size:
        raise ManifestError("conditional tables do not match the vocabulary size")
    ids = _refined_ids(scores, tables, cfg.refine_config())
    with open(out.add(args.out), "w", encoding="utf-8") as fh:
        for key, sel in zip(keys, ids):
            fh.write(f"{key}\t-\t{';'.join(str(i) for i in sel)}\n")


def cmd_evaluate(args, cfg: RunConfig, out: _Outputs) -> None:
    vocab = cfg.vocab()
    truth_m = load_manifest(_need(args.manifest, "ground-truth manifest"), vocab)
    pred_m = load_manifest(_need(args.predictions, "predictions file"), vocab)
    pred_by_path = {r.path: r for r in pred_m.records}
    records = truth_m.records
    if args.subset_file:
        wanted = {ln.strip() for ln in _need(args.subset_file, "subset file").read_text(encoding="utf-8").splitlines()
                  if ln.strip() and not ln.startswith("#")}
        unknown = wanted - {r.path for r in records}
        if unknown:
            raise ManifestError(f"subset file names {len(unknown)} poster(s) not in the manifest")
        records = [r for r in records if r.path in wanted]
    missing = [r.path for r in records if r.path not in pred_by_path]
    if missing:
        raise ManifestError(f"no prediction for {len(missing)} poster(s), e.g. {missing[0]!r}")
    truth = np.array([r.label.bits for r in records], dtype=np.int64)
    preds = [pred_by_path[r.path] for r in records]
    pred_bits = np.array([p.label.bits for p in preds], dtype=np.int64)
    orders = [p.order for p in preds]

    tag = "subset" if args.subset_file else "all"
    reports = [metrics.evaluate(pred_bits, truth, tag)]
    hits = [(tag, hit_ratio(orders, truth))]
    if args.partition_by_label_count:
        for k, idx in metrics.partition_by_label_count(truth).items():
            if len(idx) == 0:
                logger.warning("partition TD<%d> is empty; skipped", k)
                continue
            ptag = f"TD<{k}>"
            reports.append(metrics.evaluate(pred_bits[idx], truth[idx], ptag))
            hits.append((ptag, hit_ratio([orders[i] for i in idx], truth[idx])))
    metrics.write_reports_csv(out.add(args.out), reports, vocab.labels)
    if args.text:
        body = []
        for rep, (_, hr) in zip(reports, hits):
            body.append(metrics.format_table(rep, vocab.labels) + f"hit ratio: {hr:.4f}\n")
        out.add(args.text).write_text("\n".join(body), encoding="utf-8")


# -- argument parsing ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="postergenre", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic poster dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=60)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="validate a manifest and split it 8:1:1")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sizes", help="explicit train,val,test counts instead of ratios")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cooccur", parents=[common], help="co-occurrence counts and conditional tables")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_cooccur)

    p = sub.add_parser("train", parents=[common], help="train one base model")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--kind", choices=KINDS, default="rdt")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="CSV of per-epoch losses")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score posters and select genres")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--weights", help="ensemble weights file (with three checkpoints)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("top3", "refined"), default="top3")
    p.add_argument("--tables", help="conditional tables directory (refined mode)")
    p.add_argument("--out", required=True, help="predictions TSV")
    p.add_argument("--scores-out", help="per-genre score CSV")
    p.add_argument("--emit-heatmap", metavar="PATH", help="per-sample ground truth vs scores")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble-search", parents=[common], help="grid-search ensemble weights")
    p.add_argument("--scores", nargs=3, required=True, metavar=("R", "RT", "RDT"))
    p.add_argument("--manifest", required=True, help="validation manifest")
    p.add_argument("--out", required=True, help="weights file")
    p.add_argument("--step", type=float)
    p.add_argument("--metric", choices=("BA", "FM", "HL"))
    p.add_argument("--apply", nargs=3, metavar=("R", "RT", "RDT"), help="score CSVs to fuse with the found weights")
    p.add_argument("--fused-out")
    p.set_defaults(func=cmd_ensemble_search)

    p = sub.add_parser("refine", parents=[common], help="select 1-3 genres from score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", parents=[common], help="macro metrics report")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True, help="ground-truth manifest")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--text", help="aligned plain-text report")
    p.add_argument("--partition-by-label-count", action="store_true")
    p.add_argument("--subset-file", help="poster paths to restrict evaluation to")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    msg = " ".join(str(message).split())
    print(f"postergenre: error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    out = _Outputs()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(_need(args.config, "config file") if args.config else None, overrides)
        if args.command == "ensemble-search" and bool(args.apply) != bool(args.fused_out):
            raise UsageError("--apply and --fused-out go together")
        args.func(args, cfg, out)
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        out.cleanup()
        return _fail("usage", exc, EXIT_USAGE)
    except (TrainingDiverged, DomainError, FloatingPointError) as exc:
        out.cleanup()
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (ManifestError, ImageFormatError, ContainerError, OSError, ValueError) as exc:
        out.cleanup()
        return _fail("data", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
