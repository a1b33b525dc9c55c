"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 unreadable or invalid input,
3 window/checkpoint shape mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .evaluation import evaluate_scores, roc_csv, scan, suspects_jsonl
from .features import build_dataset, group_by_repo, read_windows, to_arrays, write_windows
from .fileio import atomic_write_text
from .ingest import (
    IngestReport,
    InputFormatError,
    load_store,
    merge_timelines,
    open_text,
    parse_cve_csv,
    parse_event_lines,
    parse_git_stats,
    parse_graphql_dump,
    repo_from_filename,
    write_store,
)
from .models import BUILDERS, build_model
from .nn import ShapeError, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate, write_synth_store
from .training import SplitPlan, TrainConfig, cross_validate, split_repos, train, windows_for_repos

log = logging.getLogger("patchsense")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SHAPE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _files(directory: Optional[str], patterns: Sequence[str]) -> list[Path]:
    if directory is None:
        return []
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"not a directory: {d}")
    found = {p for pat in patterns for p in d.glob(pat)}
    return sorted(found)


def cmd_ingest(args) -> int:
    report = IngestReport()
    events, links, static = [], [], {}
    try:
        for path in _files(args.events, ("*.jsonl", "*.json", "*.jsonl.gz", "*.json.gz")):
            with open_text(path) as fh:
                evs, rep = parse_event_lines(fh)
            events += evs
            report += rep
        for path in _files(args.graphql, ("*.json",)):
            doc = json.loads(path.read_text(encoding="utf-8") or "{}")
            repo_id = doc.get("repo") or repo_from_filename(path.stem)
            evs, feats, rep = parse_graphql_dump(doc, repo_id)
            events += evs
            report += rep
            if feats is not None:
                static[repo_id] = feats
        if args.git_stats:
            gs = Path(args.git_stats)
            paths = sorted(gs.glob("*.csv")) if gs.is_dir() else [gs]
            for path in paths:
                with open_text(path) as fh:
                    stats, rep = parse_git_stats(fh, repo_id=repo_from_filename(path.stem) if "__" in path.stem else None)
                report += rep
                for s in stats:
                    if s.repo_id is None:
                        raise InputError(f"{path}: git stats rows need a repo column or an owner__repo.csv filename")
                    events.append(s.to_event())
        if args.cve_csv:
            with open_text(args.cve_csv) as fh:
                links, rep = parse_cve_csv(fh, args.link_separator)
            report += rep
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, InputFormatError) as exc:
        raise InputError(str(exc)) from exc

    timelines = merge_timelines(events)
    write_store(args.out, timelines, links, static, report)
    print(
        f"ingested {sum(len(t) for t in timelines.values())} events in {len(timelines)} repositories, "
        f"{len(links)} CVE links ({report.lines_skipped} records skipped)"
    )
    return EXIT_OK


def cmd_build(args) -> int:
    if args.window_size < 1:
        raise UsageError("--window-size must be >= 1")
    try:
        timelines, links, _ = load_store(args.store)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from exc
    try:
        windows, manifest = build_dataset(
            timelines, links, args.window_size, args.seed, all_commits=args.all_commits, min_events=args.min_events
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    write_windows(args.out, windows, manifest)
    meta = manifest.metadata
    print(
        f"wrote {meta['windows']} windows of shape {2 * args.window_size + 1}x64 "
        f"({meta['positives']} positive, {meta['negatives']} negative) from {meta['repos_with_windows']} repositories"
    )
    return EXIT_OK


def _load_windows(path):
    try:
        return read_windows(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read windows file {path}: {exc}") from exc


def _plan_for(manifest, windows, seed) -> SplitPlan:
    if manifest is not None and manifest.splits:
        return SplitPlan.from_dict(manifest.splits)
    try:
        return split_repos({w.repo_id for w in windows}, seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_train(args) -> int:
    windows, manifest = _load_windows(args.windows)
    labeled = [w for w in windows if w.label is not None]
    if not labeled:
        raise InputError("no labeled windows to train on")
    plan = _plan_for(manifest, labeled, args.seed)
    by_repo = group_by_repo(labeled)
    length = labeled[0].matrix.shape[0]
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        window_size=length // 2,
        dropout_rate=args.dropout,
    )

    def builder(length, dropout, seed):
        return build_model(args.model, length, dropout=dropout, seed=seed)

    out = Path(args.out)
    cv_doc = None
    if args.kfold:
        grid = [
            {"learning_rate": lr, "dropout_rate": dr}
            for lr in (args.grid_lr or [args.lr])
            for dr in (args.grid_dropout or [args.dropout])
        ]
        cv = cross_validate(builder, by_repo, plan, config, grid)
        config = cv.best_config
        cv_doc = cv.to_dict()
        train_set, val_set = windows_for_repos(by_repo, plan.train), []
        for cand in cv.candidates:
            log.info("cv %s mean accuracy %.4f", cand["config"], cand["mean_accuracy"])
    else:
        train_set = windows_for_repos(by_repo, plan.fold_train_repos(0))
        val_set = windows_for_repos(by_repo, plan.validation_repos(0))
    if not train_set:
        raise InputError("split leaves no training windows")

    graph = builder(length, config.dropout_rate, config.seed)
    graph, history = train(graph, train_set, config, validation=val_set or None)
    extra = {"trained_on_repos": len({w.repo_id for w in train_set}), "training_windows": len(train_set)}
    if manifest is not None:
        extra["dataset"] = {"window_size": manifest.window_size, "norm": manifest.norm.to_dict()}
    save_checkpoint(out, graph, seed=config.seed, training_config=config.to_dict(), extra=extra)
    atomic_write_text(out.with_name(out.name + ".history.json"), _json(history.to_dict()))
    atomic_write_text(out.with_name(out.name + ".split.json"), _json(plan.to_dict()))
    if cv_doc is not None:
        atomic_write_text(out.with_name(out.name + ".cv.json"), _json(cv_doc))
    last_val = history.val_accuracy[-1] if history.val_accuracy else None
    print(
        f"trained {args.model} for {config.epochs} epochs on {len(train_set)} windows"
        + (f"; validation accuracy {last_val:.4f}" if last_val is not None else "")
    )
    return EXIT_OK


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc


def _check_shape(graph, windows):
    for w in windows:
        if tuple(w.matrix.shape) != graph.input_shape:
            raise ShapeError(f"windows have shape {w.matrix.shape}, checkpoint expects {graph.input_shape}")


def cmd_eval(args) -> int:
    graph, _ = _load_ckpt(args.ckpt)
    windows, manifest = _load_windows(args.windows)
    labeled = [w for w in windows if w.label is not None]
    split = args.split
    if split == "auto":
        split = "test" if manifest is not None and manifest.splits else "all"
    if split != "all":
        if manifest is None or not manifest.splits:
            raise InputError(f"--split {split} needs a manifest with a repository split")
        plan = SplitPlan.from_dict(manifest.splits)
        keep = set(plan.test if split == "test" else plan.validation_repos(0))
        labeled = [w for w in labeled if w.repo_id in keep]
    if not labeled:
        raise InputError("no labeled windows to evaluate")
    _check_shape(graph, labeled)
    x, y = to_arrays(labeled)
    scores = graph.predict(x)
    report = evaluate_scores(scores, y, args.threshold, args.fp_reclass_rate)
    doc = report.to_dict()
    doc["windows"] = len(labeled)
    doc["split"] = split
    if args.report:
        atomic_write_text(args.report, _json(doc))
    if args.roc and report.roc:
        atomic_write_text(args.roc, roc_csv(report.roc))
    auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(
        f"accuracy {report.accuracy:.4f} precision {report.precision:.4f} recall {report.recall:.4f} "
        f"f1 {report.f1:.4f} auc {auc} on {len(labeled)} windows"
    )
    return EXIT_OK


def cmd_scan(args) -> int:
    graph, _ = _load_ckpt(args.ckpt)
    windows, _ = _load_windows(args.windows)
    _check_shape(graph, windows)
    hits = scan(graph, windows, args.threshold)
    atomic_write_text(args.out, suspects_jsonl(hits))
    print(f"{len(hits)} suspected undisclosed patches")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(
            repos=args.repos,
            events_per_repo=args.events,
            positive_commits_per_repo=args.positives,
            signal_strength=args.signal,
            seed=args.seed,
            window=args.window,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    timelines, links = generate(cfg)
    write_synth_store(args.out, timelines, links)
    print(f"wrote {len(timelines)} synthetic repositories with {len(links)} planted patches to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"patchsense {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse raw inputs into a timeline store")
    p.add_argument("--events", help="directory of event-log JSON lines (optionally .gz)")
    p.add_argument("--graphql", help="directory of per-repository history dumps")
    p.add_argument("--git-stats", help="git stats CSV file, or directory of owner__repo.csv files")
    p.add_argument("--cve-csv", help="CVE list CSV")
    p.add_argument("--link-separator", default="|")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="cut labeled, encoded windows from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--window-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--all-commits", action="store_true", help="window every commit; unlinked ones stay unlabeled")
    p.add_argument("--min-events", type=int, default=100)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--model", required=True, choices=sorted(BUILDERS))
    p.add_argument("--windows", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kfold", action="store_true", help="10-fold CV over training repos, then fit on all of them")
    p.add_argument("--grid-lr", type=float, nargs="+")
    p.add_argument("--grid-dropout", type=float, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score labeled windows and report metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument(
        "--split",
        choices=("auto", "test", "validation", "all"),
        default="auto",
        help="which repositories to score; auto = the test split when the manifest has one, else all",
    )
    p.add_argument("--fp-reclass-rate", type=float)
    p.add_argument("--report")
    p.add_argument("--roc")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scan", help="list unlabeled or negative windows scoring above a threshold")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("synth", help="generate a synthetic raw-input store")
    p.add_argument("--repos", type=int, default=200)
    p.add_argument("--events", type=int, default=500)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--positives", type=int, default=16)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"patchsense {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"patchsense {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ShapeError as exc:
        print(f"patchsense {args.command}: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE


if __name__ == "__main__":
    sys.exit(main())
