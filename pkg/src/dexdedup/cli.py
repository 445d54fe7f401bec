"""Command-line entry point: ``dexdedup <subcommand> ...``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import cluster as clu
from . import extract as ext
from . import fingerprint as fpm
from .errors import ConfigError, DexDedupError, MismatchedClusterSet, StageError
from .features import (CATALOGS, build_matrix, dumps_csv, features_from_record, features_of_path,
                       read_csv)
from .forest import ForestConfig
from .manifest import RunManifest, input_digests

log = logging.getLogger("dexdedup")

_FLAG_SKIP = {"func", "out", "quiet", "jobs"}


def _emit(args, text: str, inputs=()) -> None:
    """Write ``text`` to ``--out`` (with a manifest sidecar) or stdout."""
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        _manifest(args, inputs).write(out.with_name(out.name + ".manifest.json"))
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _manifest(args, inputs) -> RunManifest:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in _FLAG_SKIP}
    flags = json.loads(json.dumps(flags, default=str))
    return RunManifest(args.command, flags, input_digests(inputs), [args.seed])


def _read_fingerprints(path) -> list[fpm.AppFingerprint]:
    with open(path, encoding="utf-8") as fh:
        return list(fpm.read_jsonl(fh))


def _read_matrix(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return read_csv(fh)


def _forest(args) -> ForestConfig:
    return ForestConfig(args.trees, args.max_depth, args.features_per_split, args.seed, not args.no_bootstrap)


# -- subcommands ------------------------------------------------------------


def cmd_extract(args):
    apps = ext.extract_corpus(args.paths, args.format, args.min_length, args.label)
    for app in apps:
        for w in app.report.parse_warnings:
            log.warning("%s: %s", app.app_id, w)
    buf = io.StringIO()
    ext.write_jsonl(apps, buf)
    _emit(args, buf.getvalue(), args.paths)


def cmd_fingerprint(args):
    with open(args.extraction, encoding="utf-8") as fh:
        apps = list(ext.read_jsonl(fh))
    fps = []
    for app in apps:
        label = app.label or args.label
        try:
            fps.append(fpm.fingerprint_of(app.sequences, app.app_id, label))
        except DexDedupError as exc:
            log.warning("excluded %s: %s", app.app_id, exc)
    buf = io.StringIO()
    fpm.write_jsonl(fps, buf)
    _emit(args, buf.getvalue(), [args.extraction])


def cmd_distance(args):
    fps = {fp.app_id: fp for fp in _read_fingerprints(args.fingerprints)}
    a, b = args.pair
    for app_id in (a, b):
        if app_id not in fps:
            raise DexDedupError(f"app id {app_id!r} not found in {args.fingerprints}")
    d = fpm.ochiai_distance(fps[a], fps[b])
    _emit(args, f"{d!r}\n", [args.fingerprints])


def _cluster(fps, epsilon, seed, per_label):
    if per_label:
        return clu.cluster_per_label(fps, epsilon, seed)
    return clu.cluster_corpus(fps, epsilon, seed)


def cmd_cluster(args):
    fps = _read_fingerprints(args.fingerprints)
    cs = _cluster(fps, args.epsilon, None if args.ordered else args.seed, args.per_label)
    for w in cs.warnings:
        log.warning(w)
    _emit(args, cs.dumps(), [args.fingerprints])


def cmd_sweep(args):
    fps = _read_fingerprints(args.fingerprints)
    grid = clu.parse_grid(args.grid)
    rows = clu.epsilon_sweep(fps, grid, None if args.ordered else args.seed, args.per_label)
    text = "epsilon,cluster_count\n" + "".join(f"{e:g},{c}\n" for e, c in rows)
    _emit(args, text, [args.fingerprints])
    if args.plot:
        from .plotting import plot_sweep
        plot_sweep(rows, Path(args.plot))


def cmd_filter(args):
    fps = _read_fingerprints(args.fingerprints)
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            cs = clu.ClusterSet.from_json(json.load(fh))
        if args.per_label and not cs.per_label:
            raise MismatchedClusterSet("--per-label given but the cluster report was built jointly")
        inputs = [args.fingerprints, args.report]
    elif args.epsilon is not None:
        cs = _cluster(fps, args.epsilon, None if args.ordered else args.seed, args.per_label)
        inputs = [args.fingerprints]
    else:
        raise ConfigError("filter needs --report or --epsilon")
    reps = clu.filter_representatives(fps, cs)
    log.info("kept %d of %d apps", len(reps), len(fps))
    buf = io.StringIO()
    fpm.write_jsonl(reps, buf)
    _emit(args, buf.getvalue(), inputs)


def cmd_features(args):
    apps, inputs = [], []
    if args.from_lists:
        with open(args.from_lists, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    apps.append(features_from_record(json.loads(line)))
        inputs.append(args.from_lists)
    for label, paths in (("malware", args.malware), ("goodware", args.goodware), (args.label, args.paths)):
        if not paths:
            continue
        if label is None:
            raise ConfigError("positional app paths need --label malware|goodware")
        for p in ext.discover_apps(paths):
            af = features_of_path(p, label)
            for w in af.warnings:
                log.warning("%s: %s", af.app_id, w)
            apps.append(af)
        inputs.extend(paths)
    if not apps:
        raise ConfigError("no apps given")
    matrix = build_matrix(apps, args.set)
    _emit(args, dumps_csv(matrix, with_ids=not args.no_ids), inputs)


def cmd_infogain(args):
    from .mleval import info_gain_csv, information_gain
    _emit(args, info_gain_csv(information_gain(_read_matrix(args.features))), [args.features])


def cmd_evaluate(args):
    from .mleval import dumps, information_gain, kfold_evaluate
    matrix = _read_matrix(args.features)
    report = kfold_evaluate(matrix, args.kfold, _forest(args), args.seed, args.jobs)
    rec = report.to_json()
    rec["info_gain"] = [[n, g] for n, g in information_gain(matrix)]
    _emit(args, dumps(rec), [args.features])


def cmd_balance(args):
    from .mleval import balance_dataset
    matrix = balance_dataset(_read_matrix(args.features), args.seed)
    _emit(args, dumps_csv(matrix), [args.features])


def cmd_inflation_demo(args):
    from .mleval import dumps, holdout_inflation_demo
    fps = _read_fingerprints(args.fingerprints)
    matrix = _read_matrix(args.features)
    result = holdout_inflation_demo(fps, matrix, args.ratio, args.seed, args.seeds, _forest(args), args.jobs)
    _emit(args, dumps(result.to_json()), [args.fingerprints, args.features])
    log.info("before accuracy %.4f, after mean accuracy %.4f",
             result.before.accuracy, result.mean_after_accuracy)


def cmd_pipeline(args):
    from .pipeline import PipelineConfig, make_manifest, run_pipeline
    if not args.out:
        raise ConfigError("pipeline needs --out DIR")
    try:
        config = PipelineConfig(
            epsilon_grid=tuple(clu.parse_grid(args.epsilons)),
            sweep_grid=tuple(clu.parse_grid(args.sweep_grid)),
            seed=args.seed,
            feature_sets=tuple(s for s in args.sets.split(",") if s),
            tree_count=args.trees, max_depth=args.max_depth, features_per_split=args.features_per_split,
            bootstrap=not args.no_bootstrap, kfold=args.kfold, balance=not args.no_balance,
            per_label=not args.joint, ordered=args.ordered, min_length=args.min_length,
            figures=not args.no_figures)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    manifest = make_manifest(config, args.malware, args.goodware)
    summary = run_pipeline(config, args.malware, args.goodware, Path(args.out), args.jobs, manifest)
    log.info("pipeline finished: %d apps, duplicate fraction %.4f", summary["apps"], summary["duplicate_fraction"])


def cmd_report(args):
    from .pipeline import render_figures, render_report
    sys.stdout.write(render_report(Path(args.artifacts)))
    if args.figures:
        for path in render_figures(Path(args.artifacts), Path(args.out) if args.out else None):
            log.info("wrote %s", path)


def cmd_synth(args):
    from . import synth
    if not args.out:
        raise ConfigError("synth needs --out DIR")
    out = Path(args.out)
    if args.kind == "apk":
        written = synth.write_apk_corpus(out, args.seed)
        log.info("wrote %d malware and %d goodware apks under %s",
                 len(written["malware"]), len(written["goodware"]), out)
        return
    corpus = synth.inflation_corpus(args.seed) if args.kind == "inflation" else synth.drebin_like_corpus(args.seed)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fingerprints.jsonl", "w", encoding="utf-8") as fh:
        fpm.write_jsonl(corpus.fingerprints, fh)
    (out / "features.csv").write_text(dumps_csv(corpus.matrix), encoding="utf-8")
    log.info("wrote %d apps to %s", len(corpus.fingerprints), out)


# -- parser -----------------------------------------------------------------


def _forest_flags(p):
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--features-per-split", type=int, default=None, help="default ceil(sqrt(F))")
    p.add_argument("--no-bootstrap", action="store_true")


def _epsilon(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("epsilon must lie in [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output file (directory for pipeline/synth); default stdout")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for forest training")

    parser = argparse.ArgumentParser(prog="dexdedup", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("extract", cmd_extract, "opcode sequences per method, as JSONL")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--format", choices=ext.FORMATS, default=None, help="default: detect per input")
    p.add_argument("--min-length", type=int, default=1)
    p.add_argument("--label", choices=fpm.LABELS, default=None)

    p = add("fingerprint", cmd_fingerprint, "hash-set fingerprints from an extraction")
    p.add_argument("extraction", type=Path)
    p.add_argument("--label", choices=fpm.LABELS, default="unlabeled", help="for records without a label")

    p = add("distance", cmd_distance, "Ochiai distance between two apps")
    p.add_argument("fingerprints", type=Path)
    p.add_argument("--pair", nargs=2, metavar=("ID_A", "ID_B"), required=True)

    p = add("cluster", cmd_cluster, "leader clustering at one epsilon")
    p.add_argument("fingerprints", type=Path)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--ordered", action="store_true", help="visit apps in input order instead of seeded random")
    p.add_argument("--per-label", action="store_true")

    p = add("sweep", cmd_sweep, "cluster count over an epsilon grid, as CSV")
    p.add_argument("fingerprints", type=Path)
    p.add_argument("--grid", default="0:1:0.1", help="start:stop:step or comma list")
    p.add_argument("--ordered", action="store_true")
    p.add_argument("--per-label", action="store_true")
    p.add_argument("--plot", default=None, help="also write a PNG of the curve")

    p = add("filter", cmd_filter, "keep one representative per cluster")
    p.add_argument("fingerprints", type=Path)
    p.add_argument("--report", type=Path, default=None, help="cluster report JSON")
    p.add_argument("--epsilon", type=_epsilon, default=None, help="cluster now instead of reading --report")
    p.add_argument("--ordered", action="store_true")
    p.add_argument("--per-label", action="store_true")

    p = add("features", cmd_features, "binary permission / API-call feature CSV")
    p.add_argument("paths", nargs="*", type=Path)
    p.add_argument("--label", choices=("malware", "goodware"), default=None, help="label for positional paths")
    p.add_argument("--malware", nargs="+", type=Path, default=[])
    p.add_argument("--goodware", nargs="+", type=Path, default=[])
    p.add_argument("--set", choices=tuple(CATALOGS), default="both")
    p.add_argument("--from-lists", type=Path, default=None,
                   help="JSONL of {app_id, label, permissions, api_calls}")
    p.add_argument("--no-ids", action="store_true", help="omit the app_id column")

    p = add("infogain", cmd_infogain, "information-gain ranking of a feature CSV")
    p.add_argument("features", type=Path)

    p = add("evaluate", cmd_evaluate, "stratified k-fold random-forest evaluation")
    p.add_argument("features", type=Path)
    p.add_argument("--kfold", type=int, default=10)
    _forest_flags(p)

    p = add("balance", cmd_balance, "down-sample the majority class")
    p.add_argument("features", type=Path)

    p = add("inflation-demo", cmd_inflation_demo, "holdout accuracy with and without exact duplicates")
    p.add_argument("--fingerprints", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seeds", type=int, default=20, help="number of post-dedup random splits")
    _forest_flags(p)

    p = add("pipeline", cmd_pipeline, "full chain into an artifact directory")
    p.add_argument("--malware", nargs="+", type=Path, default=[])
    p.add_argument("--goodware", nargs="+", type=Path, default=[])
    p.add_argument("--epsilons", default="0,0.1,0.2", help="dataset epsilons")
    p.add_argument("--sweep-grid", default="0:1:0.1")
    p.add_argument("--sets", default="permissions,apicalls")
    p.add_argument("--kfold", type=int, default=10)
    p.add_argument("--no-balance", action="store_true")
    p.add_argument("--joint", action="store_true", help="cluster both labels together")
    p.add_argument("--ordered", action="store_true")
    p.add_argument("--min-length", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    _forest_flags(p)

    p = add("report", cmd_report, "summarize a pipeline artifact directory")
    p.add_argument("artifacts", type=Path)
    p.add_argument("--figures", action="store_true", help="re-render figures (into --out if given)")

    p = add("synth", cmd_synth, "write a deterministic synthetic corpus")
    p.add_argument("--kind", choices=("apk", "inflation", "drebin-like"), default="apk")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        args.func(args)
    except StageError as exc:
        print(f"dexdedup {args.command}: stage {exc.stage}, input {exc.source}: {exc.cause}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"dexdedup {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (DexDedupError, OSError, ValueError) as exc:
        print(f"dexdedup {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
