"""End-to-end run: extract, fingerprint, cluster, filter, features, evaluate.

Artifact layout (all paths relative to the output directory)::

    manifest.json            run manifest; every other artifact refers to it
    extract.jsonl            opcode sequences per app
    extract_report.jsonl     per-app method counts and parse warnings
    features/apps.jsonl      raw permission / method-name evidence per app
    fingerprints.jsonl
    sweep.csv                epsilon,cluster_count
    clusters/eps_<e>.json    cluster report per dataset epsilon
    filtered/eps_<e>.jsonl   representative fingerprints
    datasets.csv             dataset sizes per class
    features/<set>_<ds>.csv  feature matrices
    infogain/<set>_<ds>.csv  ranking per dataset
    infogain/<set>_table.csv gains side by side, ordered by the overall ranking
    eval/<set>_<ds>[_balanced].json
    metrics.csv              one row per evaluation
    summary.json
    figures/sweep.png, figures/accuracy.png

While a run is in progress the directory holds an ``INCOMPLETE`` marker; it
is removed only after every stage has succeeded.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import cluster as clu
from . import extract as ext
from . import fingerprint as fpm
from .errors import (ConfigError, DegenerateLabelsWarning, DexDedupError, EmptyApp, EmptyCorpus,
                     MissingArtifact, StageError)
from .features import CATALOGS, AppFeatures, build_matrix, dumps_csv, features_of_path
from .forest import ForestConfig
from .manifest import RunManifest, input_digests
from .mleval import balance_dataset, information_gain, info_gain_csv, kfold_evaluate

log = logging.getLogger(__name__)

INCOMPLETE = "INCOMPLETE"
METRIC_NAMES = ("tpr", "fpr", "accuracy", "precision", "f1")


@dataclass
class PipelineConfig:
    epsilon_grid: tuple[float, ...] = (0.0, 0.1, 0.2)
    sweep_grid: tuple[float, ...] = tuple(round(i / 10, 1) for i in range(11))
    seed: int = 0
    feature_sets: tuple[str, ...] = ("permissions", "apicalls")
    tree_count: int = 100
    max_depth: int | None = None
    features_per_split: int | None = None
    bootstrap: bool = True
    kfold: int = 10
    balance: bool = True
    per_label: bool = True
    ordered: bool = False
    min_length: int = 1
    figures: bool = True

    def validate(self) -> None:
        for name, grid in (("epsilon_grid", self.epsilon_grid), ("sweep_grid", self.sweep_grid)):
            if not grid:
                raise ConfigError(f"{name} is empty")
            bad = [e for e in grid if not 0.0 <= e <= 1.0]
            if bad:
                raise ConfigError(f"{name} value {bad[0]} outside [0, 1]")
        if len(set(self.epsilon_grid)) != len(self.epsilon_grid):
            raise ConfigError("epsilon_grid has repeated values")
        unknown = [s for s in self.feature_sets if s not in CATALOGS]
        if unknown or not self.feature_sets:
            raise ConfigError(f"unknown feature set {unknown[0] if unknown else '(none)'}; "
                              f"choose from {', '.join(CATALOGS)}")
        if self.kfold < 2:
            raise ConfigError("kfold must be >= 2")
        if self.min_length < 1:
            raise ConfigError("min_length must be >= 1")
        try:
            self.forest()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def forest(self) -> ForestConfig:
        return ForestConfig(self.tree_count, self.max_depth, self.features_per_split, self.seed, self.bootstrap)

    @property
    def cluster_seed(self) -> int | None:
        return None if self.ordered else self.seed

    def to_json(self) -> dict:
        return asdict(self)


def dataset_name(epsilon: float) -> str:
    return f"eps_{epsilon:g}"


class _Stage:
    """Wraps library errors with the stage name and the input being processed."""

    def __init__(self, name: str):
        self.name = name
        self.source = ""

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (DexDedupError, OSError, ValueError)):
            raise StageError(self.name, self.source, exc) from exc
        return False


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def make_manifest(config: PipelineConfig, malware: Sequence[Path], goodware: Sequence[Path],
                  jobs: int = 1) -> RunManifest:
    flags = {"config": config.to_json(),
             "malware": [Path(p).as_posix() for p in malware],
             "goodware": [Path(p).as_posix() for p in goodware]}
    return RunManifest("pipeline", flags, input_digests([*malware, *goodware]), [config.seed])


def run_pipeline(config: PipelineConfig, malware: Sequence[Path], goodware: Sequence[Path],
                 out_dir: Path, jobs: int = 1, manifest: RunManifest | None = None) -> dict:
    """Run every stage into ``out_dir`` and return the summary record.

    ``jobs`` only changes speed, never results, so it is not part of the manifest.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE
    _write(marker, "run did not finish\n")
    manifest = manifest or make_manifest(config, malware, goodware)
    manifest.write(out / "manifest.json")
    manifest_ref = {"path": "manifest.json", "digest": manifest.content_digest()}

    with _Stage("extract") as st:
        apps: list[tuple[Path, str]] = []
        for label, paths in (("malware", malware), ("goodware", goodware)):
            for p in ext.discover_apps(paths):
                apps.append((p, label))
        if not apps:
            raise StageError("extract", ", ".join(str(p) for p in [*malware, *goodware]) or "(no inputs)",
                             EmptyCorpus("no apps found in the given inputs"))
        ids = [ext.app_id_for(p) for p, _ in apps]
        dup = {i for i, n in Counter(ids).items() if n > 1}
        if dup:
            raise StageError("extract", sorted(dup)[0], DexDedupError(f"app id {sorted(dup)[0]!r} is not unique"))
        extracted = []
        for path, label in apps:
            st.source = str(path)
            extracted.append(ext.extract_path(path, min_length=config.min_length, label=label))
        buf = io.StringIO()
        ext.write_jsonl(extracted, buf)
        _write(out / "extract.jsonl", buf.getvalue())
        _write(out / "extract_report.jsonl",
               "".join(json.dumps(asdict(a.report), separators=(",", ":")) + "\n" for a in extracted))

    with _Stage("features") as st:
        app_features: dict[str, AppFeatures] = {}
        for path, label in apps:
            st.source = str(path)
            af = features_of_path(path, label)
            app_features[af.app_id] = af
        _write(out / "features" / "apps.jsonl",
               "".join(json.dumps(app_features[i].to_json(), separators=(",", ":")) + "\n" for i in ids))

    with _Stage("fingerprint") as st:
        fingerprints, excluded = [], []
        for app in extracted:
            st.source = app.app_id
            try:
                fingerprints.append(fpm.fingerprint_of(app.sequences, app.app_id, app.label))
            except EmptyApp as exc:
                excluded.append({"app_id": app.app_id, "reason": str(exc)})
        if not fingerprints:
            raise EmptyCorpus("no app produced a non-empty fingerprint")
        buf = io.StringIO()
        fpm.write_jsonl(fingerprints, buf)
        _write(out / "fingerprints.jsonl", buf.getvalue())
        _write(out / "excluded.json", _dumps(excluded))

    def clustering(eps):
        if config.per_label:
            return clu.cluster_per_label(fingerprints, eps, config.cluster_seed)
        return clu.cluster_corpus(fingerprints, eps, config.cluster_seed)

    with _Stage("sweep"):
        sweep = [(float(e), clustering(e).cluster_count) for e in config.sweep_grid]
        _write(out / "sweep.csv", _csv([("epsilon", "cluster_count"), *((f"{e:g}", c) for e, c in sweep)]))

    with _Stage("cluster"):
        kept_ids = [fp.app_id for fp in fingerprints]
        datasets: dict[str, list[str]] = {"overall": kept_ids}
        cluster_counts = {}
        for eps in config.epsilon_grid:
            name = dataset_name(eps)
            cs = clustering(eps)
            rec = cs.to_json()
            rec["manifest"] = manifest_ref
            _write(out / "clusters" / f"{name}.json", _dumps(rec))
            reps = clu.filter_representatives(fingerprints, cs)
            buf = io.StringIO()
            fpm.write_jsonl(reps, buf)
            _write(out / "filtered" / f"{name}.jsonl", buf.getvalue())
            datasets[name] = [fp.app_id for fp in reps]
            cluster_counts[name] = cs.cluster_count
        label_of = {fp.app_id: fp.label for fp in fingerprints}
        sizes = {}
        rows = [("dataset", "epsilon", "malware", "goodware", "total")]
        for name, members in datasets.items():
            m = sum(label_of[a] == "malware" for a in members)
            g = sum(label_of[a] == "goodware" for a in members)
            sizes[name] = {"malware": m, "goodware": g, "total": len(members)}
            rows.append((name, "" if name == "overall" else name[4:], m, g, len(members)))
        _write(out / "datasets.csv", _csv(rows))

    with _Stage("evaluate") as st:
        forest = config.forest()
        metric_rows = []
        evaluations = {}
        for fset in config.feature_sets:
            base = build_matrix([app_features[a] for a in kept_ids], fset)
            gains_by_ds = {}
            for name, members in datasets.items():
                st.source = f"{fset}/{name}"
                matrix = base.select_ids(members)
                _write(out / "features" / f"{fset}_{name}.csv", dumps_csv(matrix))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateLabelsWarning)
                    ranking = information_gain(matrix) if len(matrix) >= 2 else []
                gains_by_ds[name] = dict(ranking)
                _write(out / "infogain" / f"{fset}_{name}.csv", info_gain_csv(ranking))
                variants = [(False, matrix)]
                if config.balance:
                    variants.append((True, matrix))
                for balanced, mat in variants:
                    key = f"{fset}_{name}" + ("_balanced" if balanced else "")
                    rec = _evaluate(mat, balanced, config, forest, jobs)
                    rec["info_gain"] = [[n, g] for n, g in ranking]
                    rec.update({"feature_set": fset, "dataset": name, "balanced": balanced,
                                "manifest": manifest_ref})
                    _write(out / "eval" / f"{key}.json", _dumps(rec))
                    evaluations[key] = rec
                    if "metrics" in rec:
                        metric_rows.append({"feature_set": fset, "dataset": name, "balanced": balanced,
                                            **rec["metrics"]})
            order = [n for n, _ in sorted(gains_by_ds["overall"].items(), key=lambda kv: -kv[1])] \
                if gains_by_ds["overall"] else list(base.columns)
            table = [("feature", *datasets)]
            for feat in order:
                table.append((feat, *(f"{gains_by_ds[d].get(feat, 0.0):.4f}" for d in datasets)))
            _write(out / "infogain" / f"{fset}_table.csv", _csv(table))
        _write(out / "metrics.csv", _csv(
            [("feature_set", "dataset", "balanced", *METRIC_NAMES)]
            + [(r["feature_set"], r["dataset"], int(r["balanced"]), *(f"{r[m]:.6f}" for m in METRIC_NAMES))
               for r in metric_rows]))

    with _Stage("summary"):
        deltas = {}
        for r in metric_rows:
            if r["dataset"] == "overall":
                continue
            ref = next((x for x in metric_rows if x["feature_set"] == r["feature_set"]
                        and x["dataset"] == "overall" and x["balanced"] == r["balanced"]), None)
            if ref:
                key = f"{r['feature_set']}_{r['dataset']}" + ("_balanced" if r["balanced"] else "")
                deltas[key] = {m: r[m] - ref[m] for m in METRIC_NAMES}
        exact = len(clu.dedup_at_zero(fingerprints).clusters)
        summary = {
            "manifest": manifest_ref,
            "apps": len(apps),
            "excluded": len(excluded),
            "fingerprinted": len(fingerprints),
            "distinct_fingerprints": exact,
            "duplicate_fraction": 1.0 - exact / len(fingerprints),
            "datasets": sizes,
            "epsilons": {dataset_name(e): e for e in config.epsilon_grid},
            "cluster_counts": cluster_counts,
            "sweep": [[e, c] for e, c in sweep],
            "metrics": {k: v.get("metrics") for k, v in evaluations.items()},
            "metric_deltas": deltas,
        }
        _write(out / "summary.json", _dumps(summary))
        if config.figures:
            from .plotting import plot_accuracy, plot_sweep
            plot_sweep(sweep, out / "figures" / "sweep.png")
            if metric_rows:
                plot_accuracy(metric_rows, out / "figures" / "accuracy.png")
    marker.unlink()
    return summary


def _evaluate(matrix, balanced: bool, config: PipelineConfig, forest: ForestConfig, jobs: int) -> dict:
    counts = matrix.class_counts()
    smallest = min(counts["malware"], counts["goodware"])
    if smallest == 0:
        return {"skipped": "needs both classes", "class_counts": counts}
    if balanced:
        matrix = balance_dataset(matrix, config.seed)
    k = min(config.kfold, smallest)
    if k < 2:
        return {"skipped": f"smallest class has {smallest} app(s); cross-validation needs 2",
                "class_counts": counts}
    report = kfold_evaluate(matrix, k, forest, config.seed, jobs)
    rec = report.to_json()
    rec["class_counts"] = matrix.class_counts()
    if k != config.kfold:
        rec["note"] = f"kfold reduced from {config.kfold} to {k} (smallest class size)"
    return rec


# -- report -------------------------------------------------------------------


def _load(path: Path):
    if not path.is_file():
        raise MissingArtifact(f"missing artifact {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def collect_report(artifact_dir: Path) -> dict:
    """Read the numbers a report shows straight from the JSON artifacts."""
    root = Path(artifact_dir)
    if not root.is_dir():
        raise MissingArtifact(f"artifact directory {root} does not exist")
    if (root / INCOMPLETE).exists():
        raise MissingArtifact(f"{root} holds an incomplete run")
    summary = _load(root / "summary.json")
    clusters = {}
    for name in summary["epsilons"]:
        rec = _load(root / "clusters" / f"{name}.json")
        clusters[name] = rec["cluster_count"]
    evals, protocols = {}, {}
    for key in summary["metrics"]:
        rec = _load(root / "eval" / f"{key}.json")
        evals[key] = rec.get("metrics")
        protocols[key] = rec.get("protocol", "")
    return {"summary": summary, "cluster_counts": clusters, "metrics": evals, "protocols": protocols}


def render_report(artifact_dir: Path) -> str:
    data = collect_report(artifact_dir)
    s = data["summary"]
    lines = [f"apps: {s['apps']} ({s['fingerprinted']} fingerprinted, {s['excluded']} excluded)",
             f"duplicate fraction: {s['duplicate_fraction']:.4f} "
             f"({s['distinct_fingerprints']} distinct fingerprints)",
             "",
             f"{'dataset':<12}{'epsilon':>8}{'clusters':>10}{'malware':>9}{'goodware':>10}{'total':>7}"]
    order = ["overall", *sorted(s["epsilons"], key=s["epsilons"].get)]
    for name in order:
        size = s["datasets"][name]
        eps = s["epsilons"].get(name)
        count = data["cluster_counts"].get(name)
        lines.append(f"{name:<12}{'' if eps is None else f'{eps:g}':>8}{'' if count is None else count:>10}"
                     f"{size['malware']:>9}{size['goodware']:>10}{size['total']:>7}")
    lines += ["", "stratified cross-validation, pooled confusion (delta vs overall in brackets)",
              f"{'evaluation':<34}" + "".join(f"{m:>18}" for m in METRIC_NAMES) + "  protocol"]
    rank = {name: i for i, name in enumerate(order)}
    keys = sorted(data["metrics"], key=lambda k: _eval_key(k, rank))
    for key in keys:
        metrics = data["metrics"][key]
        if metrics is None:
            lines.append(f"{key:<34}  skipped")
            continue
        delta = s["metric_deltas"].get(key)
        cells = []
        for m in METRIC_NAMES:
            cell = f"{metrics[m]:.4f}"
            if delta:
                cell += f" [{delta[m]:+.4f}]"
            cells.append(f"{cell:>18}")
        lines.append(f"{key:<34}" + "".join(cells) + f"  {data['protocols'][key]}")
    return "\n".join(lines) + "\n"


def _eval_key(key: str, rank: dict):
    balanced = key.endswith("_balanced")
    base = key[: -len("_balanced")] if balanced else key
    for name, i in rank.items():
        if base.endswith("_" + name):
            return (base[: -len(name) - 1], i, balanced)
    return (base, len(rank), balanced)


def render_figures(artifact_dir: Path, out_dir: Path | None = None) -> list[Path]:
    from .plotting import plot_accuracy, plot_sweep
    root = Path(artifact_dir)
    data = collect_report(root)
    dest = Path(out_dir) if out_dir else root / "figures"
    written = [plot_sweep([tuple(r) for r in data["summary"]["sweep"]], dest / "sweep.png")]
    rows = []
    for key, metrics in data["metrics"].items():
        if metrics is None:
            continue
        rec = _load(root / "eval" / f"{key}.json")
        rows.append({"feature_set": rec["feature_set"], "dataset": rec["dataset"],
                     "balanced": rec["balanced"], "accuracy": metrics["accuracy"]})
    if rows:
        written.append(plot_accuracy(rows, dest / "accuracy.png"))
    return written
