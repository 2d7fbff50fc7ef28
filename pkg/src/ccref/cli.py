"""Command line: ``ccref {build,train,evaluate,label,analyze,report}``.

Exit codes: 0 success, 2 input error, 3 data-consistency error, 4 model/schema error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from . import pipeline as pl
from .classify import FoldError, Hyperparameters, ModelError, TrainedModel
from .corpus import CorpusError, dumps_rejections, load_category_map, load_corpus
from .features import FeatureError, FileEmbeddingProvider
from .graph import (
    GraphError,
    LabelError,
    Provenance,
    apply_labels,
    build_graph,
    dumps_graph,
    dumps_labels,
    loads_graph,
    merge_label_rows,
    read_labels,
)
from .refextract import load_abbreviations, load_schemes

REPORT_SCHEMA_VERSION = 1
RQ_TAGS = ("rq1", "rq2", "rq3")
DEFAULT_POLICY_SCHEMES = ("DE", "FR", "NL")

EXIT_INPUT, EXIT_DATA, EXIT_MODEL = 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    out: Path
    corpus: Path | None = None
    patterns: Path | None = None
    category_map: Path | None = None
    abbreviations: Path | None = None
    annotations: Path | None = None
    embeddings: Path | None = None
    model: Path | None = None
    seed: int = 0
    snapshot_date: date | None = None
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    tuning: dict | None = None
    cv_folds: int = 5
    probe_dates: list[date] | None = None
    policy_schemes: list[str] | None = None
    top_k: int = 10
    min_component_size: int = 10
    exclude_above: int = 700

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise CliError(f"missing required setting: {name}")
            if isinstance(value, Path) and not value.exists():
                raise CliError(f"{name} path does not exist: {value}")

    def input_files(self) -> dict[str, Path]:
        names = ("corpus", "patterns", "category_map", "abbreviations", "annotations", "embeddings")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def fingerprint(self) -> str:
        """Hash of settings and input contents; independent of where files live."""
        doc = {
            "seed": self.seed,
            "snapshot_date": self.snapshot_date.isoformat() if self.snapshot_date else None,
            "hyperparameters": self.hyperparameters.to_dict(),
            "tuning": self.tuning,
            "cv_folds": self.cv_folds,
            "probe_dates": [d.isoformat() for d in self.probe_dates] if self.probe_dates else None,
            "policy_schemes": self.policy_schemes,
            "top_k": self.top_k,
            "min_component_size": self.min_component_size,
            "exclude_above": self.exclude_above,
            "inputs": {n: _sha256(p) for n, p in sorted(self.input_files().items()) if p.exists()},
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_date(value: str, what: str) -> date:
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        raise CliError(f"{what}: not an ISO date: {value!r}") from None


def load_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    base = Path.cwd()
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise CliError(f"config path does not exist: {cfg_path}")
        try:
            raw = json.loads(cfg_path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError(f"config {cfg_path} is not valid JSON: {exc}") from None
        base = cfg_path.parent

    def path(key: str, flag):
        value = flag if flag is not None else raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if flag is not None or p.is_absolute() else base / p

    out = path("out", args.out)
    if out is None:
        raise CliError("missing required setting: out")
    try:
        hp = Hyperparameters.from_dict(raw.get("hyperparameters", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None
    snap = args.snapshot_date or raw.get("snapshot_date")
    return RunConfig(
        out=out,
        corpus=path("corpus", args.corpus),
        patterns=path("patterns", args.patterns),
        category_map=path("category_map", args.category_map),
        abbreviations=path("abbreviations", None),
        annotations=path("annotations", args.annotations),
        embeddings=path("embeddings", args.embeddings),
        model=path("model", args.model),
        seed=args.seed if args.seed is not None else int(raw.get("seed", 0)),
        snapshot_date=_parse_date(snap, "snapshot_date") if snap else None,
        hyperparameters=hp,
        tuning=raw.get("tuning"),
        cv_folds=int(raw.get("cv_folds", 5)),
        probe_dates=[_parse_date(d, "probe_dates") for d in raw["probe_dates"]] if raw.get("probe_dates") else None,
        policy_schemes=raw.get("policy_schemes"),
        top_k=int(raw.get("top_k", 10)),
        min_component_size=int(raw.get("min_component_size", 10)),
        exclude_above=int(raw.get("exclude_above", 700)),
    )


# output helpers ---------------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, date):
        return o.isoformat()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, ensure_ascii=False) + "\n"


def dump_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_doc(cfg: RunConfig, kind: str, body: dict) -> dict:
    return {"schema_version": REPORT_SCHEMA_VERSION, "report": kind, "config_hash": cfg.fingerprint(),
            "seed": cfg.seed, **body}


def write_manifest(cfg: RunConfig, command: str, outputs: list[str]) -> None:
    doc = {
        "command": command,
        "ccref_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "config_hash": cfg.fingerprint(),
        "inputs": {n: {"path": str(p), "sha256": _sha256(p)} for n, p in sorted(cfg.input_files().items())
                   if p.exists()},
        "outputs": {name: _sha256(cfg.out / name) for name in sorted(outputs)},
    }
    write_atomic(cfg.out / f"manifest-{command}.json", dump_json(doc))


# shared loading ---------------------------------------------------------------

def _corpus(cfg: RunConfig):
    cfg.require("corpus", "snapshot_date")
    if cfg.category_map is not None:
        cfg.require("category_map")
    cats = load_category_map(cfg.category_map)
    return load_corpus(cfg.corpus, cfg.snapshot_date, cats)


def _graph(cfg: RunConfig):
    path = cfg.out / "graph.jsonl"
    if not path.exists():
        raise CliError(f"graph file not found: {path} (run `ccref build` first)")
    return loads_graph(path.read_text("utf-8"))


def _manual_labels(cfg: RunConfig, g, required: bool = True):
    if cfg.annotations is None:
        if required:
            raise CliError("missing required setting: annotations")
        return {}
    cfg.require("annotations")
    rows = read_labels(cfg.annotations.read_text("utf-8"))
    unknown = sorted({k for k, _ in rows if k not in g.edges})
    if unknown:
        listing = ", ".join(f"{s}->{t}" for s, t in unknown)
        raise CliError(f"annotations reference unknown edges: {listing}", EXIT_DATA)
    return merge_label_rows(rows)


def _embeddings(cfg: RunConfig):
    if cfg.embeddings is None:
        return None
    cfg.require("embeddings")
    return FileEmbeddingProvider.load(cfg.embeddings)


def _model_paths(cfg: RunConfig) -> dict[str, Path]:
    base = cfg.model if cfg.model is not None else cfg.out
    if base.suffix == ".json":
        return {pl.BINARY: base}
    return {pl.BINARY: base / "model_binary.json", pl.MULTICLASS: base / "model_multiclass.json"}


def _load_models(cfg: RunConfig) -> dict[str, TrainedModel]:
    models = {}
    for tax, p in _model_paths(cfg).items():
        if p.exists():
            models[tax] = TrainedModel.loads(p.read_text("utf-8"))
    if pl.BINARY not in models:
        raise CliError(f"model file not found: {_model_paths(cfg)[pl.BINARY]} (run `ccref train` first)")
    return models


# commands ---------------------------------------------------------------------

def cmd_build(cfg: RunConfig) -> None:
    corpus = _corpus(cfg)
    if cfg.patterns:
        cfg.require("patterns")
    schemes = load_schemes(cfg.patterns) if cfg.patterns else None
    abbrevs = load_abbreviations(cfg.abbreviations) if cfg.abbreviations else None
    g = build_graph(corpus, schemes, abbrevs)
    write_atomic(cfg.out / "graph.jsonl", dumps_graph(g))
    write_atomic(cfg.out / "dangling.csv", dump_csv(["source", "unresolved_id"], g.dangling))
    write_atomic(cfg.out / "rejections.jsonl", dumps_rejections(corpus))
    summary = report_doc(cfg, "build", {
        "vertices": len(g.vertices),
        "edges": len(g.edges),
        "dangling": len(g.dangling),
        "rejected_records": len(corpus.rejections),
        "supercategories": pl.supercategory_counts(corpus),
        "snapshot_date": cfg.snapshot_date,
    })
    write_atomic(cfg.out / "build_summary.json", dump_json(summary))
    write_manifest(cfg, "build", ["graph.jsonl", "dangling.csv", "rejections.jsonl", "build_summary.json"])
    print(f"graph: {len(g.vertices)} vertices, {len(g.edges)} edges, {len(g.dangling)} dangling references")


def cmd_train(cfg: RunConfig) -> None:
    corpus = _corpus(cfg)
    g = _graph(cfg)
    manual = _manual_labels(cfg, g)
    try:
        res = pl.train_models(g, corpus, manual, cfg.hyperparameters, cfg.seed, _embeddings(cfg),
                              stages=cfg.tuning, folds=cfg.cv_folds)
    except pl.PipelineError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    paths = _model_paths(cfg)
    written = []
    for tax, model in res.models.items():
        write_atomic(paths[tax], model.dumps())
        if paths[tax].parent == cfg.out:
            written.append(paths[tax].name)
    split = {tax: {"train": [list(k) for k in tr], "evaluation": [list(k) for k in ev]}
             for tax, (tr, ev) in res.splits.items()}
    write_atomic(cfg.out / "split.json", dump_json(report_doc(cfg, "split", {"splits": split})))
    if res.tuning:
        write_atomic(cfg.out / "tuning.json", dump_json(report_doc(cfg, "tuning", res.tuning)))
        written.append("tuning.json")
    write_manifest(cfg, "train", written + ["split.json"])
    print("trained: " + ", ".join(f"{t} ({len(m.classes)} classes)" for t, m in res.models.items()))


def cmd_evaluate(cfg: RunConfig) -> None:
    corpus = _corpus(cfg)
    g = _graph(cfg)
    manual = _manual_labels(cfg, g)
    models = _load_models(cfg)
    split_path = cfg.out / "split.json"
    if not split_path.exists():
        raise CliError(f"split file not found: {split_path} (run `ccref train` first)")
    raw = json.loads(split_path.read_text("utf-8"))["splits"]
    splits = {tax: ([tuple(k) for k in v["train"]], [tuple(k) for k in v["evaluation"]]) for tax, v in raw.items()}
    missing = sorted({k for tr, ev in splits.values() for k in tr + ev if k not in manual})
    if missing:
        raise CliError(f"split edges lack annotations: {missing[:5]}", EXIT_DATA)
    rep = pl.evaluate_models(g, corpus, manual, {t: m for t, m in models.items() if t in splits}, splits,
                             cfg.seed, _embeddings(cfg))
    write_atomic(cfg.out / "eval_report.json", dump_json(report_doc(cfg, "evaluation", rep)))
    rows = []
    for tax, r in rep["taxonomies"].items():
        if r["roc"]:
            rows.extend((x, y, tax) for x, y in r["roc"]["points"])
    write_atomic(cfg.out / "roc.csv", dump_csv(["x", "y", "series"], rows))
    table = [(tax, name, f1) for tax, r in rep["taxonomies"].items() for name, f1 in r["comparison"].items()]
    write_atomic(cfg.out / "model_comparison.csv", dump_csv(["taxonomy", "model", "weighted_f1"], table))
    write_manifest(cfg, "evaluate", ["eval_report.json", "roc.csv", "model_comparison.csv"])
    for tax, name, f1 in table:
        print(f"{tax:10s} {name:20s} weighted F1 = {f1:.3f}")


def cmd_label(cfg: RunConfig) -> None:
    corpus = _corpus(cfg)
    g = _graph(cfg)
    manual = _manual_labels(cfg, g, required=False)
    if set(g.edges) <= set(manual):
        g = apply_labels(g, manual)  # nothing left to predict
    else:
        models = _load_models(cfg)
        g = pl.label_graph(g, corpus, manual, models[pl.BINARY], models.get(pl.MULTICLASS), _embeddings(cfg))
    write_atomic(cfg.out / "labels.csv", dumps_labels(g.labels))
    n_pred = sum(1 for lab in g.labels.values() if lab.provenance is Provenance.PREDICTED)
    write_manifest(cfg, "label", ["labels.csv"])
    print(f"labelled {len(g.labels)}/{len(g.edges)} edges ({n_pred} predicted)")


def _labelled_graph(cfg: RunConfig):
    g = _graph(cfg)
    path = cfg.out / "labels.csv"
    if not path.exists():
        raise CliError(f"graph is not labelled: {path} missing (run `ccref label` first)", EXIT_DATA)
    g = apply_labels(g, merge_label_rows(read_labels(path.read_text("utf-8"))))
    unlabelled = len(g.edges) - len(g.labels)
    if unlabelled:
        raise CliError(f"{unlabelled} edges have no label (run `ccref label` first)", EXIT_DATA)
    return g


def cmd_analyze(cfg: RunConfig, which: list[str]) -> None:
    corpus = _corpus(cfg)
    g = _labelled_graph(cfg)
    probes = cfg.probe_dates or pl.default_probes(corpus)
    written = []

    def emit(name: str, text: str):
        write_atomic(cfg.out / name, text)
        written.append(name)

    if "rq1" in which:
        res = pl.run_rq1(g, corpus, probes)
        ts = res["timeseries"]
        emit("rq1_culture.json", dump_json(report_doc(cfg, "rq1_culture", {
            "culture": res["culture"]})))
        emit("rq1_timeseries.json", dump_json(report_doc(cfg, "rq1_timeseries", ts.to_json())))
        emit("rq1_culture.csv", dump_csv(["x", "y", "series"], [
            (group, vals[f"{k}_fraction"], k) for group, vals in res["culture"].items()
            for k in ("any_reference", "component_reuse", "predecessor")]))
        emit("rq1_timeseries.csv", dump_csv(["x", "y", "series"], ts.rows()))
    if "rq2" in which:
        fine = {k: lab for k, lab in _manual_labels(cfg, g, required=False).items() if lab.fine is not None}
        res = pl.run_rq2(g, corpus, fine, probes, cfg.top_k, cfg.seed, cfg.min_component_size, cfg.exclude_above)
        emit("rq2_reach.json", dump_json(report_doc(cfg, "rq2_reach", res)))
        emit("rq2_top_share.csv", dump_csv(["x", "y", "series"], [
            (t, v, "top_reach_share:Smartcard") for t, v in res["top_share_smartcards"] if v is not None]))
    if "rq3" in which:
        present = sorted({r.scheme for r in corpus.records.values()})
        schemes = cfg.policy_schemes or [s for s in DEFAULT_POLICY_SCHEMES if s in present]
        res = pl.run_rq3(g, corpus, schemes)
        emit("rq3_ageing.json", dump_json(report_doc(cfg, "rq3_ageing", res)))
        emit("rq3_fade.csv", dump_csv(["x", "y", "series"], [(x, y, "reach_survival")
                                                            for x, y in res["fade"]["survival"]]))
        emit("rq3_policy.csv", dump_csv(["x", "y", "series"], [(x, y, f"age_cdf:{s}")
                                                              for s, pts in res["policy_cdf"].items()
                                                              for x, y in pts]))
    write_manifest(cfg, "analyze", written)
    print("wrote " + ", ".join(written))


def cmd_report(cfg: RunConfig) -> None:
    """Collect the JSON outputs present in the output directory into one markdown summary."""
    parts = ["# ccref report", ""]

    def load(name):
        p = cfg.out / name
        return json.loads(p.read_text("utf-8")) if p.exists() else None

    if (b := load("build_summary.json")):
        parts += ["## Graph", f"- vertices: {b['vertices']}", f"- edges: {b['edges']}",
                  f"- dangling references: {b['dangling']}", ""]
    if (e := load("eval_report.json")):
        parts += ["## Classifier (weighted F1)", "", "| taxonomy | model | weighted F1 |", "|---|---|---|"]
        for tax, r in e["taxonomies"].items():
            for name, f1 in r["comparison"].items():
                parts.append(f"| {tax} | {name} | {f1:.3f} |")
        parts.append("")
    if (c := load("rq1_culture.json")):
        parts += ["## Referencing culture", "", "| group | total | any | component reuse | predecessor |",
                  "|---|---|---|---|---|"]
        for group, v in c["culture"].items():
            parts.append(f"| {group} | {v['total']} | {v['any_reference']} ({v['any_reference_fraction']:.2%}) | "
                         f"{v['component_reuse']} ({v['component_reuse_fraction']:.2%}) | "
                         f"{v['predecessor']} ({v['predecessor_fraction']:.2%}) |")
        parts.append("")
    if (r := load("rq2_reach.json")):
        parts += ["## Highest reach", ""]
        parts += [f"{i}. {row['cert_id']}: {row['reach']}" for i, row in enumerate(r["top_reach"], start=1)]
        parts += ["", f"Top-{len(r['top_reach'])} combined influence: {r['top_influence']} products", ""]
        sp = r["reach_eal_spearman"]
        if "rho" in sp:
            parts += [f"Reach vs EAL: Spearman rho = {sp['rho']:.3f}, p = {sp['p_value']:.3g} ({sp['method']})", ""]
    if (a := load("rq3_ageing.json")):
        fade = a["fade"]
        parts += ["## Ageing", f"- references to already-archived components: {len(a['archived'])}",
                  f"- fade cohort: {fade['cohort_size']} ({fade['censored']} censored)"]
        for s, v in a["policy"]["schemes"].items():
            parts.append(f"- {s}: {v['violation_fraction']:.1%} of {v['products']} products violate the 18-month rule")
        parts.append("")
    write_atomic(cfg.out / "report.md", "\n".join(parts) + "\n")
    print(f"wrote {cfg.out / 'report.md'}")


# entry point --------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--corpus")
    common.add_argument("--patterns")
    common.add_argument("--category-map")
    common.add_argument("--annotations")
    common.add_argument("--embeddings")
    common.add_argument("--model", help="model file or directory (default: the output directory)")
    common.add_argument("--out")
    common.add_argument("--seed", type=int)
    common.add_argument("--snapshot-date")

    parser = argparse.ArgumentParser(prog="ccref", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ccref {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="extract references and build the graph")
    sub.add_parser("train", parents=[common], help="train edge-context classifiers on annotations")
    sub.add_parser("evaluate", parents=[common], help="evaluate trained classifiers on the held-out half")
    sub.add_parser("label", parents=[common], help="label every edge (manual first, then predicted)")
    an = sub.add_parser("analyze", parents=[common], help="run the referencing/reach/ageing analyses")
    an.add_argument("--rq", action="append", choices=RQ_TAGS,
                    help="analysis to run; repeatable (default: all)")
    sub.add_parser("report", parents=[common], help="summarise existing outputs as markdown")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "build":
            cmd_build(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "label":
            cmd_label(cfg)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.rq or list(RQ_TAGS))
        elif args.command == "report":
            cmd_report(cfg)
    except CliError as exc:
        print(f"ccref: error: {exc}", file=sys.stderr)
        return exc.code
    except (CorpusError, LabelError, GraphError, FoldError) as exc:
        print(f"ccref: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, FeatureError) as exc:
        print(f"ccref: error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, ValueError) as exc:
        print(f"ccref: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
