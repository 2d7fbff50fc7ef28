"""End-to-end stages shared by the command line and the tests."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from . import analysis as an
from .classify import (
    Hyperparameters,
    SchemaError,
    TrainedModel,
    evaluate,
    random_baseline,
    stratified_split,
    train,
    weighted_f1,
)
from .classify.selection import staged_search
from .corpus import Corpus, Supercategory
from .features import FeaturePipeline, FileEmbeddingProvider, SegmentSource
from .graph import (
    BinaryCode,
    EdgeKey,
    EdgeLabel,
    FineCode,
    Provenance,
    ReferenceGraph,
    apply_labels,
)

BINARY = "binary"
MULTICLASS = "multiclass"


class PipelineError(Exception):
    pass


@dataclass
class LabelledSet:
    keys: list[EdgeKey]
    labels: list[str]


def training_sets(g: ReferenceGraph, manual: Mapping[EdgeKey, EdgeLabel]) -> dict[str, LabelledSet]:
    """Binary and fine-grained training rows; Unknown/Irrelevant edges are left out."""
    b = LabelledSet([], [])
    m = LabelledSet([], [])
    for key in sorted(manual):
        lab = manual[key]
        if lab.special is not None or key not in g.edges:
            continue
        b.keys.append(key)
        b.labels.append(lab.binary.value)
        if lab.fine is not None:
            m.keys.append(key)
            m.labels.append(lab.fine.value)
    return {BINARY: b, MULTICLASS: m}


def _pipeline_kwargs(hp: Hyperparameters, embeddings) -> dict:
    return dict(encoder_kind=hp.encoder_kind, window=(hp.segment_window_before, hp.segment_window_after),
                reduction_dims=hp.reduction_dims, aggregate_set=hp.aggregate_set_id,
                tokenizer_min_len=hp.tokenizer_min_len, embeddings=embeddings)


def fit_model(g: ReferenceGraph, source: SegmentSource, keys: Sequence[EdgeKey], labels: Sequence[str],
              hp: Hyperparameters, seed: int, embeddings: FileEmbeddingProvider | None = None) -> TrainedModel:
    edges = [g.edges[k] for k in keys]
    pipe = FeaturePipeline.fit(edges, source, **_pipeline_kwargs(hp, embeddings))
    X = pipe.transform(edges, source)
    model = train(X, list(labels), hp, seed, feature_schema=pipe.schema)
    model.preprocessor = pipe.to_json()
    return model


def model_pipeline(model: TrainedModel, embeddings: FileEmbeddingProvider | None = None) -> FeaturePipeline:
    if model.preprocessor is None:
        raise PipelineError("model carries no feature pipeline")
    return FeaturePipeline.from_json(model.preprocessor, embeddings)


def model_features(model: TrainedModel, g: ReferenceGraph, source: SegmentSource, keys: Sequence[EdgeKey],
                   embeddings: FileEmbeddingProvider | None = None) -> np.ndarray:
    pipe = model_pipeline(model, embeddings)
    if list(pipe.schema) != model.feature_schema:
        raise SchemaError("model feature schema does not match its pipeline")
    return pipe.transform([g.edges[k] for k in keys], source)


def tune(g: ReferenceGraph, source: SegmentSource, keys: Sequence[EdgeKey], labels: Sequence[str],
         incumbent: Hyperparameters, stages, k: int, seed: int, embeddings=None):
    edges = [g.edges[key] for key in keys]
    cache: dict = {}

    def featurize(hp, tr, te):
        ck = (tuple(_pipeline_kwargs(hp, None).items()), tuple(tr))
        if ck not in cache:
            pipe = FeaturePipeline.fit([edges[i] for i in tr], source, **_pipeline_kwargs(hp, embeddings))
            cache[ck] = (pipe.transform([edges[i] for i in tr], source),
                         pipe.transform([edges[i] for i in te], source))
        return cache[ck]

    return staged_search(None, list(labels), incumbent, stages, k, seed, featurize)


@dataclass
class TrainResult:
    models: dict[str, TrainedModel]
    splits: dict[str, tuple[list[EdgeKey], list[EdgeKey]]]
    hyperparameters: Hyperparameters
    tuning: dict


def train_models(g: ReferenceGraph, corpus: Corpus, manual: Mapping[EdgeKey, EdgeLabel], hp: Hyperparameters,
                 seed: int, embeddings: FileEmbeddingProvider | None = None, stages=None, folds: int = 5,
                 train_fraction: float = 0.5) -> TrainResult:
    """One stratified seeded split, optional staged tuning on the training half, then fit.

    The split is stratified on the fine code where present (binary code
    otherwise) so both taxonomies share the same train/evaluation edges.
    """
    source = SegmentSource(corpus)
    sets = training_sets(g, manual)
    if len(set(sets[BINARY].labels)) < 2:
        raise PipelineError("annotations contain fewer than 2 binary classes")
    strata = [manual[k].fine.value if manual[k].fine else manual[k].binary.value for k in sets[BINARY].keys]
    tr, _ = stratified_split(strata, train_fraction, seed)
    train_keys = {sets[BINARY].keys[i] for i in tr}
    models, splits, tuning = {}, {}, {}
    for tax in (BINARY, MULTICLASS):
        ls = sets[tax]
        tr_rows = [i for i, k in enumerate(ls.keys) if k in train_keys]
        ev_rows = [i for i, k in enumerate(ls.keys) if k not in train_keys]
        tr_labels = [ls.labels[i] for i in tr_rows]
        if len(set(tr_labels)) < 2:
            continue
        tr_keys = [ls.keys[i] for i in tr_rows]
        use_hp = hp
        if stages:
            use_hp, hist = tune(g, source, tr_keys, tr_labels, hp, stages, folds, seed, embeddings)
            tuning[tax] = {"selected": use_hp.to_dict(),
                           "stages": {st: [{"hyperparameters": r.hyperparameters.to_dict(), "mean_f1": r.mean}
                                           for r in rs] for st, rs in hist.items()}}
        models[tax] = fit_model(g, source, tr_keys, tr_labels, use_hp, seed, embeddings)
        splits[tax] = (tr_keys, [ls.keys[i] for i in ev_rows])
    return TrainResult(models, splits, hp, tuning)


def evaluate_models(g: ReferenceGraph, corpus: Corpus, manual: Mapping[EdgeKey, EdgeLabel],
                    models: Mapping[str, TrainedModel], splits: Mapping[str, tuple[list, list]], seed: int,
                    embeddings: FileEmbeddingProvider | None = None) -> dict:
    """Evaluation reports plus a comparison with a TF-IDF model and a class-prior random guess."""
    source = SegmentSource(corpus)
    out = {"seed": seed, "taxonomies": {}}
    for tax, model in sorted(models.items()):
        tr_keys, ev_keys = splits[tax]
        truth = {k: (manual[k].binary.value if tax == BINARY else manual[k].fine.value) for k in tr_keys + ev_keys}
        y_tr = [truth[k] for k in tr_keys]
        y_ev = [truth[k] for k in ev_keys]
        X = model_features(model, g, source, ev_keys, embeddings)
        pred = model.predict_labels(X)
        P = model.predict_proba(X)
        scores = P[:, 1] if model.binary else None
        rep = evaluate(y_ev, pred, tax, scores, positive=model.classes[1] if model.binary else None,
                       classes=model.classes)
        rows = {model_row_name(model): rep.weighted_f1}
        if model_pipeline(model, embeddings).encoder_kind != "tfidf":
            tf_hp = model.hyperparameters.replace(encoder_kind="tfidf")
            tf_model = fit_model(g, source, tr_keys, y_tr, tf_hp, seed)
            tf_pred = tf_model.predict_labels(model_features(tf_model, g, source, ev_keys))
            rows["tfidf"] = weighted_f1(y_ev, tf_pred)
        rows["random_guess"] = weighted_f1(y_ev, random_baseline(y_tr, seed, size=len(y_ev)))
        rep.extra = {"comparison": rows, "train_size": len(tr_keys), "eval_size": len(ev_keys)}
        out["taxonomies"][tax] = rep.to_json()
    return out


def model_row_name(model: TrainedModel) -> str:
    kind = (model.preprocessor or {}).get("encoder_kind", "tfidf")
    return "sentence_embeddings" if kind == "embedding" else "tfidf"


def label_graph(g: ReferenceGraph, corpus: Corpus, manual: Mapping[EdgeKey, EdgeLabel],
                binary_model: TrainedModel, fine_model: TrainedModel | None = None,
                embeddings: FileEmbeddingProvider | None = None, threshold: float = 0.5) -> ReferenceGraph:
    """Manual labels first, then predictions for every edge still unlabelled."""
    g = apply_labels(g, manual)
    todo = sorted(k for k in g.edges if k not in g.labels)
    if not todo:
        return g
    source = SegmentSource(corpus)
    X = model_features(binary_model, g, source, todo, embeddings)
    P = binary_model.predict_proba(X)
    names = binary_model.predict_labels(X, threshold)
    fine_names = None
    if fine_model is not None:
        fine_names = fine_model.predict_labels(model_features(fine_model, g, source, todo, embeddings))
    predicted = {}
    for i, key in enumerate(todo):
        code = BinaryCode(names[i])
        conf = float(P[i, binary_model.classes.index(names[i])])
        fine = None
        if fine_names is not None:
            f = FineCode(fine_names[i])
            fine = f if f.binary is code else None
        predicted[key] = EdgeLabel(binary=code, fine=fine, provenance=Provenance.PREDICTED, confidence=conf)
    return apply_labels(g, predicted)


def default_probes(corpus: Corpus) -> list[date]:
    years = [r.issued.year for r in corpus.records.values()]
    if not years:
        return [corpus.snapshot_date]
    probes = [date(y, 1, 1) for y in range(min(years), corpus.snapshot_date.year + 1)]
    if corpus.snapshot_date not in probes:
        probes.append(corpus.snapshot_date)
    return probes


def run_rq1(g: ReferenceGraph, corpus: Corpus, probes: Sequence[date]) -> dict:
    return {"culture": an.referencing_stats(g, corpus).to_json(),
            "timeseries": an.temporal_series(g, corpus, probes)}


def run_rq2(g: ReferenceGraph, corpus: Corpus, fine: Mapping[EdgeKey, EdgeLabel], probes: Sequence[date],
            k: int = 10, seed: int = 0, min_size: int = 10, exclude_above: int = 700) -> dict:
    top = an.top_reach(g, corpus, k)
    ids = [c for c, _ in top]
    out = {
        "top_reach": [{"cert_id": c, "reach": r} for c, r in top],
        "top_influence": len(an.influence(g, ids)),
        "top_share_smartcards": [(t.isoformat(), v) for t, v in an.top_reach_share(g, corpus, ids, probes)],
    }
    try:
        res = an.reach_eal_correlation(g, corpus, "greater", seed)
        out["reach_eal_spearman"] = {"rho": res.rho, "p_value": res.p_value, "n": res.n,
                                     "method": res.method, "seed": res.seed, "alternative": "greater"}
    except (an.AnalysisError, ValueError) as exc:
        out["reach_eal_spearman"] = {"error": str(exc)}
    out["propagation"] = an.propagation_study(g, corpus, fine, min_size, exclude_above).to_json()
    return out


def run_rq3(g: ReferenceGraph, corpus: Corpus, schemes: Sequence[str]) -> dict:
    policy = an.policy_18m(g, corpus, schemes)
    return {
        "archived": [o.to_json() for o in an.archived_at_issuance(g, corpus)],
        "fade": an.reach_fade(g, corpus).to_json(),
        "policy": policy.to_json(),
        "policy_cdf": {s: policy.cdf(s) for s in schemes},
    }


def supercategory_counts(corpus: Corpus) -> dict[str, int]:
    counts = {sc.value: 0 for sc in Supercategory}
    for cid in corpus.ids():
        counts[corpus.supercategory(cid).value] += 1
    return counts
