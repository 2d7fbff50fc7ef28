"""Edge feature extraction: segment encoders, 2-D reduction, aggregates and metadata."""
from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import Corpus
from .graph import ReferenceEdge
from .refextract import DocumentIndex

AGGREGATE_SETS: dict[str, tuple[str, ...]] = {
    "full": ("mean", "median", "min", "max", "var"),
    "central": ("mean", "median", "var"),
}
METADATA_SLOTS = (
    "segment_count",
    "title_similarity_token",
    "title_similarity_edit",
    "same_scheme",
    "issued_gap_days",
    "same_category",
)


class FeatureError(Exception):
    pass


# TF-IDF ---------------------------------------------------------------------

@dataclass(frozen=True)
class VectorizerConfig:
    min_token_len: int = 2
    lowercase: bool = True


@dataclass
class Vectorizer:
    vocabulary: dict[str, int]
    idf: np.ndarray
    config: VectorizerConfig = field(default_factory=VectorizerConfig)

    @property
    def dimension(self) -> int:
        return len(self.vocabulary)

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text, self.config)

    def to_json(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {"terms": terms, "idf": [float(v) for v in self.idf],
                "min_token_len": self.config.min_token_len, "lowercase": self.config.lowercase}

    @classmethod
    def from_json(cls, obj: dict) -> "Vectorizer":
        return cls({t: i for i, t in enumerate(obj["terms"])}, np.asarray(obj["idf"], dtype=float),
                   VectorizerConfig(obj["min_token_len"], obj["lowercase"]))


def tokenize(text: str, config: VectorizerConfig = VectorizerConfig()) -> list[str]:
    if config.lowercase:
        text = text.lower()
    return [t for t in re.findall(r"[^\W_]+", text) if len(t) >= config.min_token_len]


def fit_vectorizer(segments: Sequence[str], config: VectorizerConfig = VectorizerConfig()) -> Vectorizer:
    """Vocabulary in sorted token order with smoothed idf ``ln((1+N)/(1+df)) + 1``."""
    if not segments:
        raise FeatureError("cannot fit a vectorizer on zero segments")
    df: Counter[str] = Counter()
    for seg in segments:
        df.update(set(tokenize(seg, config)))
    terms = sorted(df)
    n = len(segments)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms], dtype=float)
    return Vectorizer({t: i for i, t in enumerate(terms)}, idf, config)


def vectorize(v: Vectorizer, segment: str) -> dict[int, float]:
    """Sparse L2-normalised tf-idf vector as ``{index: weight}``; OOV tokens are ignored."""
    tf = Counter(t for t in v.tokenize(segment) if t in v.vocabulary)
    weights = {v.vocabulary[t]: c * float(v.idf[v.vocabulary[t]]) for t, c in tf.items()}
    norm = math.sqrt(sum(w * w for w in weights.values()))
    if norm == 0.0:
        return {}
    return {i: w / norm for i, w in sorted(weights.items())}


def densify(sparse: Mapping[int, float], dim: int) -> np.ndarray:
    out = np.zeros(dim)
    for i, w in sparse.items():
        out[i] = w
    return out


# Encoders -------------------------------------------------------------------

class EmbeddingProvider(Protocol):
    kind: str

    @property
    def dimension(self) -> int: ...

    def encode(self, text: str) -> np.ndarray: ...


def segment_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class TfidfEncoder:
    kind = "tfidf"

    def __init__(self, vectorizer: Vectorizer):
        self.vectorizer = vectorizer

    @property
    def dimension(self) -> int:
        return self.vectorizer.dimension

    def encode(self, text: str) -> np.ndarray:
        return densify(vectorize(self.vectorizer, text), self.dimension)


class FileEmbeddingProvider:
    """Precomputed segment vectors keyed by the SHA-256 of the segment text.

    The file holds one JSON object per line: ``{"hash": ..., "vector": [...]}``.
    """

    kind = "embedding"

    def __init__(self, table: Mapping[str, np.ndarray]):
        dims = {len(v) for v in table.values()}
        if len(dims) > 1:
            raise FeatureError(f"embedding file mixes dimensions {sorted(dims)}")
        self.table = dict(table)
        self._dim = dims.pop() if dims else 0

    @classmethod
    def load(cls, path: str | Path) -> "FileEmbeddingProvider":
        table = {}
        for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            vec = np.asarray(obj["vector"], dtype=float)
            if not np.all(np.isfinite(vec)):
                raise FeatureError(f"embedding file line {lineno}: non-finite value")
            table[obj["hash"]] = vec
        return cls(table)

    @property
    def dimension(self) -> int:
        return self._dim

    def encode(self, text: str) -> np.ndarray:
        try:
            return self.table[segment_hash(text)]
        except KeyError:
            raise FeatureError(f"no precomputed embedding for segment {segment_hash(text)[:12]}") from None


def write_embedding_file(path: str | Path, vectors: Mapping[str, Sequence[float]]) -> None:
    """Write ``{segment text: vector}`` in the embedding-file format."""
    lines = [json.dumps({"hash": segment_hash(t), "vector": [float(x) for x in v]})
             for t, v in sorted(vectors.items())]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


# PCA ------------------------------------------------------------------------

@dataclass
class Reducer:
    mean: np.ndarray
    components: np.ndarray  # (n_components, d), orthonormal rows
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        return self.explained_variance / total if total > 0 else np.zeros_like(self.explained_variance)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Reducer":
        return cls(np.asarray(obj["mean"], dtype=float),
                   np.asarray(obj["components"], dtype=float).reshape(len(obj["components"]), -1),
                   np.asarray(obj["explained_variance"], dtype=float))


def fit_reducer(vectors, n_components: int = 2) -> Reducer:
    """PCA via SVD of the centred data.

    Components are ordered by explained variance; each is signed so that its
    largest-magnitude loading is positive.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FeatureError("PCA needs at least 2 samples")
    n, d = X.shape
    if d < n_components:
        raise FeatureError(f"cannot reduce {d}-dimensional vectors to {n_components} dimensions")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=min(n, d) < n_components)
    comps = vt[:n_components].copy()
    var = np.zeros(n_components)
    k = min(n_components, len(s))
    var[:k] = s[:k] ** 2 / (n - 1)
    for i, row in enumerate(comps):
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            comps[i] = -row
    return Reducer(mean, comps, var)


def reduce(r: Reducer, v) -> np.ndarray:
    return r.components @ (np.asarray(v, dtype=float) - r.mean)


# Aggregates and metadata ----------------------------------------------------

_STATS = {
    "mean": lambda a: a.mean(axis=0),
    "median": lambda a: np.median(a, axis=0),
    "min": lambda a: a.min(axis=0),
    "max": lambda a: a.max(axis=0),
    "var": lambda a: a.var(axis=0),
}


def aggregate_names(dims: int = 2, aggregate_set: str = "full") -> list[str]:
    return [f"{stat}_{d}" for stat in AGGREGATE_SETS[aggregate_set] for d in range(dims)]


def aggregate(segment_vectors, aggregate_set: str = "full") -> dict[str, float]:
    """Per-dimension statistics over an edge's reduced segment vectors, plus the count."""
    a = np.asarray(segment_vectors, dtype=float)
    if a.size == 0:
        raise FeatureError("cannot aggregate zero segment vectors")
    if a.ndim == 1:
        a = a[None, :]
    out: dict[str, float] = {}
    for stat in AGGREGATE_SETS[aggregate_set]:
        vals = _STATS[stat](a)
        for d, x in enumerate(vals):
            out[f"{stat}_{d}"] = float(x)
    out["segment_count"] = float(a.shape[0])
    return out


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def title_similarity(a: str, b: str) -> tuple[float, float]:
    """(Jaccard over lowercased whitespace tokens, 1 - normalised edit distance)."""
    a, b = a.lower().strip(), b.lower().strip()
    ta, tb = set(a.split()), set(b.split())
    jac = 1.0 if not ta and not tb else len(ta & tb) / len(ta | tb)
    longest = max(len(a), len(b))
    edit = 1.0 if longest == 0 else 1.0 - levenshtein(a, b) / longest
    return jac, edit


# Edge features --------------------------------------------------------------

@dataclass(frozen=True)
class EdgeFeatures:
    schema: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.schema) != len(self.values):
            raise FeatureError("feature values do not match schema length")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.schema, (float(v) for v in self.values)))

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.schema.index(name)])


def feature_schema(dims: int = 2, aggregate_set: str = "full") -> tuple[str, ...]:
    return tuple(aggregate_names(dims, aggregate_set)) + METADATA_SLOTS


def metadata_features(edge: ReferenceEdge, corpus: Corpus) -> dict[str, float]:
    for end in (edge.source, edge.target):
        if end not in corpus:
            raise FeatureError(f"edge {edge.source} -> {edge.target}: no record for {end}")
    src, dst = corpus[edge.source], corpus[edge.target]
    tok, ed = title_similarity(src.name, dst.name)
    return {
        "title_similarity_token": tok,
        "title_similarity_edit": ed,
        "same_scheme": float(src.scheme == dst.scheme),
        "issued_gap_days": float((src.issued - dst.issued).days),
        "same_category": float(src.category == dst.category),
    }


def featurize_edge(edge: ReferenceEdge, corpus: Corpus, encoder: EmbeddingProvider | Vectorizer,
                   reducer: Reducer, aggregate_set: str = "full",
                   segments: Sequence[str] | None = None) -> EdgeFeatures:
    """Encode, reduce and aggregate the edge's segments, then append metadata slots.

    ``segments`` overrides the texts stored on the edge (used when the context
    window differs from the one the graph was built with).
    """
    if isinstance(encoder, Vectorizer):
        encoder = TfidfEncoder(encoder)
    texts = list(segments) if segments is not None else [s.text for s in edge.segments]
    if not texts:
        raise FeatureError(f"edge {edge.source} -> {edge.target} has no segments")
    meta = metadata_features(edge, corpus)
    reduced = np.vstack([reduce(reducer, encoder.encode(t)) for t in texts])
    slots = aggregate(reduced, aggregate_set)
    slots.update(meta)
    schema = feature_schema(reducer.n_components, aggregate_set)
    values = np.array([slots[name] for name in schema], dtype=float)
    if not np.all(np.isfinite(values)):
        raise FeatureError(f"edge {edge.source} -> {edge.target}: non-finite feature")
    return EdgeFeatures(schema, values)


# Whole pipeline ---------------------------------------------------------------

class SegmentSource:
    """Segment texts for an edge under a given context window.

    The graph stores segments for its build window; other windows are
    re-extracted from the source certificate's documents.
    """

    def __init__(self, corpus: Corpus, build_window: tuple[int, int] = (2, 1)):
        self.corpus = corpus
        self.build_window = build_window
        self._index: dict[tuple[str, str], DocumentIndex] = {}

    def _doc(self, cid: str, kind: str) -> DocumentIndex | None:
        key = (cid, kind)
        if key not in self._index:
            rec = self.corpus[cid]
            text = rec.report_text if kind == "report" else rec.target_text
            self._index[key] = DocumentIndex(text, source_doc=kind) if text else None
        return self._index[key]

    def texts(self, edge: ReferenceEdge, before: int, after: int) -> list[str]:
        if (before, after) == self.build_window or edge.source not in self.corpus:
            return [s.text for s in edge.segments]
        out = []
        for kind in ("report", "target"):
            doc = self._doc(edge.source, kind)
            if doc is not None:
                out.extend(s.text for s in doc.segments(edge.target, before, after))
        return out or [s.text for s in edge.segments]


@dataclass
class FeaturePipeline:
    """Fitted encoder + reducer and the settings that produced them."""

    encoder_kind: str
    reducer: Reducer
    vectorizer: Vectorizer | None = None
    embeddings: FileEmbeddingProvider | None = None
    window: tuple[int, int] = (2, 1)
    aggregate_set: str = "full"

    @property
    def encoder(self) -> EmbeddingProvider:
        if self.encoder_kind == "tfidf":
            return TfidfEncoder(self.vectorizer)
        if self.embeddings is None:
            raise FeatureError("embedding encoder selected but no embedding file loaded")
        return self.embeddings

    @property
    def schema(self) -> tuple[str, ...]:
        return feature_schema(self.reducer.n_components, self.aggregate_set)

    @classmethod
    def fit(cls, edges: Sequence[ReferenceEdge], source: SegmentSource, *, encoder_kind: str = "tfidf",
            window: tuple[int, int] = (2, 1), reduction_dims: int = 2, aggregate_set: str = "full",
            tokenizer_min_len: int = 2, embeddings: FileEmbeddingProvider | None = None) -> "FeaturePipeline":
        texts = [t for e in edges for t in source.texts(e, *window)]
        vectorizer = None
        if encoder_kind == "tfidf":
            vectorizer = fit_vectorizer(texts, VectorizerConfig(min_token_len=tokenizer_min_len))
            encoder: EmbeddingProvider = TfidfEncoder(vectorizer)
        elif encoder_kind == "embedding":
            if embeddings is None:
                raise FeatureError("encoder_kind 'embedding' needs an embedding file")
            encoder = embeddings
        else:
            raise FeatureError(f"unknown encoder kind {encoder_kind!r}")
        unique = sorted(set(texts))
        reducer = fit_reducer(np.vstack([encoder.encode(t) for t in unique]), reduction_dims)
        return cls(encoder_kind, reducer, vectorizer, embeddings, tuple(window), aggregate_set)

    def transform(self, edges: Sequence[ReferenceEdge], source: SegmentSource) -> np.ndarray:
        enc = self.encoder
        rows = [featurize_edge(e, source.corpus, enc, self.reducer, self.aggregate_set,
                               source.texts(e, *self.window)).values for e in edges]
        return np.vstack(rows) if rows else np.zeros((0, len(self.schema)))

    def to_json(self) -> dict:
        return {
            "encoder_kind": self.encoder_kind,
            "window": list(self.window),
            "aggregate_set": self.aggregate_set,
            "reducer": self.reducer.to_json(),
            "vectorizer": self.vectorizer.to_json() if self.vectorizer else None,
        }

    @classmethod
    def from_json(cls, obj: dict, embeddings: FileEmbeddingProvider | None = None) -> "FeaturePipeline":
        vec = Vectorizer.from_json(obj["vectorizer"]) if obj.get("vectorizer") else None
        return cls(obj["encoder_kind"], Reducer.from_json(obj["reducer"]), vec, embeddings,
                   tuple(obj["window"]), obj["aggregate_set"])


def write_feature_dump(path: str | Path, keys: Iterable[tuple[str, str]], X: np.ndarray,
                       schema: Sequence[str]) -> None:
    lines = [",".join(["edge_source", "edge_target", *schema])]
    for (s, t), row in zip(keys, X):
        lines.append(",".join([s, t, *(repr(float(v)) for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")
