"""Directed reference graph among certificates, edge labels and reach queries."""
from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus
from .refextract import DocumentIndex, IdScheme, ReferenceSegment, default_abbreviations, default_schemes

GRAPH_FORMAT_VERSION = 1
LABEL_COLUMNS = ("edge_source", "edge_target", "binary", "fine", "special", "provenance", "confidence")

EdgeKey = tuple[str, str]


class GraphError(Exception):
    pass


class LabelError(GraphError):
    pass


class BinaryCode(str, Enum):
    COMPONENT_REUSE = "ComponentReuse"
    PREDECESSOR = "Predecessor"


class FineCode(str, Enum):
    COMPONENT_USED = "ComponentUsed"
    COMPONENT_SHARED = "ComponentShared"
    EVALUATION_REUSED = "EvaluationReused"
    RE_EVALUATION = "ReEvaluation"
    PREVIOUS_VERSION = "PreviousVersion"

    @property
    def binary(self) -> BinaryCode:
        if self in (FineCode.RE_EVALUATION, FineCode.PREVIOUS_VERSION):
            return BinaryCode.PREDECESSOR
        return BinaryCode.COMPONENT_REUSE


class SpecialCode(str, Enum):
    UNKNOWN = "Unknown"
    IRRELEVANT = "Irrelevant"


class Provenance(str, Enum):
    MANUAL = "manual"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class EdgeLabel:
    binary: BinaryCode | None = None
    fine: FineCode | None = None
    special: SpecialCode | None = None
    provenance: Provenance = Provenance.MANUAL
    confidence: float = 1.0

    def __post_init__(self):
        if self.special is not None:
            if self.binary is not None or self.fine is not None:
                raise LabelError("special label must not carry binary or fine codes")
        else:
            if self.binary is None:
                raise LabelError("label needs a binary code, a fine code or a special code")
            if self.fine is not None and self.fine.binary is not self.binary:
                raise LabelError(f"fine code {self.fine.value} is inconsistent with binary {self.binary.value}")
        if not 0.0 <= self.confidence <= 1.0:
            raise LabelError(f"confidence {self.confidence} outside [0, 1]")
        if self.provenance is Provenance.MANUAL and self.confidence != 1.0:
            raise LabelError("manual labels have confidence 1")

    @classmethod
    def from_fine(cls, fine: FineCode, **kw) -> "EdgeLabel":
        return cls(binary=fine.binary, fine=fine, **kw)

    @property
    def is_component_reuse(self) -> bool:
        return self.binary is BinaryCode.COMPONENT_REUSE


@dataclass(frozen=True)
class ReferenceEdge:
    source: str
    target: str
    segments: tuple[ReferenceSegment, ...]
    source_docs: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.source == self.target:
            raise GraphError(f"self-loop on {self.source}")

    @property
    def key(self) -> EdgeKey:
        return self.source, self.target


@dataclass(frozen=True)
class ReferenceGraph:
    vertices: frozenset[str]
    edges: Mapping[EdgeKey, ReferenceEdge]
    labels: Mapping[EdgeKey, EdgeLabel] = field(default_factory=dict)
    dangling: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for s, t in self.edges:
            if s == t:
                raise GraphError(f"self-loop on {s}")
            if s not in self.vertices or t not in self.vertices:
                raise GraphError(f"edge ({s}, {t}) has an endpoint outside the vertex set")

    def label(self, key: EdgeKey) -> EdgeLabel | None:
        return self.labels.get(key)

    def is_reuse(self, key: EdgeKey) -> bool:
        lab = self.labels.get(key)
        return lab is not None and lab.is_component_reuse

    def edges_with(self, code: BinaryCode | None) -> list[EdgeKey]:
        if code is None:
            return sorted(self.edges)
        return sorted(k for k in self.edges if (lab := self.labels.get(k)) and lab.binary is code)

    @cached_property
    def _reuse_adjacency(self) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
        succ: dict[str, list[str]] = {}
        pred: dict[str, list[str]] = {}
        for s, t in sorted(self.edges):
            if self.is_reuse((s, t)):
                succ.setdefault(s, []).append(t)
                pred.setdefault(t, []).append(s)
        return succ, pred

    def reuse_successors(self, v: str) -> list[str]:
        return self._reuse_adjacency[0].get(v, [])

    def reuse_predecessors(self, v: str) -> list[str]:
        return self._reuse_adjacency[1].get(v, [])

    def out_degree(self) -> dict[str, int]:
        deg = dict.fromkeys(self.vertices, 0)
        for s, _ in self.edges:
            deg[s] += 1
        return deg


def _closure(start: str, neighbours) -> set[str]:
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in neighbours(v):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    seen.discard(start)
    return seen


def _require_vertex(g: ReferenceGraph, c: str) -> None:
    if c not in g.vertices:
        raise GraphError(f"unknown vertex {c!r}")


def reach_ancestors(g: ReferenceGraph, c: str) -> set[str]:
    """Vertices with an all-ComponentReuse path into ``c``."""
    _require_vertex(g, c)
    return _closure(c, g.reuse_predecessors)


def reach(g: ReferenceGraph, c: str) -> int:
    return len(reach_ancestors(g, c))


def transitive_refs(g: ReferenceGraph, c: str) -> set[str]:
    """Vertices reachable from ``c`` along ComponentReuse edges only."""
    _require_vertex(g, c)
    return _closure(c, g.reuse_successors)


def reach_all(g: ReferenceGraph) -> dict[str, int]:
    return {c: reach(g, c) for c in sorted(g.vertices)}


def weakly_connected_components(g: ReferenceGraph, label_filter: BinaryCode | None = None) -> list[set[str]]:
    """Components of the (optionally label-filtered) edge set, ignoring direction.

    Vertices without any retained edge are left out. Sorted by size descending,
    then by smallest member id.
    """
    adj: dict[str, set[str]] = {}
    for s, t in g.edges_with(label_filter):
        adj.setdefault(s, set()).add(t)
        adj.setdefault(t, set()).add(s)
    seen: set[str] = set()
    comps = []
    for v in sorted(adj):
        if v in seen:
            continue
        comp = _closure(v, lambda x: adj[x]) | {v}
        seen |= comp
        comps.append(comp)
    comps.sort(key=lambda c: (-len(c), min(c)))
    return comps


def induced_subgraph(g: ReferenceGraph, keep: Iterable[str]) -> ReferenceGraph:
    keep = frozenset(keep) & g.vertices
    edges = {k: e for k, e in g.edges.items() if k[0] in keep and k[1] in keep}
    labels = {k: lab for k, lab in g.labels.items() if k in edges}
    dangling = tuple(d for d in g.dangling if d[0] in keep)
    return ReferenceGraph(keep, edges, labels, dangling)


def snapshot(g: ReferenceGraph, corpus: Corpus, at: date) -> ReferenceGraph:
    """Induced subgraph on the certificates active at ``at``; labels carried over."""
    return induced_subgraph(g, (v for v in g.vertices if v in corpus and corpus.is_active(v, at)))


def _outranks(new: EdgeLabel, old: EdgeLabel | None) -> bool:
    return old is None or not (old.provenance is Provenance.MANUAL and new.provenance is Provenance.PREDICTED)


def apply_labels(g: ReferenceGraph, labels: Mapping[EdgeKey, EdgeLabel] | Iterable[tuple[EdgeKey, EdgeLabel]]) -> ReferenceGraph:
    """Return ``g`` with ``labels`` merged in; manual labels are never replaced by predictions."""
    items = labels.items() if isinstance(labels, Mapping) else labels
    table = dict(g.labels)
    for key, lab in items:
        key = tuple(key)
        if key not in g.edges:
            raise LabelError(f"label refers to nonexistent edge {key[0]} -> {key[1]}")
        if _outranks(lab, table.get(key)):
            table[key] = lab
    return ReferenceGraph(g.vertices, g.edges, table, g.dangling)


def build_graph(corpus: Corpus, schemes: Sequence[IdScheme] | None = None,
                abbreviations: Iterable[str] | None = None,
                before: int = 2, after: int = 1) -> ReferenceGraph:
    """Edge (i, j) iff i's report or target text mentions j's certificate id."""
    schemes = tuple(schemes) if schemes is not None else default_schemes()
    abbreviations = frozenset(abbreviations) if abbreviations is not None else default_abbreviations()
    vertices = frozenset(corpus.records)
    segs: dict[EdgeKey, list[ReferenceSegment]] = {}
    docs: dict[EdgeKey, set[str]] = {}
    dangling: dict[tuple[str, str], None] = {}
    for cid in corpus.ids():
        rec = corpus[cid]
        for kind, text in (("report", rec.report_text), ("target", rec.target_text)):
            if not text:
                continue
            idx = DocumentIndex(text, schemes, abbreviations, source_doc=kind)
            for ref in idx.mentioned_ids(self_id=cid):
                if ref in vertices:
                    key = (cid, ref)
                    segs.setdefault(key, []).extend(idx.segments(ref, before, after))
                    docs.setdefault(key, set()).add(kind)
                else:
                    dangling.setdefault((cid, ref))
    edges = {k: ReferenceEdge(k[0], k[1], tuple(v), frozenset(docs[k])) for k, v in sorted(segs.items())}
    return ReferenceGraph(vertices, edges, {}, tuple(dangling))


# serialization -------------------------------------------------------------

def dumps_graph(g: ReferenceGraph) -> str:
    header = {
        "kind": "ccref-graph",
        "version": GRAPH_FORMAT_VERSION,
        "vertices": sorted(g.vertices),
        "dangling": [list(d) for d in g.dangling],
    }
    lines = [json.dumps(header, ensure_ascii=False)]
    for key in sorted(g.edges):
        e = g.edges[key]
        lines.append(json.dumps({
            "source": e.source,
            "target": e.target,
            "source_docs": sorted(e.source_docs),
            "segments": [s.to_json() for s in e.segments],
        }, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def loads_graph(text: str) -> ReferenceGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GraphError("empty graph file")
    header = json.loads(lines[0])
    if header.get("kind") != "ccref-graph":
        raise GraphError("not a graph file")
    if header.get("version") != GRAPH_FORMAT_VERSION:
        raise GraphError(f"unsupported graph format version {header.get('version')}")
    edges = {}
    for ln in lines[1:]:
        obj = json.loads(ln)
        e = ReferenceEdge(obj["source"], obj["target"],
                          tuple(ReferenceSegment.from_json(s) for s in obj["segments"]),
                          frozenset(obj["source_docs"]))
        edges[e.key] = e
    return ReferenceGraph(frozenset(header["vertices"]), edges, {},
                          tuple(tuple(d) for d in header["dangling"]))


def _enum_or_none(enum, value: str):
    value = (value or "").strip()
    if not value:
        return None
    try:
        return enum(value)
    except ValueError:
        raise LabelError(f"unknown {enum.__name__} value {value!r}") from None


def read_labels(text: str) -> list[tuple[EdgeKey, EdgeLabel]]:
    """Parse a label CSV; rows are returned in file order."""
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in LABEL_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise LabelError(f"label file lacks columns {missing}")
    out = []
    for rowno, row in enumerate(reader, start=2):
        try:
            fine = _enum_or_none(FineCode, row["fine"])
            binary = _enum_or_none(BinaryCode, row["binary"])
            if binary is None and fine is not None:
                binary = fine.binary
            prov = _enum_or_none(Provenance, row["provenance"]) or Provenance.MANUAL
            conf = row["confidence"].strip()
            lab = EdgeLabel(binary=binary, fine=fine,
                            special=_enum_or_none(SpecialCode, row["special"]),
                            provenance=prov,
                            confidence=float(conf) if conf else 1.0)
        except (LabelError, ValueError) as exc:
            raise LabelError(f"label file row {rowno}: {exc}") from exc
        out.append(((row["edge_source"].strip(), row["edge_target"].strip()), lab))
    return out


def merge_label_rows(rows: Iterable[tuple[EdgeKey, EdgeLabel]]) -> dict[EdgeKey, EdgeLabel]:
    table: dict[EdgeKey, EdgeLabel] = {}
    for key, lab in rows:
        if _outranks(lab, table.get(key)):
            table[key] = lab
    return table


def dumps_labels(labels: Mapping[EdgeKey, EdgeLabel]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABEL_COLUMNS)
    for (s, t) in sorted(labels):
        lab = labels[(s, t)]
        w.writerow([s, t,
                    lab.binary.value if lab.binary else "",
                    lab.fine.value if lab.fine else "",
                    lab.special.value if lab.special else "",
                    lab.provenance.value,
                    repr(float(lab.confidence))])
    return buf.getvalue()
