"""Referencing culture, high-reach impact and ageing analyses over a labelled graph."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Mapping, Sequence

from .corpus import Corpus, Supercategory, validity_interval
from .graph import (
    BinaryCode,
    EdgeKey,
    EdgeLabel,
    FineCode,
    ReferenceGraph,
    reach,
    reach_ancestors,
    snapshot,
    transitive_refs,
    weakly_connected_components,
)
from .stats import SpearmanResult, ecdf, kaplan_meier, spearman

POLICY_DAYS = 548
GROUPS = (Supercategory.SMARTCARD, Supercategory.SMARTCARD_RELATED, Supercategory.OTHER)


class AnalysisError(Exception):
    pass


def _frac(k: int, n: int) -> float:
    return k / n if n else 0.0


# RQ1 ------------------------------------------------------------------------

@dataclass
class GroupCulture:
    total: int = 0
    any_reference: int = 0
    component_reuse: int = 0
    predecessor: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("any_reference", "component_reuse", "predecessor"):
            d[f"{k}_fraction"] = _frac(d[k], self.total)
        return d


@dataclass
class CultureStats:
    groups: dict[Supercategory, GroupCulture]

    def __getitem__(self, sc: Supercategory) -> GroupCulture:
        return self.groups[sc]

    def to_json(self) -> dict:
        return {sc.value: self.groups[sc].to_json() for sc in GROUPS}


def referencing_stats(g: ReferenceGraph, corpus: Corpus) -> CultureStats:
    groups = {sc: GroupCulture() for sc in GROUPS}
    any_ref: set[str] = set()
    codes: dict[BinaryCode, set[str]] = {BinaryCode.COMPONENT_REUSE: set(), BinaryCode.PREDECESSOR: set()}
    for key in g.edges:
        any_ref.add(key[0])
        lab = g.labels.get(key)
        if lab is not None and lab.binary is not None:
            codes[lab.binary].add(key[0])
    for v in sorted(g.vertices):
        if v not in corpus:
            continue
        gc = groups[corpus.supercategory(v)]
        gc.total += 1
        gc.any_reference += v in any_ref
        gc.component_reuse += v in codes[BinaryCode.COMPONENT_REUSE]
        gc.predecessor += v in codes[BinaryCode.PREDECESSOR]
    return CultureStats(groups)


@dataclass
class TimeSeries:
    probes: list[date]
    # per group: one value per probe; None where the group has no active product
    avg_transitive_refs: dict[Supercategory, list[float | None]]
    avg_reach: dict[Supercategory, list[float | None]]
    active_counts: dict[Supercategory, list[int]]

    def rows(self) -> list[tuple[str, float, str]]:
        """(x, y, series) rows for plotting; empty groups are skipped."""
        out = []
        for metric, table in (("avg_transitive_refs", self.avg_transitive_refs), ("avg_reach", self.avg_reach)):
            for sc in GROUPS:
                for t, v in zip(self.probes, table[sc]):
                    if v is not None:
                        out.append((t.isoformat(), v, f"{metric}:{sc.value}"))
        return out

    def to_json(self) -> dict:
        return {
            "denominator": "products active at each probe date",
            "probes": [t.isoformat() for t in self.probes],
            "avg_transitive_refs": {sc.value: self.avg_transitive_refs[sc] for sc in GROUPS},
            "avg_reach": {sc.value: self.avg_reach[sc] for sc in GROUPS},
            "active_counts": {sc.value: self.active_counts[sc] for sc in GROUPS},
        }


def temporal_series(g: ReferenceGraph, corpus: Corpus, probes: Sequence[date]) -> TimeSeries:
    refs = {sc: [] for sc in GROUPS}
    rch = {sc: [] for sc in GROUPS}
    cnt = {sc: [] for sc in GROUPS}
    for t in probes:
        snap = snapshot(g, corpus, t)
        acc = {sc: [0, 0, 0] for sc in GROUPS}
        for v in snap.vertices:
            a = acc[corpus.supercategory(v)]
            a[0] += 1
            a[1] += len(transitive_refs(snap, v))
            a[2] += reach(snap, v)
        for sc in GROUPS:
            n, tr, re_ = acc[sc]
            cnt[sc].append(n)
            refs[sc].append(tr / n if n else None)
            rch[sc].append(re_ / n if n else None)
    return TimeSeries(list(probes), refs, rch, cnt)


# RQ2 ------------------------------------------------------------------------

def top_reach(g: ReferenceGraph, corpus: Corpus, k: int, at: date | None = None) -> list[tuple[str, int]]:
    """The ``k`` highest-reach vertices; ties go to the older certificate, then the smaller id."""
    if k <= 0:
        raise AnalysisError("k must be positive")
    if at is not None:
        g = snapshot(g, corpus, at)
    far = date.max
    scored = [(v, reach(g, v)) for v in g.vertices]
    scored.sort(key=lambda p: (-p[1], corpus[p[0]].issued if p[0] in corpus else far, p[0]))
    return scored[:k]


def influence(g: ReferenceGraph, ids: Sequence[str]) -> set[str]:
    """Union of the reach sets of ``ids``."""
    out: set[str] = set()
    for c in ids:
        out |= reach_ancestors(g, c)
    return out


def top_reach_share(g: ReferenceGraph, corpus: Corpus, ids: Sequence[str], probes: Sequence[date],
                    group: Supercategory = Supercategory.SMARTCARD) -> list[tuple[date, float | None]]:
    """Share of active ``group`` products that transitively reuse any of ``ids`` at each probe."""
    out = []
    for t in probes:
        snap = snapshot(g, corpus, t)
        members = {v for v in snap.vertices if corpus.supercategory(v) is group}
        inf = influence(snap, [c for c in ids if c in snap.vertices])
        out.append((t, len(members & inf) / len(members) if members else None))
    return out


def reach_eal_correlation(g: ReferenceGraph, corpus: Corpus, alternative: str = "greater",
                          seed: int = 0) -> SpearmanResult:
    pairs = [(reach(g, v), corpus[v].eal_level) for v in sorted(g.vertices)
             if v in corpus and corpus[v].eal_level is not None]
    if len(pairs) < 3:
        raise AnalysisError("fewer than 3 products with an EAL")
    return spearman([p[0] for p in pairs], [p[1] for p in pairs], alternative, seed=seed)


@dataclass
class ComponentImpact:
    size: int
    champion: str
    champion_reach: int
    tree_edges: int
    labelled_edges: int
    component_used_edges: int
    susceptible: int
    uncovered: list[EdgeKey]
    skipped: bool = False

    @property
    def used_fraction(self) -> float:
        return _frac(self.component_used_edges, self.labelled_edges)

    @property
    def susceptible_fraction(self) -> float:
        return _frac(self.susceptible, self.size - 1)

    def to_json(self) -> dict:
        d = asdict(self)
        d["uncovered"] = [list(k) for k in self.uncovered]
        d["used_fraction"] = self.used_fraction
        d["susceptible_fraction"] = self.susceptible_fraction
        return d


@dataclass
class ImpactReport:
    components: list[ComponentImpact]
    min_size: int
    exclude_above: int

    @property
    def studied(self) -> list[ComponentImpact]:
        return [c for c in self.components if not c.skipped]

    @property
    def micro_used(self) -> tuple[int, int]:
        return (sum(c.component_used_edges for c in self.studied), sum(c.labelled_edges for c in self.studied))

    @property
    def macro_susceptible(self) -> float:
        s = self.studied
        return sum(c.susceptible_fraction for c in s) / len(s) if s else 0.0

    @property
    def macro_used(self) -> float:
        s = self.studied
        return sum(c.used_fraction for c in s) / len(s) if s else 0.0

    def to_json(self) -> dict:
        used, labelled = self.micro_used
        return {
            "min_size": self.min_size,
            "exclude_above": self.exclude_above,
            "components": [c.to_json() for c in self.components],
            "studied_components": len(self.studied),
            "component_used_edges": used,
            "labelled_edges": labelled,
            "micro_used_fraction": _frac(used, labelled),
            "macro_used_fraction": self.macro_used,
            "macro_susceptible_fraction": self.macro_susceptible,
        }


def propagation_study(g: ReferenceGraph, corpus: Corpus, fine_annotations: Mapping[EdgeKey, EdgeLabel],
                      min_size: int = 10, exclude_above: int = 700) -> ImpactReport:
    """Vulnerability spread from the top-reach product of each large ComponentReuse component.

    The incoming transitive tree of a component's champion is every
    ComponentReuse edge lying on an all-ComponentReuse path into it. A product
    is susceptible when it reaches the champion through ComponentUsed edges
    only; the susceptible fraction is taken over the rest of the component.
    """
    out = []
    for comp in weakly_connected_components(g, BinaryCode.COMPONENT_REUSE):
        if len(comp) < min_size:
            continue
        champion = min(comp, key=lambda v: (-reach(g, v), corpus[v].issued if v in corpus else date.max, v))
        anc = reach_ancestors(g, champion)
        if len(comp) > exclude_above:
            out.append(ComponentImpact(len(comp), champion, len(anc), 0, 0, 0, 0, [], skipped=True))
            continue
        inside = anc | {champion}
        tree = sorted(k for k in g.edges if k[1] in inside and k[0] in anc and g.is_reuse(k))
        labelled = used = 0
        uncovered = []
        used_pred: dict[str, list[str]] = {}
        for k in tree:
            lab = fine_annotations.get(k)
            if lab is None or lab.fine is None:
                uncovered.append(k)
                continue
            labelled += 1
            if lab.fine is FineCode.COMPONENT_USED:
                used += 1
                used_pred.setdefault(k[1], []).append(k[0])
        seen = {champion}
        stack = [champion]
        while stack:
            v = stack.pop()
            for u in used_pred.get(v, []):
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        out.append(ComponentImpact(len(comp), champion, len(anc), len(tree), labelled, used,
                                   len(seen) - 1, uncovered))
    return ImpactReport(out, min_size, exclude_above)


# RQ3 ------------------------------------------------------------------------

@dataclass
class ArchivedReference:
    source: str
    target: str
    source_issued: date
    target_archived: date
    gap_days: int
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d["source_issued"] = self.source_issued.isoformat()
        d["target_archived"] = self.target_archived.isoformat()
        return d


def archived_at_issuance(g: ReferenceGraph, corpus: Corpus) -> list[ArchivedReference]:
    """ComponentReuse references whose target was already archived when the source was issued.

    Flags: ``suspect_archival_date`` when the target's archival equals its
    issuance (a known portal data error); ``recently_archived`` when the gap is
    under a year.
    """
    out = []
    for s, t in sorted(g.edges):
        if not g.is_reuse((s, t)) or s not in corpus or t not in corpus:
            continue
        src, dst = corpus[s], corpus[t]
        if dst.archived is None or not dst.archived < src.issued:
            continue
        flags = []
        if dst.archived == dst.issued:
            flags.append("suspect_archival_date")
        gap = (src.issued - dst.archived).days
        if gap < 365:
            flags.append("recently_archived")
        out.append(ArchivedReference(s, t, src.issued, dst.archived, gap, flags))
    return out


@dataclass
class FadeSample:
    cert_id: str
    archived: date
    reach_at_archival: int
    days: int
    censored: bool


@dataclass
class FadeReport:
    samples: list[FadeSample]
    survival: list[tuple[float, float]]
    horizon: date

    @property
    def mean_observed_days(self) -> float | None:
        obs = [s.days for s in self.samples if not s.censored]
        return sum(obs) / len(obs) if obs else None

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon.isoformat(),
            "cohort_size": len(self.samples),
            "censored": sum(s.censored for s in self.samples),
            "mean_observed_days": self.mean_observed_days,
            "samples": [{**asdict(s), "archived": s.archived.isoformat()} for s in self.samples],
            "survival": [list(p) for p in self.survival],
        }


def _active_count(intervals, t: date) -> int:
    return sum(1 for start, end in intervals if start <= t and (end is None or t < end))


def reach_fade(g: ReferenceGraph, corpus: Corpus) -> FadeReport:
    """Days from each archival until no active product transitively reuses the archived one.

    Reach-from-active at day t counts the certificate's all-ComponentReuse
    ancestors (in the full graph) that are active at t. Only certificates with
    positive reach-from-active on their archival day are sampled. Samples that
    never fade by the corpus snapshot date are censored there.
    """
    horizon = corpus.snapshot_date
    samples = []
    for c in sorted(g.vertices):
        if c not in corpus:
            continue
        rec = corpus[c]
        a = rec.archived
        if a is None or a > horizon:
            continue
        anc = [v for v in reach_ancestors(g, c) if v in corpus]
        intervals = [validity_interval(corpus[v], horizon) for v in anc]
        start_count = _active_count(intervals, a)
        if start_count == 0:
            continue
        ends = sorted({end for _, end in intervals if end is not None and a < end <= horizon})
        fade = next((t for t in ends if _active_count(intervals, t) == 0), None)
        if fade is None:
            samples.append(FadeSample(c, a, start_count, (horizon - a).days, True))
        else:
            samples.append(FadeSample(c, a, start_count, (fade - a).days, False))
    survival = kaplan_meier([s.days for s in samples], [not s.censored for s in samples]) if samples else [(0.0, 1.0)]
    return FadeReport(samples, survival, horizon)


@dataclass
class PolicyEdge:
    source: str
    target: str
    scheme: str
    age_days: int

    @property
    def violation(self) -> bool:
        return self.age_days > POLICY_DAYS


@dataclass
class PolicyReport:
    edges: list[PolicyEdge]
    schemes: list[str]

    def scheme_summary(self, scheme: str) -> dict:
        mine = [e for e in self.edges if e.scheme == scheme]
        products = {e.source for e in mine}
        violating = {e.source for e in mine if e.violation}
        return {"products": len(products), "violating_products": len(violating),
                "violation_fraction": _frac(len(violating), len(products)),
                "edges": len(mine), "violating_edges": sum(e.violation for e in mine)}

    def cdf(self, scheme: str) -> list[tuple[float, float]]:
        ages = [e.age_days for e in self.edges if e.scheme == scheme]
        return ecdf(ages) if ages else []

    def to_json(self) -> dict:
        return {
            "policy_days": POLICY_DAYS,
            "schemes": {s: self.scheme_summary(s) for s in self.schemes},
            "edges": [{**asdict(e), "violation": e.violation} for e in self.edges],
        }


def reference_age(corpus: Corpus, source: str, target: str) -> int:
    """Days between the source's issuance and the target's freshest assessment before it."""
    src, dst = corpus[source], corpus[target]
    fresh = max([dst.issued] + [m for m in dst.maintenance_dates if m <= src.issued])
    return (src.issued - fresh).days


def policy_18m(g: ReferenceGraph, corpus: Corpus, schemes: Sequence[str]) -> PolicyReport:
    """Age of components referenced by smartcard products, per scheme of the referencing product."""
    known = {r.scheme for r in corpus.records.values()}
    unknown = [s for s in schemes if s not in known]
    if unknown:
        raise AnalysisError(f"unknown scheme tags {unknown}")
    wanted = set(schemes)
    edges = []
    for s, t in sorted(g.edges):
        if not g.is_reuse((s, t)) or s not in corpus or t not in corpus:
            continue
        if corpus[s].scheme not in wanted or corpus.supercategory(s) is not Supercategory.SMARTCARD:
            continue
        edges.append(PolicyEdge(s, t, corpus[s].scheme, reference_age(corpus, s, t)))
    return PolicyReport(edges, list(schemes))
