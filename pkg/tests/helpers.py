"""Fixture builders shared by the unit and acceptance tests."""
from __future__ import annotations

import dataclasses
import json
import random
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from ccref.corpus import CertificateRecord, Corpus, dump_records, load_category_map
from ccref.graph import BinaryCode, EdgeLabel, FineCode, ReferenceEdge, ReferenceGraph, SpecialCode, dumps_labels

SC = "ICs, Smart Cards and Smart Card-Related Devices and Systems"
TC = "Trusted Computing"
NET = "Network and Network-Related Devices and Systems"

C = EdgeLabel(binary=BinaryCode.COMPONENT_REUSE)
P = EdgeLabel(binary=BinaryCode.PREDECESSOR)


def rec(cert_id, issued, archived=None, *, status=None, category=SC, scheme="DE", name=None, eal=None,
        maintenance=(), report=None, target=None) -> CertificateRecord:
    issued = date.fromisoformat(issued) if isinstance(issued, str) else issued
    archived = date.fromisoformat(archived) if isinstance(archived, str) else archived
    if status is None:
        status = "archived" if archived else "active"
    return CertificateRecord(
        cert_id=cert_id, scheme=scheme, category=category, name=name or f"Product {cert_id}", issued=issued,
        eal=eal, archived=archived,
        maintenance_dates=tuple(date.fromisoformat(m) if isinstance(m, str) else m for m in maintenance),
        status=status, report_text=report, target_text=target)


def corpus_of(records, snapshot="2023-11-01") -> Corpus:
    snap = date.fromisoformat(snapshot) if isinstance(snapshot, str) else snapshot
    return Corpus({r.cert_id: r for r in records}, snap, load_category_map())


def graph_of(vertices, labelled_edges) -> ReferenceGraph:
    """``labelled_edges``: iterable of (source, target, EdgeLabel | None)."""
    edges, labels = {}, {}
    for s, t, lab in labelled_edges:
        edges[(s, t)] = ReferenceEdge(s, t, ())
        if lab is not None:
            labels[(s, t)] = lab
    return ReferenceGraph(frozenset(vertices), edges, labels)


# random graphs ------------------------------------------------------------------

def random_mixed_graph(rng: random.Random, max_v: int = 200, max_e: int = 600) -> ReferenceGraph:
    """Random directed graph (cycles allowed) with C, P, special and missing labels."""
    n = rng.randint(1, max_v)
    verts = [f"v{i:03d}" for i in range(n)]
    m = rng.randint(0, min(max_e, n * (n - 1)))
    pairs = set()
    while len(pairs) < m:
        s, t = rng.randrange(n), rng.randrange(n)
        if s != t:
            pairs.add((verts[s], verts[t]))
    kinds = [C, C, C, P, EdgeLabel(special=SpecialCode.UNKNOWN), None]
    return graph_of(verts, [(s, t, rng.choice(kinds)) for s, t in sorted(pairs)])


def closure_oracle(g: ReferenceGraph) -> tuple[list[str], np.ndarray]:
    """Warshall transitive closure of the ComponentReuse adjacency; R[i, j] means a path i -> j."""
    verts = sorted(g.vertices)
    pos = {v: i for i, v in enumerate(verts)}
    R = np.zeros((len(verts), len(verts)), dtype=bool)
    for (s, t), lab in g.labels.items():
        if lab.binary is BinaryCode.COMPONENT_REUSE:
            R[pos[s], pos[t]] = True
    for k in range(len(verts)):
        R |= np.outer(R[:, k], R[k, :])
    np.fill_diagonal(R, False)
    return verts, R


def random_lifecycle_fixture(rng: random.Random, n: int = 30, snapshot=date(2023, 11, 1)):
    verts = [f"L{i:02d}" for i in range(n)]
    records = []
    for v in verts:
        issued = date(2008, 1, 1) + timedelta(days=rng.randrange(0, 5000))
        archived = None
        if rng.random() < 0.7:
            archived = issued + timedelta(days=rng.randrange(1, 3000))
            if archived > snapshot:
                archived = None
        status = "archived" if archived else rng.choice(["active", "unknown"])
        records.append(rec(v, issued, archived, status=status))
    edges = []
    for _ in range(rng.randint(n, 3 * n)):
        s, t = rng.sample(verts, 2)
        edges.append((s, t, rng.choice([C, C, P])))
    uniq = {(s, t): lab for s, t, lab in edges}
    return corpus_of(records, snapshot), graph_of(verts, [(s, t, l) for (s, t), l in uniq.items()])


# planted identifier documents ------------------------------------------------------

_FILLER = [
    "The evaluation facility performed vulnerability analysis on the delivered samples.",
    "Guidance documentation was reviewed for consistency with the security target.",
    "The developer provided design evidence at the required level of detail.",
    "Penetration testing did not reveal exploitable weaknesses in the operational environment.",
    "Configuration management procedures were audited on site.",
    "See the annex for the list of evaluated configurations, e.g. firmware builds.",
]


def _plant(rng: random.Random):
    """(surface form, canonical id) for a random identifier; the canonical form is built from parts."""
    kind = rng.randrange(9)
    dash = rng.choice(["-", "-", "-", "–", "- "])
    year = rng.randint(2005, 2023)
    if kind == 0:
        num = rng.randint(1, 2000)
        raw = f"BSI{dash}DSZ{dash}CC{dash}{num:04d}{dash}{year}"
        canon = f"BSI-DSZ-CC-{num:04d}-{year}"
        if rng.random() < 0.3:
            raw = raw.lower()
    elif kind == 1:
        n = rng.randint(1, 99)
        raw = f"ANSSI{dash}CC{dash}{year}/{n:02d}"
        canon = f"ANSSI-CC-{year}/{n:02d}"
    elif kind == 2:
        num = rng.randint(10000, 999999)
        raw = f"NSCIB{dash}CC{dash}{num}{dash}CR"
        canon = f"NSCIB-CC-{num}-CR"
    elif kind == 3:
        num = rng.randint(100, 999)
        raw = f"SERTIT{dash}{num}"
        canon = f"SERTIT-{num}"
    elif kind == 4:
        a, b = rng.randint(1, 60), rng.randint(1, 60)
        raw = f"{year}{dash}{a}{dash}INF{dash}{b}"
        canon = f"{year}-{a}-INF-{b}"
    elif kind == 5:
        num = rng.randint(1000, 99999)
        raw = f"CCEVS{dash}VR{dash}{num}{dash}{year}"
        canon = f"CCEVS-VR-{num}-{year}"
    elif kind == 6:
        num = rng.randint(100, 9999)
        raw = f"KECS{dash}CISS{dash}{num:04d}{dash}{year}"
        canon = f"KECS-CISS-{num:04d}-{year}"
    elif kind == 7:
        num = rng.randint(1000, 9999)
        raw = f"JISEC{dash}C{num}"
        canon = f"JISEC-C{num}"
    else:
        num = rng.randint(1000, 999999)
        raw = canon = f"CSEC{num}"
    return raw, canon


def _decoy(rng: random.Random) -> str:
    """Near-miss strings that resemble identifiers but violate every grammar."""
    year = rng.randint(2005, 2023)
    return rng.choice([
        f"BSI-DSZ-CC-{rng.randint(100, 999)}-{year}",
        f"SERTIT-{rng.randint(10, 99)}",
        f"SERTIT {rng.randint(100, 999)}",
        f"CSEC{rng.randint(100, 999)}",
        f"JISEC-C{rng.randint(100, 999)}",
        f"CCEVS-VR-{rng.randint(100, 999)}",
        f"{year}-{rng.randint(1, 60)}-INFO-{rng.randint(1, 60)}",
        f"KECS-CISS-{rng.randint(10, 99)}-{year}",
        f"ANSSI/CC/{year}",
    ])


def planted_documents(seed: int = 7, n_docs: int = 50, n_ids: int = 120, n_decoys: int = 30):
    """Documents with known identifier mentions; returns [(text, [canonical ids in order])]."""
    rng = random.Random(seed)
    slots = [("id", i) for i in range(n_ids)] + [("decoy", i) for i in range(n_decoys)]
    rng.shuffle(slots)
    per_doc: list[list] = [[] for _ in range(n_docs)]
    for j, slot in enumerate(slots):
        per_doc[j % n_docs if j < n_docs else rng.randrange(n_docs)].append(slot)
    docs = []
    for items in per_doc:
        parts, planted = [], []
        for kind, _ in items:
            parts.append(rng.choice(_FILLER))
            if kind == "id":
                raw, canon = _plant(rng)
                planted.append(canon)
                parts.append(f"The product relies on the certified platform {raw} for its security functions.")
            else:
                parts.append(f"A draft reference {_decoy(rng)} appears in the vendor notes.")
        parts.append(rng.choice(_FILLER))
        docs.append((" ".join(parts), planted))
    return docs


# synthetic annotated corpus ----------------------------------------------------------

_CONTEXT = {
    FineCode.COMPONENT_USED: "The composite product is built on the certified hardware platform {id} and uses "
                             "its cryptographic library and security features.",
    FineCode.COMPONENT_SHARED: "The secure element shares the certified component {id} with the integrated "
                               "circuit module and its embedded security features.",
    FineCode.EVALUATION_REUSED: "Evaluation results of the underlying certified chip {id} were reused for the "
                                "composite hardware platform assessment.",
    FineCode.RE_EVALUATION: "This certificate is a re-certification of {id} after the previous version was "
                            "updated and maintained by the same developer.",
    FineCode.PREVIOUS_VERSION: "The previous version of this product was certified as {id} and this release "
                               "updates the earlier version with minor changes.",
}


_FRAME = {
    BinaryCode.COMPONENT_REUSE: (("The composite evaluation relies on an underlying certified platform.",
                                  "Platform guidance and security features were inherited by the composite."),
                                 "The composite integrates that platform without modification."),
    BinaryCode.PREDECESSOR: (("This release continues an earlier certified product line.",
                              "Changes since the earlier release are listed in the delta report."),
                             "The earlier release is superseded by this version."),
}


def synthetic_corpus(n: int = 120, seed: int = 3):
    """Corpus whose reference contexts separate cleanly by wording and title similarity.

    Returns (records, manual labels keyed by edge).
    """
    rng = random.Random(seed)
    fines = list(_CONTEXT)
    ids = [f"BSI-DSZ-CC-{1000 + i:04d}-{2010 + i % 12}" for i in range(n)]
    families = ["Aurora", "Boreal", "Cobalt", "Delta", "Ember", "Falcon", "Garnet", "Helix", "Indigo", "Juniper"]
    names, records, labels = {}, [], {}
    for i, cid in enumerate(ids):
        issued = date(2010, 1, 1) + timedelta(days=30 * i)
        if i < 10:
            names[cid] = f"{families[i]} Secure Microcontroller v1.0"
            report = " ".join(rng.sample(_FILLER, 3))
            records.append(rec(cid, issued, name=names[cid], eal="EAL5+", report=report))
            continue
        fine = fines[i % len(fines)]
        j = rng.randrange(i)
        target = ids[j]
        if fine.binary is BinaryCode.PREDECESSOR:
            base = names[target].rsplit(" v", 1)[0]
            names[cid] = f"{base} v{i % 9 + 2}.0"
        else:
            names[cid] = f"{rng.choice(families)} Applet Suite {rng.choice(['Pay', 'ID', 'Sign', 'Health'])} r{i}"
        # the whole (2, 1) window carries class-specific wording; filler stays outside it
        lead, tail = _FRAME[fine.binary]
        context = " ".join([*lead, _CONTEXT[fine].format(id=target), tail])
        report = " ".join(rng.sample(_FILLER, 2) + [context] + rng.sample(_FILLER, 2))
        records.append(rec(cid, issued, name=names[cid], eal=rng.choice(["EAL4+", "EAL5+", "EAL6+"]),
                           report=report))
        labels[(cid, target)] = EdgeLabel.from_fine(fine)
    return records, labels


def write_jsonl(path: Path, records) -> Path:
    path.write_text(dump_records(records), "utf-8")
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1), "utf-8")
    return path


# hand-computed analytics fixture -----------------------------------------------------

def analytics_fixture():
    """Eight certificates with lifecycle dates chosen so every analytic has a known answer.

    A  IC platform (DE), maintained 2017-11-01, archived 2020-01-01
    B  smartcard OS (DE), issued 2020-06-01 on E (already archived: 152-day gap)
    C  applet (NL) on A, archived 2021-01-01 (sole active referrer of A: 366-day fade)
    D  old smartcard (NL), predecessor of C
    E  IC platform (FR), archived 2020-01-01
    F  trusted-computing module on B
    G, H  network devices, G succeeds H
    """
    records = [
        rec("A", "2014-03-01", "2020-01-01", scheme="DE", eal="EAL6+", maintenance=["2017-11-01"]),
        rec("B", "2020-06-01", scheme="DE", eal="EAL5+"),
        rec("C", "2018-05-01", "2021-01-01", scheme="NL", eal="EAL4+"),
        rec("D", "2015-01-01", "2018-01-01", scheme="NL", eal="EAL4"),
        rec("E", "2016-02-01", "2020-01-01", scheme="FR", eal="EAL5"),
        rec("F", "2021-03-01", scheme="DE", category=TC, eal="EAL2"),
        rec("G", "2017-01-01", "2022-06-01", scheme="US", category=NET, eal="EAL1"),
        rec("H", "2012-01-01", "2017-06-01", scheme="US", category=NET, eal="EAL1"),
    ]
    edges = [("C", "A", C), ("C", "D", P), ("B", "E", C), ("F", "B", C), ("G", "H", P)]
    return corpus_of(records), graph_of([r.cert_id for r in records], edges)


FIXTURE_IDS = {x: f"SERTIT-{101 + i}" for i, x in enumerate("ABCDEFGH")}


def analytics_records_with_text():
    """The analytics fixture with real identifiers and report texts that produce its edges."""
    corpus, g = analytics_fixture()
    mentions: dict[str, list[str]] = {}
    for s, t in sorted(g.edges):
        mentions.setdefault(s, []).append(t)
    out = []
    for x, r in sorted(corpus.records.items()):
        text = "Scope of the evaluation. " + " ".join(
            f"The product builds on {FIXTURE_IDS[t]} as documented." for t in mentions.get(x, []))
        out.append(dataclasses.replace(r, cert_id=FIXTURE_IDS[x], report_text=text))
    labels = {(FIXTURE_IDS[s], FIXTURE_IDS[t]): lab for (s, t), lab in g.labels.items()}
    return out, labels


def cli_workspace(root: Path, n: int = 120, seed: int = 3, **config) -> Path:
    """Corpus, annotations and a JSON config for end-to-end CLI runs; returns the config path."""
    root.mkdir(parents=True, exist_ok=True)
    records, labels = synthetic_corpus(n, seed)
    write_jsonl(root / "corpus.jsonl", records)
    (root / "annotations.csv").write_text(dumps_labels(labels), "utf-8")
    cfg = {"corpus": "corpus.jsonl", "annotations": "annotations.csv", "snapshot_date": "2023-11-01",
           "seed": 7, "out": "out", "hyperparameters": {"n_rounds": 60}, **config}
    return write_json(root / "config.json", cfg)
