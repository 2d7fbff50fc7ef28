"""Certificate corpus: record types, loading, validation and lifecycle rules."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

VALIDITY_YEARS = 5

RECORD_KEYS = (
    "cert_id",
    "scheme",
    "category",
    "name",
    "eal",
    "issued",
    "archived",
    "maintenance_dates",
    "status",
    "report_text",
    "target_text",
)
STATUSES = ("active", "archived", "unknown")

_EAL_RE = re.compile(r"^\s*EAL\s*([1-7])\s*(\+|\s*augmented)?\s*$", re.IGNORECASE)


class CorpusError(Exception):
    """Fatal problem with a corpus file (unreadable, duplicate ids)."""


class Supercategory(str, Enum):
    SMARTCARD = "Smartcard"
    SMARTCARD_RELATED = "SmartcardRelated"
    OTHER = "Other"


@dataclass(frozen=True)
class CertificateRecord:
    cert_id: str
    scheme: str
    category: str
    name: str
    issued: date
    eal: str | None = None
    archived: date | None = None
    maintenance_dates: tuple[date, ...] = ()
    status: str = "unknown"
    report_text: str | None = None
    target_text: str | None = None

    @property
    def eal_level(self) -> float | None:
        return eal_ordinal(self.eal)

    def to_json(self) -> dict:
        return {
            "cert_id": self.cert_id,
            "scheme": self.scheme,
            "category": self.category,
            "name": self.name,
            "eal": self.eal,
            "issued": self.issued.isoformat(),
            "archived": self.archived.isoformat() if self.archived else None,
            "maintenance_dates": [d.isoformat() for d in self.maintenance_dates],
            "status": self.status,
            "report_text": self.report_text,
            "target_text": self.target_text,
        }


@dataclass(frozen=True)
class Violation:
    code: str
    severity: str  # "error" | "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.code} ({self.severity}): {self.message}"


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str
    raw: dict | str


@dataclass(frozen=True)
class Corpus:
    records: Mapping[str, CertificateRecord]
    snapshot_date: date
    category_map: Mapping[str, Supercategory] = field(default_factory=dict)
    rejections: tuple[Rejection, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, cert_id: str) -> bool:
        return cert_id in self.records

    def __getitem__(self, cert_id: str) -> CertificateRecord:
        return self.records[cert_id]

    def ids(self) -> list[str]:
        return sorted(self.records)

    def supercategory(self, cert_id: str) -> Supercategory:
        return supercategory_of(self, self.records[cert_id].category)

    def is_active(self, cert_id: str, at: date) -> bool:
        return is_active(self.records[cert_id], at, self.snapshot_date)

    def active_ids(self, at: date) -> set[str]:
        return {cid for cid, r in self.records.items() if is_active(r, at, self.snapshot_date)}


def eal_ordinal(eal: str | None) -> float | None:
    """Map ``"EAL4"`` to 4.0 and ``"EAL4+"`` to 4.5; None when absent or unparsable."""
    if not eal:
        return None
    m = _EAL_RE.match(eal)
    if not m:
        return None
    return int(m.group(1)) + (0.5 if m.group(2) else 0.0)


def _add_years(d: date, years: int) -> date:
    try:
        return d.replace(year=d.year + years)
    except ValueError:  # Feb 29 -> Feb 28
        return d.replace(year=d.year + years, day=28)


def validity_interval(r: CertificateRecord, snapshot_date: date | None = None) -> tuple[date, date | None]:
    """Half-open ``[start, end)`` validity of a certificate; ``end`` None means open-ended.

    Explicitly active records without an archival date stay valid through the
    snapshot date. Records of unknown status get the 5-year operational cap.
    """
    if r.archived is not None:
        return r.issued, r.archived
    if r.status == "active":
        return r.issued, (snapshot_date + timedelta(days=1)) if snapshot_date else None
    return r.issued, _add_years(r.issued, VALIDITY_YEARS)


def is_active(r: CertificateRecord, at: date, snapshot_date: date | None = None) -> bool:
    start, end = validity_interval(r, snapshot_date)
    return start <= at and (end is None or at < end)


def validate_record(r: CertificateRecord, snapshot_date: date | None = None) -> list[Violation]:
    out: list[Violation] = []
    if not r.cert_id or not r.cert_id.strip():
        out.append(Violation("empty_cert_id", "error", "cert_id is empty"))
    if r.status not in STATUSES:
        out.append(Violation("bad_status", "error", f"status {r.status!r} not in {STATUSES}"))
    if r.archived is not None:
        if r.archived < r.issued:
            out.append(Violation("issued_after_archived", "error",
                                 f"issued {r.issued} is after archived {r.archived}"))
        elif r.archived == r.issued:
            out.append(Violation("archived_equals_issued", "warning",
                                 f"archival date equals issuance date {r.issued}; likely a data-entry error"))
    early = [d for d in r.maintenance_dates if d < r.issued]
    if early:
        out.append(Violation("maintenance_before_issued", "error",
                             f"maintenance dates {[d.isoformat() for d in early]} precede issuance {r.issued}"))
    if list(r.maintenance_dates) != sorted(r.maintenance_dates):
        out.append(Violation("maintenance_unsorted", "error", "maintenance dates are not sorted"))
    if snapshot_date is not None and r.status in ("active", "archived"):
        archived_by_snapshot = r.archived is not None and r.archived <= snapshot_date
        if (r.status == "archived") != archived_by_snapshot:
            out.append(Violation("status_mismatch", "error",
                                 f"status {r.status!r} inconsistent with archived={r.archived} at snapshot {snapshot_date}"))
    return out


def load_category_map(path: str | Path | None = None) -> dict[str, Supercategory]:
    """Read a category map file; the packaged default is used when ``path`` is None."""
    if path is None:
        raw = resources.files("ccref").joinpath("data/categories.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    doc = json.loads(raw)
    mapping: dict[str, Supercategory] = {}
    for group, categories in doc["groups"].items():
        sc = Supercategory(group)
        for cat in categories:
            mapping[cat.strip().lower()] = sc
    return mapping


def supercategory_of(corpus: Corpus, category: str) -> Supercategory:
    return corpus.category_map.get(category.strip().lower(), Supercategory.OTHER)


def _parse_date(value, key: str) -> date:
    if not isinstance(value, str):
        raise ValueError(f"{key}: expected ISO date string, got {value!r}")
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise ValueError(f"{key}: unparsable date {value!r}") from None


def record_from_json(obj: dict) -> CertificateRecord:
    """Build a record from one parsed corpus line; raises ValueError with a reason."""
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    keys = set(obj)
    missing = [k for k in RECORD_KEYS if k not in keys]
    if missing:
        raise ValueError(f"missing keys: {missing}")
    extra = sorted(keys - set(RECORD_KEYS))
    if extra:
        raise ValueError(f"unexpected keys: {extra}")
    for k in ("cert_id", "scheme", "category", "name"):
        if not isinstance(obj[k], str):
            raise ValueError(f"{k}: expected string")
    maint = obj["maintenance_dates"]
    if not isinstance(maint, list):
        raise ValueError("maintenance_dates: expected array")
    return CertificateRecord(
        cert_id=obj["cert_id"],
        scheme=obj["scheme"],
        category=obj["category"],
        name=obj["name"],
        eal=obj["eal"],
        issued=_parse_date(obj["issued"], "issued"),
        archived=None if obj["archived"] is None else _parse_date(obj["archived"], "archived"),
        maintenance_dates=tuple(_parse_date(d, "maintenance_dates") for d in maint),
        status=obj["status"],
        report_text=obj["report_text"],
        target_text=obj["target_text"],
    )


def load_corpus(path: str | Path, snapshot_date: date,
                category_map: Mapping[str, Supercategory] | None = None) -> Corpus:
    path = Path(path)
    try:
        lines = path.read_text("utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    records: dict[str, CertificateRecord] = {}
    first_line: dict[str, int] = {}
    rejections: list[Rejection] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            rejections.append(Rejection(lineno, f"invalid JSON: {exc.msg}", line))
            continue
        cid = obj.get("cert_id") if isinstance(obj, dict) else None
        if isinstance(cid, str) and cid in first_line:
            raise CorpusError(f"duplicate cert_id {cid!r} on lines {first_line[cid]} and {lineno}")
        if isinstance(cid, str):
            first_line[cid] = lineno
        try:
            rec = record_from_json(obj)
        except ValueError as exc:
            rejections.append(Rejection(lineno, str(exc), obj))
            continue
        errors = [v for v in validate_record(rec, snapshot_date) if v.severity == "error"]
        if errors:
            rejections.append(Rejection(lineno, "; ".join(str(v) for v in errors), obj))
            continue
        records[rec.cert_id] = rec

    if category_map is None:
        category_map = load_category_map()
    return Corpus(records=records, snapshot_date=snapshot_date,
                  category_map=dict(category_map), rejections=tuple(rejections))


def dump_records(records: Iterable[CertificateRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=False) + "\n" for r in records)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dump_records(corpus.records[c] for c in corpus.ids()), "utf-8")


def dumps_rejections(corpus: Corpus) -> str:
    """Rejected lines as JSONL, each annotated with its line number and reason."""
    out = []
    for rej in corpus.rejections:
        obj = dict(rej.raw) if isinstance(rej.raw, dict) else {"raw": rej.raw}
        obj["reason"] = rej.reason
        obj["line"] = rej.line
        out.append(json.dumps(obj, ensure_ascii=False) + "\n")
    return "".join(out)


def write_rejections(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dumps_rejections(corpus), "utf-8")


def with_records(corpus: Corpus, records: Iterable[CertificateRecord]) -> Corpus:
    """Copy of ``corpus`` holding ``records`` instead (used by what-if analyses and tests)."""
    return replace(corpus, records={r.cert_id: r for r in records})
