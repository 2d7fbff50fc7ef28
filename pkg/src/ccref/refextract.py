"""Certificate identifier recognition, sentence splitting and reference segments."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

SEP = r"[\s\u00ad]*[-\u2010\u2011\u2012\u2013][\s\u00ad]*"
_DASHES = "\u2010\u2011\u2012\u2013"
_LEFT_GUARD = r"(?<![A-Za-z0-9])"
_RIGHT_GUARD = r"(?![A-Za-z0-9])"


@dataclass(frozen=True)
class IdScheme:
    scheme_tag: str
    patterns: tuple[str, ...]
    canonicalizer: str = "default"

    def __post_init__(self):
        if not self.patterns:
            raise ValueError(f"scheme {self.scheme_tag} has no patterns")
        if self.canonicalizer not in CANONICALIZERS:
            raise ValueError(f"unknown canonicalizer {self.canonicalizer!r}")

    @property
    def compiled(self) -> tuple[re.Pattern, ...]:
        return _compile(self.patterns)


@dataclass(frozen=True)
class IdMatch:
    raw: str
    canonical: str
    start: int
    end: int
    scheme_tag: str

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


@dataclass(frozen=True)
class Sentence:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class ReferenceSegment:
    text: str
    sentence_index: int
    match: IdMatch
    source_doc: str  # "report" | "target"

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "sentence_index": self.sentence_index,
            "source_doc": self.source_doc,
            "raw": self.match.raw,
            "canonical": self.match.canonical,
            "start": self.match.start,
            "end": self.match.end,
            "scheme_tag": self.match.scheme_tag,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReferenceSegment":
        m = IdMatch(obj["raw"], obj["canonical"], obj["start"], obj["end"], obj["scheme_tag"])
        return cls(obj["text"], obj["sentence_index"], m, obj["source_doc"])


@lru_cache(maxsize=None)
def _compile(patterns: tuple[str, ...]) -> tuple[re.Pattern, ...]:
    out = []
    for p in patterns:
        body = p.replace("{SEP}", SEP)
        out.append(re.compile(_LEFT_GUARD + "(?:" + body + ")" + _RIGHT_GUARD, re.IGNORECASE))
    return tuple(out)


def _canonical_default(raw: str) -> str:
    s = raw.upper()
    for ch in _DASHES:
        s = s.replace(ch, "-")
    s = re.sub(r"[\s\u00ad]+", "", s)
    s = re.sub(r"-{2,}", "-", s)
    return s.strip("-")


CANONICALIZERS = {"default": _canonical_default}


def canonicalize_id(raw: str, scheme: IdScheme | None = None) -> str:
    name = scheme.canonicalizer if scheme is not None else "default"
    return CANONICALIZERS[name](raw)


def parse_pattern_file(text: str) -> list[IdScheme]:
    """Parse the tab-separated pattern file into schemes, keeping first-seen order."""
    grouped: dict[tuple[str, str], list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"pattern file line {lineno}: expected 3 tab-separated fields")
        tag, canon, pattern = (p.strip() for p in parts)
        try:
            re.compile(pattern.replace("{SEP}", SEP))
        except re.error as exc:
            raise ValueError(f"pattern file line {lineno}: bad regex: {exc}") from exc
        grouped.setdefault((tag, canon), []).append(pattern)
    return [IdScheme(tag, tuple(pats), canon) for (tag, canon), pats in grouped.items()]


def load_schemes(path: str | Path | None = None) -> list[IdScheme]:
    if path is None:
        text = resources.files("ccref").joinpath("data/patterns.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_pattern_file(text)


def load_abbreviations(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("ccref").joinpath("data/abbreviations.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(t.strip().lower().rstrip(".") for t in text.splitlines() if t.strip())


@lru_cache(maxsize=1)
def default_schemes() -> tuple[IdScheme, ...]:
    return tuple(load_schemes())


@lru_cache(maxsize=1)
def default_abbreviations() -> frozenset[str]:
    return load_abbreviations()


def extract_ids(text: str, schemes: Sequence[IdScheme] | None = None,
                self_id: str | None = None) -> list[IdMatch]:
    """All non-overlapping identifier mentions in ``text``, left to right.

    Overlapping candidates are resolved by earliest start, then longest match,
    then pattern order. Mentions of ``self_id`` are dropped after resolution.
    """
    if schemes is None:
        schemes = default_schemes()
    candidates = []
    rank = 0
    for scheme in schemes:
        for rx in scheme.compiled:
            for m in rx.finditer(text):
                candidates.append((m.start(), -(m.end() - m.start()), rank, m.end(), scheme))
            rank += 1
    candidates.sort(key=lambda c: c[:3])

    out: list[IdMatch] = []
    last_end = -1
    for start, _, _, end, scheme in candidates:
        if start < last_end:
            continue
        raw = text[start:end]
        out.append(IdMatch(raw, canonicalize_id(raw, scheme), start, end, scheme.scheme_tag))
        last_end = end
    if self_id is not None:
        out = [m for m in out if m.canonical != self_id]
    return out


_TERMINATOR = re.compile(r"[.!?]+[\"')\]]*(?=\s|$)|\n[ \t\r\f\v]*\n")


def split_sentences(text: str, abbreviations: Iterable[str] | None = None,
                    guard_spans: Iterable[tuple[int, int]] | None = None,
                    schemes: Sequence[IdScheme] | None = None) -> list[Sentence]:
    """Rule-based sentence splitter.

    Sentences end at ``.``, ``!`` or ``?`` followed by whitespace (or end of
    text), and at blank lines. A period does not end a sentence when the token
    before it is a known abbreviation or when it lies inside an identifier span.
    Returned sentences are whitespace-trimmed; the gaps between them hold only
    whitespace.
    """
    abbrevs = default_abbreviations() if abbreviations is None else frozenset(a.lower().rstrip(".") for a in abbreviations)
    if guard_spans is None:
        guard_spans = [m.span for m in extract_ids(text, schemes)] if text else []
    guards = sorted(guard_spans)

    def guarded(pos: int) -> bool:
        for s, e in guards:
            if s <= pos < e:
                return True
            if s > pos:
                break
        return False

    cuts: list[int] = []
    for m in _TERMINATOR.finditer(text):
        tok = m.group(0)
        if guarded(m.start()):
            continue
        if tok.startswith("\n"):
            cuts.append(m.start())
            continue
        if tok[0] == "." and len(tok.rstrip("\"')]")) == 1:
            ws = max(text.rfind(c, 0, m.start()) for c in " \t\n\r\f\v")
            word = text[ws + 1:m.start()].lstrip("\"'([").lower()
            if word and word in abbrevs:
                continue
        cuts.append(m.end())

    sentences: list[Sentence] = []
    pos = 0
    for cut in cuts + [len(text)]:
        chunk = text[pos:cut]
        stripped = chunk.strip()
        if stripped:
            s = pos + (len(chunk) - len(chunk.lstrip()))
            e = s + len(stripped)
            sentences.append(Sentence(text[s:e], s, e))
        pos = max(pos, cut)
    return sentences


class DocumentIndex:
    """Sentences and identifier mentions of one document, computed once."""

    def __init__(self, text: str, schemes: Sequence[IdScheme] | None = None,
                 abbreviations: Iterable[str] | None = None, source_doc: str = "report"):
        self.text = text
        self.source_doc = source_doc
        self.matches = extract_ids(text, schemes) if text else []
        self.sentences = split_sentences(text, abbreviations, guard_spans=[m.span for m in self.matches])
        self._starts = [s.start for s in self.sentences]

    def sentence_of(self, offset: int) -> int:
        lo, hi = 0, len(self._starts)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._starts[mid] <= offset:
                lo = mid + 1
            else:
                hi = mid
        return max(lo - 1, 0)

    def mentioned_ids(self, self_id: str | None = None) -> list[str]:
        seen: dict[str, None] = {}
        for m in self.matches:
            if m.canonical != self_id:
                seen.setdefault(m.canonical)
        return list(seen)

    def segments(self, target: str, before: int = 2, after: int = 1) -> list[ReferenceSegment]:
        out = []
        n = len(self.sentences)
        for m in self.matches:
            if m.canonical != target:
                continue
            i = self.sentence_of(m.start)
            lo, hi = max(0, i - before), min(n - 1, i + after)
            seg = self.text[self.sentences[lo].start:self.sentences[hi].end]
            out.append(ReferenceSegment(seg, i, m, self.source_doc))
        return out


def extract_segments(text: str, target: str, before: int = 2, after: int = 1,
                     schemes: Sequence[IdScheme] | None = None,
                     abbreviations: Iterable[str] | None = None,
                     source_doc: str = "report") -> list[ReferenceSegment]:
    """One segment per mention of ``target``: its sentence plus ``before``/``after`` neighbours."""
    if before < 0 or after < 0:
        raise ValueError("window sizes must be non-negative")
    if not text:
        return []
    return DocumentIndex(text, schemes, abbreviations, source_doc).segments(target, before, after)
