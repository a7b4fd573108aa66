"""Canonical document store: parsing, cleaning, deduplication, persistence.

Partner exports (JSONL or a fixed XML schema) are parsed record by record;
bad records are rejected individually and never abort the run. Accepted
records get normalized authors, a clean title, and a stable internal doc_id,
then are upserted by external_id. Duplicate groups over the
(clean_title, year) key are recomputed inside the ingest critical section.
"""

from __future__ import annotations

import json
import os
import re
import unicodedata
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Optional

_WS_RE = re.compile(r"\s+")

#: Strings that show up as "authors" in noisy partner metadata. Matching is
#: case-insensitive and ignores trailing punctuation; configurable per store.
DEFAULT_NOISE_AUTHORS = (
    "et al.",
    "and others",
    "AnoN.",
    "Anonymous",
    "[Unknown]",
    "[[author]]???",
    "Unknown",
    "u.a.",
    "n.n.",
    "n.a.",
)


class CorpusError(Exception):
    """Base error for corpus operations."""


class EmptyTitleError(CorpusError):
    """Raised when a title is empty or whitespace-only."""


class StreamReadError(CorpusError):
    """Raised when the input byte stream itself fails mid-read."""

    def __init__(self, message: str, bytes_consumed: int):
        super().__init__(f"{message} (after {bytes_consumed} bytes)")
        self.bytes_consumed = bytes_consumed


class IngestInProgressError(CorpusError):
    """Raised when a second ingest is attempted while one is running."""


@dataclass(frozen=True)
class AuthorName:
    raw: str
    normalized: str
    is_noise: bool


@dataclass
class DocumentRecord:
    doc_id: int
    external_id: str
    title: str
    clean_title: str
    abstract: Optional[str] = None
    authors: list[AuthorName] = field(default_factory=list)
    year: Optional[int] = None
    language: Optional[str] = None
    added_at: Optional[datetime] = None

    def dedup_key(self) -> tuple[str, Optional[int]]:
        return (self.clean_title, self.year)


@dataclass
class DocumentDraft:
    """A parsed record before it is assigned a doc_id and persisted."""

    external_id: str
    title: str
    abstract: Optional[str] = None
    authors: list[str] = field(default_factory=list)
    year: Optional[int] = None
    language: Optional[str] = None


@dataclass
class DuplicateGroup:
    key: tuple[str, Optional[int]]
    members: list[int]
    canonical: int


@dataclass
class IngestReport:
    records_read: int = 0
    records_accepted: int = 0
    records_rejected: int = 0
    noise_authors_flagged: int = 0
    duplicate_groups: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def clean_title(title: str) -> str:
    """Reduce a title to lowercase letters and single spaces.

    Every character that is not a Unicode letter becomes a space; runs of
    spaces collapse. Idempotent by construction.
    """
    if not title or not title.strip():
        raise EmptyTitleError("empty title")
    cleaned = "".join(c if c.isalpha() else " " for c in title.lower())
    return " ".join(cleaned.split())


def _strip_trailing_punct(s: str) -> str:
    while s and unicodedata.category(s[-1]).startswith("P"):
        s = s[:-1]
    return s


def _noise_key(s: str) -> str:
    return _strip_trailing_punct(s.casefold())


def normalize_author(raw: str, noise_list: Iterable[str] = DEFAULT_NOISE_AUTHORS) -> AuthorName:
    """Trim and collapse whitespace; flag names on the noise list.

    An empty name is itself noise: it carries no author information.
    """
    normalized = _WS_RE.sub(" ", raw).strip()
    if not normalized:
        return AuthorName(raw=raw, normalized="", is_noise=True)
    keys = {_noise_key(n) for n in noise_list}
    return AuthorName(raw=raw, normalized=normalized, is_noise=_noise_key(normalized) in keys)


def group_duplicates(docs: Iterable[DocumentRecord]) -> list[DuplicateGroup]:
    """Partition documents by (clean_title, year); singletons included.

    A missing year matches only a missing year. The canonical member is the
    smallest doc_id. Groups are returned ordered by canonical id.
    """
    by_key: dict[tuple[str, Optional[int]], list[int]] = {}
    for doc in docs:
        by_key.setdefault(doc.dedup_key(), []).append(doc.doc_id)
    groups = []
    for key, members in by_key.items():
        members.sort()
        groups.append(DuplicateGroup(key=key, members=members, canonical=members[0]))
    groups.sort(key=lambda g: g.canonical)
    return groups


# -- export parsing ----------------------------------------------------------

_CURRENT_YEAR = datetime.now(timezone.utc).year


def _coerce_year(value) -> Optional[int]:
    """Out-of-range or unparseable years are dropped, not fatal."""
    if value is None:
        return None
    try:
        year = int(str(value).strip())
    except (TypeError, ValueError):
        return None
    if 1000 <= year <= _CURRENT_YEAR + 1:
        return year
    return None


def _coerce_language(value) -> Optional[str]:
    if value is None:
        return None
    lang = str(value).strip().lower()
    return lang if len(lang) == 2 and lang.isalpha() else None


def _draft_from_fields(external_id, title, abstract, authors, year, language) -> DocumentDraft:
    return DocumentDraft(
        external_id=str(external_id),
        title=str(title),
        abstract=str(abstract) if abstract is not None else None,
        authors=[str(a) for a in authors],
        year=_coerce_year(year),
        language=_coerce_language(language),
    )


def _parse_jsonl(stream: BinaryIO):
    drafts: list[DocumentDraft] = []
    report = IngestReport()
    bytes_consumed = 0
    lineno = 0
    while True:
        try:
            line = stream.readline()
        except OSError as exc:
            raise StreamReadError(str(exc), bytes_consumed) from exc
        if not line:
            break
        bytes_consumed += len(line)
        lineno += 1
        if not line.strip():
            continue
        report.records_read += 1
        locator = f"line {lineno}"
        try:
            obj = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            report.records_rejected += 1
            report.errors.append((locator, f"malformed record: {exc}"))
            continue
        if not isinstance(obj, dict):
            report.records_rejected += 1
            report.errors.append((locator, "malformed record: not an object"))
            continue
        if not obj.get("id"):
            report.records_rejected += 1
            report.errors.append((locator, "missing id"))
            continue
        if not obj.get("title") or not str(obj["title"]).strip():
            report.records_rejected += 1
            report.errors.append((locator, "missing title"))
            continue
        drafts.append(
            _draft_from_fields(
                obj["id"], obj["title"], obj.get("abstract"),
                obj.get("authors") or [], obj.get("year"), obj.get("language"),
            )
        )
        report.records_accepted += 1
    return drafts, report


def _parse_xml(stream: BinaryIO):
    drafts: list[DocumentDraft] = []
    report = IngestReport()
    recno = 0
    try:
        for _, elem in ET.iterparse(stream, events=("end",)):
            if elem.tag != "document":
                continue
            recno += 1
            report.records_read += 1
            locator = f"document {recno}"
            ext_id = (elem.findtext("id") or "").strip()
            title = (elem.findtext("title") or "").strip()
            if not ext_id:
                report.records_rejected += 1
                report.errors.append((locator, "missing id"))
            elif not title:
                report.records_rejected += 1
                report.errors.append((locator, "missing title"))
            else:
                drafts.append(
                    _draft_from_fields(
                        ext_id, title, elem.findtext("abstract"),
                        [a.text or "" for a in elem.findall("author")],
                        elem.findtext("year"), elem.findtext("language"),
                    )
                )
                report.records_accepted += 1
            elem.clear()
    except ET.ParseError as exc:
        raise StreamReadError(f"XML not well-formed: {exc}", stream.tell() if stream.seekable() else 0) from exc
    except OSError as exc:
        raise StreamReadError(str(exc), stream.tell() if stream.seekable() else 0) from exc
    return drafts, report


def parse_export(stream: BinaryIO, format: str):
    """Parse a partner export into drafts plus a per-record report.

    `format` is "jsonl" or "xml". Malformed records are rejected one by one;
    only a failure of the stream itself (or non-well-formed XML) is fatal.
    """
    fmt = format.lower()
    if fmt == "jsonl":
        return _parse_jsonl(stream)
    if fmt == "xml":
        return _parse_xml(stream)
    raise ValueError(f"unknown export format: {format!r}")


# -- persistent store --------------------------------------------------------

STORE_FILENAME = "documents.jsonl"
META_FILENAME = "store_meta.json"
LOCK_FILENAME = "ingest.lock"


class DocumentStore:
    """File-backed canonical document store.

    Documents live in memory and are persisted as JSONL plus a small meta
    file; writes go through an atomic replace so readers never observe a
    half-written store. doc_ids are never reused.
    """

    def __init__(self, data_dir: str | Path, noise_list: Iterable[str] = DEFAULT_NOISE_AUTHORS):
        self.data_dir = Path(data_dir)
        self.noise_list = tuple(noise_list)
        self.docs: dict[int, DocumentRecord] = {}
        self.by_external: dict[str, int] = {}
        self.next_doc_id = 1
        self.index_version = 0
        self._load()

    def __len__(self) -> int:
        return len(self.docs)

    def get(self, doc_id: int) -> Optional[DocumentRecord]:
        return self.docs.get(doc_id)

    def get_by_external(self, external_id: str) -> Optional[DocumentRecord]:
        doc_id = self.by_external.get(external_id)
        return self.docs.get(doc_id) if doc_id is not None else None

    def all_docs(self) -> list[DocumentRecord]:
        return [self.docs[i] for i in sorted(self.docs)]

    # persistence

    def _load(self) -> None:
        meta_path = self.data_dir / META_FILENAME
        store_path = self.data_dir / STORE_FILENAME
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            self.next_doc_id = meta["next_doc_id"]
            self.index_version = meta.get("index_version", 0)
        if store_path.exists():
            with store_path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        doc = _doc_from_json(json.loads(line))
                        self.docs[doc.doc_id] = doc
                        self.by_external[doc.external_id] = doc.doc_id

    def save(self) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        store_path = self.data_dir / STORE_FILENAME
        tmp = store_path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for doc_id in sorted(self.docs):
                fh.write(_doc_to_json(self.docs[doc_id]) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(store_path)
        meta_tmp = self.data_dir / (META_FILENAME + ".tmp")
        meta_tmp.write_text(
            json.dumps({"next_doc_id": self.next_doc_id, "index_version": self.index_version}),
            encoding="utf-8",
        )
        meta_tmp.replace(self.data_dir / META_FILENAME)

    # ingest

    def upsert_draft(self, draft: DocumentDraft, now: datetime) -> DocumentRecord:
        authors = [normalize_author(a, self.noise_list) for a in draft.authors]
        existing_id = self.by_external.get(draft.external_id)
        if existing_id is not None:
            doc_id = existing_id
        else:
            doc_id = self.next_doc_id
            self.next_doc_id += 1
        doc = DocumentRecord(
            doc_id=doc_id,
            external_id=draft.external_id,
            title=draft.title,
            clean_title=clean_title(draft.title),
            abstract=draft.abstract,
            authors=authors,
            year=draft.year,
            language=draft.language,
            added_at=now,
        )
        self.docs[doc_id] = doc
        self.by_external[draft.external_id] = doc_id
        return doc


def ingest(stream: BinaryIO, format: str, store: DocumentStore) -> IngestReport:
    """Run the full pipeline: parse, normalize, upsert, regroup, persist.

    Refuses to start while another ingest holds the store lock.
    """
    store.data_dir.mkdir(parents=True, exist_ok=True)
    lock_path = store.data_dir / LOCK_FILENAME
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise IngestInProgressError("ingest in progress") from None
    try:
        drafts, report = parse_export(stream, format)
        now = datetime.now(timezone.utc)
        for draft in drafts:
            doc = store.upsert_draft(draft, now)
            report.noise_authors_flagged += sum(a.is_noise for a in doc.authors)
        groups = group_duplicates(store.docs.values())
        report.duplicate_groups = sum(1 for g in groups if len(g.members) > 1)
        store.save()
        return report
    finally:
        os.close(lock_fd)
        lock_path.unlink(missing_ok=True)


# -- serialization helpers ---------------------------------------------------


def _doc_to_json(doc: DocumentRecord) -> str:
    return json.dumps(
        {
            "doc_id": doc.doc_id,
            "external_id": doc.external_id,
            "title": doc.title,
            "clean_title": doc.clean_title,
            "abstract": doc.abstract,
            "authors": [[a.raw, a.normalized, a.is_noise] for a in doc.authors],
            "year": doc.year,
            "language": doc.language,
            "added_at": doc.added_at.isoformat() if doc.added_at else None,
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def _doc_from_json(obj: dict) -> DocumentRecord:
    return DocumentRecord(
        doc_id=obj["doc_id"],
        external_id=obj["external_id"],
        title=obj["title"],
        clean_title=obj["clean_title"],
        abstract=obj.get("abstract"),
        authors=[AuthorName(raw=a[0], normalized=a[1], is_noise=a[2]) for a in obj.get("authors", [])],
        year=obj.get("year"),
        language=obj.get("language"),
        added_at=datetime.fromisoformat(obj["added_at"]) if obj.get("added_at") else None,
    )
