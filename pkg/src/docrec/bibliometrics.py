"""Readership lookups, normalized bibliometric scores, and candidate
re-ranking.

The provider is a pluggable lookup keyed by the document's (title, year);
the file-backed stub used in tests and offline runs resolves via the
partner's external_id. Lookups go through a TTL cache so a provider outage
degrades to stale-but-flagged data instead of failures.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Optional, Protocol

from .corpus import DocumentRecord
from .recommenders import CandidateList

PLAIN = "plain"
BY_AGE = "age"
BY_AUTHORS = "authors"
METRICS = (PLAIN, BY_AGE, BY_AUTHORS)

BIBLIO_ONLY = "biblio"
MULTIPLY = "mult"
SUM_NORMALIZED = "sum"
COMBINES = (BIBLIO_ONLY, MULTIPLY, SUM_NORMALIZED)

DEFAULT_CACHE_TTL = timedelta(days=30)


class ProviderUnavailableError(RuntimeError):
    """Transport-level provider failure (distinct from a data miss)."""


class ReadershipProvider(Protocol):
    def lookup(self, doc: DocumentRecord) -> Optional[int]:
        """Reader count for the document, or None when unknown."""
        ...


@dataclass
class ReadershipRecord:
    doc_id: int
    reader_count: int
    fetched_at: datetime
    provider: str
    stale: bool = False


@dataclass(frozen=True)
class RerankConfig:
    metric: str
    k: int
    combine: str

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"bad metric: {self.metric!r}")
        if not 10 <= self.k <= 100:
            raise ValueError("k must lie in 10..100")
        if self.combine not in COMBINES:
            raise ValueError(f"bad combine mode: {self.combine!r}")


class StubProvider:
    """File-backed provider: JSONL of {"external_id": ..., "readers": ...}.

    Matches by external_id (the offline stand-in for a title/year search).
    A missing backing file at lookup time behaves like a transport failure.
    """

    name = "stub"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._table: Optional[dict[str, int]] = None
        self.lookups = 0

    def _load(self) -> dict[str, int]:
        if self._table is None:
            if not self.path.exists():
                raise ProviderUnavailableError(f"stub file missing: {self.path}")
            table = {}
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    obj = json.loads(line)
                    table[obj["external_id"]] = int(obj["readers"])
            self._table = table
        return self._table

    def lookup(self, doc: DocumentRecord) -> Optional[int]:
        table = self._load()
        self.lookups += 1
        return table.get(doc.external_id)


class ReadershipCache:
    """TTL cache over provider lookups, optionally persisted as JSON.

    Writes are serialized under a lock (last writer wins per doc_id).
    """

    def __init__(self, path: Optional[str | Path] = None,
                 ttl: timedelta = DEFAULT_CACHE_TTL):
        self.path = Path(path) if path else None
        self.ttl = ttl
        self._lock = threading.Lock()
        self._entries: dict[int, ReadershipRecord] = {}
        if self.path and self.path.exists():
            for doc_id, entry in json.loads(self.path.read_text(encoding="utf-8")).items():
                self._entries[int(doc_id)] = ReadershipRecord(
                    doc_id=int(doc_id),
                    reader_count=entry["reader_count"],
                    fetched_at=datetime.fromisoformat(entry["fetched_at"]),
                    provider=entry["provider"],
                )

    def get(self, doc_id: int) -> Optional[ReadershipRecord]:
        return self._entries.get(doc_id)

    def put(self, record: ReadershipRecord) -> None:
        with self._lock:
            self._entries[record.doc_id] = record

    def save(self) -> None:
        if self.path is None:
            return
        with self._lock:
            payload = {
                str(doc_id): {
                    "reader_count": r.reader_count,
                    "fetched_at": r.fetched_at.isoformat(),
                    "provider": r.provider,
                }
                for doc_id, r in self._entries.items()
            }
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload), encoding="utf-8")
        tmp.replace(self.path)


def get_readership(provider: ReadershipProvider, doc: DocumentRecord,
                   cache: ReadershipCache,
                   now: Optional[Callable[[], datetime]] = None) -> ReadershipRecord:
    """Cached readership for a document.

    Within-TTL cache hits never touch the provider; a provider miss caches a
    zero count. If the provider is unavailable, a stale cache entry is served
    flagged; with no cache entry at all the failure propagates.
    """
    clock = now or (lambda: datetime.now(timezone.utc))
    current = clock()
    cached = cache.get(doc.doc_id)
    if cached is not None and current - cached.fetched_at <= cache.ttl:
        return cached
    try:
        count = provider.lookup(doc)
    except ProviderUnavailableError:
        if cached is not None:
            return ReadershipRecord(
                doc_id=cached.doc_id, reader_count=cached.reader_count,
                fetched_at=cached.fetched_at, provider=cached.provider, stale=True,
            )
        raise
    record = ReadershipRecord(
        doc_id=doc.doc_id,
        reader_count=count if count is not None else 0,
        fetched_at=current,
        provider=getattr(provider, "name", provider.__class__.__name__),
    )
    cache.put(record)
    return record


def bibliometric_score(doc: DocumentRecord, readership: ReadershipRecord,
                       metric: str, ref_date: datetime) -> float:
    """Plain, age-normalized, or per-author readership.

    Age divisor is ref_year - year + 1 floored at 1; the author divisor
    counts only non-noise authors (also floored at 1).
    """
    readers = float(readership.reader_count)
    if metric == PLAIN:
        return readers
    if metric == BY_AGE:
        if doc.year is None:
            return readers
        return readers / max(1, ref_date.year - doc.year + 1)
    if metric == BY_AUTHORS:
        real_authors = sum(1 for a in doc.authors if not a.is_noise)
        return readers / max(1, real_authors)
    raise ValueError(f"bad metric: {metric!r}")


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.5] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def rerank(candidates: CandidateList, config: RerankConfig,
           scores: dict[int, float], final_n: int) -> CandidateList:
    """Reorder the top-k relevance pool by bibliometric score.

    BIBLIO_ONLY sorts the pool by bibliometric score; MULTIPLY by the product
    of raw relevance and bibliometric score; SUM_NORMALIZED min-max-normalizes
    both columns over the pool (a constant column maps to all 0.5) and sorts
    by their sum. Ties break on ascending doc_id; at most final_n survive.
    """
    pool = candidates.items[: config.k]
    if not pool:
        return CandidateList(source=candidates.source, items=[], producer=candidates.producer)
    bib = [scores.get(doc_id, 0.0) for doc_id, _ in pool]
    if config.combine == BIBLIO_ONLY:
        keyed = [(bib[i], pool[i]) for i in range(len(pool))]
    elif config.combine == MULTIPLY:
        keyed = [(pool[i][1] * bib[i], pool[i]) for i in range(len(pool))]
    elif config.combine == SUM_NORMALIZED:
        rel_n = _minmax([rel for _, rel in pool])
        bib_n = _minmax(bib)
        keyed = [(rel_n[i] + bib_n[i], pool[i]) for i in range(len(pool))]
    else:
        raise ValueError(f"bad combine mode: {config.combine!r}")
    keyed.sort(key=lambda kv: (-kv[0], kv[1][0]))
    return CandidateList(
        source=candidates.source,
        items=[item for _, item in keyed[:final_n]],
        producer=candidates.producer,
    )
