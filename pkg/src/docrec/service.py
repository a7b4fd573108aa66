"""Request handling core behind the REST surface.

Every related-documents request samples a fresh recipe, executes it (with
fallback), deduplicates the delivered list by (clean_title, year), and
persists the set to the event log before the response is returned. The
store/index pair is swapped atomically, so one request always sees one
consistent version.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from .bibliometrics import DEFAULT_CACHE_TTL, ReadershipCache, StubProvider
from .corpus import DocumentRecord, DocumentStore
from .eventlog import (
    ClickEvent, DeliveredItem, EventLog, LOG_FILENAME, RecommendationSet,
    RenderEvent,
)
from .randomizer import ClassWeights, ExecutionContext, execute_recipe, fingerprint, sample_recipe
from .recommenders import StereotypeList, popularity_ranking
from .textengine import Index

DEFAULT_COUNT = 10
MIN_COUNT, MAX_COUNT = 1, 15


class NotFoundError(KeyError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class ServiceConfig:
    weights: ClassWeights = field(default_factory=ClassWeights)
    rerank_probability: float = 0.5
    stereotype_list: Optional[str] = None
    readership_stub: Optional[str] = None
    cache_ttl_days: float = DEFAULT_CACHE_TTL.days
    master_seed: int = 0

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        weights = ClassWeights(**obj["class_weights"]) if "class_weights" in obj else ClassWeights()
        return cls(
            weights=weights,
            rerank_probability=obj.get("rerank_probability", 0.5),
            stereotype_list=obj.get("stereotype_list"),
            readership_stub=obj.get("readership_stub"),
            cache_ttl_days=obj.get("cache_ttl_days", DEFAULT_CACHE_TTL.days),
            master_seed=obj.get("master_seed", 0),
        )


def dedup_delivered_list(items: list[tuple[int, float]], source: DocumentRecord,
                         store: DocumentStore) -> list[tuple[int, float]]:
    """Drop items that duplicate the source or an earlier item by
    (clean_title, year); relative order is preserved."""
    source_key = source.dedup_key()
    seen = {source_key}
    kept = []
    for doc_id, relevance in items:
        doc = store.get(doc_id)
        key = doc.dedup_key() if doc is not None else (str(doc_id), None)
        if key in seen:
            continue
        seen.add(key)
        kept.append((doc_id, relevance))
    return kept


def _request_seed(master_seed: int, counter: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{counter}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RecommenderService:
    """In-process service facade; the HTTP layer is a thin adapter on top."""

    def __init__(self, store: DocumentStore, index: Index, config: ServiceConfig,
                 data_dir: str | Path,
                 clock: Optional[Callable[[], datetime]] = None,
                 event_log: Optional[EventLog] = None):
        self.store = store
        self.index = index
        self.config = config
        self.data_dir = Path(data_dir)
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.event_log = event_log or EventLog(self.data_dir / LOG_FILENAME)
        self.started_monotonic = time.monotonic()

        self.provider = StubProvider(config.readership_stub) if config.readership_stub else None
        self.cache = ReadershipCache(self.data_dir / "readership_cache.json",
                                     ttl=timedelta(days=config.cache_ttl_days))
        self.stereotype = (StereotypeList.load(config.stereotype_list, store)
                           if config.stereotype_list else None)
        self.readership = self._load_readership_table()

        self._ctx = ExecutionContext(
            store=store,
            index=index,
            readership=self.readership,
            stereotype=self.stereotype,
            provider=self.provider,
            cache=self.cache,
            now=self.clock,
            popular_ranking=popularity_ranking(store, self.readership),
            sorted_doc_ids=sorted(store.docs),
            terms_cache={},
            bib_score_cache={},
        )
        # 128-bit tokens; seeded from the OS once, then cheap per item
        self._token_rng = random.Random(int.from_bytes(os.urandom(16), "big"))

        self._counter = 0
        self._counter_lock = threading.Lock()
        # rec_id -> delivered_at of the parent set; set_id -> delivered_at
        self._rec_index: dict[str, datetime] = {}
        self._set_index: dict[str, datetime] = {}
        self._replay_log()

    def _load_readership_table(self) -> dict[int, int]:
        if self.provider is None:
            return {}
        try:
            table = self.provider._load()
        except Exception:
            return {}
        readership = {}
        for ext_id, readers in table.items():
            doc = self.store.get_by_external(ext_id)
            if doc is not None:
                readership[doc.doc_id] = readers
        return readership

    def _replay_log(self) -> None:
        """Rebuild the click-attribution index from the persisted log."""
        from .eventlog import LogSnapshot

        snapshot = LogSnapshot.load(self.data_dir)
        for s in snapshot.sets:
            self._set_index[s.set_id] = s.delivered_at
            for item in s.items:
                self._rec_index[item.rec_id] = s.delivered_at

    def _new_token(self) -> str:
        return f"{self._token_rng.getrandbits(128):032x}"

    # -- operations -----------------------------------------------------------

    def request_related(self, external_id: str, count: Optional[int] = None,
                        user_token: Optional[str] = None) -> RecommendationSet:
        received_at = self.clock()
        if count is None:
            count = DEFAULT_COUNT
        if not isinstance(count, int) or not MIN_COUNT <= count <= MAX_COUNT:
            raise ValidationError(
                f"count must lie in {MIN_COUNT}..{MAX_COUNT}, got {count}"
            )
        source = self.store.get_by_external(external_id)
        if source is None:
            raise NotFoundError(f"unknown document: {external_id}")

        with self._counter_lock:
            self._counter += 1
            counter = self._counter
        rng = random.Random(_request_seed(self.config.master_seed, counter))
        recipe = sample_recipe(rng, self.config.weights, self.config.rerank_probability)
        candidates, fallback_used, executed_fp = execute_recipe(
            recipe, source, self._ctx, limit=count)

        kept = dedup_delivered_list(candidates.items, source, self.store)[:count]
        items = [
            DeliveredItem(rec_id=self._new_token(), doc_id=doc_id,
                          rank=rank, relevance=relevance)
            for rank, (doc_id, relevance) in enumerate(kept, start=1)
        ]
        delivered_at = self.clock()
        processing_ms = max(0, round((delivered_at - received_at).total_seconds() * 1000))
        record = RecommendationSet(
            set_id=self._new_token(),
            source_doc_id=source.doc_id,
            requested_count=count,
            items=items,
            user_token=user_token,
            received_at=received_at,
            delivered_at=delivered_at,
            processing_time_ms=processing_ms,
            sampled_fingerprint=fingerprint(recipe),
            executed_fingerprint=executed_fp,
            fallback_used=fallback_used,
        )
        # persist before the response leaves the service
        self.event_log.append_set(record)
        self._set_index[record.set_id] = delivered_at
        for item in items:
            self._rec_index[item.rec_id] = delivered_at
        return record

    def record_click(self, rec_id: str) -> ClickEvent:
        delivered_at = self._rec_index.get(rec_id)
        if delivered_at is None:
            raise NotFoundError(f"unknown recommendation: {rec_id}")
        clicked_at = self.clock()
        delay_ms = max(0, round((clicked_at - delivered_at).total_seconds() * 1000))
        event = ClickEvent(rec_id=rec_id, clicked_at=clicked_at, delay_ms=delay_ms)
        self.event_log.append_click(event)
        return event

    def record_render(self, set_id: str) -> bool:
        if set_id not in self._set_index:
            return False
        self.event_log.append_render(RenderEvent(set_id=set_id, rendered_at=self.clock()))
        return True

    def health(self) -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "corpus_size": len(self.store),
            "index_version": self.index.version,
            "uptime_seconds": time.monotonic() - self.started_monotonic,
        }

    def close(self) -> None:
        self.cache.save()
        self.event_log.close()
