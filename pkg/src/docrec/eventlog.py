"""Append-only event log for delivered recommendation sets, clicks, and
optional render events.

Appends are serialized and flushed before the caller proceeds, so a set is
durable in the log before its response leaves the service; fsync runs
periodically rather than per event. Analytics read immutable snapshots.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

LOG_FILENAME = "events.log"
_FSYNC_EVERY = 256
_FSYNC_SECONDS = 1.0


@dataclass(frozen=True, slots=True)
class DeliveredItem:
    rec_id: str
    doc_id: int
    rank: int
    relevance: float


@dataclass(slots=True)
class RecommendationSet:
    set_id: str
    source_doc_id: int
    requested_count: int
    items: list[DeliveredItem]
    user_token: Optional[str]
    received_at: datetime
    delivered_at: datetime
    processing_time_ms: int
    sampled_fingerprint: str
    executed_fingerprint: str
    fallback_used: bool


@dataclass(frozen=True, slots=True)
class ClickEvent:
    rec_id: str
    clicked_at: datetime
    delay_ms: int


@dataclass(frozen=True, slots=True)
class RenderEvent:
    set_id: str
    rendered_at: datetime


def _set_to_obj(s: RecommendationSet) -> dict:
    return {
        "type": "set",
        "set_id": s.set_id,
        "source": s.source_doc_id,
        "requested": s.requested_count,
        "user": s.user_token,
        "received_at": s.received_at.isoformat(),
        "delivered_at": s.delivered_at.isoformat(),
        "processing_ms": s.processing_time_ms,
        "sampled": s.sampled_fingerprint,
        "executed": s.executed_fingerprint,
        "fallback": s.fallback_used,
        "items": [[i.rec_id, i.doc_id, i.rank, i.relevance] for i in s.items],
    }


def _set_from_obj(obj: dict) -> RecommendationSet:
    return RecommendationSet(
        set_id=obj["set_id"],
        source_doc_id=obj["source"],
        requested_count=obj["requested"],
        items=[DeliveredItem(rec_id=i[0], doc_id=i[1], rank=i[2], relevance=i[3])
               for i in obj["items"]],
        user_token=obj.get("user"),
        received_at=datetime.fromisoformat(obj["received_at"]),
        delivered_at=datetime.fromisoformat(obj["delivered_at"]),
        processing_time_ms=obj["processing_ms"],
        sampled_fingerprint=obj["sampled"],
        executed_fingerprint=obj["executed"],
        fallback_used=obj["fallback"],
    )


class EventLog:
    """Durable appender over a single JSONL file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a", encoding="utf-8")
        self._lock = threading.Lock()
        self._appends_since_sync = 0
        self._last_sync = time.monotonic()

    def _append(self, obj: dict) -> None:
        line = json.dumps(obj, ensure_ascii=False)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()
            self._appends_since_sync += 1
            now = time.monotonic()
            if (self._appends_since_sync >= _FSYNC_EVERY
                    or now - self._last_sync >= _FSYNC_SECONDS):
                os.fsync(self._fh.fileno())
                self._appends_since_sync = 0
                self._last_sync = now

    def append_set(self, s: RecommendationSet) -> None:
        self._append(_set_to_obj(s))

    def append_click(self, c: ClickEvent) -> None:
        self._append({"type": "click", "rec_id": c.rec_id,
                      "clicked_at": c.clicked_at.isoformat(), "delay_ms": c.delay_ms})

    def append_render(self, r: RenderEvent) -> None:
        self._append({"type": "render", "set_id": r.set_id,
                      "rendered_at": r.rendered_at.isoformat()})

    def close(self) -> None:
        with self._lock:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()


@dataclass
class LogSnapshot:
    """Immutable view of the event log for batch analytics."""

    sets: list[RecommendationSet] = field(default_factory=list)
    clicks: list[ClickEvent] = field(default_factory=list)
    renders: list[RenderEvent] = field(default_factory=list)

    @classmethod
    def load(cls, data_dir: str | Path) -> "LogSnapshot":
        path = Path(data_dir) / LOG_FILENAME
        snapshot = cls()
        if not path.exists():
            return snapshot
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                kind = obj.get("type")
                if kind == "set":
                    snapshot.sets.append(_set_from_obj(obj))
                elif kind == "click":
                    snapshot.clicks.append(ClickEvent(
                        rec_id=obj["rec_id"],
                        clicked_at=datetime.fromisoformat(obj["clicked_at"]),
                        delay_ms=obj["delay_ms"]))
                elif kind == "render":
                    snapshot.renders.append(RenderEvent(
                        set_id=obj["set_id"],
                        rendered_at=datetime.fromisoformat(obj["rendered_at"])))
        return snapshot

    @classmethod
    def from_records(cls, sets: Iterable[RecommendationSet],
                     clicks: Iterable[ClickEvent] = (),
                     renders: Iterable[RenderEvent] = ()) -> "LogSnapshot":
        return cls(sets=list(sets), clicks=list(clicks), renders=list(renders))

    def total_impressions(self) -> int:
        return sum(len(s.items) for s in self.sets)
