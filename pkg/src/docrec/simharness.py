"""Deterministic synthetic corpora and traffic with planted click models.

Everything here exists so analytics output can be checked against known
ground truth: the corpus generator plants duplicates and noise authors, the
traffic driver clicks with a closed-form probability model and emits a
manifest of expected per-bucket CTRs, and the synthesize_* builders fabricate
event-log snapshots with planted latency, reshow, delay, daily-rate, and
relevance effects.

Click decisions derive from (seed, rec_id), so worker scheduling cannot
change outcomes once a set has been delivered.
"""

from __future__ import annotations

import hashlib
import io
import json
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from datetime import date, datetime, timedelta, timezone
from typing import Optional, Sequence

import numpy as np

from .analytics import (
    DELAY_BUCKET_EDGES_MS, DELAY_BUCKET_LABELS, LATENCY_BUCKET_LABELS,
    latency_bucket_index,
)
from .eventlog import ClickEvent, DeliveredItem, LogSnapshot, RecommendationSet
from .service import RecommenderService
from .stopwords import ENGLISH_STOPWORDS

_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)

_SYLLABLES = [c + v for c in "bdfglmnprstvz" for v in "aeiou"]

#: Default click-delay mixture over the analytics delay buckets; the first
#: and last masses mirror the shares reported for live traffic.
DEFAULT_DELAY_MIXTURE = (
    ("<30s", 0.048), ("30s-5min", 0.25), ("5min-1h", 0.30),
    ("1h-1d", 0.255), ("1d-5d", 0.10), (">5d", 0.047),
)

# sampling range for the open-ended >5d bucket
_MAX_DELAY_MS = 864_000_000  # 10 days


def _word(i: int) -> str:
    parts = []
    while True:
        parts.append(_SYLLABLES[i % len(_SYLLABLES)])
        i //= len(_SYLLABLES)
        if i == 0:
            break
    return "".join(parts)


def _vocabulary(size: int) -> list[str]:
    words = []
    i = 0
    while len(words) < size:
        w = _word(i)
        i += 1
        if w not in ENGLISH_STOPWORDS:
            words.append(w)
    return words


@dataclass(frozen=True)
class ClickModel:
    base_rate: float = 0.1
    position_decay: float = 0.85
    latency_decay_per_s: float = 0.1
    reshow_multiplier: float = 0.7
    relevance_slope: float = 0.5
    delay_mixture: tuple[tuple[str, float], ...] = DEFAULT_DELAY_MIXTURE

    def __post_init__(self):
        labels = [label for label, _ in self.delay_mixture]
        if sorted(labels) != sorted(DELAY_BUCKET_LABELS):
            raise ValueError("delay mixture must cover exactly the delay buckets")
        if abs(sum(p for _, p in self.delay_mixture) - 1.0) > 1e-9:
            raise ValueError("delay mixture probabilities must sum to 1")

    @classmethod
    def load(cls, path) -> "ClickModel":
        obj = json.loads(open(path, encoding="utf-8").read())
        if "delay_mixture" in obj:
            obj["delay_mixture"] = tuple((k, v) for k, v in obj["delay_mixture"])
        return cls(**obj)

    def click_probability(self, rank: int, processing_s: float,
                          reshow_count: int, normalized_relevance: float) -> float:
        p = (self.base_rate
             * self.position_decay ** (rank - 1)
             * (1.0 - self.latency_decay_per_s) ** processing_s
             * self.reshow_multiplier ** reshow_count
             * (1.0 + self.relevance_slope * normalized_relevance))
        return min(1.0, max(0.0, p))


@dataclass
class SimConfig:
    corpus_size: int
    num_requests: int
    seed: int
    users: int = 10
    model: ClickModel = field(default_factory=ClickModel)
    workers: int = 1
    days: int = 1

    def __post_init__(self):
        if self.corpus_size < 2:
            raise ValueError("corpus_size must be >= 2")


# -- corpus generation --------------------------------------------------------


def generate_corpus_lines(corpus_size: int, seed: int) -> list[str]:
    """Synthetic JSONL export: Zipf vocabulary, planted duplicates and noise.

    Word frequencies are Zipf-distributed with the head ranks mapped to real
    English function words, mirroring natural text where the most frequent
    words are exactly the ones an indexer filters out. Deterministic and
    byte-identical given (corpus_size, seed). Plants
    max(1, corpus_size // 100) duplicate pairs (identical title and year) and
    a noise author on 2% of documents.
    """
    if corpus_size < 2:
        raise ValueError("corpus_size must be >= 2")
    rng = np.random.default_rng(seed)
    head = sorted(w for w in ENGLISH_STOPWORDS if len(w) > 1)
    content_size = max(500, min(50_000, corpus_size))
    vocab = head + _vocabulary(content_size)
    weights = 1.0 / np.arange(1, len(vocab) + 1) ** 1.0
    cum = np.cumsum(weights)
    cum /= cum[-1]

    def words(n: int) -> list[str]:
        idx = np.searchsorted(cum, rng.random(n), side="left")
        return [vocab[i] for i in idx]

    surnames = [_word(i).capitalize() for i in range(200, 400)]
    given = [_word(i).capitalize() for i in range(400, 600)]
    noise_pool = ("et al.", "and others", "Anonymous", "u.a.")

    records = []
    for i in range(corpus_size):
        title_len = int(rng.integers(5, 11))
        abstract_len = int(rng.integers(30, 61))
        n_authors = int(rng.integers(1, 4))
        authors = [
            f"{given[int(rng.integers(0, len(given)))]} "
            f"{surnames[int(rng.integers(0, len(surnames)))]}"
            for _ in range(n_authors)
        ]
        records.append({
            "id": f"d{i}",
            "title": " ".join(words(title_len)),
            "abstract": " ".join(words(abstract_len)),
            "authors": authors,
            "year": int(rng.integers(1980, 2025)),
            "language": "en",
        })

    noise_docs = max(1, corpus_size // 50)
    for j in range(noise_docs):
        target = (j * 53) % corpus_size
        records[target]["authors"].append(noise_pool[j % len(noise_pool)])

    dup_pairs = max(1, corpus_size // 100)
    for p in range(dup_pairs):
        src = records[p]
        dup = records[corpus_size - 1 - p]
        dup["title"] = src["title"]
        dup["year"] = src["year"]

    return [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]


def generate_corpus(corpus_size: int, seed: int) -> io.BytesIO:
    """The synthetic export as a readable byte stream for ingest."""
    payload = "\n".join(generate_corpus_lines(corpus_size, seed)) + "\n"
    return io.BytesIO(payload.encode("utf-8"))


# -- deterministic per-impression randomness ----------------------------------


def _u01(seed: int, tag: str) -> float:
    digest = hashlib.sha256(f"{seed}|{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 64


def sample_delay_ms(seed: int, rec_id: str,
                    mixture: Sequence[tuple[str, float]]) -> int:
    """Sample a click delay from the bucket mixture, uniform within bucket."""
    by_label = dict(mixture)
    probs = [by_label[label] for label in DELAY_BUCKET_LABELS]
    u = _u01(seed, rec_id + "|bucket")
    cumulative = 0.0
    idx = len(probs) - 1
    for i, p in enumerate(probs):
        cumulative += p
        if u < cumulative:
            idx = i
            break
    lo = 0 if idx == 0 else DELAY_BUCKET_EDGES_MS[idx - 1]
    hi = DELAY_BUCKET_EDGES_MS[idx] if idx < len(DELAY_BUCKET_EDGES_MS) else _MAX_DELAY_MS
    frac = _u01(seed, rec_id + "|pos")
    return int(lo + frac * (hi - lo))


# -- simulation clock and targets ----------------------------------------------


class SimClock:
    """Controllable clock handed to the service in in-process simulations."""

    def __init__(self, start: datetime = _EPOCH):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> datetime:
        with self._lock:
            self._now += timedelta(seconds=seconds)
            return self._now

    def set(self, when: datetime) -> None:
        with self._lock:
            self._now = when


@dataclass(frozen=True)
class ResponseView:
    """Target-independent view of one delivery."""

    set_id: str
    processing_time_ms: int
    executed_fingerprint: str
    fallback_used: bool
    items: tuple[tuple[str, str, int, float], ...]  # (rec_id, external_id, rank, relevance)


class InProcessTarget:
    """Drives a RecommenderService directly."""

    def __init__(self, service: RecommenderService, clock: Optional[SimClock] = None):
        self.service = service
        self.clock = clock

    def request(self, external_id: str, count: int, user: str) -> ResponseView:
        record = self.service.request_related(external_id, count=count, user_token=user)
        items = tuple(
            (i.rec_id, self.service.store.get(i.doc_id).external_id, i.rank, i.relevance)
            for i in record.items
        )
        return ResponseView(
            set_id=record.set_id,
            processing_time_ms=record.processing_time_ms,
            executed_fingerprint=record.executed_fingerprint,
            fallback_used=record.fallback_used,
            items=items,
        )

    def click(self, rec_id: str) -> None:
        self.service.record_click(rec_id)


class HttpTarget:
    """Drives a live service over HTTP; no clock control, so click delays
    collapse to near zero."""

    def __init__(self, base_url: str):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(base_url=self.base_url, timeout=30.0)
        self.clock = None

    def request(self, external_id: str, count: int, user: str) -> ResponseView:
        resp = self._client.get(f"/v1/documents/{external_id}/related",
                                params={"count": count, "user": user})
        resp.raise_for_status()
        obj = resp.json()
        items = tuple(
            (r["rec_id"], r["external_id"], r["rank"], r["relevance"])
            for r in obj["recommendations"]
        )
        return ResponseView(
            set_id=obj["set_id"],
            processing_time_ms=obj["processing_time_ms"],
            executed_fingerprint=obj["algorithm"]["executed"],
            fallback_used=obj["fallback_used"],
            items=items,
        )

    def click(self, rec_id: str) -> None:
        self._client.post(f"/v1/clicks/{rec_id}").raise_for_status()


def _normalized_relevances(items) -> list[float]:
    rels = [rel for _, _, _, rel in items]
    lo, hi = min(rels), max(rels)
    if hi == lo:
        return [0.5] * len(items)
    return [(r - lo) / (hi - lo) for r in rels]


def simulate_traffic(config: SimConfig, target) -> dict:
    """Issue requests, click per the planted model, return the manifest.

    The manifest records the planted parameters, realized impression and
    click totals, and per-bucket expected CTRs (the mean planted click
    probability over each bucket's impressions) for the latency, set-size,
    reshow, algorithm, and day dimensions.
    """
    model = config.model
    rng = random.Random(config.seed)
    request_plan = [
        (f"d{rng.randrange(config.corpus_size)}",
         rng.randint(1, 15),
         f"user{rng.randrange(config.users)}")
        for _ in range(config.num_requests)
    ]
    step_seconds = (config.days * 86_400) / max(1, config.num_requests)

    reshow_counts: dict[tuple[str, str], int] = {}
    reshow_lock = threading.Lock()
    expected: dict[str, dict[str, list[float]]] = {
        "latency": {}, "set_size": {}, "reshow": {}, "algorithm": {}, "day": {},
    }
    planned_clicks: list[tuple[datetime, str]] = []
    stats_lock = threading.Lock()
    impressions = 0
    fallbacks = 0

    def run_one(plan):
        nonlocal impressions, fallbacks
        external_id, count, user = plan
        if target.clock is not None:
            target.clock.advance(step_seconds)
        view = target.request(external_id, count, user)
        delivered_at = target.clock.now() if target.clock is not None else datetime.now(timezone.utc)
        if not view.items:
            with stats_lock:
                fallbacks += view.fallback_used
            return
        nrels = _normalized_relevances(view.items)
        with reshow_lock:
            shows = []
            for _, ext, _, _ in view.items:
                pair = (user, ext)
                shows.append(reshow_counts.get(pair, 0))
                reshow_counts[pair] = reshow_counts.get(pair, 0) + 1
        processing_s = view.processing_time_ms / 1000.0
        day_label = delivered_at.date().isoformat()
        latency_label = LATENCY_BUCKET_LABELS[latency_bucket_index(view.processing_time_ms)]
        with stats_lock:
            impressions += len(view.items)
            fallbacks += view.fallback_used
            for (rec_id, ext, rank, _), nrel, reshow in zip(view.items, nrels, shows):
                p = model.click_probability(rank, processing_s, reshow, nrel)
                for dim, label in (
                    ("latency", latency_label),
                    ("set_size", str(len(view.items))),
                    ("reshow", str(reshow)),
                    ("algorithm", view.executed_fingerprint),
                    ("day", day_label),
                ):
                    expected[dim].setdefault(label, []).append(p)
                if _u01(config.seed, rec_id) < p:
                    delay_ms = sample_delay_ms(config.seed, rec_id, model.delay_mixture)
                    planned_clicks.append(
                        (delivered_at + timedelta(milliseconds=delay_ms), rec_id))

    if config.workers <= 1:
        for plan in request_plan:
            run_one(plan)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(run_one, request_plan))

    planned_clicks.sort(key=lambda t: t[0])
    for clicked_at, rec_id in planned_clicks:
        if target.clock is not None:
            target.clock.set(clicked_at)
        target.click(rec_id)

    def summarize(bucket_probs: dict[str, list[float]]):
        return {
            label: {"impressions": len(ps), "expected_ctr": float(np.mean(ps))}
            for label, ps in sorted(bucket_probs.items())
        }

    return {
        "seed": config.seed,
        "corpus_size": config.corpus_size,
        "num_requests": config.num_requests,
        "users": config.users,
        "days": config.days,
        "model": {**asdict(model), "delay_mixture": list(model.delay_mixture)},
        "impressions": impressions,
        "clicks": len(planned_clicks),
        "fallback_responses": fallbacks,
        "expected_ctr_by": {dim: summarize(v) for dim, v in expected.items()},
    }


# -- planted-log synthesizers for analytics ground truth -----------------------


def _mk_set(set_id: str, items: list[DeliveredItem], delivered_at: datetime,
            processing_ms: int, executed: str = "cbf|terms",
            user: Optional[str] = None, requested: Optional[int] = None) -> RecommendationSet:
    return RecommendationSet(
        set_id=set_id,
        source_doc_id=0,
        requested_count=requested if requested is not None else max(1, len(items)),
        items=items,
        user_token=user,
        received_at=delivered_at - timedelta(milliseconds=processing_ms),
        delivered_at=delivered_at,
        processing_time_ms=processing_ms,
        sampled_fingerprint=executed,
        executed_fingerprint=executed,
        fallback_used=False,
    )


def synthesize_latency_log(profile: Sequence[tuple[int, int, float]],
                           items_per_set: int, seed: int) -> LogSnapshot:
    """Plant (processing_time_ms, num_sets, ctr) triples and Bernoulli clicks."""
    rng = np.random.default_rng(seed)
    sets = []
    clicks = []
    counter = 0
    when = _EPOCH
    for processing_ms, num_sets, ctr in profile:
        n_items = num_sets * items_per_set
        hits = rng.random(n_items) < ctr
        h = 0
        for _ in range(num_sets):
            items = []
            for _ in range(items_per_set):
                rec_id = f"r{counter:x}"
                counter += 1
                items.append(DeliveredItem(rec_id=rec_id, doc_id=1,
                                           rank=len(items) + 1, relevance=1.0))
                if hits[h]:
                    clicks.append(ClickEvent(rec_id=rec_id,
                                             clicked_at=when + timedelta(seconds=60),
                                             delay_ms=60_000))
                h += 1
            sets.append(_mk_set(f"s{len(sets):x}", items, when, processing_ms))
    return LogSnapshot.from_records(sets, clicks)


def synthesize_delay_log(num_clicks: int, mixture: Sequence[tuple[str, float]],
                         seed: int) -> LogSnapshot:
    """Every impression clicked, delays drawn from the planted mixture."""
    sets = []
    clicks = []
    when = _EPOCH
    for i in range(num_clicks):
        rec_id = f"r{i:x}"
        items = [DeliveredItem(rec_id=rec_id, doc_id=1, rank=1, relevance=1.0)]
        sets.append(_mk_set(f"s{i:x}", items, when, 500))
        delay_ms = sample_delay_ms(seed, rec_id, mixture)
        clicks.append(ClickEvent(rec_id=rec_id,
                                 clicked_at=when + timedelta(milliseconds=delay_ms),
                                 delay_ms=delay_ms))
    return LogSnapshot.from_records(sets, clicks)


def synthesize_daily_log(daily: Sequence[tuple[date, int, float]],
                         seed: int) -> LogSnapshot:
    """Plant (day, impressions, ctr) rows with one item per set."""
    rng = np.random.default_rng(seed)
    sets = []
    clicks = []
    counter = 0
    for day, impressions, ctr in daily:
        when = datetime(day.year, day.month, day.day, 12, 0, tzinfo=timezone.utc)
        hits = rng.random(impressions) < ctr
        for j in range(impressions):
            rec_id = f"r{counter:x}"
            counter += 1
            items = [DeliveredItem(rec_id=rec_id, doc_id=1, rank=1, relevance=1.0)]
            sets.append(_mk_set(f"s{counter:x}", items, when, 500))
            if hits[j]:
                clicks.append(ClickEvent(rec_id=rec_id,
                                         clicked_at=when + timedelta(seconds=30),
                                         delay_ms=30_000))
    return LogSnapshot.from_records(sets, clicks)


def synthesize_reshow_log(users: int, docs: int, rounds: int, base_ctr: float,
                          reshow_multiplier: float, seed: int,
                          short_gap: timedelta = timedelta(hours=12),
                          long_gap: timedelta = timedelta(hours=36)) -> LogSnapshot:
    """Redeliver each (user, doc) pair `rounds` times with decaying CTR.

    Gaps between redeliveries alternate between `short_gap` and `long_gap`
    per a deterministic hash, so a 24 h reshow-delay filter excludes a
    nontrivial, reproducible subset.
    """
    rng = np.random.default_rng(seed)
    sets = []
    clicks = []
    counter = 0
    for u in range(users):
        for d in range(docs):
            when = _EPOCH + timedelta(minutes=u * docs + d)
            for r in range(rounds):
                if r > 0:
                    gap = short_gap if _u01(seed, f"gap|{u}|{d}|{r}") < 0.5 else long_gap
                    when = when + gap
                rec_id = f"r{counter:x}"
                counter += 1
                items = [DeliveredItem(rec_id=rec_id, doc_id=d + 1, rank=1, relevance=1.0)]
                sets.append(_mk_set(f"s{counter:x}", items, when, 500, user=f"u{u}"))
                p = base_ctr * reshow_multiplier ** r
                if rng.random() < p:
                    clicks.append(ClickEvent(rec_id=rec_id,
                                             clicked_at=when + timedelta(seconds=45),
                                             delay_ms=45_000))
    return LogSnapshot.from_records(sets, clicks)


def synthesize_relevance_log(num_sets: int, items_per_set: int,
                             base_ctr: float, relevance_slope: float,
                             seed: int) -> LogSnapshot:
    """CBF-labelled items with uniform relevances; click probability rises
    linearly with relevance (slope 0 plants independence)."""
    rng = np.random.default_rng(seed)
    sets = []
    clicks = []
    counter = 0
    when = _EPOCH
    for s in range(num_sets):
        items = []
        for rank in range(1, items_per_set + 1):
            rec_id = f"r{counter:x}"
            counter += 1
            rel = float(rng.random())
            items.append(DeliveredItem(rec_id=rec_id, doc_id=1, rank=rank, relevance=rel))
            p = base_ctr * (1.0 + relevance_slope * rel)
            if rng.random() < min(1.0, p):
                clicks.append(ClickEvent(rec_id=rec_id,
                                         clicked_at=when + timedelta(seconds=30),
                                         delay_ms=30_000))
        sets.append(_mk_set(f"s{s:x}", items, when, 500))
    return LogSnapshot.from_records(sets, clicks)
