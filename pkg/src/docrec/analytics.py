"""Batch CTR analytics over event-log snapshots.

An impression is one delivered item; CTR in a bucket is the number of
distinct clicked items divided by impressions. Every rate is accompanied by
a 95% Wilson interval so that "no significant difference" judgments are
possible. Reports are deterministic functions of the snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Optional

import numpy as np
from scipy import stats

from .eventlog import LogSnapshot

ALGORITHM = "algorithm"
LATENCY = "latency"
SET_SIZE = "set_size"
RESHOW = "reshow"
DAY = "day"
RELEVANCE_DECILE = "relevance_decile"
DIMENSIONS = (ALGORITHM, LATENCY, SET_SIZE, RESHOW, DAY)

#: 1-second processing-time buckets up to 10 s, then one overflow bucket.
LATENCY_BUCKET_LABELS = tuple(f"{i}-{i + 1}s" for i in range(10)) + (">10s",)

#: Click-delay buckets: [0,30s) [30s,5min) [5min,1h) [1h,1d) [1d,5d) [5d,inf)
DELAY_BUCKET_EDGES_MS = (30_000, 300_000, 3_600_000, 86_400_000, 432_000_000)
DELAY_BUCKET_LABELS = ("<30s", "30s-5min", "5min-1h", "1h-1d", "1d-5d", ">5d")

_Z95 = 1.959963984540054


class InsufficientScoreDiversityError(ValueError):
    def __init__(self):
        super().__init__("insufficient score diversity")


@dataclass(frozen=True)
class CTRRow:
    bucket: str
    impressions: int
    clicks: int
    ctr: Optional[float]
    wilson_lo: Optional[float]
    wilson_hi: Optional[float]


@dataclass
class CTRReport:
    dimension: str
    rows: list[CTRRow]

    def total_impressions(self) -> int:
        return sum(r.impressions for r in self.rows)

    def total_clicks(self) -> int:
        return sum(r.clicks for r in self.rows)


@dataclass(frozen=True)
class DelayBucket:
    label: str
    count: int
    fraction: float


@dataclass
class DelayHistogram:
    buckets: list[DelayBucket]
    total_clicks: int


@dataclass(frozen=True)
class TimeSeriesPoint:
    day: date
    impressions: int
    clicks: int
    ctr: float


def wilson_interval(clicks: int, impressions: int, z: float = _Z95) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if impressions <= 0:
        raise ValueError("impressions must be positive")
    p = clicks / impressions
    n = impressions
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def _row(bucket: str, impressions: int, clicks: int) -> CTRRow:
    if impressions == 0:
        return CTRRow(bucket, 0, 0, None, None, None)
    lo, hi = wilson_interval(clicks, impressions)
    return CTRRow(bucket, impressions, clicks, clicks / impressions, lo, hi)


def clicked_rec_ids(snapshot: LogSnapshot) -> set[str]:
    """Distinct clicked items (repeat clicks count once)."""
    return {c.rec_id for c in snapshot.clicks}


def latency_bucket_index(processing_time_ms: int) -> int:
    return min(processing_time_ms // 1000, 10)


def _reshow_assignments(snapshot: LogSnapshot,
                        delay_filter: Optional[timedelta]):
    """Yield (item, reshow_count, excluded) for token-bearing deliveries.

    The reshow count is the number of prior deliveries of the same
    (user_token, doc_id) pair; a delivery within `delay_filter` of the pair's
    previous delivery is excluded from counting but still advances the pair's
    counter and its last-delivery time.
    """
    order = sorted(range(len(snapshot.sets)),
                   key=lambda i: (snapshot.sets[i].delivered_at, i))
    history: dict[tuple[str, int], tuple[int, object]] = {}
    for i in order:
        s = snapshot.sets[i]
        if s.user_token is None:
            continue
        for item in s.items:
            pair = (s.user_token, item.doc_id)
            count, last_at = history.get(pair, (0, None))
            excluded = (delay_filter is not None and last_at is not None
                        and s.delivered_at - last_at < delay_filter)
            yield item, count, excluded
            history[pair] = (count + 1, s.delivered_at)


def ctr_report(snapshot: LogSnapshot, dimension: str,
               reshow_delay_filter: Optional[timedelta] = None) -> CTRReport:
    """Impressions, distinct clicks, CTR, and Wilson bounds per bucket.

    Fixed-range dimensions (latency, set size) emit all their buckets, with
    ctr absent on zero-impression rows; open-ended dimensions emit only
    observed buckets. The reshow delay filter applies to the reshow
    dimension only.
    """
    clicked = clicked_rec_ids(snapshot)

    if dimension == RESHOW:
        counts: dict[int, list[int]] = {}
        for item, reshow_count, excluded in _reshow_assignments(snapshot, reshow_delay_filter):
            if excluded:
                continue
            imp_clk = counts.setdefault(reshow_count, [0, 0])
            imp_clk[0] += 1
            imp_clk[1] += item.rec_id in clicked
        rows = [_row(str(k), counts[k][0], counts[k][1]) for k in sorted(counts)]
        return CTRReport(dimension=RESHOW, rows=rows)

    buckets: dict[str, list[int]] = {}
    for s in snapshot.sets:
        if dimension == ALGORITHM:
            label = s.executed_fingerprint
        elif dimension == LATENCY:
            label = LATENCY_BUCKET_LABELS[latency_bucket_index(s.processing_time_ms)]
        elif dimension == SET_SIZE:
            if not s.items:
                continue
            label = str(len(s.items))
        elif dimension == DAY:
            label = s.delivered_at.date().isoformat()
        else:
            raise ValueError(f"unknown dimension: {dimension!r}")
        imp_clk = buckets.setdefault(label, [0, 0])
        for item in s.items:
            imp_clk[0] += 1
            imp_clk[1] += item.rec_id in clicked

    if dimension == LATENCY:
        labels = list(LATENCY_BUCKET_LABELS)
    elif dimension == SET_SIZE:
        labels = [str(i) for i in range(1, 16)]
    else:
        labels = sorted(buckets)
    rows = [_row(label, *buckets.get(label, (0, 0))) for label in labels]
    return CTRReport(dimension=dimension, rows=rows)


def click_delay_histogram(snapshot: LogSnapshot) -> DelayHistogram:
    """All click events assigned to the fixed delay buckets."""
    counts = [0] * len(DELAY_BUCKET_LABELS)
    for click in snapshot.clicks:
        idx = 0
        while idx < len(DELAY_BUCKET_EDGES_MS) and click.delay_ms >= DELAY_BUCKET_EDGES_MS[idx]:
            idx += 1
        counts[idx] += 1
    total = len(snapshot.clicks)
    buckets = [
        DelayBucket(label=label, count=c, fraction=(c / total if total else 0.0))
        for label, c in zip(DELAY_BUCKET_LABELS, counts)
    ]
    return DelayHistogram(buckets=buckets, total_clicks=total)


def ctr_time_series(snapshot: LogSnapshot) -> list[TimeSeriesPoint]:
    """One point per UTC day with at least one impression; gaps preserved."""
    clicked = clicked_rec_ids(snapshot)
    by_day: dict[date, list[int]] = {}
    for s in snapshot.sets:
        day = s.delivered_at.date()
        imp_clk = by_day.setdefault(day, [0, 0])
        for item in s.items:
            imp_clk[0] += 1
            imp_clk[1] += item.rec_id in clicked
    return [
        TimeSeriesPoint(day=d, impressions=by_day[d][0], clicks=by_day[d][1],
                        ctr=by_day[d][1] / by_day[d][0])
        for d in sorted(by_day)
        if by_day[d][0] > 0
    ]


def score_ctr_correlation(snapshot: LogSnapshot) -> tuple[CTRReport, float, float]:
    """CTR by relevance decile over CBF-delivered items, plus Spearman rho.

    Decile cut points come from the included items themselves. Returns
    (report, rho, p_value) where rho is the Spearman rank correlation between
    decile index and decile CTR.
    """
    clicked = clicked_rec_ids(snapshot)
    items = [
        item
        for s in snapshot.sets
        if s.executed_fingerprint.startswith("cbf")
        for item in s.items
    ]
    relevances = np.array([i.relevance for i in items], dtype=np.float64)
    if len(np.unique(relevances)) < 10:
        raise InsufficientScoreDiversityError()
    edges = np.quantile(relevances, [i / 10 for i in range(1, 10)])
    deciles = np.searchsorted(edges, relevances, side="right")
    counts = [[0, 0] for _ in range(10)]
    for item, decile in zip(items, deciles):
        counts[decile][0] += 1
        counts[decile][1] += item.rec_id in clicked
    rows = [_row(str(i + 1), counts[i][0], counts[i][1]) for i in range(10)]
    observed = [(i, r.ctr) for i, r in enumerate(rows) if r.ctr is not None]
    rho, pvalue = stats.spearmanr([i for i, _ in observed], [c for _, c in observed])
    return CTRReport(dimension=RELEVANCE_DECILE, rows=rows), float(rho), float(pvalue)
