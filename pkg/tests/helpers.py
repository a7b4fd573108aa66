"""Shared fixtures-in-code: document factories and independent oracles.

The oracles here deliberately re-derive results with the most naive method
available (full loops over the corpus, pairwise comparisons) and must stay
independent of the production code paths they check.
"""

from __future__ import annotations

import io
import json
import math
from datetime import datetime, timezone
from typing import Optional, Sequence

from docrec.corpus import DocumentRecord, DocumentStore, clean_title, ingest, normalize_author


def jsonl_stream(records) -> io.BytesIO:
    payload = "\n".join(json.dumps(r) for r in records) + "\n"
    return io.BytesIO(payload.encode("utf-8"))


def store_from_records(data_dir, records) -> DocumentStore:
    store = DocumentStore(data_dir)
    ingest(jsonl_stream(records), "jsonl", store)
    return store


def store_from_titles(data_dir, titles, **extra) -> DocumentStore:
    records = [{"id": f"d{i}", "title": t, **extra} for i, t in enumerate(titles)]
    return store_from_records(data_dir, records)


def make_doc(doc_id: int, title: str, abstract: Optional[str] = None,
             external_id: Optional[str] = None, authors: Sequence[str] = (),
             year: Optional[int] = None, language: Optional[str] = None) -> DocumentRecord:
    return DocumentRecord(
        doc_id=doc_id,
        external_id=external_id or f"x{doc_id}",
        title=title,
        clean_title=clean_title(title),
        abstract=abstract,
        authors=[normalize_author(a) for a in authors],
        year=year,
        language=language,
        added_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
    )


def brute_force_bm25(index, query_terms, exclude, limit, doc_terms_by_id):
    """Reference scorer: a plain loop over every document.

    Mirrors the scoring contract from first principles: for each document,
    sum over distinct query terms (first-occurrence order)
    idf(t) * tf * (k1+1) / (tf + k1 * (1 - b + b * (len / avg_len))),
    with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)). Documents with zero
    score are dropped; sort by score desc then doc_id asc; truncate.
    """
    from collections import Counter

    k1 = index.params.k1
    b = index.params.b
    n_docs = index.N
    avg_len = index.avg_len
    distinct = list(dict.fromkeys(query_terms))

    tf_by_doc = {doc_id: Counter(terms) for doc_id, terms in doc_terms_by_id.items()}
    df = {}
    for term in distinct:
        df[term] = sum(1 for counts in tf_by_doc.values() if term in counts)

    results = []
    for doc_id, counts in tf_by_doc.items():
        if doc_id == exclude:
            continue
        length = len(doc_terms_by_id[doc_id])
        score = 0.0
        for term in distinct:
            tf = counts.get(term, 0)
            if tf == 0 or df[term] == 0:
                continue
            idf = math.log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
            tf = float(tf)
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * (length / avg_len)))
        if score > 0.0:
            results.append((doc_id, score))
    results.sort(key=lambda r: (-r[1], r[0]))
    return results[:limit]


def brute_force_duplicate_partition(docs):
    """Pairwise-comparison reference for duplicate grouping."""
    docs = list(docs)
    assigned = {}
    groups = []
    for d in docs:
        placed = False
        for group in groups:
            other = group[0]
            if d.clean_title == other.clean_title and d.year == other.year:
                group.append(d)
                placed = True
                break
        if not placed:
            groups.append([d])
    out = []
    for group in groups:
        ids = sorted(x.doc_id for x in group)
        out.append((min(ids), tuple(ids)))
    out.sort()
    return out
