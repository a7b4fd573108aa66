"""The four recommendation classes: content-based, stereotype, most-popular,
and the random baseline.

All producers return a CandidateList that never contains the source document
or a repeated doc_id, and all ties break on ascending doc_id so results are
reproducible. Content-based filtering can query with either the document's
full term set or its top key-phrases.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .corpus import DocumentRecord, DocumentStore
from .textengine import (
    GRAM_SIZES,
    Index,
    KEYPHRASE_FIELDS,
    doc_terms,
    extract_keyphrases,
    score_related,
)

TERMS = "terms"
KEYPHRASES = "keyphrases"


class InsufficientKeyphrasesError(ValueError):
    """The document has fewer key-phrases than the recipe demands."""

    def __init__(self, available: int, requested: int):
        super().__init__(
            f"insufficient keyphrases: {available} available, {requested} requested"
        )
        self.available = available
        self.requested = requested


class NoStereotypeError(ValueError):
    def __init__(self):
        super().__init__("no stereotype configured")


@dataclass(frozen=True)
class CbfParams:
    feature_source: str
    keyphrase_field: Optional[str] = None
    gram_size: Optional[str] = None
    num_keyphrases: Optional[int] = None

    def __post_init__(self):
        if self.feature_source == TERMS:
            if not (self.keyphrase_field is None and self.gram_size is None
                    and self.num_keyphrases is None):
                raise ValueError("terms mode takes no key-phrase parameters")
        elif self.feature_source == KEYPHRASES:
            if self.keyphrase_field not in KEYPHRASE_FIELDS:
                raise ValueError(f"bad keyphrase_field: {self.keyphrase_field!r}")
            if self.gram_size not in GRAM_SIZES:
                raise ValueError(f"bad gram_size: {self.gram_size!r}")
            if not (self.num_keyphrases and 1 <= self.num_keyphrases <= 20):
                raise ValueError("num_keyphrases must lie in 1..20")
        else:
            raise ValueError(f"bad feature_source: {self.feature_source!r}")


@dataclass
class CandidateList:
    source: int
    items: list[tuple[int, float]]
    producer: str

    def doc_ids(self) -> list[int]:
        return [doc_id for doc_id, _ in self.items]


@dataclass
class StereotypeList:
    """Operator-curated list of doc_ids shown to every requester."""

    doc_ids: list[int] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path, store: DocumentStore) -> "StereotypeList":
        """Read one external_id per line; `#` starts a comment."""
        ids = []
        seen = set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            ext_id = line.split("#", 1)[0].strip()
            if not ext_id:
                continue
            doc = store.get_by_external(ext_id)
            if doc is None:
                raise ValueError(f"stereotype entry {ext_id!r} not in corpus")
            if doc.doc_id not in seen:
                seen.add(doc.doc_id)
                ids.append(doc.doc_id)
        return cls(doc_ids=ids)


def recommend_cbf(source: DocumentRecord, params: CbfParams, index: Index,
                  limit: int, producer: str = "",
                  source_terms: Optional[Sequence[str]] = None) -> CandidateList:
    """Content-based recommendations via BM25 over terms or key-phrases.

    In key-phrase mode each selected phrase contributes its constituent
    grams as independent query terms; a document with fewer phrases than
    requested raises InsufficientKeyphrasesError so the caller can fall back.
    `source_terms` may carry the source's precomputed term list.
    """
    if params.feature_source == TERMS:
        query = list(source_terms) if source_terms is not None else doc_terms(source)
    else:
        phrases = extract_keyphrases(source, params.keyphrase_field, params.gram_size, index)
        if len(phrases) < params.num_keyphrases:
            raise InsufficientKeyphrasesError(len(phrases), params.num_keyphrases)
        query = []
        for kp in phrases[: params.num_keyphrases]:
            query.extend(kp.phrase.split(" "))
    items = score_related(index, query, exclude=source.doc_id, limit=limit)
    return CandidateList(source=source.doc_id, items=items, producer=producer)


def popularity_ranking(store: DocumentStore, readership: dict[int, int]) -> list[int]:
    """Full corpus ordering by readership desc, doc_id asc; cacheable."""
    return sorted(store.docs, key=lambda d: (-readership.get(d, 0), d))


def recommend_most_popular(store: DocumentStore, readership: dict[int, int],
                           limit: int, source: Optional[int] = None,
                           producer: str = "",
                           ranking: Optional[Sequence[int]] = None) -> CandidateList:
    """Corpus ranked by external readership count; unknown docs count zero.

    Pass a precomputed `ranking` to avoid re-sorting the corpus per request.
    """
    if ranking is None:
        ranking = popularity_ranking(store, readership)
    picked = []
    for doc_id in ranking:
        if doc_id == source:
            continue
        picked.append(doc_id)
        if len(picked) == limit:
            break
    items = [(doc_id, float(readership.get(doc_id, 0))) for doc_id in picked]
    return CandidateList(source=source if source is not None else -1,
                         items=items, producer=producer)


def recommend_stereotype(stereotype: Optional[StereotypeList], source: int,
                         limit: int, producer: str = "") -> CandidateList:
    """The curated list in order, source removed, relevance 1/rank."""
    if stereotype is None or not stereotype.doc_ids:
        raise NoStereotypeError()
    kept = [d for d in stereotype.doc_ids if d != source][:limit]
    items = [(doc_id, 1.0 / (i + 1)) for i, doc_id in enumerate(kept)]
    return CandidateList(source=source, items=items, producer=producer)


def recommend_random(store: DocumentStore, source: int, limit: int,
                     rng: random.Random, producer: str = "",
                     sorted_ids: Optional[Sequence[int]] = None) -> CandidateList:
    """Uniform sample without replacement from the corpus minus the source.

    Deterministic given the rng seed; `sorted_ids` may carry a precomputed
    ascending id list to avoid a per-request sort.
    """
    if sorted_ids is None:
        sorted_ids = sorted(store.docs)
    population = [d for d in sorted_ids if d != source]
    k = min(limit, len(population))
    picked = rng.sample(population, k)
    return CandidateList(source=source,
                         items=[(doc_id, 0.0) for doc_id in picked],
                         producer=producer)
