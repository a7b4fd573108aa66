"""Tokenization, key-phrase extraction, and Okapi BM25 scoring.

The index is rebuilt from scratch over the whole corpus (no incremental
updates) and is immutable afterwards, so readers need no locking. Scoring
uses BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)); query terms are
deduplicated in first-occurrence order and each distinct term contributes

    idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * (len / avg_len)))

Key-phrase candidates are contiguous token runs containing no stopword,
scored tf * idf over a gram document-frequency table built at index time.
English text is stemmed with the Porter algorithm; documents whose language
field names another language are tokenized but left unstemmed.
"""

from __future__ import annotations

import math
import pickle
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import DocumentRecord
from .stemmer import stem as porter_stem
from .stopwords import ENGLISH_STOPWORDS

TITLE = "title"
ABSTRACT = "abstract"
TITLE_ABSTRACT = "title_abstract"
KEYPHRASE_FIELDS = (TITLE, ABSTRACT, TITLE_ABSTRACT)

UNI = "uni"
BI = "bi"
TRI = "tri"
MIXED = "mixed"
GRAM_SIZES = (UNI, BI, TRI, MIXED)

_GRAM_COUNTS = {UNI: (1,), BI: (2,), TRI: (3,), MIXED: (1, 2, 3)}


class EmptyCorpusError(ValueError):
    pass


class IndexFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    term: str
    position: int


@dataclass(frozen=True)
class Keyphrase:
    phrase: str
    gram_size: int
    source_field: str
    score: float


@dataclass(frozen=True)
class ScoringParams:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@lru_cache(maxsize=262144)
def _stem_cached(word: str) -> str:
    if word.isascii() and word.isalpha():
        return porter_stem(word)
    return word


def _words(text: str) -> list[str]:
    """Split on non-alphanumeric characters and lowercase."""
    out = []
    start = -1
    text = text.lower()
    for i, c in enumerate(text):
        if c.isalnum():
            if start < 0:
                start = i
        elif start >= 0:
            out.append(text[start:i])
            start = -1
    if start >= 0:
        out.append(text[start:])
    return out


def analyze(text: str, stopwords: frozenset[str] = ENGLISH_STOPWORDS,
            stem: bool = True) -> list[tuple[str, bool]]:
    """Lowercase, split, and stem a text, flagging stopwords.

    Returns (term, is_stopword) pairs in text order. Stopword membership is
    decided on the unstemmed word; stemming is skipped for non-ASCII or
    non-alphabetic words.
    """
    result = []
    for word in _words(text):
        is_stop = word in stopwords
        term = _stem_cached(word) if (stem and not is_stop) else word
        result.append((term, is_stop))
    return result


def tokenize(text: str, stopword_filter: bool,
             stopwords: frozenset[str] = ENGLISH_STOPWORDS,
             stem: bool = True) -> list[Token]:
    """Tokenize a text; positions are assigned after stopword filtering."""
    tokens = []
    for term, is_stop in analyze(text, stopwords, stem):
        if stopword_filter and is_stop:
            continue
        tokens.append(Token(term=term, position=len(tokens)))
    return tokens


def _doc_should_stem(doc: DocumentRecord) -> bool:
    return doc.language is None or doc.language == "en"


def doc_terms(doc: DocumentRecord,
              stopwords: frozenset[str] = ENGLISH_STOPWORDS) -> list[str]:
    """Index-vocabulary terms of a document's title plus abstract."""
    do_stem = _doc_should_stem(doc)
    terms = [t.term for t in tokenize(doc.title, True, stopwords, do_stem)]
    if doc.abstract:
        terms += [t.term for t in tokenize(doc.abstract, True, stopwords, do_stem)]
    return terms


def _field_texts(doc: DocumentRecord, source_field: str) -> list[str]:
    if source_field == TITLE:
        return [doc.title]
    if source_field == ABSTRACT:
        return [doc.abstract or ""]
    if source_field == TITLE_ABSTRACT:
        return [doc.title, doc.abstract or ""]
    raise ValueError(f"unknown key-phrase field: {source_field!r}")


def _candidate_grams(analyzed: Sequence[tuple[str, bool]], size: int) -> Iterable[str]:
    """Contiguous runs of `size` tokens with no stopword inside."""
    for i in range(len(analyzed) - size + 1):
        window = analyzed[i:i + size]
        if any(is_stop for _, is_stop in window):
            continue
        yield " ".join(term for term, _ in window)


class Index:
    """Immutable BM25 index over title+abstract tokens.

    Postings are stored as parallel numpy arrays keyed by a dense row per
    document; the gram document-frequency table keeps only entries with
    df >= 2 (a corpus gram absent from the table has df exactly 1).
    """

    #: dense-vector cache thresholds for very common terms
    _DENSE_MAX_TERMS = 64
    _DENSE_MIN_DF_FRACTION = 8

    def __init__(self, doc_ids, doc_len, postings, gram_df, params, version):
        self.doc_ids: np.ndarray = doc_ids
        self.doc_len_arr: np.ndarray = doc_len
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = postings
        self.gram_df: dict[str, int] = gram_df
        self.params: ScoringParams = params
        self.version: int = version
        self.N: int = len(doc_ids)
        self.avg_len: float = float(doc_len.mean())
        self._row_of = {int(d): i for i, d in enumerate(doc_ids)}
        # precomputed per-doc BM25 length normalization
        k1, b = params.k1, params.b
        self._norm = k1 * (1.0 - b + b * (doc_len.astype(np.float64) / self.avg_len))
        # a term's contribution to a doc is query-independent: precompute it
        # per posting so query time is pure gather-scatter-add
        self._contrib: dict[str, np.ndarray] = {}
        for term, (rows, tfs) in postings.items():
            idf = self._idf(len(rows))
            tf = tfs.astype(np.float64)
            self._contrib[term] = idf * (tf * (k1 + 1.0)) / (tf + self._norm[rows])
        self._dense = self._build_dense_cache()

    def _build_dense_cache(self) -> dict[str, np.ndarray]:
        """Full contribution vectors for terms covering much of the corpus,
        where a dense add beats a gather-scatter (zeros elsewhere leave the
        accumulated scores bit-identical)."""
        cutoff = max(256, self.N // self._DENSE_MIN_DF_FRACTION)
        heavy = sorted(
            (term for term, (rows, _) in self.postings.items() if len(rows) >= cutoff),
            key=lambda t: (-len(self.postings[t][0]), t),
        )[: self._DENSE_MAX_TERMS]
        dense = {}
        for term in heavy:
            rows, _ = self.postings[term]
            vec = np.zeros(self.N, dtype=np.float64)
            vec[rows] = self._contrib[term]
            dense[term] = vec
        return dense

    def df(self, term: str) -> int:
        entry = self.postings.get(term)
        return len(entry[0]) if entry else 0

    def doc_len(self, doc_id: int) -> int:
        return int(self.doc_len_arr[self._row_of[doc_id]])

    def idf(self, term: str) -> float:
        return self._idf(self.df(term))

    def _idf(self, df: int) -> float:
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def gram_idf(self, gram: str) -> float:
        return self._idf(self.gram_df.get(gram, 1))


def build_index(docs: Sequence[DocumentRecord], params: ScoringParams = ScoringParams(),
                stopwords: frozenset[str] = ENGLISH_STOPWORDS, version: int = 1) -> Index:
    """Build a full index over the corpus; deterministic given input order."""
    if not docs:
        raise EmptyCorpusError("empty corpus")
    doc_ids = np.array([d.doc_id for d in docs], dtype=np.int64)
    doc_len = np.zeros(len(docs), dtype=np.int64)
    raw_postings: dict[str, list[tuple[int, int]]] = {}
    gram_counts: dict[str, int] = {}

    for row, doc in enumerate(docs):
        terms = doc_terms(doc, stopwords)
        doc_len[row] = len(terms)
        tf: dict[str, int] = {}
        for t in terms:
            tf[t] = tf.get(t, 0) + 1
        for term, count in tf.items():
            raw_postings.setdefault(term, []).append((row, count))

        do_stem = _doc_should_stem(doc)
        doc_grams: set[str] = set()
        for text in (doc.title, doc.abstract or ""):
            analyzed = analyze(text, stopwords, do_stem)
            for size in (1, 2, 3):
                doc_grams.update(_candidate_grams(analyzed, size))
        for gram in doc_grams:
            gram_counts[gram] = gram_counts.get(gram, 0) + 1

    postings = {
        term: (
            np.array([r for r, _ in entries], dtype=np.int32),
            np.array([c for _, c in entries], dtype=np.int32),
        )
        for term, entries in raw_postings.items()
    }
    gram_df = {g: c for g, c in gram_counts.items() if c >= 2}
    return Index(doc_ids, doc_len, postings, gram_df, params, version)


def extract_keyphrases(doc: DocumentRecord, source_field: str, gram_size: str,
                       index: Index,
                       stopwords: frozenset[str] = ENGLISH_STOPWORDS) -> list[Keyphrase]:
    """Rank a document's candidate key-phrases by tf * idf.

    Ties break lexicographically on the phrase; MIXED pools all three gram
    sizes into one ranking. An absent field yields an empty list.
    """
    if gram_size not in _GRAM_COUNTS:
        raise ValueError(f"unknown gram size: {gram_size!r}")
    do_stem = _doc_should_stem(doc)
    analyzed_fields = [analyze(t, stopwords, do_stem) for t in _field_texts(doc, source_field)]
    counts: dict[tuple[str, int], int] = {}
    for analyzed in analyzed_fields:
        for size in _GRAM_COUNTS[gram_size]:
            for gram in _candidate_grams(analyzed, size):
                counts[(gram, size)] = counts.get((gram, size), 0) + 1
    phrases = [
        Keyphrase(
            phrase=gram,
            gram_size=size,
            source_field=source_field,
            score=tf * index.gram_idf(gram),
        )
        for (gram, size), tf in counts.items()
    ]
    phrases.sort(key=lambda p: (-p.score, p.phrase))
    return phrases


def score_related(index: Index, query_terms: Sequence[str], exclude: Optional[int],
                  limit: int) -> list[tuple[int, float]]:
    """BM25-score the corpus against the query and return the top matches.

    Query terms are expected in index vocabulary form (lowercased/stemmed);
    terms absent from the index contribute nothing. Zero-score documents are
    omitted; ties break on ascending doc_id.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    scores = np.zeros(index.N, dtype=np.float64)
    for term in dict.fromkeys(query_terms):
        dense = index._dense.get(term)
        if dense is not None:
            scores += dense
            continue
        entry = index.postings.get(term)
        if entry is None:
            continue
        scores[entry[0]] += index._contrib[term]

    nz = np.flatnonzero(scores)  # contributions are strictly positive
    if exclude is not None and exclude in index._row_of:
        nz = nz[nz != index._row_of[exclude]]
    if len(nz) == 0:
        return []
    if len(nz) > max(4 * limit, 64):
        # keep every row that can reach the top `limit` (ties included),
        # then sort only that candidate set
        vals = scores[nz]
        kth = np.partition(vals, len(vals) - limit)[len(vals) - limit]
        nz = nz[vals >= kth]
    cand_ids = index.doc_ids[nz]
    cand_scores = scores[nz]
    order = np.lexsort((cand_ids, -cand_scores))[:limit]
    return [(int(cand_ids[i]), float(cand_scores[i])) for i in order]


# -- persistence --------------------------------------------------------------

INDEX_MAGIC = b"DRIX"
INDEX_FORMAT_VERSION = 1
INDEX_FILENAME = "index.bin"


def save_index(index: Index, path: str | Path) -> None:
    payload = {
        "doc_ids": index.doc_ids,
        "doc_len": index.doc_len_arr,
        "postings": index.postings,
        "gram_df": index.gram_df,
        "params": (index.params.k1, index.params.b),
        "version": index.version,
    }
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<I", INDEX_FORMAT_VERSION))
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_index(path: str | Path) -> Index:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise IndexFormatError("not an index file")
        (fmt,) = struct.unpack("<I", fh.read(4))
        if fmt != INDEX_FORMAT_VERSION:
            raise IndexFormatError(
                f"index format version {fmt} unsupported (expected {INDEX_FORMAT_VERSION})"
            )
        payload = pickle.load(fh)
    k1, b = payload["params"]
    return Index(
        payload["doc_ids"], payload["doc_len"], payload["postings"],
        payload["gram_df"], ScoringParams(k1=k1, b=b), payload["version"],
    )
