"""Per-request recipe sampling, canonical fingerprints, and execution.

Each request draws a fully parameterized recommendation recipe: first the
class via a single cumulative-weight walk (order: cbf, stereotype,
most_popular, random), then uniform draws for every sub-parameter, then a
coin flip on whether to re-rank (CBF only). A recipe that turns out to be
inapplicable to the source document (too few key-phrases, no stereotype
list) is replaced by the fallback recipe: terms-CBF without re-ranking.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable, Iterator, Optional

from . import bibliometrics, recommenders
from .bibliometrics import (
    BIBLIO_ONLY, BY_AGE, BY_AUTHORS, MULTIPLY, PLAIN, ReadershipCache,
    ReadershipProvider, RerankConfig, SUM_NORMALIZED, bibliometric_score,
    get_readership,
)
from .corpus import DocumentRecord, DocumentStore
from .recommenders import (
    CandidateList, CbfParams, InsufficientKeyphrasesError, KEYPHRASES,
    NoStereotypeError, StereotypeList, TERMS,
)
from .textengine import ABSTRACT, BI, Index, MIXED, TITLE, TITLE_ABSTRACT, TRI, UNI

CBF = "cbf"
STEREOTYPE = "stereotype"
MOST_POPULAR = "most_popular"
RANDOM = "random"
CLASS_ORDER = (CBF, STEREOTYPE, MOST_POPULAR, RANDOM)

_FIELD_ORDER = (TITLE, ABSTRACT, TITLE_ABSTRACT)
_GRAM_ORDER = (UNI, BI, TRI, MIXED)
_GRAM_TOKEN = {UNI: "1", BI: "2", TRI: "3", MIXED: "mixed"}
_METRIC_ORDER = (PLAIN, BY_AGE, BY_AUTHORS)
_COMBINE_ORDER = (BIBLIO_ONLY, MULTIPLY, SUM_NORMALIZED)


class WeightConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassWeights:
    cbf: float = 0.90
    stereotype: float = 0.049
    most_popular: float = 0.049
    random: float = 0.002

    def __post_init__(self):
        values = (self.cbf, self.stereotype, self.most_popular, self.random)
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise WeightConfigError("class weights must lie in [0, 1]")
        if abs(sum(values) - 1.0) > 1e-9:
            raise WeightConfigError(f"class weights must sum to 1, got {sum(values)}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cbf, self.stereotype, self.most_popular, self.random)


@dataclass(frozen=True)
class Recipe:
    klass: str
    cbf: Optional[CbfParams] = None
    rerank: Optional[RerankConfig] = None
    seed: int = 0
    fallback_used: bool = False

    def __post_init__(self):
        if (self.klass == CBF) != (self.cbf is not None):
            raise ValueError("cbf params present iff class is cbf")
        if self.rerank is not None and self.klass != CBF:
            raise ValueError("re-ranking is only permitted for cbf recipes")


FALLBACK_RECIPE = Recipe(klass=CBF, cbf=CbfParams(feature_source=TERMS))


def sample_recipe(rng: random.Random, weights: ClassWeights = ClassWeights(),
                  rerank_probability: float = 0.5) -> Recipe:
    """Draw one fully parameterized recipe.

    Draw order is fixed: class, feature source, (field, gram size, phrase
    count), re-rank coin, (metric, k, combine), seed--so a given rng state
    always yields the same recipe.
    """
    u = rng.random()
    cumulative = 0.0
    klass = CLASS_ORDER[-1]
    for name, w in zip(CLASS_ORDER, weights.as_tuple()):
        cumulative += w
        if u < cumulative:
            klass = name
            break

    cbf_params = None
    rerank_config = None
    if klass == CBF:
        if rng.random() < 0.5:
            cbf_params = CbfParams(feature_source=TERMS)
        else:
            cbf_params = CbfParams(
                feature_source=KEYPHRASES,
                keyphrase_field=_FIELD_ORDER[rng.randrange(3)],
                gram_size=_GRAM_ORDER[rng.randrange(4)],
                num_keyphrases=rng.randint(1, 20),
            )
        if rng.random() < rerank_probability:
            rerank_config = RerankConfig(
                metric=_METRIC_ORDER[rng.randrange(3)],
                k=rng.randint(10, 100),
                combine=_COMBINE_ORDER[rng.randrange(3)],
            )
    return Recipe(klass=klass, cbf=cbf_params, rerank=rerank_config,
                  seed=rng.getrandbits(64))


def fingerprint(recipe: Recipe) -> str:
    """Canonical lowercase `|`-separated recipe identity.

    Seed and fallback flag are excluded: two recipes with the same class and
    parameters collide, parameter-distinct recipes never do. The grammar is a
    stable external contract (it appears in API responses and the event log).
    """
    if recipe.klass != CBF:
        return recipe.klass.replace("_", "")
    parts = ["cbf"]
    params = recipe.cbf
    if params.feature_source == TERMS:
        parts.append("terms")
    else:
        parts += ["kp", params.keyphrase_field, _GRAM_TOKEN[params.gram_size],
                  str(params.num_keyphrases)]
    if recipe.rerank is not None:
        parts += ["rr", recipe.rerank.metric, str(recipe.rerank.k), recipe.rerank.combine]
    return "|".join(parts)


def enumerate_recipes() -> Iterator[Recipe]:
    """Every recipe in the finite parameter space (seed fixed at 0)."""
    for klass in (STEREOTYPE, MOST_POPULAR, RANDOM):
        yield Recipe(klass=klass)
    cbf_variants = [CbfParams(feature_source=TERMS)]
    for fld in _FIELD_ORDER:
        for gram in _GRAM_ORDER:
            for num in range(1, 21):
                cbf_variants.append(CbfParams(
                    feature_source=KEYPHRASES, keyphrase_field=fld,
                    gram_size=gram, num_keyphrases=num))
    rerank_variants: list[Optional[RerankConfig]] = [None]
    for metric in _METRIC_ORDER:
        for k in range(10, 101):
            for combine in _COMBINE_ORDER:
                rerank_variants.append(RerankConfig(metric=metric, k=k, combine=combine))
    for params in cbf_variants:
        for rr in rerank_variants:
            yield Recipe(klass=CBF, cbf=params, rerank=rr)


@dataclass
class ExecutionContext:
    """Everything a recipe needs at execution time.

    The two caches memoize per-document values that are static for one
    store/index version (term lists; bibliometric scores keyed by metric and
    reference year) so repeated requests skip re-tokenizing and re-deriving.
    """

    store: DocumentStore
    index: Index
    readership: dict[int, int]
    stereotype: Optional[StereotypeList] = None
    provider: Optional[ReadershipProvider] = None
    cache: Optional[ReadershipCache] = None
    now: Callable[[], datetime] = lambda: datetime.now(timezone.utc)
    popular_ranking: Optional[list[int]] = None
    sorted_doc_ids: Optional[list[int]] = None
    terms_cache: Optional[dict[int, list[str]]] = None
    bib_score_cache: Optional[dict[tuple[int, str, int], float]] = None

    def source_terms(self, doc: DocumentRecord) -> list[str]:
        from .textengine import doc_terms

        if self.terms_cache is None:
            return doc_terms(doc)
        terms = self.terms_cache.get(doc.doc_id)
        if terms is None:
            terms = doc_terms(doc)
            self.terms_cache[doc.doc_id] = terms
        return terms


def _run_recommender(recipe: Recipe, source: DocumentRecord,
                     ctx: ExecutionContext, limit: int, label: str) -> CandidateList:
    if recipe.klass == CBF:
        fetch = max(limit, recipe.rerank.k) if recipe.rerank else limit
        source_terms = (ctx.source_terms(source)
                        if recipe.cbf.feature_source == TERMS else None)
        candidates = recommenders.recommend_cbf(source, recipe.cbf, ctx.index,
                                                fetch, producer=label,
                                                source_terms=source_terms)
        if recipe.rerank is not None:
            scores = _pool_scores(candidates, recipe.rerank.metric, ctx)
            candidates = bibliometrics.rerank(candidates, recipe.rerank, scores,
                                              final_n=min(limit, recipe.rerank.k))
        return candidates
    if recipe.klass == STEREOTYPE:
        return recommenders.recommend_stereotype(ctx.stereotype, source.doc_id,
                                                 limit, producer=label)
    if recipe.klass == MOST_POPULAR:
        return recommenders.recommend_most_popular(
            ctx.store, ctx.readership, limit, source=source.doc_id,
            producer=label, ranking=ctx.popular_ranking)
    if recipe.klass == RANDOM:
        return recommenders.recommend_random(
            ctx.store, source.doc_id, limit, random.Random(recipe.seed),
            producer=label, sorted_ids=ctx.sorted_doc_ids)
    raise ValueError(f"bad recipe class: {recipe.klass!r}")


def _pool_scores(candidates: CandidateList, metric: str,
                 ctx: ExecutionContext) -> dict[int, float]:
    ref = ctx.now()
    memo = ctx.bib_score_cache
    scores = {}
    for doc_id, _ in candidates.items:
        key = (doc_id, metric, ref.year)
        if memo is not None:
            cached = memo.get(key)
            if cached is not None:
                scores[doc_id] = cached
                continue
        doc = ctx.store.get(doc_id)
        if ctx.provider is not None and ctx.cache is not None:
            record = get_readership(ctx.provider, doc, ctx.cache, now=ctx.now)
        else:
            record = bibliometrics.ReadershipRecord(
                doc_id=doc_id, reader_count=ctx.readership.get(doc_id, 0),
                fetched_at=ref, provider="table")
        value = bibliometric_score(doc, record, metric, ref)
        scores[doc_id] = value
        if memo is not None:
            memo[key] = value
    return scores


def execute_recipe(recipe: Recipe, source: DocumentRecord, ctx: ExecutionContext,
                   limit: int) -> tuple[CandidateList, bool, str]:
    """Run a recipe, falling back to terms-CBF when it cannot apply.

    Returns (candidates, fallback_used, executed_fingerprint). The producer
    label on the candidate list records the sampled fingerprint and, after a
    fallback, the executed one as well.
    """
    sampled_fp = fingerprint(recipe)
    try:
        candidates = _run_recommender(recipe, source, ctx, limit, sampled_fp)
        return candidates, False, sampled_fp
    except (InsufficientKeyphrasesError, NoStereotypeError):
        fallback = replace(FALLBACK_RECIPE, seed=recipe.seed)
        executed_fp = fingerprint(fallback)
        label = f"{sampled_fp} => {executed_fp}"
        candidates = _run_recommender(fallback, source, ctx, limit, label)
        return candidates, True, executed_fp
