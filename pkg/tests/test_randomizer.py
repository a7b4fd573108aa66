"""Recipe sampling, fingerprints, and execution with fallback."""

from __future__ import annotations

import random
from collections import Counter

import pytest
from scipy import stats

from docrec.bibliometrics import RerankConfig
from docrec.randomizer import (
    CBF,
    ClassWeights,
    ExecutionContext,
    FALLBACK_RECIPE,
    MOST_POPULAR,
    RANDOM,
    Recipe,
    STEREOTYPE,
    WeightConfigError,
    enumerate_recipes,
    execute_recipe,
    fingerprint,
    sample_recipe,
)
from docrec.recommenders import CbfParams, KEYPHRASES, StereotypeList, TERMS
from docrec.textengine import BI, TITLE, build_index
from helpers import store_from_titles


class ScriptedRng:
    """random() pops scripted values; other draws use a seeded Random."""

    def __init__(self, scripted, seed=0):
        self._scripted = list(scripted)
        self._rng = random.Random(seed)

    def random(self):
        if self._scripted:
            return self._scripted.pop(0)
        return self._rng.random()

    def __getattr__(self, name):
        return getattr(self._rng, name)


class TestClassWeights:
    def test_defaults(self):
        w = ClassWeights()
        assert w.as_tuple() == (0.90, 0.049, 0.049, 0.002)

    def test_rejects_bad_sum(self):
        with pytest.raises(WeightConfigError):
            ClassWeights(cbf=0.5, stereotype=0.1, most_popular=0.1, random=0.1)

    def test_rejects_out_of_range(self):
        with pytest.raises(WeightConfigError):
            ClassWeights(cbf=1.5, stereotype=-0.5, most_popular=0.0, random=0.0)


class TestSampleRecipe:
    def test_cumulative_walk_mapping(self):
        # boundaries: cbf < 0.90 <= stereotype < 0.949 <= most_popular < 0.998 <= random
        assert sample_recipe(ScriptedRng([0.5])).klass == CBF
        assert sample_recipe(ScriptedRng([0.92])).klass == STEREOTYPE
        assert sample_recipe(ScriptedRng([0.95])).klass == MOST_POPULAR
        assert sample_recipe(ScriptedRng([0.999])).klass == RANDOM

    def test_degenerate_weights_always_cbf(self):
        weights = ClassWeights(cbf=1.0, stereotype=0.0, most_popular=0.0, random=0.0)
        rng = random.Random(5)
        assert all(sample_recipe(rng, weights).klass == CBF for _ in range(200))

    def test_recipe_invariants_hold(self):
        rng = random.Random(6)
        for _ in range(2000):
            r = sample_recipe(rng)
            assert (r.klass == CBF) == (r.cbf is not None)
            if r.rerank is not None:
                assert r.klass == CBF
            if r.cbf is not None and r.cbf.feature_source == KEYPHRASES:
                assert 1 <= r.cbf.num_keyphrases <= 20

    def test_reproducible_sequence_from_master_seed(self):
        seq1 = [sample_recipe(random.Random(42)) for _ in range(1)]
        rng_a, rng_b = random.Random(77), random.Random(77)
        seq_a = [sample_recipe(rng_a) for _ in range(300)]
        seq_b = [sample_recipe(rng_b) for _ in range(300)]
        assert seq_a == seq_b
        assert seq1 == [sample_recipe(random.Random(42))]

    def test_class_distribution_chi_square(self):
        rng = random.Random(12345)
        n = 100_000
        counts = Counter(sample_recipe(rng).klass for _ in range(n))
        expected = {CBF: 0.90 * n, STEREOTYPE: 0.049 * n,
                    MOST_POPULAR: 0.049 * n, RANDOM: 0.002 * n}
        _, p = stats.chisquare([counts[k] for k in expected],
                               [expected[k] for k in expected])
        assert p > 0.001

    def test_num_keyphrases_uniform(self):
        rng = random.Random(777)
        nums = []
        while len(nums) < 100_000:
            r = sample_recipe(rng)
            if r.cbf is not None and r.cbf.feature_source == KEYPHRASES:
                nums.append(r.cbf.num_keyphrases)
        counts = Counter(nums)
        _, p = stats.chisquare([counts[i] for i in range(1, 21)])
        assert p > 0.001

    def test_rerank_probability_zero_never_attaches(self):
        rng = random.Random(3)
        for _ in range(500):
            assert sample_recipe(rng, rerank_probability=0.0).rerank is None


class TestRecipeInvariants:
    def test_cbf_params_iff_cbf_class(self):
        with pytest.raises(ValueError):
            Recipe(klass=STEREOTYPE, cbf=CbfParams(feature_source=TERMS))
        with pytest.raises(ValueError):
            Recipe(klass=CBF)

    def test_rerank_only_for_cbf(self):
        with pytest.raises(ValueError):
            Recipe(klass=RANDOM, rerank=RerankConfig(metric="plain", k=10, combine="mult"))


class TestFingerprint:
    def test_keyphrase_recipe_grammar(self):
        recipe = Recipe(
            klass=CBF,
            cbf=CbfParams(feature_source=KEYPHRASES, keyphrase_field=TITLE,
                          gram_size=BI, num_keyphrases=5),
            rerank=RerankConfig(metric="plain", k=40, combine="mult"),
        )
        assert fingerprint(recipe) == "cbf|kp|title|2|5|rr|plain|40|mult"

    def test_random_recipe_bare_class(self):
        assert fingerprint(Recipe(klass=RANDOM)) == "random"

    def test_terms_recipe(self):
        assert fingerprint(Recipe(klass=CBF, cbf=CbfParams(feature_source=TERMS))) == "cbf|terms"

    def test_seed_and_fallback_excluded(self):
        a = Recipe(klass=CBF, cbf=CbfParams(feature_source=TERMS), seed=1)
        b = Recipe(klass=CBF, cbf=CbfParams(feature_source=TERMS), seed=2,
                   fallback_used=True)
        assert fingerprint(a) == fingerprint(b)

    def test_space_size(self):
        recipes = list(enumerate_recipes())
        assert len(recipes) == 3 + (1 + 3 * 4 * 20) * (1 + 3 * 91 * 3)

    def test_lowercase_pipe_separated(self):
        for recipe in list(enumerate_recipes())[:500]:
            fp = fingerprint(recipe)
            assert fp == fp.lower()
            assert " " not in fp


@pytest.fixture
def exec_ctx(tmp_path):
    store = store_from_titles(tmp_path, [
        "web spam detection methods",
        "spam detection with machine learning",
        "web search engine ranking",
        "ranking functions for search",
        "spam filter evaluation study",
    ])
    index = build_index(store.all_docs())
    return ExecutionContext(store=store, index=index, readership={1: 5, 2: 3})


class TestExecuteRecipe:
    def test_terms_cbf_applies_without_fallback(self, exec_ctx):
        recipe = Recipe(klass=CBF, cbf=CbfParams(feature_source=TERMS), seed=1)
        result, fallback_used, executed = execute_recipe(
            recipe, exec_ctx.store.get(1), exec_ctx, limit=3)
        assert not fallback_used
        assert executed == "cbf|terms"
        assert result.items

    def test_insufficient_keyphrases_falls_back(self, exec_ctx):
        recipe = Recipe(
            klass=CBF,
            cbf=CbfParams(feature_source=KEYPHRASES, keyphrase_field=TITLE,
                          gram_size="tri", num_keyphrases=20),
            seed=1,
        )
        result, fallback_used, executed = execute_recipe(
            recipe, exec_ctx.store.get(1), exec_ctx, limit=3)
        assert fallback_used
        assert executed == "cbf|terms"
        assert fingerprint(recipe) in result.producer
        assert "=>" in result.producer
        assert result.items  # produced by terms CBF

    def test_stereotype_unconfigured_falls_back(self, exec_ctx):
        recipe = Recipe(klass=STEREOTYPE, seed=1)
        result, fallback_used, executed = execute_recipe(
            recipe, exec_ctx.store.get(1), exec_ctx, limit=3)
        assert fallback_used
        assert executed == "cbf|terms"

    def test_stereotype_configured_no_fallback(self, exec_ctx):
        exec_ctx.stereotype = StereotypeList(doc_ids=[2, 3])
        recipe = Recipe(klass=STEREOTYPE, seed=1)
        result, fallback_used, _ = execute_recipe(
            recipe, exec_ctx.store.get(1), exec_ctx, limit=3)
        assert not fallback_used
        assert result.doc_ids() == [2, 3]

    def test_random_deterministic_by_recipe_seed(self, exec_ctx):
        recipe = Recipe(klass=RANDOM, seed=987)
        a, _, _ = execute_recipe(recipe, exec_ctx.store.get(1), exec_ctx, limit=2)
        b, _, _ = execute_recipe(recipe, exec_ctx.store.get(1), exec_ctx, limit=2)
        assert a.items == b.items

    def test_rerank_applied_to_cbf(self, exec_ctx):
        recipe = Recipe(
            klass=CBF, cbf=CbfParams(feature_source=TERMS),
            rerank=RerankConfig(metric="plain", k=10, combine="biblio"), seed=1,
        )
        result, fallback_used, _ = execute_recipe(
            recipe, exec_ctx.store.get(4), exec_ctx, limit=3)
        assert not fallback_used
        if len(result.items) >= 2:
            # readership {1:5, 2:3, others:0}: biblio-only puts 1 before 2
            ids = result.doc_ids()
            if 1 in ids and 2 in ids:
                assert ids.index(1) < ids.index(2)

    def test_most_popular_excludes_source(self, exec_ctx):
        recipe = Recipe(klass=MOST_POPULAR, seed=1)
        result, fallback_used, _ = execute_recipe(
            recipe, exec_ctx.store.get(1), exec_ctx, limit=10)
        assert not fallback_used
        assert 1 not in result.doc_ids()
        assert result.doc_ids()[0] == 2  # highest remaining readership

    def test_fallback_recipe_is_terms_cbf_no_rerank(self):
        assert FALLBACK_RECIPE.klass == CBF
        assert FALLBACK_RECIPE.cbf.feature_source == TERMS
        assert FALLBACK_RECIPE.rerank is None
