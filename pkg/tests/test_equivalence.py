import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankchoice.data import BACKWARD, FORWARD, ContextPolicy, ProgramCatalog
from rankchoice.equivalence import (all_rankings, check_equivalence, equivalent, involution_error, map_full,
                                    map_lowrank, random_cdm, ranking_log_probs)
from rankchoice.models import UtilityContext, representative_utility, zero_params

from conftest import make_catalog


def scalar_ranking_prob(params, x, ranking):
    """Ranking probability from per-candidate scalar utilities (sum-aggregated contexts)."""
    m = params.catalog.m
    S, prob = set(range(m)), 1.0
    for j, r in enumerate(ranking):
        V = {}
        for c in S:
            A = frozenset(S - {c}) if params.policy.kind == "forward" else frozenset(ranking[:j])
            V[c] = representative_utility(params, UtilityContext(c, A, frozenset(S), x[c]))
        prob *= math.exp(V[r]) / sum(math.exp(v) for v in V.values())
        S.remove(r)
    return prob


def test_zero_interactions_only_flip_policy():
    cat = make_catalog(4)
    p = zero_params("cdm-full", cat, 1, policy=FORWARD, aggregation="sum")
    q = map_full(p)
    assert q.policy == BACKWARD
    assert np.array_equal(q.delta, p.delta) and not q.interaction.any()
    lr = zero_params("cdm", cat, 1, rank=2, policy=FORWARD, aggregation="sum").replace(
        target=np.ones((4, 2)))
    g = map_lowrank(lr)
    assert np.array_equal(g.delta, lr.delta) and not g.context.any() and g.policy == BACKWARD


@pytest.mark.parametrize("kind,rank", [("cdm-full", 1), ("cdm", 1), ("cdm", 2), ("cdm", 5)])
def test_involution(kind, rank):
    rng = np.random.default_rng(1)
    cat = make_catalog(5)
    for _ in range(100):
        p = random_cdm(kind, cat, 2, rng, rank=rank, policy=ContextPolicy(rng.choice(["forward", "backward"])))
        assert involution_error(p) <= 1e-12
        back = equivalent(equivalent(p))
        assert back.policy == p.policy
        assert np.array_equal(back.beta, p.beta)


def test_full_m3_all_configurations():
    rng = np.random.default_rng(2)
    cat = make_catalog(3)
    x = rng.normal(size=(3, 2))
    p = random_cdm("cdm-full", cat, 2, rng)
    q = map_full(p)
    for ranking in permutations(range(3)):
        assert abs(scalar_ranking_prob(p, x, ranking) - scalar_ranking_prob(q, x, ranking)) <= 1e-10


def test_lowrank_m4_full_rankings():
    rng = np.random.default_rng(3)
    cat = make_catalog(4)
    x = rng.normal(size=(4, 1))
    p = random_cdm("cdm", cat, 1, rng, rank=2)
    rankings = list(permutations(range(4)))
    a = ranking_log_probs(p, rankings, x)
    b = ranking_log_probs(map_lowrank(p), rankings, x)
    assert len(rankings) == 24 and np.max(np.abs(a - b)) <= 1e-10
    oracle = np.log([scalar_ranking_prob(p, x, r) for r in rankings])
    assert np.max(np.abs(a - oracle)) <= 1e-10


@given(st.integers(0, 2**31 - 1), st.sampled_from(["cdm", "cdm-full"]), st.integers(2, 4))
@settings(max_examples=30, deadline=None)
def test_every_length_equivalent(seed, kind, m):
    rng = np.random.default_rng(seed)
    p = random_cdm(kind, make_catalog(m), 2, rng, rank=2, policy=ContextPolicy(rng.choice(["forward", "backward"])))
    rep = check_equivalence(p, x=rng.normal(size=(m, 2)))
    assert rep.max_prob_diff <= 1e-10 and rep.max_loglik_diff <= 1e-10


def test_ranking_probabilities_sum_per_length():
    rng = np.random.default_rng(4)
    p = random_cdm("cdm", make_catalog(4), 1, rng)
    for k in (1, 2, 4):
        total = np.exp(ranking_log_probs(p, all_rankings(4, [k]), np.zeros((4, 1)))).sum()
        assert abs(total - 1) <= 1e-12


def test_mean_aggregation_refused():
    p = zero_params("cdm", make_catalog(3), 1, policy=FORWARD)
    with pytest.raises(ValueError, match="sum"):
        map_lowrank(p)


def test_wrong_family_refused():
    with pytest.raises(TypeError):
        map_full(zero_params("linear", make_catalog(3), 1))
    with pytest.raises(ValueError):
        map_full(zero_params("cdm-full", make_catalog(3), 1, policy=ContextPolicy("topk", 1), aggregation="sum"))


def test_offset_not_in_decomposed_basis():
    # the mapped shift generally has no school + program-type decomposition
    rng = np.random.default_rng(5)
    cat = ProgramCatalog.from_labels(list("abcd"), ["s", "s", "t", "t"], ["g", "h", "g", "h"])
    q = map_full(random_cdm("cdm-full", cat, 1, rng))
    D = np.zeros((4, 4))
    D[np.arange(4), cat.school_of] = 1
    D[np.arange(4), 2 + cat.ptype_of] = 1
    coef, *_ = np.linalg.lstsq(D, q.offset, rcond=None)
    assert np.max(np.abs(D @ coef - q.offset)) > 1e-6


def test_large_universe_uses_sampled_rankings():
    rng = np.random.default_rng(8)
    p = random_cdm("cdm", make_catalog(9), 2, rng, rank=3)
    report = check_equivalence(p, x=rng.normal(size=(9, 2)), n_random=300, seed=1)
    assert report.n_rankings == 300
    assert report.max_prob_diff <= 1e-10 and report.max_loglik_diff <= 1e-9
