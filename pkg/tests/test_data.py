import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankchoice.data import (BACKWARD, FORWARD, ContextPolicy, DataError, ProgramCatalog, RankingDataset,
                             explode_rankings, summarize)

from conftest import make_catalog


def one_agent(catalog, ranking, d=1):
    return RankingDataset(catalog, (ranking,), np.zeros((1, catalog.m, d)), tuple(f"f{i}" for i in range(d)))


@st.composite
def datasets(draw, max_m=6, max_n=5):
    m = draw(st.integers(1, max_m))
    n = draw(st.integers(1, max_n))
    rankings = []
    for _ in range(n):
        perm = draw(st.permutations(range(m)))
        k = draw(st.integers(1, m))
        rankings.append(tuple(perm[:k]))
    return RankingDataset(make_catalog(m), tuple(rankings), np.zeros((n, m, 1)), ("f",))


def test_worked_example_backward(abcd):
    b, c, d = 1, 2, 3
    recs = explode_rankings(one_agent(abcd, (b, d, c)), BACKWARD).records
    assert [(r.chosen, set(r.choice_set)) for r in recs] == [(b, {0, 1, 2, 3}), (d, {0, 2, 3}), (c, {0, 2})]
    assert [set(r.context) for r in recs] == [set(), {b}, {b, d}]


def test_worked_example_top1(abcd):
    recs = explode_rankings(one_agent(abcd, (1, 3, 2)), ContextPolicy("topk", 1)).records
    assert [set(r.context) for r in recs] == [set(), {1}, {1}]


def test_top0_context_is_always_empty(abcd):
    recs = explode_rankings(one_agent(abcd, (1, 3, 2, 0)), ContextPolicy("topk", 0)).records
    assert all(r.context == frozenset() for r in recs)


def test_forward_context_is_a_marker(abcd):
    recs = explode_rankings(one_agent(abcd, (1, 3)), FORWARD).records
    assert all(r.context is None for r in recs)


def test_single_item_ranking(abcd):
    (rec,) = explode_rankings(one_agent(abcd, (2,)), BACKWARD).records
    assert rec.context == frozenset() and rec.choice_set == frozenset(range(4)) and rec.rank == 1


@given(datasets(), st.sampled_from(["backward", "forward", "topk:0", "topk:2"]))
@settings(max_examples=60, deadline=None)
def test_explosion_lossless_and_nested(data, policy):
    choices = explode_rankings(data, ContextPolicy.parse(policy))
    recs = choices.records
    assert len(recs) == int(data.lengths.sum())
    for i, ranking in enumerate(data.rankings):
        mine = [r for r in recs if r.agent == i]
        assert tuple(r.chosen for r in mine) == ranking
        assert mine[0].choice_set == frozenset(range(data.m))
        for prev, nxt in zip(mine, mine[1:]):
            assert nxt.choice_set == prev.choice_set - {prev.chosen}
        for r in mine:
            assert r.chosen in r.choice_set
            if r.context is not None:
                assert not (r.context & r.choice_set)


@given(datasets())
@settings(max_examples=40, deadline=None)
def test_backward_equals_large_topk(data):
    k = int(data.lengths.max()) - 1
    back = explode_rankings(data, BACKWARD).records
    top = explode_rankings(data, ContextPolicy("topk", k)).records
    assert [r.context for r in back] == [r.context for r in top]


def test_policy_parsing():
    assert ContextPolicy.parse("topk:3") == ContextPolicy("topk", 3)
    assert ContextPolicy.parse("topk:inf") == BACKWARD
    assert str(ContextPolicy.parse("forward")) == "forward"
    assert BACKWARD.flipped() == FORWARD and FORWARD.flipped() == BACKWARD
    with pytest.raises(ValueError):
        ContextPolicy.parse("topk:x")
    with pytest.raises(ValueError):
        ContextPolicy("topk", -1)


@pytest.mark.parametrize("ranking", [(0, 0), (0, 7), ()])
def test_bad_rankings_rejected(abcd, ranking):
    with pytest.raises(DataError):
        one_agent(abcd, ranking)


def test_nonfinite_covariates_rejected(abcd):
    X = np.zeros((1, 4, 1))
    X[0, 2, 0] = np.nan
    with pytest.raises(DataError):
        RankingDataset(abcd, ((0,),), X, ("f",))


def test_catalog_invariants():
    cat = ProgramCatalog.from_labels(["x", "y", "z"], ["s", "s", "t"], ["g", "h", "g"])
    assert (cat.m, cat.n_s, cat.n_p, cat.n_nests) == (3, 2, 2, 2)
    assert list(cat.nest_members(0)) == [0, 2]
    with pytest.raises(DataError):
        ProgramCatalog.from_labels(["x", "x"], ["s", "s"], ["g", "g"])


def test_summary_constant_lengths():
    cat = make_catalog(8)
    rankings = tuple(tuple(range(5)) for _ in range(100))
    s = summarize(RankingDataset(cat, rankings, np.zeros((100, 8, 1)), ("f",)))
    assert s.mean_length == 5.0 and s.total_choices == 500
    assert s.group_fractions is None
    assert not any(k.startswith("Percent") for k, _ in s.rows())


def test_summary_table_shape_fixture():
    # hand-built fixture with the 2017-18 totals: 5115 households, 154 offerings,
    # 72 schools, 22 program types and 49,882 ranked choices
    n, m, n_s, n_p, total = 5115, 154, 72, 22, 49882
    schools = [f"s{j % n_s}" for j in range(m)]
    ptypes = [f"p{j % n_p}" for j in range(m)]
    cat = ProgramCatalog.from_labels([f"a{j}" for j in range(m)], schools, ptypes)
    base, extra = divmod(total, n)
    lengths = [base + 1] * extra + [base] * (n - extra)
    rankings = tuple(tuple(range(k)) for k in lengths)
    labels = {"ctip1": tuple("yes" if i < 854 else "no" for i in range(n))}
    s = summarize(RankingDataset(cat, rankings, np.zeros((n, m, 0)), (), group_labels=labels))
    assert (s.n, s.m, s.n_s, s.n_p, s.total_choices) == (n, m, n_s, n_p, total)
    assert s.mean_length == pytest.approx(total / n, abs=1e-12)
    rows = dict(s.rows())
    assert rows["No. participating households, n"] == "5,115"
    assert rows["Size of choice dataset, sum k_i"] == "49,882"
    assert rows["Avg. length of ranking"] == "9.75"
    assert rows["Percent students ctip1=yes"] == "16.7%"


def test_summary_group_fractions_include_all_agents():
    cat = make_catalog(3)
    data = RankingDataset(cat, ((0,), (1,), (2,), (0, 1)), np.zeros((4, 3, 1)), ("f",),
                          group_labels={"g": ("a", "a", None, "b")})
    fr = summarize(data).group_fractions["g"]
    assert fr == {"a": 0.5, "b": 0.25}


def test_subset_and_equality(rng):
    from conftest import random_dataset

    data = random_dataset(rng, labels=True)
    sub = data.subset([2, 0])
    assert sub.rankings == (data.rankings[2], data.rankings[0])
    assert sub.group_labels["grp"] == (data.group_labels["grp"][2], data.group_labels["grp"][0])
    assert data.subset(range(data.n)) == data


def test_choice_dataset_subset_keeps_masks(rng):
    from conftest import random_dataset

    choices = explode_rankings(random_dataset(rng), BACKWARD)
    full_S, full_A = choices.choice_mask, choices.context_mask()
    idx = np.array([3, 1, 4])
    sub = choices.subset(idx)
    assert np.array_equal(sub.choice_mask, full_S[idx])
    assert np.array_equal(sub.context_mask(), full_A[idx])
