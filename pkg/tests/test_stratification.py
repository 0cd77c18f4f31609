import numpy as np
import pytest

from rankchoice.data import explode_rankings
from rankchoice.estimation import TrainConfig, objective
from rankchoice.models import ModelParams, init_params, zero_params
from rankchoice.stratification import StratifiedParams, laplacian_penalty, stratify, stratum_of

from conftest import make_catalog, random_dataset


@pytest.mark.parametrize("rank,K,want", [(1, 10, 1), (10, 10, 10), (17, 10, 10), (3, 1, 1)])
def test_stratum_of(rank, K, want):
    assert stratum_of(rank, K) == want


def test_stratum_of_rejects_zero():
    with pytest.raises(ValueError):
        stratum_of(0, 3)


def test_identical_strata_zero_penalty(rng):
    p = init_params("cdm", make_catalog(5), 2, rank=2, rng=rng)
    assert laplacian_penalty(stratify(p, 4, 3.0)) == 0.0


def test_single_scalar_difference():
    cat = make_catalog(3)
    a = zero_params("fixed", cat)
    b = a.replace(delta_school=a.delta_school + np.r_[3.0, np.zeros(cat.n_s - 1)])
    assert laplacian_penalty(StratifiedParams((a, b), 2.0)) == 18.0


def test_penalty_pairwise_oracle(rng):
    cat = make_catalog(5)
    strata = tuple(init_params("cdm", cat, 2, rank=3, rng=rng).replace(
        beta=rng.normal(size=2), delta_school=rng.normal(size=cat.n_s)) for _ in range(3))
    sp = StratifiedParams(strata, 0.7)
    total = 0.0
    for prev, nxt in zip(strata, strata[1:]):
        for name in prev.blocks:
            total += float(np.sum((getattr(nxt, name) - getattr(prev, name)) ** 2))
    assert abs(laplacian_penalty(sp) - 0.7 * total) <= 1e-12


def test_mismatched_strata_rejected():
    cat = make_catalog(4)
    with pytest.raises(ValueError):
        StratifiedParams((zero_params("linear", cat, 1), zero_params("fixed", cat)))
    with pytest.raises(ValueError):
        StratifiedParams((zero_params("linear", cat, 1), zero_params("linear", cat, 2)))
    with pytest.raises(ValueError):
        StratifiedParams(())


def test_for_rank_clamps():
    cat = make_catalog(3)
    strata = tuple(zero_params("fixed", cat).replace(delta_ptype=np.full(cat.n_p, float(k))) for k in range(3))
    sp = StratifiedParams(strata)
    assert sp.for_rank(2) is strata[1] and sp.for_rank(9) is strata[2]


@pytest.mark.parametrize("kind", ["fixed", "linear", "cdm", "nested"])
def test_one_stratum_equals_base(kind, rng):
    data = random_dataset(rng, n=10, m=5, d=2)
    choices = explode_rankings(data)
    p = init_params(kind, data.catalog, 2, rank=2, rng=rng).replace(delta_school=rng.normal(size=data.catalog.n_s))
    cfg = TrainConfig(l2=0.01)
    assert abs(objective(stratify(p, 1, 5.0), choices, cfg) - objective(p, choices, cfg)) <= 1e-12


def test_stratified_objective_decouples(rng):
    data = random_dataset(rng, n=12, m=5, d=2)
    choices = explode_rankings(data)
    cat = data.catalog
    a, b = (init_params("linear", cat, 2, rng=rng).replace(beta=rng.normal(size=2)) for _ in range(2))
    sp = StratifiedParams((a, b), 0.3)
    cfg = TrainConfig(l2=0.02)
    first = choices.subset(np.flatnonzero(choices.rank == 1))
    rest = choices.subset(np.flatnonzero(choices.rank >= 2))
    want = objective(a, first, cfg) + objective(b, rest, cfg) + laplacian_penalty(sp)
    assert abs(objective(sp, choices, cfg) - want) <= 1e-12


def test_stratified_param_file(tmp_path, rng):
    from rankchoice.models import load_params, save_params

    cat = make_catalog(4)
    sp = StratifiedParams(tuple(init_params("cdm", cat, 1, rank=2, rng=rng) for _ in range(3)), 1e-3)
    save_params(sp, tmp_path / "s.json")
    back = load_params(tmp_path / "s.json")
    assert isinstance(back, StratifiedParams) and back == sp and isinstance(back.strata[0], ModelParams)
