import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankchoice.data import explode_rankings
from rankchoice.models import choice_probabilities
from rankchoice.synthetic import (FEATURES, RARE, DistrictSpec, LengthDist, block_cdm_truth, generate_district,
                                  linear_truth, sample_dataset)


@pytest.fixture(scope="module")
def district():
    return generate_district(DistrictSpec(n=300, m=20, n_s=8, n_p=4, rare_type=True, seed=3))


def test_schema_order_and_shape(district):
    assert district.feature_names == FEATURES
    assert district.covariates.shape == (300, 20, len(FEATURES))
    cat = district.catalog
    assert (cat.m, cat.n_s, cat.n_p) == (20, 8, 4)
    assert RARE in cat.ptype_names


def test_derived_features_consistent(district):
    dist = district.feature("distance")
    assert np.max(np.abs(district.feature("sqrt_distance") - np.sqrt(dist))) <= 1e-12
    assert np.array_equal(district.feature("within_half_mile"), (dist < 0.5).astype(float))
    ctip = np.array([v == "ctip1" for v in district.labels["ctip1"]])
    assert np.max(np.abs(district.feature("sqrt_distance_x_ctip1") - np.sqrt(dist) * ctip[:, None])) <= 1e-12
    for name in FEATURES:
        if name.endswith("_x_ctip1"):
            assert not district.feature(name)[~ctip].any()
        if name.endswith("_x_non_ctip1"):
            assert not district.feature(name)[ctip].any()


def test_distances_are_euclidean(district):
    cat = district.catalog
    schools = np.array([int(name.split("_")[1]) for name in cat.school_names])[cat.school_of]
    want = np.linalg.norm(district.homes[:, None, :] - district.schools[schools][None, :, :], axis=2)
    assert np.max(np.abs(district.feature("distance") - want)) <= 1e-12


def test_indicators_binary(district):
    for name in ("within_half_mile", "bus_route", "sibling_match", "language_match", "attendance_area",
                 "prek_continuation"):
        assert set(np.unique(district.feature(name))) <= {0.0, 1.0}
    # exactly one attendance-area school per household, counted across its programs
    per_school = district.feature("attendance_area").max(axis=1)
    assert np.all(per_school == 1.0)


def test_regeneration_bit_identical():
    spec = DistrictSpec(n=50, m=10, n_s=4, n_p=3, seed=9)
    a, b = generate_district(spec), generate_district(spec)
    assert np.array_equal(a.covariates, b.covariates) and a.catalog == b.catalog and a.labels == b.labels
    truth = linear_truth(a, seed=1)
    assert sample_dataset(a, truth, seed=2) == sample_dataset(b, truth, seed=2)


@pytest.mark.parametrize("bad", [dict(n_s=12, m=10), dict(ctip1_frac=1.5), dict(features=("sqrt_distance", "distance")),
                                 dict(features=("distance", "zip_code")), dict(m=50, n_s=4, n_p=3), dict(nests="odd")])
def test_infeasible_specs(bad):
    with pytest.raises(ValueError):
        DistrictSpec(**{**dict(n=10, m=10, n_s=4, n_p=3), **bad})


def test_spec_config_round_trip(tmp_path):
    spec = DistrictSpec(n=20, m=8, n_s=4, n_p=2, features=("distance", "sibling_match"),
                        length=LengthDist("uniform", low=1, high=3))
    (tmp_path / "d.json").write_text(json.dumps(spec.to_dict()))
    assert DistrictSpec.load(tmp_path / "d.json") == spec


def test_full_length_permutations(district):
    truth = linear_truth(district)
    data = sample_dataset(district, truth, LengthDist("fixed", k=20), seed=0)
    assert all(sorted(r) == list(range(20)) for r in data.rankings)
    assert "first_program_type" in data.group_labels


def test_length_support_beyond_m(district):
    with pytest.raises(ValueError, match="m = 20"):
        sample_dataset(district, linear_truth(district), LengthDist("fixed", k=21))
    with pytest.raises(ValueError):
        sample_dataset(district, linear_truth(district), LengthDist("poisson", mean=3, cap=25))


@given(st.sampled_from(["fixed", "uniform", "poisson"]), st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_length_distributions(kind, seed):
    dist = {"fixed": LengthDist("fixed", k=4), "uniform": LengthDist("uniform", low=2, high=5),
            "poisson": LengthDist("poisson", mean=3.0)}[kind]
    k = dist.sample(200, 8, seed)
    assert k.min() >= 1 and k.max() <= dist.max_length(8) <= 8


def test_sibling_saturation():
    district = generate_district(DistrictSpec(n=2000, m=16, n_s=8, n_p=2, sibling_frac=0.3, seed=4))
    truth = linear_truth(district, beta={"sibling_match": 30.0, "sqrt_distance": -1.0}, seed=0)
    data = sample_dataset(district, truth, LengthDist("fixed", k=2), seed=1)
    sib = district.feature("sibling_match")
    top = []
    for i, r in enumerate(data.rankings):
        if sib[i].any():
            top.append(sib[i, r[0]] == 1.0)
    assert len(top) > 300 and np.mean(top) >= 0.99


def test_first_choice_frequencies_multinomial():
    spec = DistrictSpec(n=10_000, m=6, n_s=3, n_p=2, features=("sqrt_distance",), n_clusters=1, cluster_sd=0.0,
                        seed=2)
    district = generate_district(spec)
    # one household location: every agent shares the same covariates and first-choice law
    assert np.allclose(district.covariates, district.covariates[0])
    truth = linear_truth(district, seed=5, fe_scale=0.7)
    data = sample_dataset(district, truth, LengthDist("fixed", k=1), seed=8)
    p = choice_probabilities(truth, district.covariates[0], (), range(6))
    counts = np.bincount([r[0] for r in data.rankings], minlength=6)
    sd = np.sqrt(spec.n * p * (1 - p))
    assert np.all(np.abs(counts - spec.n * p) <= 3 * sd)


def test_block_truth_structure(district):
    truth = block_cdm_truth(district, affinity=2.0, rare_affinity=5.0)
    U = truth.interactions()
    cat = district.catalog
    same = cat.ptype_of[:, None] == cat.ptype_of[None, :]
    np.fill_diagonal(same, False)
    rare = cat.ptype_names.index(RARE)
    expected = np.where(same, np.where(cat.ptype_of[:, None] == rare, 5.0, 2.0), 0.0)
    assert np.array_equal(U, expected)


def test_truth_catalog_mismatch(district):
    other = generate_district(DistrictSpec(n=10, m=12, n_s=4, n_p=3))
    with pytest.raises(ValueError):
        sample_dataset(district, linear_truth(other))


def test_explosion_of_sample(district):
    data = sample_dataset(district, block_cdm_truth(district), seed=3)
    assert len(explode_rankings(data)) == int(data.lengths.sum())
    assert math.isclose(data.lengths.mean(), 3.0, abs_tol=0.3)
