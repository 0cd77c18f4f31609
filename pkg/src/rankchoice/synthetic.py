"""Desk-scale synthetic school districts and ranking datasets sampled from known models.

Geography is the unit square scaled to ``scale_miles``; schools are placed
uniformly and households around a few neighbourhood centres.  Priority-like
facts (sibling, PreK/TK, attendance area, home language) are drawn as labels
first and then expanded into covariates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ContextPolicy, ProgramCatalog, RankingDataset
from .models import ModelParams, sample_rankings
from .stratification import StratifiedParams

FEATURES = (
    "distance",
    "sqrt_distance",
    "sqrt_distance_x_ctip1",
    "within_half_mile",
    "bus_route",
    "sibling_match",
    "language_match",
    "attendance_area",
    "prek_continuation",
    "avg_color_x_ctip1",
    "avg_color_x_non_ctip1",
    "frac_reduced_lunch_x_ctip1",
    "frac_reduced_lunch_x_non_ctip1",
    "before_after_x_ctip1",
    "before_after_x_non_ctip1",
)

ETHNICITIES = ("asian", "hispanic_latino", "white", "black", "other")
ETHNICITY_PRIOR = (0.35, 0.27, 0.18, 0.07, 0.13)
GENERAL = "general"
RARE = "special_ed"


@dataclass(frozen=True)
class LengthDist:
    """Ranking-length distribution.

    ``fixed``: always ``k``.  ``uniform``: integers in ``[low, high]``.
    ``poisson``: ``1 + Poisson(mean - 1)``, clipped to ``cap`` (or ``m``).
    """

    kind: str = "poisson"
    k: int = 1
    low: int = 1
    high: int = 1
    mean: float = 3.0
    cap: int | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "poisson"):
            raise ValueError(f"unknown length distribution {self.kind!r}")
        if self.kind == "fixed" and self.k < 1:
            raise ValueError("fixed length must be >= 1")
        if self.kind == "uniform" and not 1 <= self.low <= self.high:
            raise ValueError("uniform lengths need 1 <= low <= high")
        if self.kind == "poisson" and (self.mean < 1 or (self.cap is not None and self.cap < 1)):
            raise ValueError("poisson lengths need mean >= 1 and cap >= 1")

    def max_length(self, m: int) -> int:
        if self.kind == "fixed":
            return self.k
        if self.kind == "uniform":
            return self.high
        return m if self.cap is None else self.cap

    def sample(self, n: int, m: int, rng) -> np.ndarray:
        if self.max_length(m) > m:
            raise ValueError(f"length distribution reaches {self.max_length(m)} > m = {m}")
        rng = np.random.default_rng(rng)
        if self.kind == "fixed":
            return np.full(n, self.k, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.low, self.high + 1, size=n)
        return np.minimum(1 + rng.poisson(self.mean - 1, size=n), self.max_length(m))


@dataclass(frozen=True)
class DistrictSpec:
    n: int = 1000
    m: int = 24
    n_s: int = 10
    n_p: int = 4
    nests: str = "ptype"  # ptype | school | single
    features: tuple[str, ...] = FEATURES
    scale_miles: float = 7.0
    n_clusters: int = 6
    cluster_sd: float = 0.1
    ctip1_frac: float = 0.17
    sibling_frac: float = 0.15
    prek_frac: float = 0.1
    language_frac: float = 0.25
    bus_prob: float = 0.3
    rare_type: bool = False
    rare_schools: int = 2
    length: LengthDist = field(default_factory=LengthDist)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if isinstance(self.length, dict):
            object.__setattr__(self, "length", LengthDist(**self.length))
        if min(self.n, self.m, self.n_s, self.n_p) < 1:
            raise ValueError("n, m, n_s and n_p must be positive")
        if self.n_s > self.m:
            raise ValueError(f"n_s = {self.n_s} schools cannot fit in m = {self.m} programs")
        if self.n_p > self.m:
            raise ValueError(f"n_p = {self.n_p} program types cannot fit in m = {self.m} programs")
        if self.m > self.n_s * self.n_p:
            raise ValueError("m exceeds the number of distinct (school, program type) pairs")
        if self.rare_type and (self.n_p < 2 or not 1 <= self.rare_schools <= self.n_s):
            raise ValueError("rare program type needs n_p >= 2 and 1 <= rare_schools <= n_s")
        if self.nests not in ("ptype", "school", "single"):
            raise ValueError(f"unknown nest scheme {self.nests!r}")
        unknown = [f for f in self.features if f not in FEATURES]
        if unknown:
            raise ValueError(f"unknown features {unknown}")
        if list(self.features) != sorted(self.features, key=FEATURES.index) or len(set(self.features)) != len(self.features):
            raise ValueError("features must be a subset of the schema in schema order")
        for name in ("ctip1_frac", "sibling_frac", "prek_frac", "language_frac", "bus_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.scale_miles <= 0 or self.cluster_sd < 0 or self.n_clusters < 1:
            raise ValueError("geography parameters must be positive")

    @property
    def d(self) -> int:
        return len(self.features)

    def replace(self, **changes) -> "DistrictSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["features"] = list(self.features)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "DistrictSpec":
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown district options {sorted(extra)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "DistrictSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class District:
    spec: DistrictSpec
    catalog: ProgramCatalog
    covariates: np.ndarray
    labels: dict
    homes: np.ndarray
    schools: np.ndarray

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.spec.features

    def feature(self, name: str) -> np.ndarray:
        return self.covariates[:, :, self.spec.features.index(name)]


def _programs(spec: DistrictSpec, rng) -> list[tuple[int, int]]:
    """Distinct (school, program type) pairs covering every school and type."""
    n_s, n_p = spec.n_s, spec.n_p
    common = n_p - 1 if spec.rare_type else n_p
    pairs = []
    if spec.rare_type:
        for s in sorted(rng.choice(n_s, size=spec.rare_schools, replace=False)):
            pairs.append((int(s), n_p - 1))
    for j in range(max(n_s, common)):
        pair = (j % n_s, j % common)
        if pair not in pairs:
            pairs.append(pair)
    pool = [(s, p) for s in range(n_s) for p in range(common) if (s, p) not in pairs]
    need = spec.m - len(pairs)
    if need < 0 or need > len(pool):
        raise ValueError("cannot place m programs with the requested rare-type layout")
    pairs += [pool[i] for i in sorted(rng.choice(len(pool), size=need, replace=False))]
    return sorted(pairs)


def _ptype_names(spec: DistrictSpec) -> list[str]:
    common = spec.n_p - 1 if spec.rare_type else spec.n_p
    names = [GENERAL] + [f"language_{chr(ord('a') + i)}" for i in range(common - 1)]
    return names + ([RARE] if spec.rare_type else [])


def generate_district(spec: DistrictSpec) -> District:
    """Sample geography, catalog, agent labels and the covariate tensor for ``spec``."""
    geo, lab, school_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3))
    n, m = spec.n, spec.m

    pairs = _programs(spec, school_rng)
    ptype_names = _ptype_names(spec)
    school_idx = np.array([s for s, _ in pairs])
    ptype_idx = np.array([p for _, p in pairs])
    schools = [f"school_{s:02d}" for s in school_idx]
    ptypes = [ptype_names[p] for p in ptype_idx]
    alternatives = [f"{a}/{b}" for a, b in zip(schools, ptypes)]
    nests = {"ptype": ptypes, "school": schools, "single": ["all"] * m}[spec.nests]
    catalog = ProgramCatalog.from_labels(alternatives, schools, ptypes, nests)

    school_pos = geo.uniform(0, 1, size=(spec.n_s, 2))
    centres = geo.uniform(0.1, 0.9, size=(spec.n_clusters, 2))
    cluster = geo.integers(spec.n_clusters, size=n)
    homes = np.clip(centres[cluster] + geo.normal(0, spec.cluster_sd, size=(n, 2)), 0, 1)
    dist_school = spec.scale_miles * np.linalg.norm(homes[:, None, :] - school_pos[None, :, :], axis=2)
    bus_school = geo.random((spec.n_clusters, spec.n_s)) < spec.bus_prob

    avg_color = school_rng.uniform(1, 5, size=spec.n_s)
    frac_lunch = school_rng.uniform(0.1, 0.8, size=spec.n_s)
    before_after = (school_rng.random(spec.n_s) < 0.7).astype(float)

    ctip1 = lab.random(n) < spec.ctip1_frac
    area = np.argmin(dist_school, axis=1)
    near = np.argsort(dist_school, axis=1)[:, :3]
    has_sib = lab.random(n) < spec.sibling_frac
    sib_school = np.where(has_sib, near[np.arange(n), lab.integers(3, size=n)], -1)
    prek_school = np.where(lab.random(n) < spec.prek_frac, area, -1)
    n_lang = sum(1 for p in ptype_names if p.startswith("language_"))
    speaks = (lab.random(n) < spec.language_frac) & (n_lang > 0)
    home_lang = np.where(speaks, 1 + lab.integers(max(n_lang, 1), size=n), -1)
    ethnicity = lab.choice(len(ETHNICITIES), size=n, p=ETHNICITY_PRIOR)

    dist = dist_school[:, school_idx]
    sq = np.sqrt(dist)
    c = ctip1.astype(float)[:, None]
    cols = {
        "distance": dist,
        "sqrt_distance": sq,
        "sqrt_distance_x_ctip1": sq * c,
        "within_half_mile": (dist < 0.5).astype(float),
        "bus_route": bus_school[cluster][:, school_idx].astype(float),
        "sibling_match": (sib_school[:, None] == school_idx[None, :]).astype(float),
        "language_match": (home_lang[:, None] == ptype_idx[None, :]).astype(float),
        "attendance_area": (area[:, None] == school_idx[None, :]).astype(float),
        "prek_continuation": (prek_school[:, None] == school_idx[None, :]).astype(float),
        "avg_color_x_ctip1": avg_color[school_idx][None, :] * c,
        "avg_color_x_non_ctip1": avg_color[school_idx][None, :] * (1 - c),
        "frac_reduced_lunch_x_ctip1": frac_lunch[school_idx][None, :] * c,
        "frac_reduced_lunch_x_non_ctip1": frac_lunch[school_idx][None, :] * (1 - c),
        "before_after_x_ctip1": before_after[school_idx][None, :] * c,
        "before_after_x_non_ctip1": before_after[school_idx][None, :] * (1 - c),
    }
    X = np.stack([np.broadcast_to(cols[f], (n, m)) for f in spec.features], axis=2).astype(float)

    priority = np.where(has_sib, "sibling", np.where(prek_school >= 0, "prek",
                        np.where(ctip1, "ctip1", "none")))
    labels = {
        "ctip1": tuple("ctip1" if v else "non_ctip1" for v in ctip1),
        "priority": tuple(str(v) for v in priority),
        "ethnicity": tuple(ETHNICITIES[e] for e in ethnicity),
    }
    return District(spec, catalog, np.ascontiguousarray(X), labels, homes * spec.scale_miles,
                    school_pos * spec.scale_miles)


# default linear coefficients; signs follow intuition (closer, priority and language match preferred)
DEFAULT_BETA = {
    "distance": -0.2,
    "sqrt_distance": -1.0,
    "sqrt_distance_x_ctip1": 0.4,
    "within_half_mile": 0.3,
    "bus_route": 0.2,
    "sibling_match": 3.0,
    "language_match": 1.5,
    "attendance_area": 0.6,
    "prek_continuation": 1.0,
    "avg_color_x_ctip1": 0.1,
    "avg_color_x_non_ctip1": 0.3,
    "frac_reduced_lunch_x_ctip1": 0.5,
    "frac_reduced_lunch_x_non_ctip1": -1.0,
    "before_after_x_ctip1": 0.3,
    "before_after_x_non_ctip1": 0.3,
}


def _fixed_effects(catalog: ProgramCatalog, rng, scale: float):
    return rng.normal(0, scale, catalog.n_s), rng.normal(0, scale, catalog.n_p)


def linear_truth(district: District, beta: dict | Sequence[float] | None = None, seed=0,
                 fe_scale: float = 0.5) -> ModelParams:
    """Linear MNL ground truth with random fixed effects."""
    rng = np.random.default_rng(seed)
    feats = district.feature_names
    if beta is None:
        beta = [DEFAULT_BETA[f] for f in feats]
    elif isinstance(beta, dict):
        beta = [beta.get(f, 0.0) for f in feats]
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (len(feats),):
        raise ValueError(f"beta needs {len(feats)} entries")
    ds, dp = _fixed_effects(district.catalog, rng, fe_scale)
    return ModelParams("linear", district.catalog, delta_school=ds, delta_ptype=dp, beta=beta)


def block_cdm_truth(district: District, affinity: float = 2.0, rare_affinity: float = 6.0,
                    beta=None, seed=0, fe_scale: float = 0.5, rank: int | None = None) -> ModelParams:
    """Low-rank backward CDM whose context effects form program-type blocks.

    ``t_j . c_k = affinity`` when ``j`` and ``k`` share a program type (``rare_affinity``
    inside the rare type), else zero.  Having ranked one program of a type pulls
    the other programs of that type up the list.
    """
    base = linear_truth(district, beta, seed, fe_scale)
    cat = district.catalog
    r = cat.n_p if rank is None else rank
    if r < cat.n_p:
        raise ValueError("block structure needs rank >= number of program types")
    onehot = np.zeros((cat.m, r))
    onehot[np.arange(cat.m), cat.ptype_of] = 1.0
    gain = np.full(cat.n_p, affinity)
    if RARE in cat.ptype_names:
        gain[cat.ptype_names.index(RARE)] = rare_affinity
    T = onehot * gain[cat.ptype_of][:, None]
    return ModelParams("cdm", cat, delta_school=base.delta_school, delta_ptype=base.delta_ptype,
                       beta=base.beta, target=T, context=onehot, policy=ContextPolicy("backward"))


def sample_dataset(district: District, truth: ModelParams | StratifiedParams,
                   length: LengthDist | None = None, seed=0) -> RankingDataset:
    """Sample one partial ranking per household from ``truth``."""
    length = district.spec.length if length is None else length
    base = truth.strata[0] if isinstance(truth, StratifiedParams) else truth
    if base.catalog != district.catalog:
        raise ValueError("ground truth is bound to a different catalog")
    if base.d != district.covariates.shape[2]:
        raise ValueError(f"ground truth expects d = {base.d}, district has {district.covariates.shape[2]}")
    n, m = district.spec.n, district.catalog.m
    len_rng, rank_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    lengths = length.sample(n, m, len_rng)
    out = sample_rankings(truth, district.covariates, np.arange(n), lengths, rng=rank_rng)
    rankings = tuple(tuple(int(v) for v in row[:k]) for row, k in zip(out, lengths))
    cat = district.catalog
    labels = dict(district.labels)
    labels["first_program_type"] = tuple(cat.ptype_names[cat.ptype_of[r[0]]] for r in rankings)
    width = len(str(n - 1))
    return RankingDataset(cat, rankings, district.covariates, district.feature_names,
                          agent_ids=tuple(f"h{i:0{width}d}" for i in range(n)), group_labels=labels)
