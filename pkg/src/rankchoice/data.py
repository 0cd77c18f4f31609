"""Alternative catalogs, partial-ranking datasets and the ranking -> choice explosion."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when a dataset or catalog violates its invariants."""


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _index_labels(values: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Dense indices for ``values`` in order of first appearance."""
    names: dict[str, int] = {}
    idx = []
    for v in values:
        idx.append(names.setdefault(v, len(names)))
    return np.asarray(idx, dtype=np.int64), tuple(names)


@dataclass(frozen=True, eq=False)
class ProgramCatalog:
    """The universe of alternatives and their school / program-type / nest maps.

    Alternatives are referred to by dense indices ``0..m-1`` in declaration
    order; ``alternatives`` holds their display labels.
    """

    alternatives: tuple[str, ...]
    school_of: np.ndarray
    ptype_of: np.ndarray
    nest_of: np.ndarray
    school_names: tuple[str, ...]
    ptype_names: tuple[str, ...]
    nest_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "school_names", tuple(self.school_names))
        object.__setattr__(self, "ptype_names", tuple(self.ptype_names))
        object.__setattr__(self, "nest_names", tuple(self.nest_names))
        for name in ("school_of", "ptype_of", "nest_of"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        m = len(self.alternatives)
        if m < 1:
            raise DataError("catalog needs at least one alternative")
        if len(set(self.alternatives)) != m:
            raise DataError("duplicate alternative labels in catalog")
        for name, arr, count in (
            ("school", self.school_of, self.n_s),
            ("program type", self.ptype_of, self.n_p),
            ("nest", self.nest_of, self.n_nests),
        ):
            if arr.shape != (m,):
                raise DataError(f"{name} map must have one entry per alternative")
            if count < 1 or arr.min() < 0 or arr.max() >= count:
                raise DataError(f"{name} map references an undeclared {name}")

    @classmethod
    def from_labels(
        cls,
        alternatives: Sequence[str],
        schools: Sequence[str],
        ptypes: Sequence[str],
        nests: Sequence[str] | None = None,
    ) -> "ProgramCatalog":
        """Build a catalog from per-alternative labels; nests default to program types."""
        if nests is None:
            nests = ptypes
        if not (len(alternatives) == len(schools) == len(ptypes) == len(nests)):
            raise DataError("label columns must have equal length")
        school_of, school_names = _index_labels(schools)
        ptype_of, ptype_names = _index_labels(ptypes)
        nest_of, nest_names = _index_labels(nests)
        return cls(tuple(alternatives), school_of, ptype_of, nest_of,
                   school_names, ptype_names, nest_names)

    @property
    def m(self) -> int:
        return len(self.alternatives)

    @property
    def n_s(self) -> int:
        return len(self.school_names)

    @property
    def n_p(self) -> int:
        return len(self.ptype_names)

    @property
    def n_nests(self) -> int:
        return len(self.nest_names)

    @cached_property
    def index(self) -> dict[str, int]:
        return {a: j for j, a in enumerate(self.alternatives)}

    def nest_members(self, b: int) -> np.ndarray:
        return np.flatnonzero(self.nest_of == b)

    def __eq__(self, other):
        if not isinstance(other, ProgramCatalog):
            return NotImplemented
        return (
            self.alternatives == other.alternatives
            and self.school_names == other.school_names
            and self.ptype_names == other.ptype_names
            and self.nest_names == other.nest_names
            and np.array_equal(self.school_of, other.school_of)
            and np.array_equal(self.ptype_of, other.ptype_of)
            and np.array_equal(self.nest_of, other.nest_of)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RankingDataset:
    """Partial rankings of ``n`` agents over a catalog plus covariates ``X[i, j, :]``."""

    catalog: ProgramCatalog
    rankings: tuple[tuple[int, ...], ...]
    covariates: np.ndarray
    feature_names: tuple[str, ...]
    agent_ids: tuple[str, ...] | None = None
    group_labels: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        rankings = tuple(tuple(int(a) for a in r) for r in self.rankings)
        object.__setattr__(self, "rankings", rankings)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        X = _frozen(self.covariates, np.float64)
        object.__setattr__(self, "covariates", X)
        n, m = len(rankings), self.catalog.m
        if n < 1:
            raise DataError("dataset has no agents")
        if X.ndim != 3 or X.shape[:2] != (n, m):
            raise DataError(f"covariates must have shape ({n}, {m}, d), got {X.shape}")
        if X.shape[2] != len(self.feature_names):
            raise DataError("feature_names length does not match covariate depth")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain missing or non-finite entries")
        for i, r in enumerate(rankings):
            if not 1 <= len(r) <= m:
                raise DataError(f"agent {i}: ranking length {len(r)} outside [1, {m}]")
            if len(set(r)) != len(r):
                raise DataError(f"agent {i}: ranking repeats an alternative")
            if min(r) < 0 or max(r) >= m:
                raise DataError(f"agent {i}: alternative index out of range")
        ids = tuple(self.agent_ids) if self.agent_ids is not None else tuple(str(i) for i in range(n))
        if len(ids) != n or len(set(ids)) != n:
            raise DataError("agent_ids must be unique, one per agent")
        object.__setattr__(self, "agent_ids", ids)
        labels = {}
        for name, values in dict(self.group_labels).items():
            values = tuple(values)
            if len(values) != n:
                raise DataError(f"label {name!r} must give one value per agent (None if unlabeled)")
            labels[name] = values
        object.__setattr__(self, "group_labels", labels)

    @property
    def n(self) -> int:
        return len(self.rankings)

    @property
    def m(self) -> int:
        return self.catalog.m

    @property
    def d(self) -> int:
        return self.covariates.shape[2]

    @cached_property
    def lengths(self) -> np.ndarray:
        return _frozen([len(r) for r in self.rankings], np.int64)

    @cached_property
    def positions(self) -> np.ndarray:
        """``positions[i, j]`` is the 1-based rank of ``j`` in ``R_i``, 0 if unranked."""
        pos = np.zeros((self.n, self.m), dtype=np.int64)
        for i, r in enumerate(self.rankings):
            pos[i, list(r)] = np.arange(1, len(r) + 1)
        pos.setflags(write=False)
        return pos

    def subset(self, agents: Iterable[int]) -> "RankingDataset":
        agents = np.asarray(list(agents), dtype=np.int64)
        return RankingDataset(
            catalog=self.catalog,
            rankings=tuple(self.rankings[i] for i in agents),
            covariates=self.covariates[agents],
            feature_names=self.feature_names,
            agent_ids=tuple(self.agent_ids[i] for i in agents),
            group_labels={k: tuple(v[i] for i in agents) for k, v in self.group_labels.items()},
        )

    def __eq__(self, other):
        if not isinstance(other, RankingDataset):
            return NotImplemented
        return (
            self.catalog == other.catalog
            and self.rankings == other.rankings
            and self.feature_names == other.feature_names
            and self.agent_ids == other.agent_ids
            and dict(self.group_labels) == dict(other.group_labels)
            and np.array_equal(self.covariates, other.covariates)
        )

    __hash__ = None


@dataclass(frozen=True)
class ContextPolicy:
    """Which items form the context set ``A`` of each choice.

    ``backward``: all previously chosen items.  ``topk``: the first
    ``min(k, j-1)`` previously chosen items.  ``forward``: the rest of the
    current choice set, ``S \\ {j}``, resolved per candidate.
    """

    kind: str = "backward"
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("backward", "forward", "topk"):
            raise ValueError(f"unknown context policy {self.kind!r}")
        if self.kind == "topk":
            if self.k is None or self.k < 0:
                raise ValueError("topk policy needs a non-negative k")
        elif self.k is not None:
            raise ValueError(f"{self.kind} policy takes no k")

    @classmethod
    def parse(cls, text: str) -> "ContextPolicy":
        text = text.strip().lower()
        if text.startswith("topk"):
            _, _, k = text.partition(":")
            if k in ("inf", "m", "all"):
                return cls("backward")
            try:
                return cls("topk", int(k))
            except ValueError:
                raise ValueError(f"bad top-k policy {text!r}; expected topk:K") from None
        return cls(text)

    def flipped(self) -> "ContextPolicy":
        if self.kind == "topk":
            raise ValueError("top-k policies have no forward counterpart")
        return ContextPolicy("forward" if self.kind == "backward" else "backward")

    def __str__(self):
        return f"topk:{self.k}" if self.kind == "topk" else self.kind


BACKWARD = ContextPolicy("backward")
FORWARD = ContextPolicy("forward")


class ChoiceRecord(NamedTuple):
    agent: int
    chosen: int
    context: frozenset | None  # None marks a forward context, S \ {j} per candidate
    choice_set: frozenset
    rank: int


class ChoiceDataset:
    """Exploded (agent, chosen, context, choice set) records.

    Records are stored column-wise; context and choice sets are derived on
    demand as boolean masks of shape ``(len(self), m)`` from the agents'
    rank positions, so any policy's context can be produced for the same
    records.
    """

    def __init__(self, dataset: RankingDataset, policy: ContextPolicy,
                 agent: np.ndarray, chosen: np.ndarray, rank: np.ndarray):
        self.dataset = dataset
        self.policy = policy
        self.agent = _frozen(agent, np.int64)
        self.chosen = _frozen(chosen, np.int64)
        self.rank = _frozen(rank, np.int64)
        self._cache: dict = {}

    def __len__(self):
        return len(self.agent)

    @property
    def catalog(self) -> ProgramCatalog:
        return self.dataset.catalog

    @property
    def covariates(self) -> np.ndarray:
        return self.dataset.covariates

    def _pos(self) -> np.ndarray:
        if "pos" not in self._cache:
            self._cache["pos"] = self.dataset.positions[self.agent]
        return self._cache["pos"]

    @property
    def choice_mask(self) -> np.ndarray:
        if "S" not in self._cache:
            pos = self._pos()
            self._cache["S"] = (pos == 0) | (pos >= self.rank[:, None])
        return self._cache["S"]

    def context_mask(self, policy: ContextPolicy | None = None) -> np.ndarray | None:
        """Context mask under ``policy`` (default: the explosion policy); None for forward."""
        policy = policy or self.policy
        if policy.kind == "forward":
            return None
        key = ("A", policy)
        if key not in self._cache:
            pos = self._pos()
            last = self.rank - 1
            if policy.kind == "topk":
                last = np.minimum(last, policy.k)
            self._cache[key] = (pos >= 1) & (pos <= last[:, None])
        return self._cache[key]

    @property
    def records(self) -> list[ChoiceRecord]:
        S = self.choice_mask
        A = self.context_mask()
        out = []
        for t in range(len(self)):
            ctx = None if A is None else frozenset(np.flatnonzero(A[t]).tolist())
            out.append(ChoiceRecord(int(self.agent[t]), int(self.chosen[t]), ctx,
                                    frozenset(np.flatnonzero(S[t]).tolist()), int(self.rank[t])))
        return out

    def subset(self, idx) -> "ChoiceDataset":
        idx = np.asarray(idx)
        out = ChoiceDataset(self.dataset, self.policy, self.agent[idx], self.chosen[idx], self.rank[idx])
        for key, value in self._cache.items():
            out._cache[key] = value[idx]
        return out

    def with_policy(self, policy: ContextPolicy) -> "ChoiceDataset":
        out = ChoiceDataset(self.dataset, policy, self.agent, self.chosen, self.rank)
        out._cache = dict(self._cache)
        return out


def explode_rankings(dataset: RankingDataset, policy: ContextPolicy = BACKWARD) -> ChoiceDataset:
    """Repeated-selection decomposition of every ranking into choice records.

    Agent ``i`` contributes ``k_i`` records, one per rank position, with
    choice sets shrinking by the previously chosen item starting from the
    full universe.
    """
    lengths = dataset.lengths
    agent = np.repeat(np.arange(dataset.n), lengths)
    rank = np.concatenate([np.arange(1, k + 1) for k in lengths])
    chosen = np.fromiter((a for r in dataset.rankings for a in r), dtype=np.int64, count=int(lengths.sum()))
    return ChoiceDataset(dataset, policy, agent, chosen, rank)


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    m: int
    n_s: int
    n_p: int
    mean_length: float
    total_choices: int
    group_fractions: dict | None = None

    def rows(self) -> list[tuple[str, str]]:
        rows = [
            ("No. participating households, n", f"{self.n:,}"),
            ("Total offerings, m", f"{self.m:,}"),
            ("No. unique schools, n_s", f"{self.n_s:,}"),
            ("No. unique program types, n_p", f"{self.n_p:,}"),
            ("Avg. length of ranking", f"{self.mean_length:.2f}"),
            ("Size of choice dataset, sum k_i", f"{self.total_choices:,}"),
        ]
        for name, fractions in (self.group_fractions or {}).items():
            for value, frac in fractions.items():
                rows.append((f"Percent students {name}={value}", f"{100 * frac:.1f}%"))
        return rows

    def format(self) -> str:
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def summarize(dataset: RankingDataset) -> DatasetSummary:
    """Table-1 style summary statistics."""
    lengths = dataset.lengths
    fractions = None
    if dataset.group_labels:
        fractions = {}
        for name, values in dataset.group_labels.items():
            present = [v for v in values if v is not None]
            counts: dict = {}
            for v in present:
                counts[v] = counts.get(v, 0) + 1
            fractions[name] = {v: c / dataset.n for v, c in sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))}
    return DatasetSummary(
        n=dataset.n,
        m=dataset.m,
        n_s=dataset.catalog.n_s,
        n_p=dataset.catalog.n_p,
        mean_length=float(lengths.mean()),
        total_choices=int(lengths.sum()),
        group_fractions=fractions,
    )
