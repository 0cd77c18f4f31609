"""Rank-position stratification with a path-graph Laplacian penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelParams

# default Laplacian gains by family (K = 10 for every family)
DEFAULT_LAPLACIAN = {"fixed": 1e-4, "linear": 1e-4, "cdm": 1e-3, "cdm-full": 1e-3, "nested": 1e-3}
DEFAULT_STRATA = 10


def stratum_of(rank_position, K: int):
    """1-based stratum of a 1-based rank position; ranks beyond ``K`` share stratum ``K``."""
    rank_position = np.asarray(rank_position)
    if np.any(rank_position < 1):
        raise ValueError("rank positions start at 1")
    if K < 1:
        raise ValueError("need at least one stratum")
    out = np.minimum(rank_position, K)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class StratifiedParams:
    """``K`` copies of one base model, stratum ``k`` scoring rank position ``k`` (clamped)."""

    strata: tuple[ModelParams, ...]
    laplacian: float = 0.0

    def __post_init__(self):
        strata = tuple(self.strata)
        object.__setattr__(self, "strata", strata)
        if not strata:
            raise ValueError("need at least one stratum")
        if self.laplacian < 0:
            raise ValueError("Laplacian gain must be non-negative")
        first = strata[0]
        for p in strata[1:]:
            if (p.kind, p.policy, p.aggregation) != (first.kind, first.policy, first.aggregation):
                raise ValueError("all strata must share model kind, policy and aggregation")
            if p.catalog != first.catalog or p.block_sizes() != first.block_sizes():
                raise ValueError("all strata must share catalog and parameter shapes")

    @property
    def K(self) -> int:
        return len(self.strata)

    @property
    def kind(self) -> str:
        return self.strata[0].kind

    @property
    def catalog(self):
        return self.strata[0].catalog

    def for_rank(self, rank_position: int) -> ModelParams:
        return self.strata[stratum_of(rank_position, self.K) - 1]

    def to_matrix(self) -> np.ndarray:
        return np.stack([p.to_vector() for p in self.strata])

    def from_matrix(self, mat: np.ndarray) -> "StratifiedParams":
        return StratifiedParams(tuple(p.from_vector(row) for p, row in zip(self.strata, mat)), self.laplacian)

    def replace_strata(self, strata) -> "StratifiedParams":
        return StratifiedParams(tuple(strata), self.laplacian)

    def __eq__(self, other):
        if not isinstance(other, StratifiedParams):
            return NotImplemented
        return self.laplacian == other.laplacian and self.strata == other.strata

    __hash__ = None


def laplacian_penalty(params: StratifiedParams) -> float:
    """``gain * sum_k ||theta_k - theta_{k-1}||^2`` over all trainable blocks."""
    theta = params.to_matrix()
    diffs = np.diff(theta, axis=0)
    return float(params.laplacian * np.sum(diffs * diffs))


def laplacian_grad(theta: np.ndarray, gain: float) -> np.ndarray:
    """Gradient of the path-graph penalty with respect to the ``(K, P)`` parameter matrix."""
    g = np.zeros_like(theta)
    if len(theta) > 1 and gain:
        diffs = np.diff(theta, axis=0)
        g[1:] += 2 * gain * diffs
        g[:-1] -= 2 * gain * diffs
    return g


def stratify(base: ModelParams, K: int, laplacian: float = 0.0) -> StratifiedParams:
    """``K`` identical copies of ``base``."""
    return StratifiedParams(tuple(base for _ in range(K)), laplacian)
