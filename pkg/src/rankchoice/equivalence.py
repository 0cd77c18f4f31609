"""Forward <-> backward context-dependence maps for the CDM.

For a forward-dependent CDM (context ``S \\ {j}``) with sum-aggregated
context effects, the backward-dependent CDM (context = items already
chosen) with

* full model:     ``delta'_i = delta_i + sum_{j != i} u_ij``,  ``U' = -U``
* low-rank model: ``delta'_i = delta_i + t_i @ sum_{j != i} c_j``,  ``T' = T``, ``C' = -C``

assigns every ranking the same probability, and each map is its own
inverse.  The per-alternative shift is carried in ``ModelParams.offset``
because it generally has no school + program-type decomposition.

Under mean aggregation the ``1/|A|`` factor differs between the two
contexts and no such map exists, so the maps insist on
``aggregation="sum"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .data import ContextPolicy, RankingDataset, explode_rankings
from .models import ModelParams, choices_log_probs


def _check(params: ModelParams, kind: str):
    if params.kind != kind:
        raise TypeError(f"expected {kind} parameters, got {params.kind}")
    if params.policy.kind not in ("forward", "backward"):
        raise ValueError("maps are defined between forward and backward policies only")
    if params.aggregation != "sum":
        raise ValueError("forward/backward equivalence requires sum-aggregated context effects")


def map_full(params: ModelParams) -> ModelParams:
    """Forward <-> backward map for the full-interaction CDM (an involution)."""
    _check(params, "cdm-full")
    U = params.interactions()
    return params.replace(offset=params.offset + U.sum(axis=1), interaction=-U,
                          policy=params.policy.flipped())


def map_lowrank(params: ModelParams) -> ModelParams:
    """Forward <-> backward map for the low-rank CDM (an involution)."""
    _check(params, "cdm")
    T, C = params.target, params.context
    others = C.sum(axis=0)[None, :] - C
    return params.replace(offset=params.offset + np.einsum("ir,ir->i", T, others), context=-C,
                          policy=params.policy.flipped())


def equivalent(params: ModelParams) -> ModelParams:
    return map_lowrank(params) if params.kind == "cdm" else map_full(params)


def all_rankings(m: int, lengths=None):
    """Every ranking (ordered prefix of a permutation) of each length in ``lengths``."""
    lengths = range(1, m + 1) if lengths is None else lengths
    return [r for k in lengths for r in permutations(range(m), k)]


def ranking_log_probs(params: ModelParams, rankings, x: np.ndarray) -> np.ndarray:
    """Log-probability of each ranking for one agent with covariates ``x`` (m, d)."""
    m = params.catalog.m
    x = np.asarray(x, dtype=float).reshape(m, -1)
    data = RankingDataset(params.catalog, tuple(rankings), np.broadcast_to(x, (len(rankings),) + x.shape),
                          tuple(f"f{i}" for i in range(x.shape[1])))
    choices = explode_rankings(data, params.policy)
    logp = choices_log_probs(params, choices)[np.arange(len(choices)), choices.chosen]
    return np.bincount(choices.agent, weights=logp, minlength=len(rankings))


@dataclass(frozen=True)
class EquivalenceReport:
    kind: str
    m: int
    n_rankings: int
    max_prob_diff: float
    max_loglik_diff: float
    involution_error: float

    def format(self) -> str:
        return (f"{self.kind:8s} m={self.m} rankings={self.n_rankings} "
                f"max|dP|={self.max_prob_diff:.3e} max|dlogP|={self.max_loglik_diff:.3e} "
                f"involution={self.involution_error:.3e}")


def involution_error(params: ModelParams) -> float:
    back = equivalent(equivalent(params))
    diffs = [np.max(np.abs(back.to_vector() - params.to_vector()), initial=0.0),
             np.max(np.abs(back.offset - params.offset))]
    return float(max(diffs))


def check_equivalence(params: ModelParams, x: np.ndarray | None = None, rankings=None,
                      max_enumerate: int = 6, n_random: int = 2000, seed=0) -> EquivalenceReport:
    """Compare ranking probabilities of ``params`` and its mapped counterpart.

    Every ranking of every length is enumerated when ``m <= max_enumerate``;
    larger universes use ``n_random`` seeded random rankings of random length.
    """
    mapped = equivalent(params)
    m = params.catalog.m
    if x is None:
        x = np.zeros((m, params.d))
    if rankings is None:
        if m <= max_enumerate:
            rankings = all_rankings(m)
        else:
            rng = np.random.default_rng(seed)
            rankings = [tuple(rng.permutation(m)[: rng.integers(1, m + 1)].tolist()) for _ in range(n_random)]
    a = ranking_log_probs(params, rankings, x)
    b = ranking_log_probs(mapped, rankings, x)
    return EquivalenceReport(
        kind=params.kind, m=m, n_rankings=len(rankings),
        max_prob_diff=float(np.max(np.abs(np.exp(a) - np.exp(b)))),
        max_loglik_diff=float(np.max(np.abs(a - b))),
        involution_error=involution_error(params),
    )


def random_cdm(kind: str, catalog, d: int, rng, rank: int = 2, scale: float = 1.0,
               policy: ContextPolicy | None = None) -> ModelParams:
    """Random sum-aggregated CDM parameters for equivalence checks."""
    rng = np.random.default_rng(rng)
    m = catalog.m
    kw = dict(delta_school=rng.normal(0, scale, catalog.n_s), delta_ptype=rng.normal(0, scale, catalog.n_p),
              beta=rng.normal(0, scale, d))
    if kind == "cdm":
        kw["target"] = rng.normal(0, scale, (m, rank))
        kw["context"] = rng.normal(0, scale, (m, rank))
    else:
        U = rng.normal(0, scale, (m, m))
        np.fill_diagonal(U, 0.0)
        kw["interaction"] = U
    return ModelParams(kind, catalog, policy=policy or ContextPolicy("forward"), aggregation="sum", **kw)
