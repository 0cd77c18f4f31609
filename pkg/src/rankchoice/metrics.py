"""Out-of-sample evaluation: nll by rank, k-th prediction accuracy, sampling consistency,
weighted Kendall's tau between sampled rankings, and subgroup disaggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .data import ChoiceDataset, ContextPolicy, RankingDataset, explode_rankings
from .estimation import nll, per_record_nll
from .models import CDM_KINDS, choices_log_probs, sample_rankings
from .stratification import StratifiedParams


class MetricRow(NamedTuple):
    metric: str
    k: int | None
    group: str
    value: float | None
    count: int


@dataclass(frozen=True)
class AgentMetric:
    """A metric at one rank position with its per-agent values.

    ``value`` is None when no agent ranked at least ``k`` alternatives.
    """

    k: int
    agents: np.ndarray
    values: np.ndarray

    @property
    def count(self) -> int:
        return len(self.agents)

    @property
    def defined(self) -> bool:
        return self.count > 0

    @property
    def value(self) -> float | None:
        return float(self.values.mean()) if self.defined else None


def _base(params):
    return params.strata[0] if isinstance(params, StratifiedParams) else params


def _policy_for(params, policy: ContextPolicy | None) -> ContextPolicy:
    base = _base(params)
    if policy is not None:
        return policy
    return base.policy if base.kind in CDM_KINDS else ContextPolicy("backward")


def _params_at(params, k: int):
    return params.for_rank(k) if isinstance(params, StratifiedParams) else params


def nll_by_rank(params, test: ChoiceDataset) -> list[tuple[int, float, int]]:
    """``(rank, mean nll, record count)`` for every rank position present in ``test``."""
    losses = per_record_nll(params, test)
    out = []
    for r in np.unique(test.rank):
        sel = test.rank == r
        out.append((int(r), float(losses[sel].mean()), int(sel.sum())))
    return out


def null_nll(test: ChoiceDataset) -> float:
    """nll of uniform choices over each choice set."""
    return float(np.log(test.choice_mask.sum(axis=1)).mean())


def _records_at(params, test: RankingDataset, k: int, policy):
    if k < 1:
        raise ValueError("k must be a positive rank position")
    choices = explode_rankings(test, _policy_for(params, policy))
    idx = np.flatnonzero(choices.rank == k)
    sub = choices.subset(idx)
    return sub


def _conditional_probs(params, sub: ChoiceDataset, k: int) -> np.ndarray:
    if len(sub) == 0:
        return np.zeros((0, sub.catalog.m))
    return np.exp(choices_log_probs(_params_at(params, k), sub))


def accuracy_in_kth_prediction(params, test: RankingDataset, k: int,
                               policy: ContextPolicy | None = None) -> AgentMetric:
    """Share of agents with ``k_i >= k`` whose k-th choice is the model's modal prediction
    given their true first ``k-1`` choices.  Ties go to the lowest alternative index."""
    sub = _records_at(params, test, k, policy)
    if len(sub) == 0:
        return AgentMetric(k, np.zeros(0, dtype=np.int64), np.zeros(0))
    logp = choices_log_probs(_params_at(params, k), sub)
    pred = np.argmax(logp, axis=1)
    return AgentMetric(k, sub.agent, (pred == sub.chosen).astype(float))


def consistency_at_k(params, test: RankingDataset, k: int, n_samples: int = 100, seed=0,
                     policy: ContextPolicy | None = None) -> AgentMetric:
    """Mean share of agreeing pairs among ``n_samples`` sampled k-th choices per agent."""
    if n_samples < 2:
        raise ValueError("need at least two samples to form pairs")
    sub = _records_at(params, test, k, policy)
    if len(sub) == 0:
        return AgentMetric(k, np.zeros(0, dtype=np.int64), np.zeros(0))
    P = _conditional_probs(params, sub, k)
    rng = np.random.default_rng(seed)
    agree = np.empty(len(sub))
    for t, p in enumerate(P):
        counts = rng.multinomial(n_samples, p / p.sum())
        agree[t] = (counts * (counts - 1)).sum() / (n_samples * (n_samples - 1))
    return AgentMetric(k, sub.agent, agree)


def expected_consistency(params, test: RankingDataset, k: int, policy: ContextPolicy | None = None) -> AgentMetric:
    """Collision probability ``sum_j p_j^2`` of each agent's k-th choice distribution."""
    sub = _records_at(params, test, k, policy)
    P = _conditional_probs(params, sub, k)
    return AgentMetric(k, sub.agent, (P * P).sum(axis=1))


def rank_weights(order: Sequence[int], scheme: str = "hyperbolic") -> np.ndarray:
    """Weight of each unordered pair ``{x, y}`` under one order, as an ``(m, m)`` matrix.

    ``hyperbolic``: ``1 / (1-based position of the higher-ranked of x, y)``.
    ``unit``: every pair weighs 1.
    """
    order = np.asarray(order)
    m = len(order)
    if scheme == "unit":
        return np.ones((m, m))
    if scheme != "hyperbolic":
        raise ValueError(f"unknown weighting scheme {scheme!r}")
    pos = np.empty(m, dtype=np.int64)
    pos[order] = np.arange(1, m + 1)
    return 1.0 / np.minimum(pos[:, None], pos[None, :])


def weighted_kendall_tau(order_a: Sequence[int], order_b: Sequence[int], weights: str = "hyperbolic") -> float:
    """Weighted concordance between two total orders of the same items, in [-1, 1].

    Each pair contributes +1 (same relative order) or -1 (opposite order),
    weighted by the average of its weights under the two orders, so the
    statistic is symmetric in its arguments.  Unit weights give Kendall's tau.
    """
    a, b = np.asarray(order_a), np.asarray(order_b)
    if len(a) != len(b):
        raise ValueError("orders must have the same length")
    m = len(a)
    if sorted(a.tolist()) != list(range(m)) or sorted(b.tolist()) != list(range(m)):
        raise ValueError("orders must be permutations of 0..m-1")
    if m < 2:
        return 1.0
    pa = np.empty(m, dtype=np.int64)
    pb = np.empty(m, dtype=np.int64)
    pa[a] = np.arange(m)
    pb[b] = np.arange(m)
    sign = np.sign(pa[:, None] - pa[None, :]) * np.sign(pb[:, None] - pb[None, :])
    w = 0.5 * (rank_weights(a, weights) + rank_weights(b, weights))
    upper = np.triu(np.ones((m, m), dtype=bool), 1)
    return float((w * sign)[upper].sum() / w[upper].sum())


def sampled_rankings(params, test: RankingDataset, n_samples: int, seed=0, agents=None) -> np.ndarray:
    """``(n_agents, n_samples, m)`` full rankings sampled from ``params`` for each agent."""
    agents = np.arange(test.n) if agents is None else np.asarray(agents)
    rows = np.repeat(agents, n_samples)
    base = _base(params)
    out = sample_rankings(params, test.covariates, rows, policy=base.policy, rng=seed)
    return out.reshape(len(agents), n_samples, -1)


def tau_matrix(models: Mapping[str, object], test: RankingDataset, n_samples: int = 100, seed=0,
               weights: str = "hyperbolic", agents=None) -> tuple[list[str], np.ndarray]:
    """Average weighted tau between rankings generated by each pair of models.

    Sample ``s`` of one model is compared with sample ``s`` of the other; a
    model is compared with itself through samples ``s`` and ``s+1``.
    """
    names = list(models)
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    samples = {name: sampled_rankings(models[name], test, n_samples, np.random.default_rng(sq), agents)
               for name, sq in zip(names, seqs)}
    M = np.zeros((len(names), len(names)))
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if j < i:
                M[i, j] = M[j, i]
                continue
            A, B = samples[a], samples[b]
            if a == b:
                B = np.roll(B, -1, axis=1)
            vals = [weighted_kendall_tau(x, y, weights)
                    for xa, yb in zip(A, B) for x, y in zip(xa, yb)]
            M[i, j] = float(np.mean(vals))
    return names, M


def disaggregate(result: AgentMetric, labels: Sequence | None, unlabeled: str = "unlabeled") -> list[tuple[str, float, int]]:
    """Per-group means ``(group, mean, size)`` ordered by descending group size.

    ``labels[i]`` is agent ``i``'s group (None if unlabeled).
    """
    groups: dict[str, list[float]] = {}
    for agent, value in zip(result.agents, result.values):
        g = None if labels is None else labels[agent]
        groups.setdefault(unlabeled if g is None else str(g), []).append(float(value))
    rows = [(g, float(np.mean(v)), len(v)) for g, v in groups.items()]
    return sorted(rows, key=lambda r: (-r[2], r[0]))


def evaluate(params, test: RankingDataset, k_max: int = 3, n_samples: int = 100, seed=0,
             label_names: Sequence[str] | None = None) -> list[MetricRow]:
    """Every metric as ``(metric, k, group, value, count)`` rows."""
    policy = _policy_for(params, None)
    choices = explode_rankings(test, policy)
    rows = [MetricRow("nll", None, "all", nll(params, choices), len(choices))]
    for r, value, count in nll_by_rank(params, choices):
        rows.append(MetricRow("nll_by_rank", r, "all", value, count))
    label_names = list(test.group_labels) if label_names is None else list(label_names)
    seeds = np.random.SeedSequence(seed).spawn(k_max)
    for k in range(1, k_max + 1):
        for metric, res in (
            ("accuracy", accuracy_in_kth_prediction(params, test, k)),
            ("consistency", consistency_at_k(params, test, k, n_samples, np.random.default_rng(seeds[k - 1]))),
        ):
            rows.append(MetricRow(metric, k, "all", res.value, res.count))
            for name in label_names:
                for group, value, size in disaggregate(res, test.group_labels.get(name)):
                    rows.append(MetricRow(metric, k, f"{name}={group}", value, size))
    return rows

