"""Representative utilities, choice probabilities and ranking likelihoods.

Five model families share one parameter container, :class:`ModelParams`:

========== =========================================================
kind       representative utility of candidate ``j``
========== =========================================================
fixed      ``delta_school[s(j)] + delta_ptype[p(j)]``
linear     fixed + ``beta @ x_ij``
cdm        linear + ``agg_{k in A} t_j @ c_k``   (low-rank context effects)
cdm-full   linear + ``agg_{k in A} u_jk``        (full interaction matrix)
nested     linear utility, nested-logit probabilities with nest scales
========== =========================================================

``agg`` is the mean over the context set (``aggregation="mean"``, zero
for an empty context) or the plain sum (``aggregation="sum"``).

The vectorised engine (:func:`record_log_probs`, :func:`loss_and_grad`)
works on blocks of choice records given as boolean choice-set / context
masks; the scalar functions (:func:`representative_utility`,
:func:`choice_probabilities`) evaluate one choice situation at a time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import BACKWARD, ContextPolicy, ProgramCatalog, RankingDataset, explode_rankings

KINDS = ("fixed", "linear", "cdm", "cdm-full", "nested")
CDM_KINDS = ("cdm", "cdm-full")

# Trainable blocks per family, in optimizer order.
BLOCKS = {
    "fixed": ("delta_school", "delta_ptype"),
    "linear": ("delta_school", "delta_ptype", "beta"),
    "cdm": ("delta_school", "delta_ptype", "beta", "target", "context"),
    "cdm-full": ("delta_school", "delta_ptype", "beta", "interaction"),
    "nested": ("delta_school", "delta_ptype", "beta", "nest_scale"),
}

_SCALE_FLOOR = 1e-12


def _ro(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of one model family bound to a catalog.

    ``offset`` is a fixed per-alternative utility shift; it is zero unless the
    parameters came out of a forward/backward equivalence map, and it is
    never trained.  ``nest_scale`` holds the scales in (0, 1] (the optimizer
    works on their logits).  The diagonal of ``interaction`` is never read.
    """

    kind: str
    catalog: ProgramCatalog
    delta_school: np.ndarray
    delta_ptype: np.ndarray
    beta: np.ndarray | None = None
    target: np.ndarray | None = None
    context: np.ndarray | None = None
    interaction: np.ndarray | None = None
    nest_scale: np.ndarray | None = None
    policy: ContextPolicy | None = None
    aggregation: str = "mean"
    offset: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        cat = self.catalog
        for name in ("delta_school", "delta_ptype", "beta", "target", "context", "interaction", "nest_scale", "offset"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _ro(value))
        if self.offset is None:
            object.__setattr__(self, "offset", _ro(np.zeros(cat.m)))
        needed = set(BLOCKS[self.kind])
        for name in ("beta", "target", "context", "interaction", "nest_scale"):
            if (getattr(self, name) is not None) != (name in needed):
                raise ValueError(f"{self.kind} params {'need' if name in needed else 'take no'} {name}")
        if self.delta_school.shape != (cat.n_s,) or self.delta_ptype.shape != (cat.n_p,):
            raise ValueError("fixed-effect dimensions do not match the catalog")
        if self.offset.shape != (cat.m,):
            raise ValueError("offset must have one entry per alternative")
        if self.beta is not None and self.beta.ndim != 1:
            raise ValueError("beta must be a vector")
        if self.kind == "cdm":
            if self.target.shape != self.context.shape or self.target.ndim != 2 or self.target.shape[0] != cat.m:
                raise ValueError("target/context embeddings must both be (m, r)")
            if self.target.shape[1] < 1:
                raise ValueError("embedding rank must be >= 1")
        if self.kind == "cdm-full" and self.interaction.shape != (cat.m, cat.m):
            raise ValueError("interaction matrix must be (m, m)")
        if self.kind == "nested":
            s = self.nest_scale
            if s.shape != (cat.n_nests,):
                raise ValueError("one nest scale per nest")
            if not np.all((s > 0) & (s <= 1)):
                raise ValueError("nest scales must lie in (0, 1]")
        if self.kind in CDM_KINDS:
            if self.policy is None:
                object.__setattr__(self, "policy", BACKWARD)
        elif self.policy is not None:
            object.__setattr__(self, "policy", None)
        if self.aggregation not in ("mean", "sum"):
            raise ValueError("aggregation must be 'mean' or 'sum'")

    @property
    def d(self) -> int:
        return 0 if self.beta is None else len(self.beta)

    @property
    def rank(self) -> int:
        return self.target.shape[1] if self.kind == "cdm" else 0

    @property
    def delta(self) -> np.ndarray:
        """Per-alternative fixed effect ``delta_school[s(j)] + delta_ptype[p(j)] + offset[j]``."""
        cat = self.catalog
        return self.delta_school[cat.school_of] + self.delta_ptype[cat.ptype_of] + self.offset

    @property
    def blocks(self) -> tuple[str, ...]:
        return BLOCKS[self.kind]

    def interactions(self) -> np.ndarray | None:
        """Context-effect matrix with zero diagonal (``T C^T`` for the low-rank CDM)."""
        if self.kind == "cdm":
            U = self.target @ self.context.T
        elif self.kind == "cdm-full":
            U = np.array(self.interaction)
        else:
            return None
        np.fill_diagonal(U, 0.0)
        return U

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def fingerprint(self) -> dict:
        return catalog_fingerprint(self.catalog, self.d, self.rank)

    # optimizer coordinates -------------------------------------------------
    def to_vector(self) -> np.ndarray:
        parts = []
        for name in self.blocks:
            value = getattr(self, name)
            if name == "nest_scale":
                s = np.clip(value, _SCALE_FLOOR, 1 - _SCALE_FLOOR)
                value = np.log(s) - np.log1p(-s)
            parts.append(np.ravel(value))
        return np.concatenate(parts)

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        changes, at = {}, 0
        for name in self.blocks:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            value = np.asarray(vec[at:at + size]).reshape(shape)
            at += size
            if name == "nest_scale":
                value = 1.0 / (1.0 + np.exp(-value))
            changes[name] = value
        if at != len(vec):
            raise ValueError("vector length does not match parameter layout")
        return replace(self, **changes)

    def block_sizes(self) -> list[tuple[str, tuple]]:
        return [(name, getattr(self, name).shape) for name in self.blocks]

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        if (self.kind, self.policy, self.aggregation) != (other.kind, other.policy, other.aggregation):
            return False
        if self.catalog != other.catalog:
            return False
        names = self.blocks + ("offset",)
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)

    __hash__ = None


def catalog_fingerprint(catalog: ProgramCatalog, d: int, rank: int = 0) -> dict:
    nest_hash = hashlib.sha256(json.dumps(catalog.nest_of.tolist()).encode()).hexdigest()[:16]
    return {"m": catalog.m, "n_s": catalog.n_s, "n_p": catalog.n_p, "d": int(d), "r": int(rank),
            "nest_map": nest_hash}


def zero_params(kind: str, catalog: ProgramCatalog, d: int = 0, rank: int = 1,
                policy: ContextPolicy | None = None, aggregation: str = "mean") -> ModelParams:
    """All-zero parameters (nest scales at 1, i.e. plain MNL)."""
    m = catalog.m
    kw = dict(delta_school=np.zeros(catalog.n_s), delta_ptype=np.zeros(catalog.n_p))
    if kind != "fixed":
        kw["beta"] = np.zeros(d)
    if kind == "cdm":
        kw["target"] = np.zeros((m, rank))
        kw["context"] = np.zeros((m, rank))
    if kind == "cdm-full":
        kw["interaction"] = np.zeros((m, m))
    if kind == "nested":
        kw["nest_scale"] = np.ones(catalog.n_nests)
    return ModelParams(kind, catalog, policy=policy, aggregation=aggregation, **kw)


def init_params(kind: str, catalog: ProgramCatalog, d: int, rank: int = 10,
                policy: ContextPolicy | None = None, rng=None, aggregation: str = "mean",
                warm_start: ModelParams | None = None) -> ModelParams:
    """Training initialisation.

    Fixed effects and coefficients start at zero (or are copied from
    ``warm_start``); embeddings are uniform on ``[-0.1/sqrt(r), 0.1/sqrt(r)]``;
    full interactions start at zero off a small uniform perturbation of the
    same scale; nest scales start at 0.5.
    """
    rng = np.random.default_rng(rng)
    p = zero_params(kind, catalog, d, rank, policy, aggregation)
    changes = {}
    if kind == "cdm":
        a = 0.1 / np.sqrt(rank)
        changes["target"] = rng.uniform(-a, a, size=(catalog.m, rank))
        changes["context"] = rng.uniform(-a, a, size=(catalog.m, rank))
    elif kind == "cdm-full":
        U = rng.uniform(-0.1, 0.1, size=(catalog.m, catalog.m))
        np.fill_diagonal(U, 0.0)
        changes["interaction"] = U
    elif kind == "nested":
        changes["nest_scale"] = np.full(catalog.n_nests, 0.5)
    if warm_start is not None:
        if warm_start.catalog != catalog:
            raise ValueError("warm start bound to a different catalog")
        changes["delta_school"] = warm_start.delta_school
        changes["delta_ptype"] = warm_start.delta_ptype
        if kind != "fixed" and warm_start.beta is not None:
            changes["beta"] = warm_start.beta
    return p.replace(**changes)


# ---------------------------------------------------------------------------
# scalar evaluation


@dataclass(frozen=True)
class UtilityContext:
    """One candidate in one choice situation; ``context`` must already be resolved."""

    candidate: int
    context: frozenset
    choice_set: frozenset
    x: np.ndarray  # covariate row x_ij, shape (d,)


def representative_utility(params: ModelParams, ctx: UtilityContext) -> float:
    """``V(j | i, A, S)`` for one candidate.

    Forward contexts must be resolved by the caller (``A = S \\ {j}``).
    Nest scales do not enter here; they only shape probabilities.
    """
    cat = params.catalog
    j = ctx.candidate
    if not 0 <= j < cat.m:
        raise ValueError(f"candidate {j} outside catalog")
    if j not in ctx.choice_set:
        raise ValueError("candidate must belong to the choice set")
    v = float(params.delta_school[cat.school_of[j]] + params.delta_ptype[cat.ptype_of[j]] + params.offset[j])
    if params.kind == "fixed":
        return v
    x = np.asarray(ctx.x, dtype=float)
    if x.shape != params.beta.shape:
        raise ValueError(f"covariate row has {x.size} features, params expect {params.d}")
    v += float(params.beta @ x)
    if params.kind in CDM_KINDS and ctx.context:
        if j in ctx.context:
            raise ValueError("candidate cannot be part of its own context")
        total = 0.0
        for k in sorted(ctx.context):
            if params.kind == "cdm":
                total += float(params.target[j] @ params.context[k])
            else:
                total += float(params.interaction[j, k])
        if params.aggregation == "mean":
            total /= len(ctx.context)
        v += total
    return v


def _resolve_policy(params: ModelParams, policy: ContextPolicy | None) -> ContextPolicy:
    return policy or params.policy or BACKWARD


def choice_probabilities(params: ModelParams, x: np.ndarray, context, choice_set,
                         policy: ContextPolicy | None = None) -> np.ndarray:
    """Probability vector of length ``m`` (zero outside ``choice_set``).

    ``x`` is the agent's ``(m, d)`` covariate matrix.  ``context`` is the set
    of already-chosen items for backward / top-k policies; it is ignored for
    forward policies, whose context is ``S \\ {j}`` per candidate.
    """
    m = params.catalog.m
    S = np.zeros((1, m), dtype=bool)
    S[0, list(choice_set)] = True
    if not S.any():
        raise ValueError("choice set is empty")
    policy = _resolve_policy(params, policy)
    A = None
    if policy.kind != "forward":
        A = np.zeros((1, m), dtype=bool)
        A[0, list(context or ())] = True
        A &= ~S
    x = np.asarray(x, dtype=float).reshape(1, m, -1)
    logp = record_log_probs(params, x, np.zeros(1, dtype=np.int64), S, A, policy)
    return np.exp(logp[0])


def ranking_masks(m: int, ranking, policy: ContextPolicy):
    """Choice-set and context masks for the records of one ranking."""
    k = len(ranking)
    pos = np.zeros(m, dtype=np.int64)
    pos[list(ranking)] = np.arange(1, k + 1)
    rank = np.arange(1, k + 1)[:, None]
    S = (pos[None, :] == 0) | (pos[None, :] >= rank)
    if policy.kind == "forward":
        return S, None
    last = rank - 1
    if policy.kind == "topk":
        last = np.minimum(last, policy.k)
    A = (pos[None, :] >= 1) & (pos[None, :] <= last)
    return S, A


def ranking_log_likelihood(params: ModelParams, x: np.ndarray, ranking,
                           policy: ContextPolicy | None = None) -> float:
    """Sum of log choice probabilities over the repeated-selection records of ``ranking``."""
    m = params.catalog.m
    ranking = [int(a) for a in ranking]
    if not ranking or len(set(ranking)) != len(ranking) or min(ranking) < 0 or max(ranking) >= m:
        raise ValueError("ranking must list distinct valid alternatives")
    policy = _resolve_policy(params, policy)
    S, A = ranking_masks(m, ranking, policy)
    x = np.asarray(x, dtype=float).reshape(1, m, -1)
    logp = record_log_probs(params, x, np.zeros(len(ranking), dtype=np.int64), S, A, policy)
    return float(logp[np.arange(len(ranking)), ranking].sum())


def sample_ranking(params: ModelParams, x: np.ndarray, policy: ContextPolicy | None = None,
                   rng=None, length: int | None = None) -> np.ndarray:
    """Sequentially sample a ranking (a full permutation unless ``length`` is given)."""
    rng = np.random.default_rng(rng)
    m = params.catalog.m
    policy = _resolve_policy(params, policy)
    length = m if length is None else length
    x = np.asarray(x, dtype=float).reshape(1, m, -1)
    S = np.ones((1, m), dtype=bool)
    chosen: list[int] = []
    for step in range(length):
        A = None
        if policy.kind != "forward":
            A = np.zeros((1, m), dtype=bool)
            upto = step if policy.kind == "backward" else min(step, policy.k)
            A[0, chosen[:upto]] = True
        p = np.exp(record_log_probs(params, x, np.zeros(1, dtype=np.int64), S, A, policy)[0])
        j = int(rng.choice(m, p=p / p.sum()))
        chosen.append(j)
        S[0, j] = False
    return np.asarray(chosen, dtype=np.int64)


# ---------------------------------------------------------------------------
# vectorised engine


def _masked_lse(Z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of ``Z`` over ``mask``; ``-inf`` for empty rows."""
    Zm = np.where(mask, Z, -np.inf)
    peak = Zm.max(axis=1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(Zm - safe[:, None]).sum(axis=1))


def _context_weight(params: ModelParams, size: np.ndarray) -> np.ndarray:
    if params.aggregation == "sum":
        return np.ones(len(size))
    return 1.0 / np.maximum(size, 1)


def _context_term(params: ModelParams, S: np.ndarray, A: np.ndarray | None):
    """Context-effect utilities ``(N, m)`` plus what the gradient needs."""
    if A is None:  # forward: context is S \ {j}
        M = S.astype(np.float64)
        w = _context_weight(params, M.sum(axis=1) - 1)
    else:
        M = A.astype(np.float64)
        w = _context_weight(params, M.sum(axis=1))
    if params.kind == "cdm":
        T, C = params.target, params.context
        pooled = M @ C
        term = pooled @ T.T
        if A is None:
            term = term - (T * C).sum(axis=1)[None, :]
    else:
        U = params.interactions()
        term = M @ U.T
    return term * w[:, None], (M, w)


def utilities(params: ModelParams, X: np.ndarray, agent: np.ndarray, S: np.ndarray,
              A: np.ndarray | None, policy: ContextPolicy | None = None):
    """Representative utilities ``(N, m)`` for each record (defined on ``S``)."""
    V = np.broadcast_to(params.delta, (len(agent), params.catalog.m))
    if params.kind != "fixed":
        V = V + (X @ params.beta)[agent] if params.d else V + 0.0
    if params.kind in CDM_KINDS:
        policy = _resolve_policy(params, policy)
        term, _ = _context_term(params, S, None if policy.kind == "forward" else A)
        V = V + term
    return np.array(V, dtype=np.float64)


def _nested_parts(params: ModelParams, V: np.ndarray, S: np.ndarray):
    cat = params.catalog
    lam = params.nest_scale
    lam_alt = lam[cat.nest_of]
    Z = V / lam_alt[None, :]
    K = cat.n_nests
    inc = np.empty((len(V), K))
    for b in range(K):
        members = cat.nest_of == b
        inc[:, b] = _masked_lse(Z[:, members], S[:, members])
    present = np.isfinite(inc)
    top = _masked_lse(np.where(present, lam[None, :] * np.where(present, inc, 0.0), 0.0), present)
    inc_alt = inc[:, cat.nest_of]
    with np.errstate(invalid="ignore"):
        logp = Z - inc_alt + lam_alt[None, :] * inc_alt - top[:, None]
    logp = np.where(S, logp, -np.inf)
    return logp, Z, inc, present, top


def record_log_probs(params: ModelParams, X: np.ndarray, agent: np.ndarray, S: np.ndarray,
                     A: np.ndarray | None, policy: ContextPolicy | None = None) -> np.ndarray:
    """Log choice probabilities ``(N, m)``; ``-inf`` outside each choice set."""
    S = np.asarray(S, dtype=bool)
    if not S.any(axis=1).all():
        raise ValueError("empty choice set")
    V = utilities(params, X, agent, S, A, policy)
    if params.kind == "nested":
        return _nested_parts(params, V, S)[0]
    lse = _masked_lse(V, S)
    return np.where(S, V - lse[:, None], -np.inf)


def _sum_by_agent(G: np.ndarray, agent: np.ndarray):
    """Sum record rows per agent; returns (unique agents, (n_unique, m) sums)."""
    if len(agent) and np.all(agent[1:] >= agent[:-1]):
        starts = np.flatnonzero(np.r_[True, agent[1:] != agent[:-1]])
        return agent[starts], np.add.reduceat(G, starts, axis=0)
    uniq, inv = np.unique(agent, return_inverse=True)
    out = np.zeros((len(uniq), G.shape[1]))
    np.add.at(out, inv, G)
    return uniq, out


def loss_and_grad(params: ModelParams, X: np.ndarray, agent: np.ndarray, chosen: np.ndarray,
                  S: np.ndarray, A: np.ndarray | None, weights: np.ndarray,
                  policy: ContextPolicy | None = None, want_grad: bool = True):
    """Weighted negative log-likelihood ``-sum_t w_t log P(chosen_t)`` and its gradient.

    The gradient is a dict keyed by block name, in optimizer coordinates
    (nest scales by their logits).
    """
    N, m = S.shape
    rows = np.arange(N)
    V = utilities(params, X, agent, S, A, policy)
    onehot = np.zeros((N, m))
    onehot[rows, chosen] = 1.0
    if params.kind == "nested":
        logp, Z, inc, present, top = _nested_parts(params, V, S)
    else:
        logp = np.where(S, V - _masked_lse(V, S)[:, None], -np.inf)
    chosen_logp = logp[rows, chosen]
    loss = -float(weights @ chosen_logp)
    if not want_grad:
        return loss, None
    P = np.exp(logp)
    cat = params.catalog
    grad: dict[str, np.ndarray] = {}
    if params.kind == "nested":
        lam = params.nest_scale
        nest_alt = cat.nest_of
        lam_c = lam[nest_alt[chosen]]
        q = np.where(S, np.exp(Z - np.where(present, inc, 0.0)[:, nest_alt]), 0.0)
        same = nest_alt[None, :] == nest_alt[chosen][:, None]
        dlogp_dV = onehot / lam_c[:, None] + same * ((lam_c - 1) / lam_c)[:, None] * q - P
        GV = -weights[:, None] * dlogp_dV
        # d log P_c / d lambda_b
        Vs = np.where(S, V, 0.0)
        vbar = np.zeros_like(inc)
        np.add.at(vbar.T, nest_alt, (q * Vs).T)
        Q = np.where(present, np.exp(lam[None, :] * np.where(present, inc, 0.0) - top[:, None]), 0.0)
        inc0 = np.where(present, inc, 0.0)
        dl = -Q * (inc0 - vbar / lam[None, :])
        bc = nest_alt[chosen]
        lb = lam[bc]
        dl[rows, bc] += -V[rows, chosen] / lb**2 - (lb - 1) * vbar[rows, bc] / lb**2 + inc0[rows, bc]
        dlam = -(weights @ dl)
        grad["nest_scale"] = dlam * lam * (1 - lam)
    else:
        GV = weights[:, None] * (P - onehot)

    g_alt = GV.sum(axis=0)
    grad["delta_school"] = np.bincount(cat.school_of, weights=g_alt, minlength=cat.n_s)
    grad["delta_ptype"] = np.bincount(cat.ptype_of, weights=g_alt, minlength=cat.n_p)
    if params.kind != "fixed":
        uniq, Gu = _sum_by_agent(GV, agent)
        grad["beta"] = np.einsum("um,umd->d", Gu, X[uniq]) if params.d else np.zeros(0)
    if params.kind in CDM_KINDS:
        pol = _resolve_policy(params, policy)
        forward = pol.kind == "forward"
        _, (M, w) = _context_term(params, S, None if forward else A)
        Gw = GV * w[:, None]
        if params.kind == "cdm":
            T, C = params.target, params.context
            pooled = M @ C
            dT = Gw.T @ pooled
            dC = M.T @ (Gw @ T)
            if forward:
                colsum = Gw.sum(axis=0)[:, None]
                dT -= C * colsum
                dC -= T * colsum
            grad["target"], grad["context"] = dT, dC
        else:
            dU = Gw.T @ M
            np.fill_diagonal(dU, 0.0)
            grad["interaction"] = dU
    return loss, {name: grad[name] for name in params.blocks}


def choices_loss_and_grad(params: ModelParams, choices, weights: np.ndarray, want_grad=True):
    """:func:`loss_and_grad` over a :class:`~rankchoice.data.ChoiceDataset`."""
    check_compatible(params, choices.dataset)
    policy = params.policy or choices.policy
    return loss_and_grad(params, choices.covariates, choices.agent, choices.chosen,
                         choices.choice_mask, choices.context_mask(policy), weights,
                         policy, want_grad)


def choices_log_probs(params: ModelParams, choices) -> np.ndarray:
    check_compatible(params, choices.dataset)
    policy = params.policy or choices.policy
    return record_log_probs(params, choices.covariates, choices.agent, choices.choice_mask,
                            choices.context_mask(policy), policy)


class FingerprintError(ValueError):
    """Parameters and data describe different catalogs or feature sets."""


def check_compatible(params: ModelParams, dataset: RankingDataset) -> None:
    if params.catalog != dataset.catalog:
        if catalog_fingerprint(params.catalog, 0) != catalog_fingerprint(dataset.catalog, 0):
            raise FingerprintError("parameters were fitted on a different catalog")
        raise FingerprintError("catalog labels differ between parameters and data")
    if params.kind != "fixed" and params.d != dataset.d:
        raise FingerprintError(f"parameters expect {params.d} features, data has {dataset.d}")


# ---------------------------------------------------------------------------
# parameter files


def _catalog_record(cat: ProgramCatalog) -> dict:
    return {
        "alternatives": list(cat.alternatives),
        "school_of": cat.school_of.tolist(),
        "ptype_of": cat.ptype_of.tolist(),
        "nest_of": cat.nest_of.tolist(),
        "school_names": list(cat.school_names),
        "ptype_names": list(cat.ptype_names),
        "nest_names": list(cat.nest_names),
    }


def catalog_from_record(rec: dict) -> ProgramCatalog:
    return ProgramCatalog(tuple(rec["alternatives"]), rec["school_of"], rec["ptype_of"], rec["nest_of"],
                          tuple(rec["school_names"]), tuple(rec["ptype_names"]), tuple(rec["nest_names"]))


def params_to_record(params: ModelParams) -> dict:
    arrays = {name: getattr(params, name).tolist() for name in params.blocks}
    if np.any(params.offset):
        arrays["offset"] = params.offset.tolist()
    return {
        "kind": params.kind,
        "policy": None if params.policy is None else str(params.policy),
        "aggregation": params.aggregation,
        "fingerprint": params.fingerprint(),
        "arrays": arrays,
    }


def params_from_record(rec: dict, catalog: ProgramCatalog) -> ModelParams:
    kind = rec["kind"]
    arrays = {k: np.asarray(v, dtype=float) for k, v in rec["arrays"].items()}
    if kind == "cdm" and arrays["target"].ndim == 1:
        arrays["target"] = arrays["target"].reshape(catalog.m, -1)
        arrays["context"] = arrays["context"].reshape(catalog.m, -1)
    policy = ContextPolicy.parse(rec["policy"]) if rec.get("policy") else None
    params = ModelParams(kind, catalog, policy=policy, aggregation=rec.get("aggregation", "mean"), **arrays)
    if params.fingerprint() != rec["fingerprint"]:
        raise FingerprintError("stored fingerprint does not match stored arrays")
    return params


def dump_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_params(params, path) -> None:
    """Write model (or stratified) parameters to a JSON parameter file."""
    from .stratification import StratifiedParams

    if isinstance(params, StratifiedParams):
        rec = {
            "stratified": True,
            "catalog": _catalog_record(params.strata[0].catalog),
            "laplacian": params.laplacian,
            "K": params.K,
            "strata": [params_to_record(p) for p in params.strata],
        }
    else:
        rec = {"stratified": False, "catalog": _catalog_record(params.catalog), **params_to_record(params)}
    dump_json(rec, path)


def load_params(path, dataset: RankingDataset | None = None):
    """Read a parameter file; refuses one whose fingerprint does not match ``dataset``."""
    from .stratification import StratifiedParams

    with open(path) as fh:
        rec = json.load(fh)
    catalog = catalog_from_record(rec["catalog"])
    if rec.get("stratified"):
        params = StratifiedParams(tuple(params_from_record(r, catalog) for r in rec["strata"]),
                                  float(rec["laplacian"]))
        base = params.strata[0]
    else:
        params = base = params_from_record(rec, catalog)
    if dataset is not None:
        check_compatible(base, dataset)
    return params


def sample_rankings(params, X: np.ndarray, agent: np.ndarray, length: int | np.ndarray | None = None,
                    policy: ContextPolicy | None = None, rng=None) -> np.ndarray:
    """Sequentially sample one ranking per row of ``agent`` (vectorised Gumbel-max).

    ``params`` may be stratified (anything with ``for_rank``), in which case
    step ``j`` uses the stratum of rank ``j``.  Returns an ``(R, L)`` integer
    array padded with ``-1`` beyond each row's requested length.
    """
    rng = np.random.default_rng(rng)
    agent = np.asarray(agent, dtype=np.int64)
    R = len(agent)
    base = params.strata[0] if hasattr(params, "for_rank") else params
    m = base.catalog.m
    lengths = np.full(R, m) if length is None else np.broadcast_to(np.asarray(length, dtype=np.int64), (R,))
    if np.any(lengths < 0) or np.any(lengths > m):
        raise ValueError("ranking lengths must lie in [0, m]")
    L = int(lengths.max(initial=0))
    out = np.full((R, L), -1, dtype=np.int64)
    S = np.ones((R, m), dtype=bool)
    rows = np.arange(R)
    for step in range(L):
        p = params.for_rank(step + 1) if hasattr(params, "for_rank") else params
        pol = _resolve_policy(p, policy)
        A = None
        if pol.kind != "forward":
            A = np.zeros((R, m), dtype=bool)
            upto = step if pol.kind == "backward" else min(step, pol.k)
            if upto:
                A[rows[:, None], out[:, :upto]] = True
        logp = record_log_probs(p, X, agent, S, A, pol)
        pick = np.argmax(logp + rng.gumbel(size=logp.shape), axis=1)
        active = lengths > step
        out[active, step] = pick[active]
        S[rows[active], pick[active]] = False
    return out
