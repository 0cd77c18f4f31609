"""Regularised maximum-likelihood training.

Objective for a single model::

    F(theta) = nll(D; theta) + l2 * ||theta||^2

and for a rank-stratified model::

    F = sum_k [nll(D_k; theta_k) + l2 * ||theta_k||^2] + laplacian * sum_k ||theta_k - theta_{k-1}||^2

where ``nll`` is the mean negative log-likelihood over the records it is
given and ``D_k`` holds the records whose rank maps to stratum ``k``.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import BACKWARD, ChoiceDataset, ContextPolicy, RankingDataset, explode_rankings
from .models import CDM_KINDS, KINDS, ModelParams, choices_loss_and_grad, init_params
from .stratification import (DEFAULT_LAPLACIAN, StratifiedParams, laplacian_grad, laplacian_penalty,
                             stratum_of)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The training objective became non-finite."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    policy: ContextPolicy = BACKWARD

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}[{self.policy}]" if self.kind in CDM_KINDS else self.kind


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    l2: float = 1e-5
    laplacian: float | None = None  # None: per-family default when stratified
    max_epochs: int = 1000
    tol: float = 1e-4
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    rank: int = 10
    strata: int = 1
    aggregation: str = "mean"
    center_fixed_effects: bool = True

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.step_size <= 0 or self.eps <= 0:
            raise ValueError("step_size and eps must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.l2 < 0 or (self.laplacian is not None and self.laplacian < 0):
            raise ValueError("regularisation gains must be non-negative")
        if self.tol <= 0:
            raise ValueError("convergence tolerance must be positive")
        if self.max_epochs < 0 or self.strata < 1 or self.rank < 0:
            raise ValueError("max_epochs >= 0, strata >= 1, rank >= 0 required")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def laplacian_for(self, kind: str) -> float:
        if self.laplacian is not None:
            return self.laplacian
        return DEFAULT_LAPLACIAN[kind] if self.strata > 1 else 0.0

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class FitResult:
    params: ModelParams | StratifiedParams
    trace: list[float]
    converged: bool
    epochs: int
    wall_time: float = field(default=0.0, compare=False)

    @property
    def final_objective(self) -> float:
        return self.trace[-1]


class Adam:
    """Adam on a flat parameter array."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# losses


def _strata_index(choices: ChoiceDataset, K: int) -> list[np.ndarray]:
    s = stratum_of(choices.rank, K) if len(choices) else np.zeros(0, dtype=int)
    return [np.flatnonzero(s == k) for k in range(1, K + 1)]


def nll(params, choices: ChoiceDataset) -> float:
    """Mean negative log-likelihood of the records (each scored by its stratum if stratified)."""
    N = len(choices)
    if N == 0:
        raise ValueError("empty choice dataset")
    if isinstance(params, StratifiedParams):
        total = 0.0
        for k, idx in enumerate(_strata_index(choices, params.K)):
            if len(idx):
                loss, _ = choices_loss_and_grad(params.strata[k], choices.subset(idx), np.ones(len(idx)), False)
                total += loss
        return total / N
    loss, _ = choices_loss_and_grad(params, choices, np.full(N, 1.0 / N), False)
    return loss


def per_record_nll(params, choices: ChoiceDataset) -> np.ndarray:
    from .models import choices_log_probs

    out = np.empty(len(choices))
    if isinstance(params, StratifiedParams):
        for k, idx in enumerate(_strata_index(choices, params.K)):
            if len(idx):
                sub = choices.subset(idx)
                out[idx] = -choices_log_probs(params.strata[k], sub)[np.arange(len(idx)), sub.chosen]
        return out
    return -choices_log_probs(params, choices)[np.arange(len(choices)), choices.chosen]


def _single_objective(params: ModelParams, choices: ChoiceDataset, l2: float, weights, want_grad):
    loss, grad = choices_loss_and_grad(params, choices, weights, want_grad)
    vec = params.to_vector()
    loss += l2 * float(vec @ vec)
    if grad is not None:
        grad = np.concatenate([np.ravel(grad[name]) for name in params.blocks]) + 2 * l2 * vec
    return loss, grad


def _objective_and_grad(params, choices: ChoiceDataset, l2: float, want_grad=True, scale=None, strata_sizes=None):
    """Objective and flat gradient.

    ``scale`` / ``strata_sizes`` turn a mini-batch into an unbiased estimate:
    each record is weighted by ``scale / |D_k|`` with ``|D_k|`` the size of its
    stratum in the full dataset.
    """
    if len(choices) == 0 and strata_sizes is None:
        raise ValueError("empty choice dataset")
    if isinstance(params, StratifiedParams):
        theta = params.to_matrix()
        total = 0.0
        grads = np.zeros_like(theta)
        for k, idx in enumerate(_strata_index(choices, params.K)):
            size = len(idx) if strata_sizes is None else strata_sizes[k]
            p = params.strata[k]
            if len(idx) == 0 or size == 0:
                vec = theta[k]
                total += l2 * float(vec @ vec)
                grads[k] = 2 * l2 * vec
                continue
            w = np.full(len(idx), (1.0 if scale is None else scale) / size)
            loss, g = _single_objective(p, choices.subset(idx), l2, w, want_grad)
            total += loss
            if want_grad:
                grads[k] = g
        total += laplacian_penalty(params)
        if want_grad:
            grads += laplacian_grad(theta, params.laplacian)
            return total, grads
        return total, None
    N = len(choices) if strata_sizes is None else strata_sizes[0]
    w = np.full(len(choices), (1.0 if scale is None else scale) / N)
    return _single_objective(params, choices, l2, w, want_grad)


def objective(params, choices: ChoiceDataset, config: TrainConfig) -> float:
    return _objective_and_grad(params, choices, config.l2, want_grad=False)[0]


def gradient(params, choices: ChoiceDataset, config: TrainConfig):
    """Analytic gradient of :func:`objective`, as ``{block: array}`` (a list of them if stratified).

    Nest scales are differentiated through their logits, the coordinates
    the optimizer works in.
    """
    _, g = _objective_and_grad(params, choices, config.l2, want_grad=True)
    if isinstance(params, StratifiedParams):
        return [_split(p, row) for p, row in zip(params.strata, g)]
    return _split(params, g)


def _split(params: ModelParams, vec: np.ndarray) -> dict:
    out, at = {}, 0
    for name, shape in params.block_sizes():
        size = int(np.prod(shape))
        out[name] = vec[at:at + size].reshape(shape)
        at += size
    return out


def _flat(params):
    return params.to_matrix() if isinstance(params, StratifiedParams) else params.to_vector()


def _unflat(template, theta):
    if isinstance(template, StratifiedParams):
        return template.from_matrix(theta)
    return template.from_vector(theta)


def center_fixed_effects(params):
    """Remove the mean of each fixed-effect block.

    Shifting every alternative's utility by a constant leaves all choice
    probabilities unchanged, so this only lowers the l2 penalty: it moves
    the fit to the minimum-norm member of its equivalence class along the
    two shift directions.
    """
    if isinstance(params, StratifiedParams):
        return params.replace_strata(center_fixed_effects(p) for p in params.strata)
    return params.replace(delta_school=params.delta_school - params.delta_school.mean(),
                          delta_ptype=params.delta_ptype - params.delta_ptype.mean())


# ---------------------------------------------------------------------------
# training


def initial_params(spec: ModelSpec, dataset: RankingDataset, config: TrainConfig,
                   warm_start: ModelParams | None = None):
    """Seeded initialisation; stratum ``k`` draws from the ``k``-th child seed."""
    init_seq = np.random.SeedSequence(config.seed).spawn(2)[0]
    children = init_seq.spawn(config.strata)
    kind = spec.kind
    rank = config.rank
    if kind == "cdm" and rank == 0:
        kind = "linear"
    policy = spec.policy if kind in CDM_KINDS else None
    strata = [init_params(kind, dataset.catalog, dataset.d, rank=rank, policy=policy,
                          rng=np.random.default_rng(child), aggregation=config.aggregation,
                          warm_start=warm_start)
              for child in children]
    if config.strata == 1:
        return strata[0]
    return StratifiedParams(tuple(strata), config.laplacian_for(kind))


def fit(spec: ModelSpec, train: RankingDataset | ChoiceDataset, config: TrainConfig = TrainConfig(),
        init=None, warm_start: ModelParams | None = None) -> FitResult:
    """Minimise the regularised objective with Adam.

    Stops after ``max_epochs`` epochs or once the full-data objective changes
    by less than ``tol`` between epochs.  ``init`` overrides the seeded
    initialisation; ``warm_start`` copies fixed effects and coefficients from
    a fitted simpler model.
    """
    start = time.perf_counter()
    choices = train if isinstance(train, ChoiceDataset) else explode_rankings(train, spec.policy)
    if len(choices) == 0:
        raise ValueError("empty training data")
    params = init if init is not None else initial_params(spec, choices.dataset, config, warm_start)
    theta = _flat(params)
    opt = Adam(config.step_size, config.betas, config.eps)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    N = len(choices)
    batched = config.batch_size is not None and config.batch_size < N
    if batched:
        if isinstance(params, StratifiedParams):
            sizes = [len(idx) for idx in _strata_index(choices, params.K)]
        else:
            sizes = [N]
        # warm the mask caches once so batches slice instead of recomputing
        choices.choice_mask
        choices.context_mask(params.strata[0].policy if isinstance(params, StratifiedParams) else params.policy)

    def check(value, epoch):
        if not np.isfinite(value):
            raise DivergenceError(f"objective became non-finite at epoch {epoch}")
        return value

    trace: list[float] = []
    converged = False
    epochs = 0
    if not batched:
        for epoch in range(config.max_epochs + 1):
            loss, grad = _objective_and_grad(params, choices, config.l2)
            trace.append(check(loss, epoch))
            if epoch > 0 and abs(trace[-1] - trace[-2]) < config.tol:
                converged = True
                break
            if epoch == config.max_epochs:
                break
            theta = opt.step(theta, grad)
            params = _unflat(params, theta)
            epochs = epoch + 1
    else:
        trace.append(check(_objective_and_grad(params, choices, config.l2, want_grad=False)[0], 0))
        for epoch in range(1, config.max_epochs + 1):
            order = shuffle_rng.permutation(N)
            for at in range(0, N, config.batch_size):
                idx = np.sort(order[at:at + config.batch_size])
                batch = choices.subset(idx)
                _, grad = _objective_and_grad(params, batch, config.l2, scale=N / len(idx), strata_sizes=sizes)
                theta = opt.step(theta, grad)
                params = _unflat(params, theta)
            epochs = epoch
            trace.append(check(_objective_and_grad(params, choices, config.l2, want_grad=False)[0], epoch))
            if abs(trace[-1] - trace[-2]) < config.tol:
                converged = True
                break
    if config.center_fixed_effects:
        params = center_fixed_effects(params)
    wall = time.perf_counter() - start
    log.info("fit %s: %d epochs, objective %.6f -> %.6f, converged=%s (%.2fs)",
             spec, epochs, trace[0], trace[-1], converged, wall)
    return FitResult(params, trace, converged, epochs, wall)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    keys: tuple[str, ...]
    cells: list[tuple]
    fold_nll: np.ndarray  # (cells, folds)
    best_cell: tuple
    best_config: TrainConfig

    @property
    def mean_nll(self) -> np.ndarray:
        return self.fold_nll.mean(axis=1)

    def rows(self) -> list[dict]:
        out = []
        for cell, folds in zip(self.cells, self.fold_nll):
            row = dict(zip(self.keys, cell))
            row["mean_val_nll"] = float(folds.mean())
            row["std_val_nll"] = float(folds.std(ddof=1)) if len(folds) > 1 else 0.0
            out.append(row)
        return out

    def table(self, row_key: str, col_key: str):
        """Heat-map table of mean validation nll over two grid keys (others at their best values)."""
        r, c = self.keys.index(row_key), self.keys.index(col_key)
        rows = sorted({cell[r] for cell in self.cells})
        cols = sorted({cell[c] for cell in self.cells})
        grid = np.full((len(rows), len(cols)), np.nan)
        for cell, value in zip(self.cells, self.mean_nll):
            if all(cell[i] == self.best_cell[i] for i in range(len(self.keys)) if i not in (r, c)):
                grid[rows.index(cell[r]), cols.index(cell[c])] = value
        return rows, cols, grid

    def curve(self, key: str):
        """Mean and std of validation nll along one grid key (others at their best values)."""
        i = self.keys.index(key)
        out = []
        for cell, folds in zip(self.cells, self.fold_nll):
            if all(cell[j] == self.best_cell[j] for j in range(len(self.keys)) if j != i):
                out.append((cell[i], float(folds.mean()), float(folds.std(ddof=1)) if len(folds) > 1 else 0.0))
        return sorted(out)


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Agents partitioned into ``folds`` groups by a seeded shuffle."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _fit_eval(spec, dataset, config, train_idx, val_idx):
    result = fit(spec, dataset.subset(train_idx), config)
    val = explode_rankings(dataset.subset(val_idx), spec.policy)
    return nll(result.params, val)


def cross_validate(spec: ModelSpec, dataset: RankingDataset, grid: dict[str, Sequence],
                   config: TrainConfig = TrainConfig(), folds: int = 5, n_jobs: int = 1) -> CVResult:
    """K-fold cross-validation over the product of ``grid`` values.

    Returns the cell with the lowest mean held-out nll (ties go to the
    lexicographically smallest cell).
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty hyperparameter grid")
    if dataset.n < folds:
        raise ValueError(f"need at least {folds} agents for {folds}-fold cross-validation")
    keys = tuple(grid)
    cells = list(itertools.product(*(grid[k] for k in keys)))
    parts = fold_assignment(dataset.n, folds, config.seed)
    jobs = []
    for cell in cells:
        cfg = config.replace(**dict(zip(keys, cell)))
        for f in range(folds):
            train_idx = np.concatenate([parts[g] for g in range(folds) if g != f])
            jobs.append((spec, dataset, cfg, np.sort(train_idx), parts[f]))
    if n_jobs == 1:
        scores = [_fit_eval(*job) for job in jobs]
    else:
        from joblib import Parallel, delayed

        scores = Parallel(n_jobs=n_jobs)(delayed(_fit_eval)(*job) for job in jobs)
    fold_nll = np.asarray(scores, dtype=float).reshape(len(cells), folds)
    means = fold_nll.mean(axis=1)
    best = min(range(len(cells)), key=lambda i: (means[i], cells[i]))
    return CVResult(keys, cells, fold_nll, cells[best], config.replace(**dict(zip(keys, cells[best]))))
