"""``rankchoice`` command-line entry point.

Exit status: 0 success, 2 bad arguments, 3 invalid inputs (schema, fingerprint,
configuration), 4 runtime failure (e.g. a diverging fit).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import ContextPolicy, DataError, explode_rankings, summarize
from .equivalence import check_equivalence, equivalent, random_cdm
from .estimation import DivergenceError, ModelSpec, TrainConfig, cross_validate, fit
from .io import load_rankings, save_rankings
from .metrics import evaluate, tau_matrix
from .models import CDM_KINDS, KINDS, FingerprintError, dump_json, load_params, save_params
from .stratification import StratifiedParams
from .synthetic import DistrictSpec, block_cdm_truth, generate_district, linear_truth, sample_dataset

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("rankchoice")


class InvalidInput(ValueError):
    pass


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])


def _policy(text: str) -> ContextPolicy:
    try:
        return ContextPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid_entry(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"grid entries look like key=v1,v2 (got {text!r})")
    key, values = text.split("=", 1)

    def num(v):
        try:
            return int(v)
        except ValueError:
            return float(v)

    try:
        return key, [num(v) for v in values.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric grid value in {text!r}") from None


def _config(args) -> TrainConfig:
    raw = TrainConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for flag, key in (("l2", "l2"), ("laplacian", "laplacian"), ("rank", "rank"), ("strata", "strata"),
                      ("epochs", "max_epochs"), ("step_size", "step_size"), ("tol", "tol"),
                      ("batch_size", "batch_size"), ("aggregation", "aggregation")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    raw["seed"] = args.seed
    return TrainConfig.from_dict(raw)


def _spec(args) -> ModelSpec:
    return ModelSpec(args.model, args.policy)


# ---------------------------------------------------------------------------
# verbs


def cmd_generate(args) -> None:
    spec = DistrictSpec.load(args.district) if args.district else DistrictSpec()
    changes = {k: v for k, v in (("n", args.n), ("m", args.m), ("n_s", args.schools),
                                 ("n_p", args.types)) if v is not None}
    changes["seed"] = args.seed
    if args.rare_type:
        changes["rare_type"] = True
    spec = spec.replace(**changes)
    district = generate_district(spec)
    truth_seed, sample_seed, split_seed = np.random.SeedSequence(args.seed).generate_state(3)
    if args.truth == "linear":
        truth = linear_truth(district, seed=int(truth_seed))
    else:
        truth = block_cdm_truth(district, affinity=args.affinity, seed=int(truth_seed))
    data = sample_dataset(district, truth, seed=int(sample_seed))
    perm = np.random.default_rng(int(split_seed)).permutation(data.n)
    n_test = int(round(args.test_frac * data.n))
    out = Path(args.out)
    save_rankings(data.subset(np.sort(perm[n_test:])), out / "train")
    if n_test:
        save_rankings(data.subset(np.sort(perm[:n_test])), out / "test")
    save_params(truth, out / "truth.json")
    dump_json(spec.to_dict(), out / "district.json")
    _write_rows(out / "summary.csv", ["statistic", "value"], summarize(data).rows())


def cmd_explode(args) -> None:
    data = load_rankings(args.data)
    choices = explode_rankings(data, args.policy)
    alts = data.catalog.alternatives
    ids = data.agent_ids
    rows = []
    for rec in choices.records:
        ctx = "*" if rec.context is None else ";".join(alts[j] for j in rec.context)
        rows.append((ids[rec.agent], rec.rank, alts[rec.chosen], ctx, ";".join(alts[j] for j in rec.choice_set)))
    _write_rows(Path(args.out) / "choices.csv", ["agent", "rank", "chosen", "context", "choice_set"], rows)


def cmd_fit(args) -> None:
    data = load_rankings(args.data)
    config = _config(args)
    result = fit(_spec(args), data, config)
    out = Path(args.out)
    save_params(result.params, out / "params.json")
    dump_json(config.to_dict(), out / "config.json")
    _write_rows(out / "trace.csv", ["epoch", "objective"], list(enumerate(result.trace)))
    dump_json({"model": str(_spec(args)), "epochs": result.epochs, "converged": result.converged,
               "final_objective": result.final_objective}, out / "fit.json")
    print(f"{_spec(args)}: {result.epochs} epochs, objective {result.final_objective:.6f}, "
          f"converged={result.converged}")


def cmd_tune(args) -> None:
    data = load_rankings(args.data)
    config = _config(args)
    grid = dict(args.grid) if args.grid else {"l2": [1e-5, 1e-4, 1e-3]}
    unknown = set(grid) - set(TrainConfig().to_dict())
    if unknown:
        raise InvalidInput(f"unknown grid keys {sorted(unknown)}")
    cv = cross_validate(_spec(args), data, grid, config, folds=args.folds, n_jobs=args.jobs)
    out = Path(args.out)
    rows = cv.rows()
    _write_rows(out / "grid.csv", list(cv.keys) + ["mean_val_nll", "std_val_nll"],
                [[r[k] for k in cv.keys] + [r["mean_val_nll"], r["std_val_nll"]] for r in rows])
    dump_json(cv.best_config.to_dict(), out / "best_config.json")
    print("best:", dict(zip(cv.keys, cv.best_cell)))


def _metric_rows(params, test, args):
    return evaluate(params, test, k_max=args.k_max, n_samples=args.samples, seed=args.seed)


def _tau_rows(names, M):
    return [(a, b, float(M[i, j])) for i, a in enumerate(names) for j, b in enumerate(names)]


def cmd_evaluate(args) -> None:
    test = load_rankings(args.data)
    params = load_params(args.params, test)
    out = Path(args.out)
    rows = _metric_rows(params, test, args)
    _write_rows(out / "metrics.csv", ["metric", "k", "group", "value", "count"], rows)
    names, M = tau_matrix({"model": params}, test, n_samples=args.tau_samples, seed=args.seed,
                          agents=np.arange(min(test.n, args.tau_agents)))
    _write_rows(out / "tau.csv", ["model_a", "model_b", "tau"], _tau_rows(names, M))
    for r in rows:
        if r.group == "all" and r.metric in ("nll", "accuracy"):
            print(f"{r.metric:10s} k={'' if r.k is None else r.k:<3} {r.value}")


def _model_name(path: str, taken: set) -> str:
    name = Path(path).parent.name if Path(path).name == "params.json" else Path(path).stem
    base, i = name, 2
    while name in taken:
        name, i = f"{base}_{i}", i + 1
    taken.add(name)
    return name


def _load_models(paths, test):
    taken: set = set()
    return {_model_name(p, taken): load_params(p, test) for p in paths}


def cmd_compare(args) -> None:
    test = load_rankings(args.data)
    models = _load_models(args.params, test)
    out = Path(args.out)
    rows = []
    for name, params in models.items():
        rows += [(name, *r) for r in _metric_rows(params, test, args)]
    _write_rows(out / "compare.csv", ["model", "metric", "k", "group", "value", "count"], rows)
    names, M = tau_matrix(models, test, n_samples=args.tau_samples, seed=args.seed,
                          agents=np.arange(min(test.n, args.tau_agents)))
    _write_rows(out / "tau.csv", ["model_a", "model_b", "tau"], _tau_rows(names, M))
    for name in models:
        overall = next(r for r in rows if r[0] == name and r[1] == "nll")
        print(f"{name:16s} test nll {overall[4]:.6f}")


def cmd_plot_data(args) -> None:
    test = load_rankings(args.data)
    models = _load_models(args.params, test)
    out = Path(args.out)
    by_rank, accuracy, groups = [], [], []
    for name, params in models.items():
        for r in _metric_rows(params, test, args):
            if r.metric == "nll_by_rank":
                by_rank.append((name, r.k, r.value, r.count))
            elif r.group == "all" and r.metric != "nll":
                accuracy.append((name, r.metric, r.k, r.value, r.count))
            elif r.group != "all":
                groups.append((name, r.metric, r.k, r.group, r.value, r.count))
    _write_rows(out / "nll_by_rank.csv", ["model", "rank", "nll", "count"], by_rank)
    _write_rows(out / "accuracy.csv", ["model", "metric", "k", "value", "count"], accuracy)
    _write_rows(out / "subgroups.csv", ["model", "metric", "k", "group", "value", "count"], groups)


def cmd_equiv_check(args) -> None:
    if args.params:
        params = load_params(args.params)
        if isinstance(params, StratifiedParams) or params.kind not in CDM_KINDS:
            raise InvalidInput("equivalence check needs a single CDM parameter file")
        reports = [check_equivalence(params)]
    else:
        from .data import ProgramCatalog

        rng = np.random.default_rng(args.seed)
        reports = []
        for kind in ("cdm", "cdm-full"):
            for _ in range(args.trials):
                cat = ProgramCatalog.from_labels([f"p{j}" for j in range(args.m)],
                                                 [f"s{j}" for j in range(args.m)], ["t"] * args.m)
                reports.append(check_equivalence(random_cdm(kind, cat, 2, rng, rank=2)))
    out = Path(args.out)
    worst = {
        "n_checks": len(reports),
        "max_prob_diff": max(r.max_prob_diff for r in reports),
        "max_loglik_diff": max(r.max_loglik_diff for r in reports),
        "max_involution_error": max(r.involution_error for r in reports),
    }
    dump_json(worst, out / "equivalence.json")
    if args.params:
        save_params(equivalent(params), out / "mapped_params.json")
    for r in reports[:1] + ([reports[-1]] if len(reports) > 1 else []):
        print(r.format())
    print(json.dumps(worst, sort_keys=True))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rankchoice", description="Rank-heterogeneous preference models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", choices=KINDS, default="linear")
    model.add_argument("--policy", type=_policy, default=ContextPolicy("backward"))
    model.add_argument("--config", help="JSON training config; flags override it")
    model.add_argument("--strata", type=int)
    model.add_argument("--laplacian", type=float)
    model.add_argument("--l2", type=float)
    model.add_argument("--rank", type=int)
    model.add_argument("--epochs", type=int)
    model.add_argument("--step-size", type=float)
    model.add_argument("--tol", type=float)
    model.add_argument("--batch-size", type=int)
    model.add_argument("--aggregation", choices=("mean", "sum"))

    metrics = argparse.ArgumentParser(add_help=False)
    metrics.add_argument("--k-max", type=int, default=3)
    metrics.add_argument("--samples", type=int, default=100, help="samples per agent for consistency")
    metrics.add_argument("--tau-samples", type=int, default=20)
    metrics.add_argument("--tau-agents", type=int, default=50)

    g = sub.add_parser("generate", parents=[common], help="synthetic district -> train/test data")
    g.add_argument("--district", help="JSON district spec")
    g.add_argument("--truth", choices=("linear", "cdm"), default="cdm")
    g.add_argument("--affinity", type=float, default=2.0)
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--schools", type=int)
    g.add_argument("--types", type=int)
    g.add_argument("--rare-type", action="store_true")
    g.add_argument("--test-frac", type=float, default=0.2)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("explode", parents=[common], help="rankings -> choice records")
    e.add_argument("data")
    e.add_argument("--policy", type=_policy, default=ContextPolicy("backward"))
    e.set_defaults(func=cmd_explode)

    f = sub.add_parser("fit", parents=[common, model], help="train one model")
    f.add_argument("data")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("tune", parents=[common, model], help="k-fold grid search")
    t.add_argument("data")
    t.add_argument("--grid", type=_grid_entry, action="append", help="key=v1,v2 (repeatable)")
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_tune)

    ev = sub.add_parser("evaluate", parents=[common, metrics], help="metrics of one model on test data")
    ev.add_argument("params")
    ev.add_argument("data")
    ev.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", parents=[common, metrics], help="joint metric table for several models")
    c.add_argument("data")
    c.add_argument("params", nargs="+")
    c.set_defaults(func=cmd_compare)

    pd = sub.add_parser("plot-data", parents=[common, metrics], help="figure-ready metric tables")
    pd.add_argument("data")
    pd.add_argument("params", nargs="+")
    pd.set_defaults(func=cmd_plot_data)

    q = sub.add_parser("equiv-check", parents=[common], help="forward/backward equivalence report")
    q.add_argument("params", nargs="?")
    q.add_argument("--m", type=int, default=4)
    q.add_argument("--trials", type=int, default=10)
    q.set_defaults(func=cmd_equiv_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DataError, FingerprintError, InvalidInput, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # configuration values rejected by dataclass validation
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
