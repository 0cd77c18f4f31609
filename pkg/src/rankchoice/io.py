"""On-disk formats for ranking datasets.

Delimited format: a directory holding

* ``catalog.csv``    -- ``alternative,school,program_type,nest``
* ``rankings.csv``   -- ``agent,rank,alternative``
* ``covariates.csv`` -- ``agent,alternative,<feature_1>,...,<feature_d>``
* ``labels.csv``     -- ``agent,label_name,label_value`` (optional)

Structured format: a single JSON file with keys ``catalog``, ``features``,
``agents`` and ``labels`` (see :func:`dataset_to_record`).
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .data import DataError, ProgramCatalog, RankingDataset

CATALOG_HEADER = ["alternative", "school", "program_type", "nest"]
RANKINGS_HEADER = ["agent", "rank", "alternative"]
COVARIATES_PREFIX = ["agent", "alternative"]
LABELS_HEADER = ["agent", "label_name", "label_value"]
FORMAT_VERSION = 1


class SchemaError(DataError):
    """Input parsed but does not match the declared schema."""


def _read_csv(path: Path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise DataError(f"{path.name}: parse failure: {exc}") from exc
    if not rows:
        raise DataError(f"{path.name}: empty file")
    return rows[0], rows[1:]


def _check_header(path: Path, header, expected, prefix_only=False):
    got = header[: len(expected)] if prefix_only else header
    if got != expected:
        raise SchemaError(f"{path.name}: header {header} does not match expected {expected}")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _catalog_from_rows(rows, where):
    for pos, row in rows:
        if len(row) != 4 or any(v == "" for v in row):
            raise SchemaError(f"{where} {pos}: expected 4 non-empty fields, got {row}")
    labels = [row[0] for _, row in rows]
    seen = set()
    for (pos, row) in rows:
        if row[0] in seen:
            raise SchemaError(f"{where} {pos}: duplicate alternative {row[0]!r}")
        seen.add(row[0])
    return ProgramCatalog.from_labels(
        labels, [r[1] for _, r in rows], [r[2] for _, r in rows], [r[3] for _, r in rows]
    )


def _assemble(catalog, agent_order, ranking_entries, cov_rows, features, label_rows, where):
    """Common validation path for both formats.

    ``ranking_entries``: agent -> list of (rank, alternative label, position)
    ``cov_rows``: list of (agent, alternative, values, position)
    """
    index = catalog.index
    agent_idx = {a: i for i, a in enumerate(agent_order)}
    rankings = []
    for a in agent_order:
        entries = sorted(ranking_entries[a], key=lambda e: e[0])
        ranks = [e[0] for e in entries]
        if ranks != list(range(1, len(ranks) + 1)):
            raise SchemaError(f"{where['rankings']} {entries[0][2]}: agent {a!r} ranks {ranks} are not 1..k")
        ranking = []
        for rank, alt, pos in entries:
            if alt not in index:
                raise SchemaError(f"{where['rankings']} {pos}: unknown alternative label {alt!r}")
            ranking.append(index[alt])
        if len(set(ranking)) != len(ranking):
            raise DataError(f"{where['rankings']}: agent {a!r} ranks an alternative twice")
        rankings.append(tuple(ranking))

    n, m, d = len(agent_order), catalog.m, len(features)
    X = np.full((n, m, d), np.nan)
    filled = np.zeros((n, m), dtype=bool)
    for agent, alt, values, pos in cov_rows:
        if agent not in agent_idx:
            raise SchemaError(f"{where['covariates']} {pos}: agent {agent!r} has no ranking")
        if alt not in index:
            raise SchemaError(f"{where['covariates']} {pos}: unknown alternative label {alt!r}")
        if len(values) != d:
            raise SchemaError(f"{where['covariates']} {pos}: expected {d} feature values, got {len(values)}")
        i, j = agent_idx[agent], index[alt]
        if filled[i, j]:
            raise SchemaError(f"{where['covariates']} {pos}: duplicate entry for ({agent!r}, {alt!r})")
        try:
            X[i, j] = [float(v) for v in values]
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where['covariates']} {pos}: parse failure: {exc}") from exc
        filled[i, j] = True
    if not filled.all():
        i, j = np.argwhere(~filled)[0]
        raise SchemaError(f"covariates missing for agent {agent_order[i]!r}, alternative {catalog.alternatives[j]!r}")

    labels: dict[str, list] = {}
    for agent, name, value, pos in label_rows:
        if agent not in agent_idx:
            raise SchemaError(f"{where['labels']} {pos}: agent {agent!r} has no ranking")
        col = labels.setdefault(name, [None] * n)
        if col[agent_idx[agent]] is not None:
            raise SchemaError(f"{where['labels']} {pos}: duplicate label {name!r} for agent {agent!r}")
        col[agent_idx[agent]] = value
    return RankingDataset(catalog, tuple(rankings), X, tuple(features), tuple(agent_order),
                          {k: tuple(v) for k, v in labels.items()})


def _load_delimited(root: Path) -> RankingDataset:
    header, rows = _read_csv(root / "catalog.csv")
    _check_header(root / "catalog.csv", header, CATALOG_HEADER)
    catalog = _catalog_from_rows([(f"row {p + 2}", r) for p, r in enumerate(rows)], "catalog.csv")

    header, rows = _read_csv(root / "rankings.csv")
    _check_header(root / "rankings.csv", header, RANKINGS_HEADER)
    agent_order, entries = [], {}
    seen_rank = set()
    for p, row in enumerate(rows):
        pos = f"row {p + 2}"
        if len(row) != 3:
            raise SchemaError(f"rankings.csv {pos}: expected 3 fields, got {row}")
        agent, rank, alt = row
        try:
            rank = int(rank)
        except ValueError:
            raise DataError(f"rankings.csv {pos}: parse failure: rank {rank!r} is not an integer") from None
        if (agent, rank) in seen_rank:
            raise SchemaError(f"rankings.csv {pos}: duplicate agent/rank ({agent!r}, {rank})")
        seen_rank.add((agent, rank))
        if agent not in entries:
            agent_order.append(agent)
            entries[agent] = []
        entries[agent].append((rank, alt, pos))

    cov_path = root / "covariates.csv"
    header, rows = _read_csv(cov_path)
    _check_header(cov_path, header, COVARIATES_PREFIX, prefix_only=True)
    features = header[2:]
    if len(set(features)) != len(features):
        raise SchemaError("covariates.csv: duplicate feature names in header")
    cov_rows = []
    for p, row in enumerate(rows):
        if len(row) < 2:
            raise SchemaError(f"covariates.csv row {p + 2}: too few fields")
        cov_rows.append((row[0], row[1], row[2:], f"row {p + 2}"))

    label_rows = []
    if (root / "labels.csv").exists():
        header, rows = _read_csv(root / "labels.csv")
        _check_header(root / "labels.csv", header, LABELS_HEADER)
        for p, row in enumerate(rows):
            if len(row) != 3:
                raise SchemaError(f"labels.csv row {p + 2}: expected 3 fields, got {row}")
            label_rows.append((row[0], row[1], row[2], f"row {p + 2}"))

    where = {"rankings": "rankings.csv", "covariates": "covariates.csv", "labels": "labels.csv"}
    return _assemble(catalog, agent_order, entries, cov_rows, features, label_rows, where)


def dataset_to_record(dataset: RankingDataset) -> dict:
    """Structured-record form: one JSON-serialisable dict bundling everything."""
    cat = dataset.catalog
    agents = []
    for i, agent in enumerate(dataset.agent_ids):
        agents.append({
            "id": agent,
            "ranking": [cat.alternatives[j] for j in dataset.rankings[i]],
            "covariates": dataset.covariates[i].tolist(),
        })
    labels = {name: {a: v for a, v in zip(dataset.agent_ids, values) if v is not None}
              for name, values in dataset.group_labels.items()}
    return {
        "format_version": FORMAT_VERSION,
        "catalog": [
            {"alternative": a, "school": cat.school_names[cat.school_of[j]],
             "program_type": cat.ptype_names[cat.ptype_of[j]], "nest": cat.nest_names[cat.nest_of[j]]}
            for j, a in enumerate(cat.alternatives)
        ],
        "features": list(dataset.feature_names),
        "agents": agents,
        "labels": labels,
    }


def dataset_from_record(record: dict) -> RankingDataset:
    try:
        catalog_rows = [(f"catalog[{p}]", [e["alternative"], e["school"], e["program_type"], e["nest"]])
                        for p, e in enumerate(record["catalog"])]
        features = list(record["features"])
        agents = record["agents"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"structured record missing field: {exc}") from exc
    catalog = _catalog_from_rows(catalog_rows, "catalog")
    agent_order, entries, cov_rows = [], {}, []
    for p, a in enumerate(agents):
        try:
            aid, ranking, cov = str(a["id"]), list(a["ranking"]), a["covariates"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"agents[{p}]: missing field {exc}") from exc
        if aid in entries:
            raise SchemaError(f"agents[{p}]: duplicate agent identifier {aid!r}")
        agent_order.append(aid)
        entries[aid] = [(r + 1, alt, f"agents[{p}].ranking[{r}]") for r, alt in enumerate(ranking)]
        if not ranking:
            raise DataError(f"agents[{p}]: empty ranking")
        if len(cov) != catalog.m:
            raise SchemaError(f"agents[{p}]: expected {catalog.m} covariate rows, got {len(cov)}")
        for j, values in enumerate(cov):
            cov_rows.append((aid, catalog.alternatives[j], list(values), f"agents[{p}].covariates[{j}]"))
    label_rows = []
    for name, mapping in (record.get("labels") or {}).items():
        for aid, value in mapping.items():
            label_rows.append((aid, name, value, f"labels[{name!r}]"))
    where = {"rankings": "agents", "covariates": "agents", "labels": "labels"}
    return _assemble(catalog, agent_order, entries, cov_rows, features, label_rows, where)


def _guess_format(path: Path) -> str:
    return "delimited" if path.is_dir() else "structured"


def load_rankings(path, format: str | None = None) -> RankingDataset:
    """Load a dataset; ``format`` is ``"delimited"`` (directory) or ``"structured"`` (JSON file)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    format = format or _guess_format(path)
    if format == "delimited":
        return _load_delimited(path)
    if format == "structured":
        try:
            with open(path) as fh:
                record = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path.name}: parse failure at line {exc.lineno}: {exc.msg}") from exc
        return dataset_from_record(record)
    raise ValueError(f"unknown format {format!r}")


def save_rankings(dataset: RankingDataset, path, format: str = "delimited") -> None:
    path = Path(path)
    cat = dataset.catalog
    if format == "structured":
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(dataset_to_record(dataset), fh, indent=1)
            fh.write("\n")
        return
    if format != "delimited":
        raise ValueError(f"unknown format {format!r}")
    os.makedirs(path, exist_ok=True)
    _write_csv(path / "catalog.csv", CATALOG_HEADER, [
        (a, cat.school_names[cat.school_of[j]], cat.ptype_names[cat.ptype_of[j]], cat.nest_names[cat.nest_of[j]])
        for j, a in enumerate(cat.alternatives)
    ])
    _write_csv(path / "rankings.csv", RANKINGS_HEADER, [
        (agent, r + 1, cat.alternatives[j])
        for agent, ranking in zip(dataset.agent_ids, dataset.rankings)
        for r, j in enumerate(ranking)
    ])
    _write_csv(path / "covariates.csv", COVARIATES_PREFIX + list(dataset.feature_names), [
        (agent, a, *map(repr, dataset.covariates[i, j].tolist()))
        for i, agent in enumerate(dataset.agent_ids)
        for j, a in enumerate(cat.alternatives)
    ])
    labels_path = path / "labels.csv"
    if dataset.group_labels:
        _write_csv(labels_path, LABELS_HEADER, [
            (agent, name, value)
            for name, values in dataset.group_labels.items()
            for agent, value in zip(dataset.agent_ids, values)
            if value is not None
        ])
    elif labels_path.exists():
        labels_path.unlink()
