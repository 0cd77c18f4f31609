import numpy as np
import pytest

from rankchoice.data import ProgramCatalog, RankingDataset


def make_catalog(m, n_s=None, n_p=None, nests=None):
    n_s = n_s or max(1, m // 2)
    n_p = n_p or 2
    schools = [f"s{j % n_s}" for j in range(m)]
    ptypes = [f"p{(j // n_s) % n_p}" for j in range(m)]
    return ProgramCatalog.from_labels([f"alt{j}" for j in range(m)], schools, ptypes, nests)


def random_dataset(rng, n=8, m=5, d=2, catalog=None, min_len=1, max_len=None, labels=False):
    catalog = catalog or make_catalog(m)
    m = catalog.m
    max_len = max_len or m
    rankings = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        rankings.append(tuple(int(a) for a in rng.permutation(m)[:k]))
    X = rng.normal(size=(n, m, d))
    group_labels = {}
    if labels:
        group_labels["grp"] = tuple(rng.choice(["a", "b", None]) for _ in range(n))
    return RankingDataset(catalog, tuple(rankings), X, tuple(f"f{i}" for i in range(d)),
                          group_labels=group_labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def abcd():
    return ProgramCatalog.from_labels(["a", "b", "c", "d"], ["s1", "s1", "s2", "s2"], ["g", "l", "g", "l"])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
