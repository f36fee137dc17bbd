"""Shared helpers: random instances and dense reference operators."""

import itertools

import numpy as np
import pytest

from dcqap import QapInstance


def random_instance(n, seed, low=0, high=10, symmetric=True, with_c=False, name=None):
    rng = np.random.default_rng(seed)
    A = rng.integers(low, high, (n, n)).astype(float)
    B = rng.integers(low, high, (n, n)).astype(float)
    if symmetric:
        A, B = A + A.T, B + B.T
    C = rng.integers(low, high, (n, n)).astype(float) if with_c else None
    return QapInstance(name or f"rand{n}_{seed}", A, B, C)


def all_perms(n):
    return [np.array(p) for p in itertools.permutations(range(n))]


def perm_vec(perm, n):
    """vec(X) (column-major) of the permutation matrix with X[i, perm[i]] = 1."""
    X = np.zeros((n, n))
    X[np.arange(n), perm] = 1.0
    return X.ravel(order="F")


def dense_D(n):
    """Dense p x p matrix with <D, Y> = sum of off-diagonal entries of the diagonal
    blocks plus the diagonals of the off-diagonal blocks."""
    p = n * n
    D = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            ia, ja = a % n, a // n
            ib, jb = b % n, b // n
            if ja == jb and ia != ib:
                D[a, b] = 1.0
            elif ja != jb and ia == ib:
                D[a, b] = 1.0
    return D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs on QAPLIB instances")
