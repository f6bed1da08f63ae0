import itertools

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("mmlab", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("mmlab")


def brute_ball(D, x, r):
    """Open ball by direct comparison against the full distance matrix."""
    return {y for y in range(D.shape[0]) if D[x, y] < r}


def brute_radii(D, x, upper, with_halves=False):
    """Every radius at which some open-ball mass can change, plus one point inside each gap."""
    b = set(float(v) for v in D[x] if 0 < v)
    if with_halves:
        b |= {v / 2 for v in b}
    b = sorted(v for v in b if v <= upper)
    pts = [0.0] + b + [upper]
    mids = [(a + c) / 2 for a, c in zip(pts, pts[1:]) if (a + c) / 2 > 0]
    return sorted(set(b + mids + [upper]))


def dense_laplacian(n, edges, w, mu):
    """L = M^{-1} K assembled by explicit loops (oracle for the sparse operator)."""
    K = np.zeros((n, n))
    for (u, v), c in zip(edges, w):
        K[u, u] += c
        K[v, v] += c
        K[u, v] -= c
        K[v, u] -= c
    return K, K / np.asarray(mu)[:, None]


def path_stiffness(n):
    return dense_laplacian(n, [(i, i + 1) for i in range(n - 1)], np.ones(n - 1), np.ones(n))[0]


def all_triples(n):
    return itertools.product(range(n), repeat=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
