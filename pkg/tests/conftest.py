import numpy as np
import pytest

from ligme.linops import (
    BlockDiagonal, BlockSum, Centering, Composition, CumulativeSum, DenseMatrix,
    FirstDifference, HorizontalConcat, Identity, Scaled, WindowEmbedding, Zero,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_leaf(rng, m, n):
    """A random operator R^n -> R^m of one of the leaf kinds."""
    choices = ["dense", "scaled"]
    if m == n:
        choices += ["identity", "centering"]
    if m == n - 1:
        choices.append("diff")
    if m == n + 1:
        choices.append("cumsum")
    kind = choices[rng.integers(len(choices))]
    if kind == "dense":
        return DenseMatrix(rng.standard_normal((m, n)))
    if kind == "scaled":
        return Scaled(rng.uniform(-2, 2), DenseMatrix(rng.standard_normal((m, n))))
    if kind == "identity":
        return Identity(n)
    if kind == "centering":
        return Centering(n)
    if kind == "diff":
        return FirstDifference(n)
    return CumulativeSum(m)


def random_operator(rng, m, n, depth=3):
    """Randomly nested composite operator R^n -> R^m."""
    if depth == 0 or rng.random() < 0.3:
        return random_leaf(rng, m, n)
    kind = rng.integers(4)
    if kind == 0 and m >= 2 and n >= 2:
        m1 = int(rng.integers(1, m))
        n1 = int(rng.integers(1, n))
        return BlockDiagonal([random_operator(rng, m1, n1, depth - 1),
                              random_operator(rng, m - m1, n - n1, depth - 1)])
    if kind == 1 and n >= 2:
        n1 = int(rng.integers(1, n))
        return HorizontalConcat([random_operator(rng, m, n1, depth - 1),
                                 random_operator(rng, m, n - n1, depth - 1)])
    if kind == 2:
        k = int(rng.integers(1, 6))
        return Composition(random_operator(rng, m, k, depth - 1),
                           random_operator(rng, k, n, depth - 1))
    return random_operator(rng, n, m, depth - 1).T


STRUCTURED = [
    lambda: FirstDifference(7),
    lambda: CumulativeSum(7),
    lambda: WindowEmbedding(9, 3),
    lambda: WindowEmbedding(6, 5),
    lambda: BlockSum(4, 3),
    lambda: Centering(5),
    lambda: Zero(4, 3),
]


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
