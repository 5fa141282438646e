"""Proximity operators and Euclidean projections.

Only the closed family needed by the fused-lasso models is provided: the
l1 norm, indicators of simple convex sets and direct sums of those.  All of
them are even and coercive by construction.  As everywhere in the package,
arrays are processed along axis 0, so 2-D inputs are batches of columns.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "SimpleSet",
    "Singleton",
    "Box",
    "ConstantLine",
    "FullSpace",
    "ProductSet",
    "ProxFunction",
    "L1Norm",
    "Indicator",
    "DirectSum",
    "prox_l1",
    "project_constant_line",
    "prox_direct_sum_indicator_l1",
    "project",
    "check_interval",
]


def check_interval(interval) -> tuple[float, float]:
    """Validate a closed interval ``(lo, hi)``; ``+-inf`` endpoints allowed.

    A scalar is read as the singleton interval.
    """
    if np.isscalar(interval):
        lo = hi = float(interval)
    else:
        lo, hi = (float(v) for v in interval)
    if math.isnan(lo) or math.isnan(hi) or lo > hi:
        raise ValueError(f"empty or invalid interval [{lo}, {hi}]")
    if lo == math.inf or hi == -math.inf:
        raise ValueError(f"interval [{lo}, {hi}] contains no real number")
    return lo, hi


# -- sets -------------------------------------------------------------------


class SimpleSet:
    """Closed convex set with an exact, cheap Euclidean projection."""

    kind = "abstract"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("set dimension must be positive")
        self.dim = int(dim)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValueError(
                f"{type(self).__name__}: expected leading dimension {self.dim}, "
                f"got shape {x.shape}"
            )
        return self._project(x)

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.project(x), axis=0)

    def contains(self, x, atol: float = 0.0) -> bool:
        return bool(np.all(self.distance(x) <= atol))

    def _project(self, x):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} dim={self.dim}>"


class Singleton(SimpleSet):
    kind = "singleton"

    def __init__(self, point):
        point = np.array(point, dtype=float).ravel()
        super().__init__(point.size)
        self.point = point

    def _project(self, x):
        if x.ndim == 1:
            return self.point.copy()
        return np.repeat(self.point[:, None], x.shape[1], axis=1)


class Box(SimpleSet):
    kind = "interval-box"

    def __init__(self, lower, upper, dim: int | None = None):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if dim is None:
            dim = np.broadcast(lower, upper).size
        lower = np.broadcast_to(lower, (dim,)).copy()
        upper = np.broadcast_to(upper, (dim,)).copy()
        if np.any(lower > upper):
            raise ValueError("box has lower > upper in some coordinate")
        super().__init__(dim)
        self.lower = lower
        self.upper = upper

    def _project(self, x):
        if x.ndim == 1:
            return np.clip(x, self.lower, self.upper)
        return np.clip(x, self.lower[:, None], self.upper[:, None])


class ConstantLine(SimpleSet):
    """``{alpha * 1 | alpha in interval}``."""

    kind = "constant-line"

    def __init__(self, dim: int, interval=(-math.inf, math.inf)):
        super().__init__(dim)
        self.interval = check_interval(interval)

    def _project(self, x):
        return project_constant_line(x, self.interval)


class FullSpace(SimpleSet):
    kind = "full-space"

    def _project(self, x):
        return x


class ProductSet(SimpleSet):
    """Cartesian product; each factor projects its own slice."""

    kind = "product"

    def __init__(self, factors: Sequence[SimpleSet]):
        factors = tuple(factors)
        if not factors:
            raise ValueError("ProductSet needs at least one factor")
        self.factors = factors
        self._offsets = np.concatenate([[0], np.cumsum([f.dim for f in factors])])
        super().__init__(int(self._offsets[-1]))

    def _slices(self):
        return [
            slice(int(a), int(b)) for a, b in zip(self._offsets[:-1], self._offsets[1:])
        ]

    def _project(self, x):
        parts = []
        for f, sl in zip(self.factors, self._slices()):
            parts.append(x[sl] if isinstance(f, FullSpace) else f._project(x[sl]))
        return np.concatenate(parts)


def project(set_: SimpleSet, x):
    return set_.project(x)


def project_constant_line(x, interval=(-math.inf, math.inf)):
    """Project onto ``{alpha 1 | alpha in interval}``: clamp the mean."""
    lo, hi = check_interval(interval)
    x = np.asarray(x, dtype=float)
    alpha = x.mean(axis=0)
    # a mean of equal floats can be off by an ulp; keep constant inputs exact
    alpha = np.where(np.all(x == x[0], axis=0), x[0], alpha)
    alpha = np.clip(alpha, lo, hi)
    return np.broadcast_to(alpha, x.shape).copy()


# -- functions ----------------------------------------------------------------


def prox_l1(x, gamma):
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("prox_l1 needs gamma >= 0")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - gamma, 0.0)


def prox_direct_sum_indicator_l1(r1, r2, gamma):
    """Prox of ``iota_{0}(r1) + ||r2||_1``: zero the first block, shrink the second."""
    r1 = np.asarray(r1, dtype=float)
    return np.zeros_like(r1), prox_l1(r2, gamma)


class ProxFunction:
    """Proper lsc convex function with a closed-form proximity operator."""

    kind = "abstract"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("function dimension must be positive")
        self.dim = int(dim)

    def prox(self, x, gamma):
        """``argmin_v f(v) + ||v - x||^2 / (2 gamma)``; ``gamma = 0`` gives the
        identity for finite functions and the projection for indicators."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValueError(
                f"{type(self).__name__}: expected leading dimension {self.dim}, "
                f"got shape {x.shape}"
            )
        if np.any(np.asarray(gamma) < 0):
            raise ValueError("gamma must be nonnegative")
        return self._prox(x, gamma)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValueError(
                f"{type(self).__name__}: expected leading dimension {self.dim}"
            )
        return self._value(x)

    def _prox(self, x, gamma):
        raise NotImplementedError

    def _value(self, x):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} dim={self.dim}>"


class L1Norm(ProxFunction):
    kind = "l1-norm"

    def _prox(self, x, gamma):
        return prox_l1(x, gamma)

    def _value(self, x):
        return np.abs(x).sum(axis=0)


class Indicator(ProxFunction):
    """Indicator of a :class:`SimpleSet`.

    Membership is decided with an absolute slack of ``atol * (1 + ||x||)``
    so that round-off on the set boundary does not yield ``inf``.
    """

    kind = "indicator"

    def __init__(self, set_: SimpleSet, atol: float = 1e-10):
        super().__init__(set_.dim)
        self.set = set_
        self.atol = atol

    def _prox(self, x, gamma):
        return self.set._project(x)

    def _value(self, x):
        dist = np.linalg.norm(x - self.set._project(x), axis=0)
        slack = self.atol * (1.0 + np.linalg.norm(x, axis=0))
        return np.where(dist <= slack, 0.0, np.inf)


class DirectSum(ProxFunction):
    """Separable sum ``f_1(x_1) + f_2(x_2) + ...`` over consecutive slices."""

    kind = "direct-sum"

    def __init__(self, parts: Sequence[ProxFunction]):
        parts = tuple(parts)
        if not parts:
            raise ValueError("DirectSum needs at least one part")
        self.parts = parts
        self._offsets = np.concatenate([[0], np.cumsum([p.dim for p in parts])])
        super().__init__(int(self._offsets[-1]))

    def slices(self):
        return [
            slice(int(a), int(b)) for a, b in zip(self._offsets[:-1], self._offsets[1:])
        ]

    def _prox(self, x, gamma):
        return np.concatenate(
            [p._prox(x[sl], gamma) for p, sl in zip(self.parts, self.slices())]
        )

    def _value(self, x):
        return sum(p._value(x[sl]) for p, sl in zip(self.parts, self.slices()))
