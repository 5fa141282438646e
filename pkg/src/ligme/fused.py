"""Fused-lasso family as constrained LiGME models.

A signal ``x`` in ``R^N`` is written as ``x = b + D^- S(d)`` with a constant
baseline ``b = alpha 1`` and synthesis components ``d = (d_1, ..., d_{N-L})``,
``d_j`` in ``R^L``, whose sliding-window sum ``S(d)`` is the first-difference
signal.  The unknown of every model here is ``u = (b, d)``.

Variants:

``fused-lasso``
    ``L = N - 1`` so ``S`` is the identity and ``||d||_1 = ||Dx||_1``.
``latent-fused-lasso``
    ``A = I``, no penalty on the signal itself, per-component sums ``Hd = 0``.
``unified-convex``
    both l1 penalties, no GME matrices.
``bivariate-gme``
    both penalties nonconvexly enhanced by a certified :class:`GmeDesign`.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .linops import (
    BlockDiagonal,
    BlockSum,
    Composition,
    CumulativeSum,
    DenseMatrix,
    FirstDifference,
    HorizontalConcat,
    Identity,
    LinearOperator,
    WindowEmbedding,
    Zero,
)
from .prox import (
    Box,
    ConstantLine,
    DirectSum,
    FullSpace,
    Indicator,
    L1Norm,
    ProductSet,
    SimpleSet,
    Singleton,
    check_interval,
)
from .solver import (
    AsymptoticConstraint,
    DiagnosticsTrace,
    Model,
    Regularizer,
    SolverState,
    SolveResult,
    StoppingRule,
    select_stepsizes,
    solve,
)

__all__ = [
    "VARIANTS",
    "FusedProblemSpec",
    "build_D",
    "build_Dminus",
    "build_H",
    "build_S",
    "build_synthesis",
    "build_system_matrix",
    "build_model",
    "split",
    "reconstruct",
    "fused_lasso_eq_model",
    "solve_fused",
    "fast_path_available",
]

VARIANTS = ("fused-lasso", "latent-fused-lasso", "unified-convex", "bivariate-gme")
REAL_LINE = (-math.inf, math.inf)


def build_D(N: int) -> LinearOperator:
    return FirstDifference(N)


def build_Dminus(N: int) -> LinearOperator:
    return CumulativeSum(N)


def build_H(N: int, L: int) -> LinearOperator:
    if not 1 <= L <= N - 1:
        raise ValueError(f"L must lie in [1, {N - 1}], got {L}")
    return BlockSum(N - L, L)


def build_S(N: int, L: int) -> LinearOperator:
    return WindowEmbedding(N, L)


def build_synthesis(N: int, L: int) -> LinearOperator:
    """``G = D^- S``, mapping components ``d`` to the non-baseline signal."""
    return Composition(build_Dminus(N), build_S(N, L))


def build_system_matrix(A: LinearOperator, N: int, L: int) -> LinearOperator:
    """``A [I_N | D^- S]`` acting on ``u = (b, d)``."""
    return Composition(A, HorizontalConcat([Identity(N), build_synthesis(N, L)]))


def split(u, N: int):
    u = np.asarray(u, dtype=float)
    return u[:N], u[N:]


def reconstruct(b, d, N: int, L: int):
    """``x = b + D^- S(d)``."""
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    if b.shape[0] != N or d.shape[0] != L * (N - L):
        raise ValueError(
            f"expected b of length {N} and d of length {L * (N - L)}, "
            f"got {b.shape[0]} and {d.shape[0]}"
        )
    return b + build_synthesis(N, L).apply(d)


@dataclass(frozen=True)
class FusedProblemSpec:
    """Parameters of one fused-lasso-family problem.

    ``interval`` is the baseline knowledge (``b = alpha 1`` with ``alpha`` in
    it) and ``c2`` the set for the per-component sums ``Hd``.  Either may be
    left as ``None`` to take the variant's preset.  ``A=None`` means the
    identity (denoising).
    """

    N: int
    y: np.ndarray
    variant: str = "unified-convex"
    L: int | None = None
    mu1: float = 0.0
    mu2: float = 0.0
    A: LinearOperator | None = None
    interval: tuple | float | None = None
    c2: SimpleSet | None = None
    design: object = None
    mu: float = 1.0

    def resolved(self) -> "FusedProblemSpec":
        """Copy with variant presets filled in and parameters checked."""
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        N = int(self.N)
        if N < 2:
            raise ValueError("N must be at least 2")
        L, A, mu1, interval, c2 = self.L, self.A, self.mu1, self.interval, self.c2
        if self.variant == "fused-lasso":
            if L not in (None, N - 1):
                raise ValueError(f"fused-lasso uses L = N - 1 = {N - 1}, got L={L}")
            L = N - 1
            interval = 0.0 if interval is None else interval
            c2 = FullSpace(1) if c2 is None else c2
        else:
            if L is None:
                raise ValueError(f"variant {self.variant} needs a window length L")
            interval = REAL_LINE if interval is None else interval
            c2 = Singleton(np.zeros(N - L)) if c2 is None else c2
        if self.variant == "latent-fused-lasso":
            if A is not None and not isinstance(A, Identity):
                raise ValueError("latent-fused-lasso uses A = I")
            if mu1 != 0:
                raise ValueError("latent-fused-lasso uses mu1 = 0")
            A = Identity(N)
            mu1 = 0.0
        A = Identity(N) if A is None else A
        if A.domain_dim != N:
            raise ValueError(f"A acts on R^{A.domain_dim}, expected R^{N}")
        if not 1 <= L <= N - 1:
            raise ValueError(f"L must lie in [1, {N - 1}], got {L}")
        if c2.dim != N - L:
            raise ValueError(f"C_II must live in R^{N - L}, got R^{c2.dim}")
        if mu1 < 0 or self.mu2 < 0:
            raise ValueError("regularization weights must be nonnegative")
        if (self.design is not None) != (self.variant == "bivariate-gme"):
            raise ValueError("a GME design is required for bivariate-gme and only there")
        return FusedProblemSpec(
            N=N, y=self.y, variant=self.variant, L=int(L), mu1=float(mu1),
            mu2=float(self.mu2), A=A, interval=check_interval(interval), c2=c2,
            design=self.design, mu=self.mu,
        )

    @property
    def n_unknowns(self) -> int:
        return self.N + self.L * (self.N - self.L)


def _penalties(N: int, K: int):
    zero_diff = Indicator(Singleton(np.zeros(N - 1)))
    return (
        DirectSum([zero_diff, L1Norm(N)]),
        DirectSum([Indicator(Singleton(np.zeros(N - 1))), L1Norm(K)]),
    )


def build_model(spec: FusedProblemSpec) -> Model:
    """Turn a problem spec into a :class:`Model` on ``u = (b, d)``.

    Regularizer 1 is ``mu1 (iota_{0} + ||.||_1) o diag(D, D^- S)`` and
    regularizer 2 is ``mu2 (iota_{0} + ||.||_1) o diag(D, I)``; terms with a
    zero weight are dropped.  The baseline set is the early constraint (it
    only touches the ``b`` slice) and ``Hd in C_II`` the asymptotic one.
    """
    spec = spec.resolved()
    N, L = spec.N, spec.L
    K = L * (N - L)
    D = build_D(N)
    G = build_synthesis(N, L)
    A_sys = build_system_matrix(spec.A, N, L)
    psi1, psi2 = _penalties(N, K)
    L1op = BlockDiagonal([D, G])
    L2op = BlockDiagonal([D, Identity(K)])
    if spec.design is not None:
        B1, B2 = spec.design.B1, spec.design.B2
    else:
        B1, B2 = Zero(L1op.codomain_dim), Zero(L2op.codomain_dim)
    regs = []
    if spec.mu1 > 0:
        regs.append(Regularizer(spec.mu1, psi1, B1, L1op))
    if spec.mu2 > 0:
        regs.append(Regularizer(spec.mu2, psi2, B2, L2op))
    early = ProductSet([ConstantLine(N, spec.interval), FullSpace(K)])
    asym = []
    if not isinstance(spec.c2, FullSpace):
        E = HorizontalConcat([Zero(N, N - L), build_H(N, L)])
        asym.append(AsymptoticConstraint(E, spec.c2))
    lo, hi = spec.interval
    witness = np.zeros(N + K)
    witness[:N] = min(max(0.0, lo), hi)
    return Model(
        A=A_sys, y=spec.y, mu=spec.mu, regularizers=regs, early_set=early,
        asymptotic=asym, witness=witness,
    )


def fused_lasso_eq_model(y, mu1: float, mu2: float, A: LinearOperator | None = None) -> Model:
    """Plain fused lasso ``1/2||Ax - y||^2 + mu1 ||x||_1 + mu2 ||Dx||_1`` on ``x``."""
    y = np.asarray(y, dtype=float)
    A = Identity(y.shape[0]) if A is None else A
    N = A.domain_dim
    regs = []
    if mu1 > 0:
        regs.append(Regularizer(mu1, L1Norm(N), Zero(N), Identity(N)))
    if mu2 > 0:
        regs.append(Regularizer(mu2, L1Norm(N - 1), Zero(N - 1), FirstDifference(N)))
    return Model(A=A, y=y, regularizers=regs)


def fast_path_available(spec: FusedProblemSpec) -> bool:
    """Whether :func:`solve_fused` can use the compiled iteration for ``spec``."""
    spec = spec.resolved()
    if not isinstance(spec.A, (Identity, DenseMatrix)):
        return False
    if spec.design is not None and getattr(spec.design, "gram_coefficients", None) is None:
        return False
    return isinstance(spec.c2, (Singleton, Box, FullSpace))


def _c2_bounds(c2: SimpleSet, m: int):
    if isinstance(c2, Singleton):
        return c2.point.copy(), c2.point.copy()
    if isinstance(c2, Box):
        return c2.lower.copy(), c2.upper.copy()
    return np.full(m, -np.inf), np.full(m, np.inf)


def _unpack(flat, offs, model_has):
    use1, use2, has_c2 = model_has
    blk = [flat[offs[i]:offs[i + 1]] for i in range(len(offs) - 1)]
    x = np.concatenate([blk[0], blk[1]])
    v, w = [], []
    if use1:
        v.append(np.concatenate([blk[2], blk[3]]))
        w.append(np.concatenate([blk[4], blk[5]]))
    if use2:
        v.append(np.concatenate([blk[6], blk[7]]))
        w.append(np.concatenate([blk[8], blk[9]]))
    z = [blk[10].copy()] if has_c2 else []
    return x, v, w, z


def solve_fused(spec: FusedProblemSpec, stop: StoppingRule | None = None,
                kappa: float = 1.01, fast: bool | None = None) -> SolveResult:
    """Solve a fused-family problem, by the compiled iteration when possible.

    The compiled path runs the same fixed-point map as :func:`ligme.solver.solve`
    but each column of ``y`` stops on its own residual.  For a batch the
    returned trace is the one of the slowest column.  ``fast=None`` picks the
    compiled path whenever :func:`fast_path_available`; ``fast=False``
    forces the generic solver.
    """
    stop = stop or StoppingRule()
    spec = spec.resolved()
    model = build_model(spec)
    if fast is None:
        fast = fast_path_available(spec)
    if not fast:
        return solve(model, stop=stop, kappa=kappa)
    if not fast_path_available(spec):
        raise ValueError("this problem has no compiled fast path")
    from . import _fastpath

    steps = select_stepsizes(model, kappa=kappa)
    N, L = spec.N, spec.L
    m = N - L
    A = spec.A
    identity = isinstance(A, Identity)
    Amat = np.zeros((1, 1)) if identity else np.ascontiguousarray(A.matrix)
    g1, g2 = (0.0, 0.0) if spec.design is None else spec.design.gram_coefficients
    has_c2 = not isinstance(spec.c2, FullSpace)
    lower, upper = _c2_bounds(spec.c2, m)
    lo, hi = spec.interval
    offs = _fastpath.state_layout(N, L)
    y = np.asarray(spec.y, dtype=float)
    cols = y.reshape(y.shape[0], -1)
    n_rows = stop.max_iter // stop.stride + 2
    start = time.perf_counter()
    states, results = [], []
    for c in range(cols.shape[1]):
        h = np.zeros(int(offs[-1]))
        h[:N] = min(max(0.0, lo), hi)
        trace = np.zeros((n_rows, 4))
        k, res, n_trace = _fastpath.run(
            h, np.ascontiguousarray(cols[:, c]), Amat, identity, N, L, float(spec.mu),
            spec.mu1, spec.mu2, float(g1), float(g2), float(lo), float(hi), has_c2,
            lower, upper, steps.sigma, steps.tau, int(stop.max_iter), float(stop.rtol),
            int(stop.stride), trace,
        )
        states.append(h)
        results.append((int(k), float(res), trace[:n_trace]))
    wall = time.perf_counter() - start

    has = (spec.mu1 > 0, spec.mu2 > 0, has_c2)
    parts = [_unpack(h, offs, has) for h in states]
    if y.ndim == 1:
        x, v, w, z = parts[0]
    else:
        def stack(blocks):
            return np.stack(blocks, axis=-1).reshape(blocks[0].shape + y.shape[1:])

        x = stack([p[0] for p in parts])
        v = [stack([p[1][i] for p in parts]) for i in range(len(parts[0][1]))]
        w = [stack([p[2][i] for p in parts]) for i in range(len(parts[0][2]))]
        z = [stack([p[3][i] for p in parts]) for i in range(len(parts[0][3]))]
    slowest = max(range(len(results)), key=lambda c: results[c][0])
    n_iter, _, rows = results[slowest]
    trace = DiagnosticsTrace()
    for it, r, early, asym in rows:
        trace.record(it, r, early, asym)
    residual = max(r for _, r, _ in results)
    if not np.isfinite(residual):
        warnings.warn("iteration diverged (non-finite residual)", RuntimeWarning)
    return SolveResult(
        x=x, state=SolverState(x, v, w, z), trace=trace, n_iter=n_iter,
        converged=bool(residual < stop.rtol), residual=residual, steps=steps, wall_time=wall,
    )
