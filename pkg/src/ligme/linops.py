"""Matrix-free linear operators with adjoints.

Every operator acts on the leading axis of its argument, so a 2-D array of
shape ``(domain_dim, k)`` is treated as ``k`` stacked column vectors.  This is
what lets the solver run several independent right-hand sides at once.

Besides the generic algebra (dense matrices, identity, zero, block-diagonal,
horizontal concatenation, composition, adjoint, scaling) the module carries
the structured difference/summation operators used by the fused-lasso
models.  They are applied with ``numpy`` slicing instead of stored matrices.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "LinearOperator",
    "DenseMatrix",
    "Identity",
    "Zero",
    "BlockDiagonal",
    "HorizontalConcat",
    "Composition",
    "Adjoint",
    "Scaled",
    "FirstDifference",
    "CumulativeSum",
    "WindowEmbedding",
    "BlockSum",
    "Centering",
    "ConvergenceError",
    "apply",
    "adjoint_apply",
    "operator_norm",
    "restricted_min_eigenvalue",
]


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its budget.

    The last iterate's estimate is kept in :attr:`estimate`.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class LinearOperator:
    """Base class for a linear map ``R^domain_dim -> R^codomain_dim``.

    Subclasses implement ``_apply`` and ``_adjoint`` on arrays whose leading
    axis has already been checked.
    """

    kind = "abstract"

    def __init__(self, domain_dim: int, codomain_dim: int):
        domain_dim = int(domain_dim)
        codomain_dim = int(codomain_dim)
        if domain_dim < 1 or codomain_dim < 1:
            raise ValueError(
                f"operator dimensions must be positive, got "
                f"{codomain_dim}x{domain_dim}"
            )
        self.domain_dim = domain_dim
        self.codomain_dim = codomain_dim

    @property
    def shape(self) -> tuple[int, int]:
        return (self.codomain_dim, self.domain_dim)

    def __repr__(self):
        return f"<{type(self).__name__} {self.codomain_dim}x{self.domain_dim}>"

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[0] != self.domain_dim:
            raise ValueError(
                f"{type(self).__name__}: expected input with leading dimension "
                f"{self.domain_dim}, got shape {x.shape}"
            )
        return self._apply(x)

    def adjoint_apply(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim not in (1, 2) or y.shape[0] != self.codomain_dim:
            raise ValueError(
                f"{type(self).__name__} adjoint: expected input with leading "
                f"dimension {self.codomain_dim}, got shape {y.shape}"
            )
        return self._adjoint(y)

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, y):
        raise NotImplementedError

    @property
    def T(self) -> "LinearOperator":
        return Adjoint(self)

    def gram(self) -> "LinearOperator":
        """Return an operator equal to ``L^T L``."""
        return Composition(Adjoint(self), self)

    def materialize(self) -> np.ndarray:
        """Dense matrix of the operator.  Meant for verification code."""
        return self._apply(np.eye(self.domain_dim))

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return Composition(self, other)
        return self.apply(other)

    def __mul__(self, scalar):
        if isinstance(scalar, LinearOperator):
            return NotImplemented
        return Scaled(float(scalar), self)

    __rmul__ = __mul__

    def __neg__(self):
        return Scaled(-1.0, self)


class DenseMatrix(LinearOperator):
    kind = "dense-matrix"

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[None, :]
        if matrix.ndim != 2:
            raise ValueError("DenseMatrix expects a 2-D array")
        matrix.setflags(write=False)
        super().__init__(matrix.shape[1], matrix.shape[0])
        self.matrix = matrix

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y

    def gram(self):
        return DenseMatrix(self.matrix.T @ self.matrix)

    def materialize(self):
        return np.array(self.matrix)


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, dim: int):
        super().__init__(dim, dim)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()

    def gram(self):
        return self


class Zero(LinearOperator):
    kind = "zero"

    def __init__(self, domain_dim: int, codomain_dim: int | None = None):
        if codomain_dim is None:
            codomain_dim = domain_dim
        super().__init__(domain_dim, codomain_dim)

    def _apply(self, x):
        return np.zeros((self.codomain_dim,) + x.shape[1:])

    def _adjoint(self, y):
        return np.zeros((self.domain_dim,) + y.shape[1:])

    def gram(self):
        return Zero(self.domain_dim)


def _offsets(dims):
    return np.concatenate([[0], np.cumsum(dims)]).astype(int)


class BlockDiagonal(LinearOperator):
    kind = "block-diagonal"

    def __init__(self, blocks: Sequence[LinearOperator]):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("BlockDiagonal needs at least one block")
        self.blocks = blocks
        self._in = _offsets([b.domain_dim for b in blocks])
        self._out = _offsets([b.codomain_dim for b in blocks])
        super().__init__(self._in[-1], self._out[-1])

    def _apply(self, x):
        return np.concatenate(
            [
                b._apply(x[self._in[k] : self._in[k + 1]])
                for k, b in enumerate(self.blocks)
            ]
        )

    def _adjoint(self, y):
        return np.concatenate(
            [
                b._adjoint(y[self._out[k] : self._out[k + 1]])
                for k, b in enumerate(self.blocks)
            ]
        )

    def gram(self):
        return BlockDiagonal([b.gram() for b in self.blocks])


class HorizontalConcat(LinearOperator):
    """``[L_1 | L_2 | ...]`` acting on a stacked input."""

    kind = "horizontal-concat"

    def __init__(self, blocks: Sequence[LinearOperator]):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("HorizontalConcat needs at least one block")
        codims = {b.codomain_dim for b in blocks}
        if len(codims) != 1:
            raise ValueError(
                f"HorizontalConcat blocks must share a codomain, got {sorted(codims)}"
            )
        self.blocks = blocks
        self._in = _offsets([b.domain_dim for b in blocks])
        super().__init__(self._in[-1], codims.pop())

    def _apply(self, x):
        out = None
        for k, b in enumerate(self.blocks):
            if isinstance(b, Zero):
                continue
            part = b._apply(x[self._in[k] : self._in[k + 1]])
            out = part if out is None else out + part
        if out is None:
            out = np.zeros((self.codomain_dim,) + x.shape[1:])
        return out

    def _adjoint(self, y):
        return np.concatenate([b._adjoint(y) for b in self.blocks])


class Composition(LinearOperator):
    """``outer o inner``."""

    kind = "composition"

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if outer.domain_dim != inner.codomain_dim:
            raise ValueError(
                f"cannot compose {outer!r} after {inner!r}: "
                f"{outer.domain_dim} != {inner.codomain_dim}"
            )
        self.outer = outer
        self.inner = inner
        super().__init__(inner.domain_dim, outer.codomain_dim)

    def _apply(self, x):
        return self.outer._apply(self.inner._apply(x))

    def _adjoint(self, y):
        return self.inner._adjoint(self.outer._adjoint(y))


class Adjoint(LinearOperator):
    kind = "adjoint"

    def __init__(self, inner: LinearOperator):
        self.inner = inner
        super().__init__(inner.codomain_dim, inner.domain_dim)

    def _apply(self, x):
        return self.inner._adjoint(x)

    def _adjoint(self, y):
        return self.inner._apply(y)

    @property
    def T(self):
        return self.inner


class Scaled(LinearOperator):
    kind = "scaled"

    def __init__(self, scalar: float, inner: LinearOperator):
        self.scalar = float(scalar)
        self.inner = inner
        super().__init__(inner.domain_dim, inner.codomain_dim)

    def _apply(self, x):
        return self.scalar * self.inner._apply(x)

    def _adjoint(self, y):
        return self.scalar * self.inner._adjoint(y)

    def gram(self):
        return Scaled(self.scalar**2, self.inner.gram())


# -- structured operators ---------------------------------------------------


class FirstDifference(LinearOperator):
    """``(Dx)_k = x_{k+1} - x_k``, an ``(n-1) x n`` map."""

    kind = "first-difference"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError(f"first difference needs n >= 2, got {n}")
        super().__init__(n, n - 1)

    def _apply(self, x):
        return x[1:] - x[:-1]

    def _adjoint(self, y):
        pad = np.zeros((1,) + y.shape[1:])
        return np.concatenate([pad, y]) - np.concatenate([y, pad])


class CumulativeSum(LinearOperator):
    """``n x (n-1)`` map with ``(D^- u)_k = sum_{j<k} u_j`` (zero first row)."""

    kind = "cumulative-sum"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError(f"cumulative sum needs n >= 2, got {n}")
        super().__init__(n - 1, n)

    def _apply(self, x):
        pad = np.zeros((1,) + x.shape[1:])
        return np.concatenate([pad, np.cumsum(x, axis=0)])

    def _adjoint(self, y):
        return np.cumsum(y[:0:-1], axis=0)[::-1]


class WindowEmbedding(LinearOperator):
    """Overlapping sliding-window synthesis ``R^{L(n-L)} -> R^{n-1}``.

    Component ``j`` (a length-``L`` slice of the input) is added into output
    rows ``j, ..., j+L-1``.  ``n`` is the signal length, so the output lives
    in the space of first differences.
    """

    kind = "window-embedding"

    def __init__(self, n: int, window: int):
        if not 1 <= window <= n - 1:
            raise ValueError(f"window length must be in [1, {n - 1}], got {window}")
        self.n = int(n)
        self.window = int(window)
        self.n_components = self.n - self.window
        super().__init__(self.window * self.n_components, self.n - 1)

    def _apply(self, x):
        L, m = self.window, self.n_components
        blocks = x.reshape((m, L) + x.shape[1:])
        out = np.zeros((self.n - 1,) + x.shape[1:])
        if L <= m:
            for t in range(L):
                out[t : t + m] += blocks[:, t]
        else:
            for j in range(m):
                out[j : j + L] += blocks[j]
        return out

    def _adjoint(self, y):
        # windows[j, ..., t] = y[j + t]
        windows = sliding_window_view(y, self.window, axis=0)
        windows = np.moveaxis(windows, -1, 1)
        return windows.reshape((self.domain_dim,) + y.shape[1:])


class BlockSum(LinearOperator):
    """Sums of consecutive length-``L`` blocks: ``(Hd)_j = 1^T d_j``."""

    kind = "block-sum"

    def __init__(self, n_blocks: int, block: int):
        if n_blocks < 1 or block < 1:
            raise ValueError("block sum needs positive sizes")
        self.n_blocks = int(n_blocks)
        self.block = int(block)
        super().__init__(self.n_blocks * self.block, self.n_blocks)

    def _apply(self, x):
        return x.reshape((self.n_blocks, self.block) + x.shape[1:]).sum(axis=1)

    def _adjoint(self, y):
        return np.repeat(y, self.block, axis=0)


class Centering(LinearOperator):
    """Orthogonal projector ``I - (1/n) 1 1^T`` onto mean-zero vectors."""

    kind = "centering"

    def __init__(self, n: int):
        super().__init__(n, n)

    def _apply(self, x):
        return x - x.mean(axis=0)

    _adjoint = _apply

    def gram(self):
        return self


# -- functional interface -----------------------------------------------------


def apply(op: LinearOperator, x):
    return op.apply(x)


def adjoint_apply(op: LinearOperator, y):
    return op.adjoint_apply(y)


def _harmonic_start(n):
    v = 1.0 / np.arange(1, n + 1)
    return v / np.linalg.norm(v)


def operator_norm(op: LinearOperator, tol: float = 1e-10, max_iter: int = 10000) -> float:
    """Spectral norm by power iteration on ``op^T op``.

    The start vector is ``(1, 1/2, 1/3, ...)`` normalized, so the estimate is
    reproducible.  Iteration stops once the Rayleigh quotient changes by less
    than ``tol`` relative to its value.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = _harmonic_start(op.domain_dim)
    q_old = None
    for _ in range(max_iter):
        u = op._adjoint(op._apply(x))
        q = float(x @ u)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        x = u / nu
        if q_old is not None and abs(q - q_old) <= tol * abs(q):
            return float(np.sqrt(max(q, 0.0)))
        q_old = q
    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} iterations",
        estimate=float(np.sqrt(max(q_old or 0.0, 0.0))),
    )


def restricted_min_eigenvalue(Q, basis=None, sym_tol: float = 1e-10) -> float:
    """Smallest eigenvalue of ``Q`` restricted to ``span(basis)``.

    ``Q`` is a square self-adjoint operator or array.  ``basis`` is a list of
    vectors, or a 2-D array whose columns span the subspace; ``None`` or an
    empty list means the full space.
    """
    Qm = Q.materialize() if isinstance(Q, LinearOperator) else np.asarray(Q, float)
    if Qm.ndim != 2 or Qm.shape[0] != Qm.shape[1]:
        raise ValueError(f"Q must be square, got shape {Qm.shape}")
    scale = max(1.0, float(np.abs(Qm).max(initial=0.0)))
    if np.abs(Qm - Qm.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("Q is not symmetric")
    Qm = 0.5 * (Qm + Qm.T)
    if basis is None or len(basis) == 0:
        return float(np.linalg.eigvalsh(Qm)[0])
    if isinstance(basis, np.ndarray) and basis.ndim == 2:
        M = np.asarray(basis, float)
    else:
        M = np.column_stack([np.asarray(b, float) for b in basis])
    if M.shape[0] != Qm.shape[0]:
        raise ValueError(
            f"basis vectors have length {M.shape[0]}, Q acts on {Qm.shape[0]}"
        )
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[-1] <= s[0] * max(M.shape) * np.finfo(float).eps:
        raise ValueError("basis is rank deficient")
    R = U.T @ Qm @ U
    return float(np.linalg.eigvalsh(0.5 * (R + R.T))[0])
