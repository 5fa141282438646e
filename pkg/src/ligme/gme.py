"""Generalized Moreau enhancement (GME) of prox-friendly penalties.

For a convex ``Psi`` and a GME matrix ``B``::

    Psi_B(z) = Psi(z) - min_v [ Psi(v) + 1/2 ||B (z - v)||^2 ]

``Psi_B`` is nonconvex for nonzero ``B``; the overall cost stays convex when
``A^T A - mu sum_i mu_i L_i^T B_i^T B_i L_i`` is positive semidefinite, which
is what the certifier here checks, optionally on a subspace only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .linops import (
    BlockDiagonal,
    Centering,
    Composition,
    ConvergenceError,
    DenseMatrix,
    HorizontalConcat,
    Identity,
    LinearOperator,
    Scaled,
    Zero,
    operator_norm,
    restricted_min_eigenvalue,
)
from .prox import L1Norm, ProxFunction

__all__ = [
    "GmePenalty",
    "GmeDesign",
    "DesignError",
    "gme_eval",
    "verify_overall_convexity",
    "design_gme_direct",
    "design_gme_bivariate",
    "bivariate_subspace_basis",
    "gme_penalty_restriction_check",
    "CERTIFICATE_TOL",
]

CERTIFICATE_TOL = 1e-8


class DesignError(RuntimeError):
    """No certified design could be produced for the given parameters."""


@dataclass(frozen=True)
class GmePenalty:
    base: ProxFunction
    B: LinearOperator

    def __post_init__(self):
        if self.B.domain_dim != self.base.dim:
            raise ValueError(
                f"GME matrix acts on R^{self.B.domain_dim}, penalty on R^{self.base.dim}"
            )

    def __call__(self, z, inner_tol: float = 1e-12):
        return gme_eval(self, z, inner_tol=inner_tol)


def _inner_minimize(base, BtB, z, lip, inner_tol, max_iter, window=50):
    """Accelerated proximal gradient for ``min_v Psi(v) + 1/2||B(z - v)||^2``.

    Uses adaptive (function-value) restart.  Stops when the objective has
    decreased by less than ``inner_tol`` over the last ``window`` iterations.
    """

    def f(v):
        r = v - z
        return base._value(v) + 0.5 * (r * BtB._apply(r)).sum(axis=0)

    t = 1.0 / lip
    v = base._prox(z, 0.0)
    u = v.copy()
    theta = 1.0
    best = f(v)
    history = [best]
    for k in range(max_iter):
        v_new = base._prox(u - t * BtB._apply(u - z), t)
        f_new = f(v_new)
        if np.any(f_new > history[-1]):
            # restart momentum
            theta = 1.0
            u = v.copy()
            v_new = base._prox(u - t * BtB._apply(u - z), t)
            f_new = f(v_new)
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        u = v_new + ((theta - 1.0) / theta_new) * (v_new - v)
        v, theta = v_new, theta_new
        history.append(f_new)
        if len(history) > window and np.all(history[-window - 1] - f_new <= inner_tol):
            return v, f_new
    raise ConvergenceError(
        f"inner minimization did not settle to {inner_tol} in {max_iter} steps",
        estimate=history[-1],
    )


def gme_eval(p: GmePenalty, z, inner_tol: float = 1e-12, max_iter: int = 200000,
             return_minimizer: bool = False):
    """Value of ``Psi_B(z)`` via an inner accelerated proximal-gradient solve.

    Meant for tests and objective reporting.  ``z`` must make ``Psi(z)``
    finite.  A 2-D ``z`` is evaluated column by column in one batched solve.
    """
    if not inner_tol > 0:
        raise ValueError("inner_tol must be positive")
    z = np.asarray(z, dtype=float)
    psi_z = p.base(z)
    if np.any(~np.isfinite(psi_z)):
        raise ValueError("Psi(z) is not finite; z violates an indicator block")
    BtB = p.B.gram()
    if isinstance(BtB, Zero):
        # inner term is min Psi = 0 for the penalties in scope
        v = p.base._prox(np.zeros_like(z), 0.0)
        val = psi_z - p.base._value(v)
        return (val, v) if return_minimizer else val
    lip = operator_norm(p.B) ** 2
    if lip == 0.0:
        v = p.base._prox(np.zeros_like(z), 0.0)
        val = psi_z - p.base._value(v)
        return (val, v) if return_minimizer else val
    v, inner = _inner_minimize(p.base, BtB, z, lip, inner_tol, max_iter)
    val = psi_z - inner
    if return_minimizer:
        return val, v
    return val if np.ndim(val) else float(val)


def _overall_quadratic(A: LinearOperator, terms, mu: float) -> np.ndarray:
    """Dense ``A^T A - mu sum mu_i L_i^T B_i^T B_i L_i``."""
    Q = A.gram().materialize()
    for weight, B, L in terms:
        if isinstance(B, Zero):
            continue
        BL = Composition(B, L).materialize()
        Q -= mu * weight * (BL.T @ BL)
    return 0.5 * (Q + Q.T)


def verify_overall_convexity(A: LinearOperator, terms, mu: float = 1.0,
                             subspace_basis=None) -> float:
    """Restricted minimum eigenvalue of the overall quadratic.

    ``terms`` is a sequence of ``(mu_i, B_i, L_i)``.  A return value of at
    least ``-CERTIFICATE_TOL`` certifies convexity on ``span(subspace_basis)``
    (the full space when no basis is given).
    """
    for weight, B, L in terms:
        if L.domain_dim != A.domain_dim or B.domain_dim != L.codomain_dim:
            raise ValueError("dimension mismatch between A, L_i and B_i")
    Q = _overall_quadratic(A, terms, mu)
    return restricted_min_eigenvalue(Q, subspace_basis, sym_tol=1e-8)


def design_gme_direct(A: LinearOperator, mu: float, mu1: float, theta: float = 0.99) -> LinearOperator:
    """GMC-type matrix ``B = sqrt(theta / (mu mu1)) A`` for ``L = I``."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if not (mu > 0 and mu1 > 0):
        raise ValueError("mu and mu1 must be positive")
    return Scaled(math.sqrt(theta / (mu * mu1)), A)


@dataclass(frozen=True)
class GmeDesign:
    """Certified pair of GME matrices for the bivariate fused-lasso model.

    Both matrices have a zero left block (acting on ``Db``) and the given
    right block.  ``certificate`` is the restricted minimum eigenvalue of
    the overall quadratic, ``scale`` the backtracking factor that was needed.
    ``weights`` records the ``(mu, mu1, mu2)`` the design was built for.
    """

    B1: LinearOperator
    B2: LinearOperator
    theta: float
    omega1: float
    omega2: float
    certificate: float
    scale: float
    weights: tuple
    N: int
    L: int
    # (g1, g2) with B_i^T B_i = g_i * (0 (+) P A^T A P) resp. (0 (+) G^T P A^T A P G);
    # None when the matrices came from elsewhere (e.g. a loaded file)
    gram_coefficients: tuple | None = None

    @property
    def right_blocks(self):
        return tuple(
            B.blocks[-1] if isinstance(B, HorizontalConcat) else None
            for B in (self.B1, self.B2)
        )

    def to_dict(self) -> dict:
        r1, r2 = self.right_blocks
        return {
            "N": self.N,
            "L": self.L,
            "theta": self.theta,
            "omega": [self.omega1, self.omega2],
            "mu": self.weights[0],
            "mu1": self.weights[1],
            "mu2": self.weights[2],
            "scale": self.scale,
            "certificate": self.certificate,
            "B1": {
                "shape": list(self.B1.shape),
                "left_cols": self.N - 1,
                "right": None if r1 is None else r1.materialize().tolist(),
            },
            "B2": {
                "shape": list(self.B2.shape),
                "left_cols": self.N - 1,
                "right": None if r2 is None else r2.materialize().tolist(),
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "GmeDesign":
        N, L = int(data["N"]), int(data["L"])
        K = L * (N - L)
        mats = []
        for key, right_dim in (("B1", N), ("B2", K)):
            entry = data[key]
            if entry["right"] is None:
                mats.append(Zero(N - 1 + right_dim))
            else:
                right = DenseMatrix(np.asarray(entry["right"], dtype=float))
                mats.append(HorizontalConcat([Zero(N - 1, right.codomain_dim), right]))
        return cls(
            B1=mats[0], B2=mats[1], theta=float(data["theta"]),
            omega1=float(data["omega"][0]), omega2=float(data["omega"][1]),
            certificate=float(data["certificate"]), scale=float(data["scale"]),
            weights=(float(data["mu"]), float(data["mu1"]), float(data["mu2"])), N=N, L=L,
        )


def bivariate_subspace_basis(N: int, K: int) -> np.ndarray:
    """Columns spanning ``{(alpha 1_N, d)}``, where ``Db = 0``."""
    basis = np.zeros((N + K, K + 1))
    basis[:N, 0] = 1.0
    basis[N:, 1:] = np.eye(K)
    return basis


def _sym_sqrt(M):
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def design_gme_bivariate(A: LinearOperator, D: LinearOperator, G: LinearOperator,
                         mu: float, mu1: float, mu2: float, theta: float = 0.99,
                         omega1: float = 0.5, omega2: float = 0.5,
                         factor: str = "sqrt", max_halvings: int = 40) -> GmeDesign:
    """Design ``(B1, B2)`` for the bivariate model and certify them.

    With ``P`` the centering projector, the right blocks are
    ``sqrt(theta w1/(mu mu1)) A P`` (on the ``D^- S d`` slice) and
    ``sqrt(theta w2/(mu mu2)) F`` with ``F^T F = G^T P A^T A P G``.
    ``factor="sqrt"`` takes ``F`` as the dense symmetric square root,
    ``factor="direct"`` uses the matrix-free factor ``A P G`` (same Gram
    matrix, hence the same model).  A global scale on both matrices is halved
    until convexity is certified on :func:`bivariate_subspace_basis`.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if omega1 < 0 or omega2 < 0 or omega1 + omega2 > 1 + 1e-12:
        raise ValueError("omega weights must be nonnegative with omega1 + omega2 <= 1")
    if mu1 < 0 or mu2 < 0 or not mu > 0:
        raise ValueError("weights must be nonnegative and mu positive")
    if factor not in ("sqrt", "direct"):
        raise ValueError("factor must be 'sqrt' or 'direct'")
    N = A.domain_dim
    K = G.domain_dim
    if D.shape != (N - 1, N) or G.codomain_dim != N:
        raise ValueError("D must be (N-1) x N and G must map into R^N")
    window = getattr(getattr(G, "inner", None), "window", None) or _window(N, K)
    P = Centering(N)
    use1 = omega1 > 0 and mu1 > 0
    use2 = omega2 > 0 and mu2 > 0
    right1 = Composition(A, P) if use1 else None
    right2 = None
    if use2:
        APG = Composition(A, Composition(P, G))
        right2 = DenseMatrix(_sym_sqrt(APG.gram().materialize())) if factor == "sqrt" else APG
    c1 = math.sqrt(theta * omega1 / (mu * mu1)) if use1 else 0.0
    c2 = math.sqrt(theta * omega2 / (mu * mu2)) if use2 else 0.0

    A_sys = Composition(A, HorizontalConcat([Identity(N), G]))
    L1 = BlockDiagonal([D, G])
    L2 = BlockDiagonal([D, Identity(K)])
    basis = bivariate_subspace_basis(N, K)

    def assemble(scale):
        B1 = (HorizontalConcat([Zero(N - 1, right1.codomain_dim), Scaled(scale * c1, right1)])
              if use1 else Zero(2 * N - 1))
        B2 = (HorizontalConcat([Zero(N - 1, right2.codomain_dim), Scaled(scale * c2, right2)])
              if use2 else Zero(N - 1 + K))
        return B1, B2

    scale = 1.0
    for _ in range(max_halvings + 1):
        B1, B2 = assemble(scale)
        terms = []
        if mu1 > 0:
            terms.append((mu1, B1, L1))
        if mu2 > 0:
            terms.append((mu2, B2, L2))
        cert = verify_overall_convexity(A_sys, terms, mu, basis)
        if cert >= -CERTIFICATE_TOL:
            return GmeDesign(
                B1=B1, B2=B2, theta=float(theta), omega1=float(omega1),
                omega2=float(omega2), certificate=float(cert), scale=scale,
                weights=(float(mu), float(mu1), float(mu2)), N=N, L=window,
                gram_coefficients=((scale * c1) ** 2, (scale * c2) ** 2),
            )
        scale *= 0.5
    raise DesignError(
        f"no certified design after {max_halvings} halvings (last certificate {cert:.3e})"
    )


def _window(N, K):
    # K = L (N - L); the smaller root is the window length
    disc = N * N - 4 * K
    L = int(round((N - math.sqrt(max(disc, 0))) / 2))
    if L * (N - L) != K:
        L = N - L
    return L


def gme_penalty_restriction_check(B2: LinearOperator, b, d, inner_tol: float = 1e-13):
    """Evaluate ``(iota_{0} + ||.||_1)_{B2}(Db, d)`` and ``(||.||_1)_{B2_ri}(d)``.

    ``B2`` must be a horizontal concatenation ``[left | right]`` (or zero);
    ``b`` must be constant.  The two numbers coincide for every ``d``.
    """
    from .prox import DirectSum, Indicator, Singleton
    from .linops import FirstDifference

    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    if b.ndim != 1 or np.ptp(b) > 1e-12 * (1.0 + np.abs(b).max()):
        raise ValueError("b must be a constant vector")
    N = b.size
    Db = FirstDifference(N).apply(b)
    if isinstance(B2, Zero):
        right = Zero(d.size)
    elif isinstance(B2, HorizontalConcat) and B2.blocks[0].domain_dim == N - 1:
        right = B2.blocks[-1]
    else:
        raise ValueError("B2 must be [left | right] with a left block on R^(N-1)")
    full = GmePenalty(DirectSum([Indicator(Singleton(np.zeros(N - 1))), L1Norm(d.size)]), B2)
    restricted = GmePenalty(L1Norm(d.size), right)
    first = gme_eval(full, np.concatenate([Db, d]), inner_tol=inner_tol)
    second = gme_eval(restricted, d, inner_tol=inner_tol)
    return float(first), float(second)
