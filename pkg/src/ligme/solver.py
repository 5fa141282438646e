"""Fixed-point solver for LiGME models with early and asymptotic constraints.

The model is::

    minimize_{x in C0, E_j x in C_j}
        1/2 ||y - A x||^2 + mu * sum_i mu_i * (Psi_i)_{B_i}(L_i x)

where ``(Psi)_B`` is the generalized Moreau enhancement of ``Psi``.  The set
``C0`` is enforced at every iterate by a projection ("early" constraint);
the split-feasibility constraints ``E_j x in C_j`` only hold in the limit
("asymptotic" constraints).

The iteration works on the product-space state ``h = (x, v, w, z)`` and
applies one fixed map per step, see :func:`t_ea_apply`.  ``y`` may be a 2-D
array, in which case every column is an independent problem sharing the
operators; all state blocks then carry the same trailing axis.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linops import LinearOperator, Zero, operator_norm, restricted_min_eigenvalue
from .prox import FullSpace, ProxFunction, SimpleSet

__all__ = [
    "Regularizer",
    "AsymptoticConstraint",
    "Model",
    "SolverState",
    "StepSizes",
    "StoppingRule",
    "DiagnosticsTrace",
    "SolveResult",
    "select_stepsizes",
    "t_ea_apply",
    "solve",
    "objective",
    "initial_state",
]

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "fp_residual", "early_violation", "max_asym_residual", "objective")


@dataclass(frozen=True)
class Regularizer:
    """One term ``mu_i * (Psi_i)_{B_i} o L_i``."""

    weight: float
    penalty: ProxFunction
    gme_matrix: LinearOperator
    operator: LinearOperator

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"regularizer weight must be positive, got {self.weight}")
        if self.operator.codomain_dim != self.penalty.dim:
            raise ValueError(
                f"L_i maps into R^{self.operator.codomain_dim} but Psi_i lives on "
                f"R^{self.penalty.dim}"
            )
        if self.gme_matrix.domain_dim != self.penalty.dim:
            raise ValueError(
                f"GME matrix acts on R^{self.gme_matrix.domain_dim}, expected "
                f"R^{self.penalty.dim}"
            )


@dataclass(frozen=True)
class AsymptoticConstraint:
    """``operator @ x in set``, reached in the limit of the iteration."""

    operator: LinearOperator
    set: SimpleSet

    def __post_init__(self):
        if self.operator.codomain_dim != self.set.dim:
            raise ValueError(
                f"constraint operator maps into R^{self.operator.codomain_dim}, "
                f"set lives in R^{self.set.dim}"
            )


@dataclass(frozen=True)
class Model:
    A: LinearOperator
    y: np.ndarray
    mu: float = 1.0
    regularizers: Sequence[Regularizer] = ()
    early_set: SimpleSet | None = None
    asymptotic: Sequence[AsymptoticConstraint] = ()
    witness: np.ndarray | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim not in (1, 2) or y.shape[0] != self.A.codomain_dim:
            raise ValueError(
                f"y has shape {y.shape}, A maps into R^{self.A.codomain_dim}"
            )
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        object.__setattr__(self, "regularizers", tuple(self.regularizers))
        object.__setattr__(self, "asymptotic", tuple(self.asymptotic))
        n = self.A.domain_dim
        if self.early_set is None:
            object.__setattr__(self, "early_set", FullSpace(n))
        elif self.early_set.dim != n:
            raise ValueError(f"early set lives in R^{self.early_set.dim}, x in R^{n}")
        for r in self.regularizers:
            if r.operator.domain_dim != n:
                raise ValueError(f"L_i acts on R^{r.operator.domain_dim}, x in R^{n}")
        for c in self.asymptotic:
            if c.operator.domain_dim != n:
                raise ValueError(
                    f"constraint operator acts on R^{c.operator.domain_dim}, x in R^{n}"
                )
        if self.witness is not None:
            wit = np.asarray(self.witness, dtype=float)
            if not self.is_feasible(wit, atol=1e-8):
                raise ValueError("witness point violates the constraints")

    @property
    def dim(self) -> int:
        return self.A.domain_dim

    @property
    def batch_shape(self) -> tuple:
        return self.y.shape[1:]

    def is_feasible(self, x, atol: float = 1e-8) -> bool:
        x = np.asarray(x, dtype=float)
        if not self.early_set.contains(x, atol):
            return False
        return all(c.set.contains(c.operator.apply(x), atol) for c in self.asymptotic)


@dataclass
class SolverState:
    x: np.ndarray
    v: list
    w: list
    z: list

    def blocks(self):
        return [self.x, *self.v, *self.w, *self.z]

    def copy(self) -> "SolverState":
        return SolverState(
            self.x.copy(), [a.copy() for a in self.v], [a.copy() for a in self.w],
            [a.copy() for a in self.z],
        )

    def sq_norm(self):
        """Squared product-space norm (per column for batched states)."""
        return sum((b * b).sum(axis=0) for b in self.blocks())

    def distance(self, other: "SolverState"):
        return np.sqrt(
            sum(((a - b) ** 2).sum(axis=0) for a, b in zip(self.blocks(), other.blocks()))
        )


@dataclass(frozen=True)
class StepSizes:
    sigma: float
    tau: float
    kappa: float


def _sigma_operator(model: Model, kappa: float):
    """The self-adjoint operator bounded by ``sigma`` in the step condition."""
    mu = model.mu
    A = model.A
    grams = [r.operator.gram() for r in model.regularizers]
    grams += [c.operator.gram() for c in model.asymptotic]
    Ag = A.gram()

    class _S(LinearOperator):
        kind = "sum"

        def _apply(self, x):
            out = 0.5 * kappa * Ag._apply(x)
            for g in grams:
                out = out + mu * g._apply(x)
            return out

        _adjoint = _apply

    return _S(A.domain_dim, A.domain_dim)


def select_stepsizes(model: Model, kappa: float = 1.01, verify: bool = True,
                     dense_check_limit: int = 3000) -> StepSizes:
    """Step sizes by the closed-form recipe.

    ``sigma = ||(kappa/2) A^T A + mu sum L_i^T L_i + mu sum E_j^T E_j|| + kappa - 1``
    and ``tau = mu (kappa/2 + 2/kappa) max_i mu_i ||B_i||^2 + kappa - 1``.
    With ``verify`` the positivity of ``sigma I - S`` is re-checked with a
    dense eigensolve when the problem has at most ``dense_check_limit``
    unknowns, otherwise by a second power iteration.
    """
    if not kappa > 1:
        raise ValueError(f"kappa must exceed 1, got {kappa}")
    S = _sigma_operator(model, kappa)
    sigma = operator_norm(S) + (kappa - 1.0)
    bnorms = [operator_norm(r.gme_matrix) ** 2 * r.weight for r in model.regularizers]
    tau_min = model.mu * (0.5 * kappa + 2.0 / kappa) * max(bnorms, default=0.0)
    tau = tau_min + (kappa - 1.0)
    if verify:
        if model.dim <= dense_check_limit:
            lam = restricted_min_eigenvalue(sigma * np.eye(model.dim) - S.materialize(),
                                            sym_tol=1e-8)
        else:
            lam = sigma - operator_norm(S, tol=1e-12, max_iter=100000)
        if not lam > 0:
            raise ValueError(
                f"step size check failed: sigma I - S has min eigenvalue {lam:.3e}"
            )
        if tau < tau_min:
            raise ValueError("step size check failed for tau")
    return StepSizes(sigma=float(sigma), tau=float(tau), kappa=float(kappa))


class _EAMap:
    """One application of the fixed-point map with cached operator products."""

    def __init__(self, model: Model, steps: StepSizes):
        self.model = model
        self.steps = steps
        self.A = model.A
        self.Aty = model.A.adjoint_apply(model.y)
        self.Ag = model.A.gram()
        regs = model.regularizers
        self.L = [r.operator for r in regs]
        self.BtB = [r.gme_matrix.gram() for r in regs]
        self.has_B = [not isinstance(g, Zero) for g in self.BtB]
        self.psi = [r.penalty for r in regs]
        self.mu_i = [r.weight for r in regs]
        self.E = [c.operator for c in model.asymptotic]
        self.C = [c.set for c in model.asymptotic]
        self.C0 = model.early_set

    def __call__(self, h: SolverState, Lx=None):
        """Return ``(T(h), [L_i xi])``; ``Lx`` may pass cached ``L_i x``."""
        m = self.model
        mu = m.mu
        sigma, tau = self.steps.sigma, self.steps.tau
        x = h.x
        if Lx is None:
            Lx = [L._apply(x) for L in self.L]
        Ex = [E._apply(x) for E in self.E]

        grad = self.Ag._apply(x) - self.Aty
        for i, L in enumerate(self.L):
            dual = h.w[i]
            if self.has_B[i]:
                dual = dual + self.mu_i[i] * self.BtB[i]._apply(h.v[i] - Lx[i])
            grad = grad + mu * L._adjoint(dual)
        for j, E in enumerate(self.E):
            grad = grad + mu * E._adjoint(h.z[j])
        xi = self.C0._project(x - grad / sigma)

        Lxi = [L._apply(xi) for L in self.L]
        zeta, eta = [], []
        for i in range(len(self.L)):
            step = mu * self.mu_i[i] / tau
            reflected = 2.0 * Lxi[i] - Lx[i]
            arg = h.v[i]
            if self.has_B[i]:
                arg = arg + step * self.BtB[i]._apply(reflected - h.v[i])
            zeta.append(self.psi[i]._prox(arg, step))
            r = reflected + h.w[i]
            eta.append(r - self.psi[i]._prox(r, self.mu_i[i]))
        varsigma = []
        for j, E in enumerate(self.E):
            s = 2.0 * E._apply(xi) - Ex[j] + h.z[j]
            varsigma.append(s - self.C[j]._project(s))
        return SolverState(xi, zeta, eta, varsigma), Lxi


def initial_state(model: Model) -> SolverState:
    """All-zero state with ``x0 = P_C0(0)``."""
    tail = model.batch_shape
    x0 = model.early_set.project(np.zeros((model.dim,) + tail))
    v = [np.zeros((r.penalty.dim,) + tail) for r in model.regularizers]
    w = [np.zeros((r.penalty.dim,) + tail) for r in model.regularizers]
    z = [np.zeros((c.set.dim,) + tail) for c in model.asymptotic]
    return SolverState(x0, v, w, z)


def _check_state(model: Model, h: SolverState):
    tail = model.batch_shape
    expect = [(model.dim,) + tail]
    expect += [(r.penalty.dim,) + tail for r in model.regularizers] * 2
    expect += [(c.set.dim,) + tail for c in model.asymptotic]
    got = [np.shape(b) for b in h.blocks()]
    if len(h.v) != len(model.regularizers) or len(h.w) != len(model.regularizers) \
            or len(h.z) != len(model.asymptotic) or got != expect:
        raise ValueError(f"state block shapes {got} do not match model {expect}")


def t_ea_apply(model: Model, steps: StepSizes, h: SolverState) -> SolverState:
    """One step ``h -> T(h)`` of the fixed-point iteration.

    ``xi`` is computed first, then every ``zeta_i``, ``eta_i`` and
    ``varsigma_j`` from ``xi`` and the old state.
    """
    _check_state(model, h)
    h = SolverState(
        np.asarray(h.x, float), [np.asarray(a, float) for a in h.v],
        [np.asarray(a, float) for a in h.w], [np.asarray(a, float) for a in h.z],
    )
    new, _ = _EAMap(model, steps)(h)
    return new


@dataclass
class StoppingRule:
    """Stop after ``max_iter`` steps or once the relative residual
    ``||h_{k+1} - h_k|| / (1 + ||h_k||)`` drops below ``rtol``.

    Diagnostics are recorded every ``stride`` iterations; the objective only
    when ``objective`` is set, since it needs inner minimizations.
    """

    max_iter: int = 50000
    rtol: float = 1e-10
    stride: int = 1000
    objective: bool = False
    objective_tol: float = 1e-12


@dataclass
class DiagnosticsTrace:
    iters: list = field(default_factory=list)
    fp_residual: list = field(default_factory=list)
    early_violation: list = field(default_factory=list)
    max_asym_residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    def record(self, k, res, early, asym, obj=None):
        self.iters.append(int(k))
        self.fp_residual.append(float(res))
        self.early_violation.append(float(early))
        self.max_asym_residual.append(float(asym))
        self.objective.append(None if obj is None else float(obj))

    def rows(self):
        return zip(self.iters, self.fp_residual, self.early_violation,
                   self.max_asym_residual, self.objective)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for k, res, early, asym, obj in self.rows():
                writer.writerow([k, f"{res:.17g}", f"{early:.17g}", f"{asym:.17g}",
                                 "" if obj is None else f"{obj:.17g}"])


@dataclass
class SolveResult:
    x: np.ndarray
    state: SolverState
    trace: DiagnosticsTrace
    n_iter: int
    converged: bool
    residual: float
    steps: StepSizes
    wall_time: float

    def __iter__(self):
        # allows ``x, trace = solve(...)``
        return iter((self.x, self.trace))


def objective(model: Model, x, inner_tol: float = 1e-12):
    """``J(x)``, evaluating each GME penalty by an inner minimization."""
    from .gme import GmePenalty, gme_eval

    x = np.asarray(x, dtype=float)
    r = model.y - model.A.apply(x)
    val = 0.5 * (r * r).sum(axis=0)
    for reg in model.regularizers:
        z = reg.operator.apply(x)
        pen = gme_eval(GmePenalty(reg.penalty, reg.gme_matrix), z, inner_tol=inner_tol)
        val = val + model.mu * reg.weight * pen
    return val


def _violations(model: Model, x):
    early = float(np.max(model.early_set.distance(x)))
    asym = 0.0
    for c in model.asymptotic:
        asym = max(asym, float(np.max(c.set.distance(c.operator._apply(x)))))
    return early, asym


def _relax(h: SolverState, new: SolverState, lam: float) -> SolverState:
    def mix(a, b):
        return a + lam * (b - a)

    return SolverState(
        mix(h.x, new.x), [mix(a, b) for a, b in zip(h.v, new.v)],
        [mix(a, b) for a, b in zip(h.w, new.w)], [mix(a, b) for a, b in zip(h.z, new.z)],
    )


def solve(model: Model, h0: SolverState | None = None, stop: StoppingRule | None = None,
          steps: StepSizes | None = None, kappa: float = 1.01,
          relaxation: float = 1.0) -> SolveResult:
    """Iterate ``h_{k+1} = T(h_k)`` from ``h0`` until ``stop`` fires.

    ``relaxation`` in ``(0, 1]`` switches to the Krasnosel'skii-Mann update
    ``h + relaxation (T(h) - h)``; the default 1 is the plain iteration.
    The returned :class:`SolveResult` unpacks as ``(x, trace)``.
    """
    stop = stop or StoppingRule()
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation must lie in (0, 1]")
    if steps is None:
        steps = select_stepsizes(model, kappa=kappa)
    h = initial_state(model) if h0 is None else h0.copy()
    _check_state(model, h)
    if not model.early_set.contains(h.x, atol=0.0):
        raise ValueError("initial x must lie in the early constraint set")
    if any(not isinstance(r.gme_matrix, Zero) for r in model.regularizers):
        logger.debug("GME terms present; convexity is the caller's responsibility")

    T = _EAMap(model, steps)
    trace = DiagnosticsTrace()
    start = time.perf_counter()
    Lx = None
    res = np.inf
    converged = False
    k = 0
    while k < stop.max_iter:
        new, Lxi = T(h, Lx)
        if relaxation != 1.0:
            new = _relax(h, new, relaxation)
            Lxi = None
        res = float(np.max(new.distance(h) / (1.0 + np.sqrt(h.sq_norm()))))
        h, Lx = new, Lxi
        k += 1
        if k % stop.stride == 0 or res < stop.rtol:
            early, asym = _violations(model, h.x)
            obj = None
            if stop.objective:
                obj = float(np.max(objective(model, h.x, stop.objective_tol)))
            trace.record(k, res, early, asym, obj)
        if res < stop.rtol:
            converged = True
            break
        if not np.isfinite(res):
            warnings.warn("iteration diverged (non-finite residual)", RuntimeWarning)
            break
    if not trace.iters or trace.iters[-1] != k:
        early, asym = _violations(model, h.x)
        trace.record(k, res, early, asym, None)
    return SolveResult(
        x=h.x, state=h, trace=trace, n_iter=k, converged=converged, residual=res,
        steps=steps, wall_time=time.perf_counter() - start,
    )
