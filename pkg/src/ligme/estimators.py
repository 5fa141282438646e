"""scikit-learn style front ends.

``FusedSignalDenoiser`` treats every row of ``X`` as one noisy signal and
returns the estimates of the chosen fused-family model.
``GMCRegressor`` is sparse linear regression with the GME-enhanced l1
penalty, optionally with nonnegative coefficients enforced at every
iteration.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fused import VARIANTS, FusedProblemSpec, build_D, build_synthesis, reconstruct, solve_fused
from .gme import design_gme_bivariate, design_gme_direct
from .linops import DenseMatrix, Identity, Zero
from .prox import Box, FullSpace, L1Norm
from .solver import Model, Regularizer, StoppingRule, solve

__all__ = ["FusedSignalDenoiser", "GMCRegressor", "check_signals", "check_weight"]


def check_signals(X, min_length: int = 3):
    """2-D float array of row signals, each at least ``min_length`` long."""
    return check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_features=min_length)


def check_weight(name: str, value, allow_zero: bool = True) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def _interval(value):
    if value is None or (isinstance(value, str) and value.upper() in ("R", "REAL")):
        return (-math.inf, math.inf)
    return value


class FusedSignalDenoiser(TransformerMixin, BaseEstimator):
    """Denoise sparse piecewise-constant signals given as the rows of ``X``.

    Parameters
    ----------
    variant : one of ``fused-lasso``, ``latent-fused-lasso``,
        ``unified-convex``, ``bivariate-gme``.
    window : synthesis window length ``L`` (ignored by ``fused-lasso``).
    mu1, mu2 : regularization weights.
    theta, omega : GME design knobs for ``bivariate-gme``.
    baseline : ``None``/``"R"`` for a free baseline, a number to fix it, or
        an interval ``(lo, hi)``.
    max_iter, rtol, kappa : solver settings.

    ``fit`` only checks the signal length and designs the GME matrices; each
    ``transform`` solves one problem per row.
    """

    def __init__(self, variant="bivariate-gme", window=5, mu1=0.3, mu2=0.9, theta=0.99,
                 omega=(0.5, 0.5), baseline=None, max_iter=50000, rtol=1e-9, kappa=1.01):
        self.variant = variant
        self.window = window
        self.mu1 = mu1
        self.mu2 = mu2
        self.theta = theta
        self.omega = omega
        self.baseline = baseline
        self.max_iter = max_iter
        self.rtol = rtol
        self.kappa = kappa

    def fit(self, X, y=None):
        X = check_signals(X)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        mu1 = check_weight("mu1", self.mu1)
        mu2 = check_weight("mu2", self.mu2)
        N = X.shape[1]
        if self.variant != "fused-lasso" and not 1 <= self.window <= N - 1:
            raise ValueError(f"window must lie in [1, {N - 1}] for signals of length {N}")
        self.n_features_in_ = N
        self.window_ = N - 1 if self.variant == "fused-lasso" else int(self.window)
        self.design_ = None
        if self.variant == "bivariate-gme":
            self.design_ = design_gme_bivariate(
                Identity(N), build_D(N), build_synthesis(N, self.window_), 1.0, mu1, mu2,
                theta=self.theta, omega1=self.omega[0], omega2=self.omega[1], factor="direct",
            )
        return self

    def _spec(self, Y):
        interval = None if self.variant == "fused-lasso" and self.baseline is None \
            else _interval(self.baseline)
        return FusedProblemSpec(
            N=self.n_features_in_, y=Y, variant=self.variant,
            L=None if self.variant == "fused-lasso" else self.window_,
            mu1=float(self.mu1), mu2=float(self.mu2), interval=interval, design=self.design_,
        )

    def decompose(self, X):
        """Baselines ``b`` and components ``d`` per row, shapes ``(n, N)`` and ``(n, K)``."""
        check_is_fitted(self, "n_features_in_")
        X = check_signals(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the denoiser was fitted with "
                f"{self.n_features_in_}"
            )
        stop = StoppingRule(max_iter=int(self.max_iter), rtol=float(self.rtol))
        res = solve_fused(self._spec(X.T.copy()), stop=stop, kappa=float(self.kappa))
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        N = self.n_features_in_
        return res.x[:N].T, res.x[N:].T

    def transform(self, X):
        b, d = self.decompose(X)
        return reconstruct(b.T, d.T, self.n_features_in_, self.window_).T


class GMCRegressor(RegressorMixin, BaseEstimator):
    """Least squares with the GME-enhanced l1 penalty on the coefficients.

    ``alpha`` is the penalty weight and ``gamma`` in ``[0, 1)`` the
    nonconvexity: the GME matrix is ``sqrt(gamma / alpha) X`` so the cost
    stays convex (``gamma = 0`` is the lasso).  ``positive=True`` keeps every
    iterate nonnegative.  With ``fit_intercept`` the data are centered first.
    The cost is ``1/2 ||y - X w||^2 + alpha psi(w)``, without the ``1/n``
    factor some lasso implementations use.
    """

    def __init__(self, alpha=1.0, gamma=0.8, positive=False, fit_intercept=True,
                 max_iter=20000, rtol=1e-10, kappa=1.01):
        self.alpha = alpha
        self.gamma = gamma
        self.positive = positive
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.rtol = rtol
        self.kappa = kappa

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        alpha = check_weight("alpha", self.alpha, allow_zero=False)
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        p = X.shape[1]
        if self.fit_intercept:
            x_mean, y_mean = X.mean(axis=0), y.mean()
        else:
            x_mean, y_mean = np.zeros(p), 0.0
        Xc, yc = X - x_mean, y - y_mean
        A = DenseMatrix(Xc)
        B = design_gme_direct(A, 1.0, alpha, self.gamma) if self.gamma > 0 else Zero(p)
        model = Model(
            A=A, y=yc, regularizers=[Regularizer(alpha, L1Norm(p), B, Identity(p))],
            early_set=Box(0.0, np.inf, p) if self.positive else FullSpace(p),
        )
        res = solve(model, stop=StoppingRule(max_iter=int(self.max_iter), rtol=float(self.rtol)),
                    kappa=float(self.kappa))
        self.coef_ = res.x
        self.intercept_ = float(y_mean - x_mean @ res.x)
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the regressor was fitted with "
                f"{self.n_features_in_}"
            )
        return X @ self.coef_ + self.intercept_
