"""Numerical kernels: weighted least squares, weighted probit, normal utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import SeparationError, SingularDesignError

SEPARATION_BOUND = 15.0
MAX_PROBIT_ITER = 100

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _rank_check(R: np.ndarray, n_rows: int) -> None:
    """Raise on the first column whose pivot is negligible relative to the largest."""
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return
    tol = max(n_rows, R.shape[1]) * np.finfo(float).eps * max(diag.max(), 1e-300)
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        raise SingularDesignError(int(bad[0]))


@dataclass(frozen=True)
class WlsFit:
    """Result of :func:`wls_fit`."""

    coefficients: np.ndarray
    rss: float

    def predict(self, X) -> np.ndarray:
        return _as_design(X) @ self.coefficients


def wls_fit(X, y, w) -> WlsFit:
    """Weighted least squares through a Householder QR of the scaled design.

    Minimises ``sum(w * (y - X @ beta) ** 2)``. Rows are scaled by ``sqrt(w)``
    and the scaled design is factorised, so the conditioning is that of the
    design itself rather than of its cross-product.

    Raises
    ------
    SingularDesignError
        If a column is (numerically) a linear combination of earlier columns;
        ``err.column`` holds its index.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, k = X.shape
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("X, y and w must have matching row counts")
    if k > n:
        raise SingularDesignError(n, f"{k} columns but only {n} rows")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(X * sw[:, None], mode="reduced")
    _rank_check(R, n)
    beta = np.linalg.solve(R, Q.T @ (y * sw))
    resid = y - X @ beta
    return WlsFit(coefficients=beta, rss=float(np.sum(w * resid**2)))


def norm_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - _LOG_SQRT_2PI


def norm_cdf(z):
    return ndtr(z)


def inverse_mills(z):
    """phi(z) / Phi(z), evaluated in log space so deep negative tails stay finite."""
    z = np.asarray(z, dtype=float)
    out = np.exp(norm_logpdf(z) - log_ndtr(z))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ProbitFit:
    """Result of :func:`probit_fit`."""

    coefficients: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    gradient: np.ndarray

    def index(self, X) -> np.ndarray:
        return _as_design(X) @ self.coefficients

    def predict_proba(self, X) -> np.ndarray:
        return ndtr(self.index(X))


def probit_loglik(beta, X, y, w) -> float:
    q = 2.0 * np.asarray(y, dtype=float) - 1.0
    return float(np.sum(w * log_ndtr(q * (_as_design(X) @ beta))))


def probit_fit(X, y, w=None) -> ProbitFit:
    """Weighted probit by Newton-Raphson with step halving.

    Starts at zero. A step that lowers the log-likelihood is halved until it
    does not (at most 50 times). Iteration stops when the relative change in
    log-likelihood drops below 1e-10 or the gradient norm is at most
    ``1e-8 * (1 + |loglik|)``; after 100 iterations ``converged`` is False.

    Raises
    ------
    SeparationError
        If the response has no variation, or any coefficient exceeds 15 in
        magnitude during iteration.
    SingularDesignError
        If the weighted design is rank deficient.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("X, y and w must have matching row counts")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("probit response must be 0/1")
    if np.all(y == y[0]):
        raise SeparationError("response has no variation; the likelihood has no finite maximiser")
    _, R = np.linalg.qr(X * np.sqrt(w)[:, None], mode="reduced")
    _rank_check(R, n)

    q = 2.0 * y - 1.0
    beta = np.zeros(k)
    ll = probit_loglik(beta, X, y, w)
    converged = False
    it = 0
    grad = np.zeros(k)
    for it in range(1, MAX_PROBIT_ITER + 1):
        qxb = q * (X @ beta)
        lam = inverse_mills(qxb)
        grad = X.T @ (w * q * lam)
        if np.linalg.norm(grad) <= 1e-8 * (1.0 + abs(ll)):
            converged = True
            it -= 1
            break
        curv = w * lam * (lam + qxb)
        H = (X * curv[:, None]).T @ X
        step = np.linalg.solve(H, grad)
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            ll_new = probit_loglik(cand, X, y, w)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            cand, ll_new = beta, ll
        beta = cand
        if np.any(np.abs(beta) > SEPARATION_BOUND):
            raise SeparationError(
                f"coefficient magnitude exceeded {SEPARATION_BOUND:g} at iteration {it}; "
                "the data are (quasi-)separated"
            )
        change = abs(ll_new - ll)
        ll = ll_new
        if change < 1e-10 * max(abs(ll), 1e-300):
            converged = True
            break
    grad = X.T @ (w * q * inverse_mills(q * (X @ beta)))
    return ProbitFit(coefficients=beta, loglik=ll, converged=converged, iterations=it, gradient=grad)
