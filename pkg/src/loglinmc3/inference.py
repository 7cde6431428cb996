"""MAP fitting of a fixed structure and its Laplace marginal likelihood.

Every nonzero interaction parameter gets an independent N(0, sigma**2)
prior.  The log posterior (up to a constant) is

    N * (theta_empty(theta) + theta . tbar) + sum_c log N(theta_c; 0, sigma**2)

with gradient ``N (tbar - E[T]) - theta / sigma**2`` and Hessian
``-N Cov[T] - I / sigma**2``; the Hessian is negative definite everywhere so
Newton's method with backtracking finds the unique mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import DimensionError, DomainError, FitError
from .model import (
    ConfigCounts,
    ParamVector,
    Structure,
    check_enumerable,
    superset_sums,
    sufficient_stats,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    sigma: float = 2.0
    q_high: float = 0.1
    q_single: float = 0.9

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for name in ("q_high", "q_single"):
            q = getattr(self, name)
            if not 0.0 < q < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {q}")

    def log_density(self, theta: np.ndarray) -> float:
        """Log of the independent Gaussian prior on the nonzero parameters."""
        theta = np.asarray(theta, dtype=float)
        s2 = self.sigma**2
        return float(-0.5 * theta.size * (LOG_2PI + math.log(s2)) - 0.5 * (theta @ theta) / s2)


@dataclass(frozen=True, eq=False)
class StructureFit:
    structure: Structure
    theta_map: ParamVector
    covariance: np.ndarray
    log_marginal: float
    iterations: int
    converged: bool
    gradient_norm: float
    log_likelihood: float = float("nan")
    objective_trace: tuple[float, ...] = ()

    @property
    def theta(self) -> np.ndarray:
        return self.theta_map.theta

    @property
    def sd(self) -> np.ndarray:
        """Posterior standard deviation of each parameter."""
        return np.sqrt(np.diag(self.covariance))


class _Evaluator:
    """Log posterior, gradient and Hessian for one structure and dataset."""

    def __init__(self, structure: Structure, stats: np.ndarray, N: int, prior: PriorSpec):
        check_enumerable(structure.k)
        stats = np.asarray(stats, dtype=float)
        if stats.shape != (len(structure),):
            raise DimensionError(
                f"expected {len(structure)} sufficient statistics, got shape {stats.shape}"
            )
        self.structure = structure
        self.k = structure.k
        self.stats = stats
        self.N = N
        self.prior = prior
        self.inv_s2 = 1.0 / prior.sigma**2
        self.design = structure.full_design
        masks = np.asarray(structure.clusters, dtype=np.int64)
        self.masks = masks
        self.unions = masks[:, None] | masks[None, :]

    def log_partition(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        lw = self.design @ theta if theta.size else np.zeros(1 << self.k)
        logz = float(logsumexp(lw))
        return logz, lw

    def log_likelihood(self, theta: np.ndarray) -> float:
        logz, _ = self.log_partition(theta)
        return self.N * (float(theta @ self.stats) - logz)

    def objective(self, theta: np.ndarray) -> float:
        return self.log_likelihood(theta) + self.prior.log_density(theta)

    def derivatives(self, theta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        logz, lw = self.log_partition(theta)
        p = np.exp(lw - logz)
        M = superset_sums(p, self.k)
        m = M[self.masks]
        f = self.N * (float(theta @ self.stats) - logz) + self.prior.log_density(theta)
        g = self.N * (self.stats - m) - theta * self.inv_s2
        # M[unions] and outer(m, m) are both exactly symmetric
        H = -self.N * (M[self.unions] - np.outer(m, m))
        H[np.diag_indices_from(H)] -= self.inv_s2
        return f, g, H


def _as_array(theta: ParamVector | np.ndarray) -> np.ndarray:
    arr = theta.theta if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("theta must be finite")
    return arr


def log_unnormalized_posterior(theta: ParamVector, stats: np.ndarray, N: int, prior: PriorSpec) -> float:
    ev = _Evaluator(theta.structure, stats, N, prior)
    return ev.objective(_as_array(theta))


def posterior_gradient(theta: ParamVector, stats: np.ndarray, N: int, prior: PriorSpec) -> np.ndarray:
    ev = _Evaluator(theta.structure, stats, N, prior)
    return ev.derivatives(_as_array(theta))[1]


def posterior_hessian(theta: ParamVector, stats: np.ndarray, N: int, prior: PriorSpec) -> np.ndarray:
    ev = _Evaluator(theta.structure, stats, N, prior)
    return ev.derivatives(_as_array(theta))[2]


def _laplace(d: int, logdet_cov: float, loglik: float, logprior: float) -> float:
    return 0.5 * d * LOG_2PI + 0.5 * logdet_cov + loglik + logprior


def newton_map(
    structure: Structure,
    data: ConfigCounts,
    prior: PriorSpec | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 30,
) -> StructureFit:
    """Posterior mode, Laplace covariance and log marginal for ``structure``.

    Starts from theta = 0 and takes Newton steps with step-halving
    backtracking.  A step is accepted when the objective does not drop by
    more than floating-point resolution, so the objective trace is
    nondecreasing up to rounding.  Raises FitError when the negated Hessian
    cannot be Cholesky-factorized.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    prior = prior or PriorSpec()
    stats = sufficient_stats(data, structure)
    ev = _Evaluator(structure, stats, data.N, prior)
    d = len(structure)
    theta = np.zeros(d)

    f, g, H = ev.derivatives(theta)
    trace = [f]
    iterations = 0
    converged = False
    chol = None
    while True:
        gnorm = float(np.max(np.abs(g))) if d else 0.0
        try:
            chol = cho_factor(-H, lower=True) if d else None
        except LinAlgError as exc:
            raise FitError(f"negated Hessian not positive definite for {structure.describe()}", structure) from exc
        if gnorm <= tol:
            converged = True
            break
        if iterations >= max_iter:
            break
        step = cho_solve(chol, g)
        slack = 8.0 * np.finfo(float).eps * max(1.0, abs(f))
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = theta + t * step
            f_cand = ev.objective(cand)
            if f_cand >= f - slack:
                break
            t *= 0.5
        else:
            # no acceptable step: the mode is resolved to machine precision
            break
        theta = cand
        iterations += 1
        f, g, H = ev.derivatives(theta)
        trace.append(f)

    if not np.all(np.isfinite(theta)):
        raise FitError(f"non-finite estimate for {structure.describe()}", structure)
    if d:
        cov = cho_solve(chol, np.eye(d))
        cov = 0.5 * (cov + cov.T)
        logdet_cov = -2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    else:
        cov = np.zeros((0, 0))
        logdet_cov = 0.0
    loglik = ev.log_likelihood(theta)
    log_marginal = _laplace(d, logdet_cov, loglik, prior.log_density(theta)) if converged else -math.inf
    return StructureFit(
        structure=structure,
        theta_map=ParamVector(structure, theta),
        covariance=cov,
        log_marginal=log_marginal,
        iterations=iterations,
        converged=converged,
        gradient_norm=gnorm,
        log_likelihood=loglik,
        objective_trace=tuple(trace),
    )


def laplace_log_marginal(fit: StructureFit, data: ConfigCounts, prior: PriorSpec | None = None) -> float:
    """Laplace approximation to the log marginal likelihood of a fitted structure.

    ``(d/2) log 2 pi + (1/2) log det Sigma + log L(theta_map) + log g(theta_map)``.
    """
    if not fit.converged:
        raise FitError("Laplace approximation needs a converged fit", fit.structure)
    prior = prior or PriorSpec()
    d = len(fit.structure)
    theta = fit.theta
    ev = _Evaluator(fit.structure, sufficient_stats(data, fit.structure), data.N, prior)
    if d:
        try:
            chol = cho_factor(fit.covariance, lower=True)
        except LinAlgError as exc:
            raise FitError("covariance is not positive definite", fit.structure) from exc
        logdet_cov = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    else:
        logdet_cov = 0.0
    return _laplace(d, logdet_cov, ev.log_likelihood(theta), prior.log_density(theta))
